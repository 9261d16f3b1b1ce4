"""BroGNet and the four baselines (BDGNN, BFGN, BNN, NN).

Every family maps positions to a :class:`Prediction` carrying forces and a
strictly positive friction estimate gamma-hat. NN predicts the next mean
position directly; its equivalent force is backed out so all families can be
rolled out through the same Euler-Maruyama step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import ParticleGraph, build_graph
from .systems import SystemSpec

FAMILIES = ("brognet", "bdgnn", "bfgn", "bnn", "nn")
GRAPH_FAMILIES = ("brognet", "bdgnn", "bfgn")
GAMMA_FLOOR = 1e-6


class CapabilityError(ValueError):
    """Raised when a non-inductive model is asked to run on a different system size."""


@dataclass
class ModelParams:
    family: str
    arch: dict
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    def with_params(self, params: dict[str, np.ndarray]) -> "ModelParams":
        return ModelParams(self.family, dict(self.arch), params)

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))


@dataclass
class Prediction:
    forces: Tensor  # [..., n, 3]
    gamma: Tensor  # [..., n], > 0
    mean: Tensor | None = None  # NN only: direct next-position prediction

    def sigma_step(self, kbt: float, dt: float) -> np.ndarray:
        """Per-step positional std sqrt(2 kBT dt / gamma)."""
        return np.sqrt(2.0 * kbt * dt / np.maximum(self.gamma.data, GAMMA_FLOOR))

    def sigma_force(self, kbt: float) -> np.ndarray:
        """Force-level std sqrt(2 gamma kBT)."""
        return np.sqrt(2.0 * self.gamma.data * kbt)


# ---------------------------------------------------------------- parameters

def mlp_widths(n_in: int, hidden: int, n_hidden: int, n_out: int) -> list[int]:
    return [n_in] + [hidden] * n_hidden + [n_out]


def _layout(family: str, arch: dict) -> dict[str, list[int]]:
    """Widths of every MLP in a model, keyed by parameter-group name."""
    t = arch["n_types"]
    h, nh = arch["hidden"], arch["hidden_layers"]
    if family in ("brognet", "bdgnn"):
        e = arch["embed"]
        groups = {
            "node_em": mlp_widths(t, h, nh, e),
            "edge_em": mlp_widths(3, h, nh, e),
        }
        for layer in range(arch["mp_layers"]):
            groups[f"mp{layer}_node"] = [3 * e, e]
            groups[f"mp{layer}_edge"] = [3 * e, e]
        groups["force"] = mlp_widths(e, h, nh, 3)
        groups["gamma"] = mlp_widths(t, h, nh, 1)
        return groups
    if family == "bfgn":
        e = arch["embed"]
        groups = {
            "node_em": mlp_widths(t + 6, h, nh, e),
            "edge_em": mlp_widths(3, h, nh, e),
        }
        for layer in range(arch["mp_layers"]):
            groups[f"mp{layer}_edge"] = mlp_widths(3 * e, h, nh, e)
            groups[f"mp{layer}_node"] = mlp_widths(2 * e, h, nh, e)
        groups["decoder"] = mlp_widths(e, h, nh, 4)
        return groups
    n = arch["n_particles"]
    if family == "bnn":
        return {"mlp": mlp_widths(3 * n, h, nh, 4 * n)}
    if family == "nn":
        return {"mlp": mlp_widths(6 * n, h, nh, 3 * n), "gamma": mlp_widths(t, h, nh, 1)}
    raise ValueError(f"unknown model family {family!r}")


def default_arch(family: str, spec: SystemSpec) -> dict:
    arch = {"n_types": spec.n_types, "hidden_layers": 2}
    if family in ("brognet", "bdgnn"):
        arch.update(embed=5, hidden=5, mp_layers=1, force_head_linear=False)
    elif family == "bfgn":
        arch.update(embed=8, hidden=16, mp_layers=1)
    elif family in ("bnn", "nn"):
        arch.update(hidden=16, n_particles=spec.n_particles)
    else:
        raise ValueError(f"unknown model family {family!r}")
    return arch


def count_params(family: str, arch: dict) -> int:
    total = 0
    for widths in _layout(family, arch).values():
        total += sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
    return total


def init_params(family: str, spec: SystemSpec, seed: int, **overrides) -> ModelParams:
    """Fan-in scaled uniform weights (variance 1/fan_in), zero biases."""
    arch = default_arch(family, spec)
    arch.update(overrides)
    rng = np.random.default_rng(seed)
    params = {}
    for name, widths in _layout(family, arch).items():
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            limit = np.sqrt(3.0 / a)
            params[f"{name}/{i}/w"] = rng.uniform(-limit, limit, size=(a, b))
            params[f"{name}/{i}/b"] = np.zeros(b)
    return ModelParams(family, arch, params)


def _layers(t: dict[str, Tensor], name: str) -> list[tuple[Tensor, Tensor]]:
    out, i = [], 0
    while f"{name}/{i}/w" in t:
        out.append((t[f"{name}/{i}/w"], t[f"{name}/{i}/b"]))
        i += 1
    return out


def _check_family(params: ModelParams, *allowed: str) -> None:
    if params.family not in allowed:
        raise ValueError(f"expected a {'/'.join(allowed)} model, got {params.family!r}")


# ---------------------------------------------------------------- graph models

def _message_passing(t, arch, graph: ParticleGraph):
    N = graph.n_nodes
    h_v = ad.mlp_forward(_layers(t, "node_em"), graph.node_types, activate_last=True)
    h_e = ad.mlp_forward(_layers(t, "edge_em"), graph.edge_features, activate_last=True)
    for layer in range(arch["mp_layers"]):
        agg_in = ad.segment_sum(h_e, graph.receivers, N)
        agg_out = ad.segment_sum(h_e, graph.senders, N)
        node_in = ad.concat([h_v, agg_in, agg_out])
        edge_in = ad.concat(
            [h_e, ad.gather_rows(h_v, graph.senders), ad.gather_rows(h_v, graph.receivers)]
        )
        h_v = ad.mlp_forward(_layers(t, f"mp{layer}_node"), node_in, activate_last=True)
        h_e = ad.mlp_forward(_layers(t, f"mp{layer}_edge"), edge_in, activate_last=True)
    return h_v, h_e


def _type_gamma(t, graph: ParticleGraph) -> Tensor:
    g = ad.mlp_forward(_layers(t, "gamma"), graph.node_types, activate_last=True)
    return ad.reshape(g, (graph.n_nodes,))


def _fold(pred_f: Tensor, pred_g: Tensor, graph: ParticleGraph, n: int) -> Prediction:
    bs = graph.batch_shape
    return Prediction(ad.reshape(pred_f, bs + (n, 3)), ad.reshape(pred_g, bs + (n,)))


def _n_per_graph(graph: ParticleGraph) -> int:
    b = int(np.prod(graph.batch_shape)) if graph.batch_shape else 1
    return graph.n_nodes // b


def brognet_forward(params: ModelParams, graph: ParticleGraph, tensors=None) -> Prediction:
    """Pairwise edge forces aggregated as incoming minus outgoing: sum of forces is zero."""
    _check_family(params, "brognet")
    t = tensors or params.tensors()
    _, z_e = _message_passing(t, params.arch, graph)
    linear = params.arch.get("force_head_linear", False)
    f_edge = ad.mlp_forward(_layers(t, "force"), z_e, activate_last=not linear)
    forces = ad.sub(
        ad.segment_sum(f_edge, graph.receivers, graph.n_nodes),
        ad.segment_sum(f_edge, graph.senders, graph.n_nodes),
    )
    return _fold(forces, _type_gamma(t, graph), graph, _n_per_graph(graph))


def bdgnn_forward(params: ModelParams, graph: ParticleGraph, tensors=None) -> Prediction:
    _check_family(params, "bdgnn")
    t = tensors or params.tensors()
    z_v, _ = _message_passing(t, params.arch, graph)
    linear = params.arch.get("force_head_linear", False)
    forces = ad.mlp_forward(_layers(t, "force"), z_v, activate_last=not linear)
    return _fold(forces, _type_gamma(t, graph), graph, _n_per_graph(graph))


def bfgn_forward(params: ModelParams, X, Xdot, graph: ParticleGraph, tensors=None) -> Prediction:
    """Encode-process-decode graph network on absolute positions and velocities."""
    _check_family(params, "bfgn")
    t = tensors or params.tensors()
    N = graph.n_nodes
    X = np.asarray(X, dtype=np.float64).reshape(N, 3)
    Xdot = np.asarray(Xdot, dtype=np.float64).reshape(N, 3)
    node_in = np.concatenate([graph.node_types, X, Xdot], axis=1)
    h_v = ad.mlp_forward(_layers(t, "node_em"), node_in, activate_last=True)
    h_e = ad.mlp_forward(_layers(t, "edge_em"), graph.edge_features, activate_last=True)
    for layer in range(params.arch["mp_layers"]):
        edge_in = ad.concat(
            [h_e, ad.gather_rows(h_v, graph.senders), ad.gather_rows(h_v, graph.receivers)]
        )
        h_e = ad.mlp_forward(_layers(t, f"mp{layer}_edge"), edge_in, activate_last=True)
        node_in = ad.concat([h_v, ad.segment_sum(h_e, graph.receivers, N)])
        h_v = ad.mlp_forward(_layers(t, f"mp{layer}_node"), node_in, activate_last=True)
    out = ad.mlp_forward(_layers(t, "decoder"), h_v, activate_last=False)
    forces = ad.slice_last(out, 0, 3)
    gamma = ad.reshape(ad.squareplus(ad.slice_last(out, 3, 4)), (N,))
    return _fold(forces, gamma, graph, _n_per_graph(graph))


# ---------------------------------------------------------------- flat models

def _flat_batch(params: ModelParams, X) -> tuple[np.ndarray, tuple[int, ...], int]:
    n = params.arch["n_particles"]
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-2:] != (n, 3):
        raise CapabilityError(
            f"{params.family} was built for {n} particles and cannot run on shape {X.shape}"
        )
    bs = X.shape[:-2]
    return X.reshape(-1, 3 * n), bs, n


def bnn_forward(params: ModelParams, X, tensors=None) -> Prediction:
    _check_family(params, "bnn")
    t = tensors or params.tensors()
    flat, bs, n = _flat_batch(params, X)
    out = ad.mlp_forward(_layers(t, "mlp"), flat, activate_last=False)
    forces = ad.reshape(ad.slice_last(out, 0, 3 * n), bs + (n, 3))
    gamma = ad.reshape(ad.squareplus(ad.slice_last(out, 3 * n, 4 * n)), bs + (n,))
    return Prediction(forces, gamma)


def nn_forward(params: ModelParams, X, Xdot, spec: SystemSpec, tensors=None) -> Prediction:
    """Direct next-position regression from concatenated positions and velocities."""
    _check_family(params, "nn")
    t = tensors or params.tensors()
    flat, bs, n = _flat_batch(params, X)
    vflat = np.asarray(Xdot, dtype=np.float64).reshape(flat.shape)
    out = ad.mlp_forward(_layers(t, "mlp"), np.concatenate([flat, vflat], axis=1), activate_last=False)
    mean = ad.reshape(out, bs + (n, 3))
    onehot = np.eye(spec.n_types)[np.asarray(spec.types)]
    g = ad.reshape(ad.mlp_forward(_layers(t, "gamma"), onehot, activate_last=True), (n,))
    gamma = ad.add(ad.reshape(g, (1,) * len(bs) + (n,)), np.zeros(bs + (n,)))
    # force that makes the Euler-Maruyama mean land on the regressed position
    forces = ad.mul(ad.sub(mean, X), ad.reshape(ad.div(gamma, spec.dt), bs + (n, 1)))
    return Prediction(forces, gamma, mean)


# ---------------------------------------------------------------- dispatch

def velocities(spec: SystemSpec, X, X_prev) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X_prev is None:
        return np.zeros_like(X)
    return (X - np.asarray(X_prev)) / spec.dt


def check_compatible(params: ModelParams, spec: SystemSpec) -> None:
    if params.arch["n_types"] != spec.n_types:
        raise ValueError(
            f"model expects {params.arch['n_types']} particle types, system has {spec.n_types}"
        )
    if params.family in ("bnn", "nn") and params.arch["n_particles"] != spec.n_particles:
        raise CapabilityError(
            f"{params.family} is not inductive: trained on {params.arch['n_particles']} particles, "
            f"asked for {spec.n_particles}"
        )


def predict(params: ModelParams, spec: SystemSpec, X, X_prev=None, Xdot=None, tensors=None) -> Prediction:
    """Forward any family on positions ``[n, 3]`` or ``[B, n, 3]``.

    Velocity features (BFGN, NN) come from ``Xdot`` if given, else from the
    finite difference against ``X_prev``, else zero.
    """
    check_compatible(params, spec)
    if Xdot is None:
        Xdot = velocities(spec, X, X_prev)
    fam = params.family
    if fam == "brognet":
        return brognet_forward(params, build_graph(spec, X), tensors)
    if fam == "bdgnn":
        return bdgnn_forward(params, build_graph(spec, X), tensors)
    if fam == "bfgn":
        return bfgn_forward(params, X, Xdot, build_graph(spec, X), tensors)
    if fam == "bnn":
        return bnn_forward(params, X, tensors)
    if fam == "nn":
        return nn_forward(params, X, Xdot, spec, tensors)
    raise ValueError(f"unknown model family {fam!r}")


def model_drift(params: ModelParams, spec: SystemSpec):
    """Drift callback for :func:`brognet.integrator.simulate`."""
    check_compatible(params, spec)

    def drift(X, X_prev=None):
        pred = predict(params, spec, X, X_prev)
        return pred.forces.data, pred.gamma.data

    return drift
