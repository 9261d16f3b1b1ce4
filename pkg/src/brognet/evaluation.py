"""Roll-out metrics: position error, Brownian error and per-step KL divergence."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .integrator import (
    TrajectoryEnsemble,
    derive_seed,
    ground_truth_drift,
    random_initial_condition,
    simulate,
)
from .models import GAMMA_FLOOR, GRAPH_FAMILIES, CapabilityError, ModelParams, model_drift, predict
from .systems import SystemSpec

DEGENERATE_STD = 1e-12
MAX_DIVERGED_FRACTION = 0.1
NODES_PER_CHUNK = 200_000


class DegenerateDistributionError(ValueError):
    pass


class EvaluationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Protocol:
    n_init: int = 100
    seeds_per_init: int = 10
    steps: int = 100

    def __post_init__(self):
        if self.n_init < 1 or self.seeds_per_init < 2 or self.steps < 1:
            raise ValueError("protocol needs n_init >= 1, seeds_per_init >= 2, steps >= 1")


@dataclass
class EnsembleStats:
    mean: np.ndarray
    std: np.ndarray


def ensemble_stats(positions: np.ndarray) -> EnsembleStats:
    """Mean and unbiased std across the leading (trajectory) axis."""
    positions = np.asarray(positions)
    if positions.shape[0] < 2:
        raise ValueError("ensemble statistics need at least 2 trajectories")
    return EnsembleStats(positions.mean(axis=0), positions.std(axis=0, ddof=1))


def position_error(gt_mean, gt_std, pred_mean) -> np.ndarray:
    """Std-normalised Euclidean distance over the last (coordinate) axis.

    Coordinates whose ground-truth std is below 1e-12 are skipped.
    """
    gt_mean, gt_std, pred_mean = (np.asarray(a, dtype=np.float64) for a in (gt_mean, gt_std, pred_mean))
    ok = gt_std >= DEGENERATE_STD
    z = np.where(ok, (gt_mean - pred_mean) / np.where(ok, gt_std, 1.0), 0.0)
    return np.sqrt(np.sum(z * z, axis=-1))


def kl_normal(mu0, sigma0, mu1, sigma1) -> np.ndarray:
    """KL(N(mu0, sigma0^2) || N(mu1, sigma1^2)), elementwise."""
    mu0, sigma0, mu1, sigma1 = (np.asarray(a, dtype=np.float64) for a in (mu0, sigma0, mu1, sigma1))
    if np.any(sigma1 < DEGENERATE_STD):
        raise DegenerateDistributionError("reference distribution has zero spread")
    with np.errstate(divide="ignore"):
        return np.log(sigma1 / sigma0) + (sigma0**2 + (mu0 - mu1) ** 2) / (2.0 * sigma1**2) - 0.5


def kl_rollout_error(gt: TrajectoryEnsemble, pred: TrajectoryEnsemble) -> np.ndarray:
    """Per-step KL(pred || gt) averaged over particles and coordinates, steps 1..S."""
    if gt.positions.shape[1:] != pred.positions.shape[1:]:
        raise ValueError("ensembles must share step grid and particle count")
    g = ensemble_stats(gt.positions[~gt.diverged])
    p = ensemble_stats(pred.positions[~pred.diverged])
    kl = kl_normal(p.mean[1:], p.std[1:], g.mean[1:], g.std[1:])
    return kl.mean(axis=(-2, -1))


def brownian_error(gamma_hat, spec: SystemSpec, kbt: float | None = None) -> float:
    """RMSE between learned and true noise amplitudes sqrt(2 gamma kBT), per particle."""
    kbt = spec.kbt if kbt is None else kbt
    gamma_hat = np.asarray(gamma_hat, dtype=np.float64)
    true = np.broadcast_to(spec.gamma_per_particle, gamma_hat.shape)
    diff = np.sqrt(2.0 * gamma_hat * kbt) - np.sqrt(2.0 * true * kbt)
    return float(np.sqrt(np.mean(diff**2)))


def geometric_mean(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return float(np.exp(np.mean(np.log(x))))


class GroundTruthModel:
    """Stand-in 'model' that uses the true force law and friction."""

    family = "ground_truth"

    def drift(self, spec: SystemSpec):
        return ground_truth_drift(spec)

    def gamma(self, spec: SystemSpec, X) -> np.ndarray:
        return np.broadcast_to(spec.gamma_per_particle, np.asarray(X).shape[:-1])


@dataclass
class MetricReport:
    steps: np.ndarray
    position_error: np.ndarray
    kl: np.ndarray
    brownian_error: float
    n_traj: int
    n_diverged: int = 0
    n_degenerate: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def gm_position_error(self) -> float:
        return geometric_mean(self.position_error)

    @property
    def gm_kl(self) -> float:
        return geometric_mean(self.kl)

    def summary(self) -> dict:
        return {
            "brownian_error": self.brownian_error,
            "gm_position_error": self.gm_position_error,
            "gm_kl": self.gm_kl,
            "n_traj": self.n_traj,
            "n_diverged": self.n_diverged,
            "n_degenerate_coordinates": self.n_degenerate,
            **self.metadata,
        }


def _model_hooks(model, spec: SystemSpec):
    if isinstance(model, ModelParams):
        drift = model_drift(model, spec)

        def gamma(X):
            return np.maximum(predict(model, spec, X).gamma.data, GAMMA_FLOOR)

        def safe_drift(X, X_prev=None):
            F, g = drift(X, X_prev)
            return F, np.maximum(g, GAMMA_FLOOR)

        return safe_drift, gamma
    return model.drift(spec), (lambda X: model.gamma(spec, X))


def evaluate(model, spec: SystemSpec, protocol: Protocol = Protocol(), seed: int = 0) -> MetricReport:
    """Ground-truth vs. model ensembles from shared initial conditions.

    Initial condition ``i`` and trajectory ``(i, j)`` draw from seeds derived
    from ``seed``; the model's noise streams are the same for every model, so
    two models evaluated with one seed face identical noise.
    """
    drift, gamma_fn = _model_hooks(model, spec)
    I, J, S, n = protocol.n_init, protocol.seeds_per_init, protocol.steps, spec.n_particles
    X0 = np.stack([random_initial_condition(spec, derive_seed(seed, f"eval-init/{i}")) for i in range(I)])

    pe_sum = np.zeros(S)
    kl_sum = np.zeros(S)
    used = 0
    n_diverged = 0
    n_degenerate = 0
    per_chunk = max(1, NODES_PER_CHUNK // (J * n))
    for c0 in range(0, I, per_chunk):
        inits = range(c0, min(I, c0 + per_chunk))
        starts = np.repeat(X0[list(inits)], J, axis=0)
        gt_seeds = [derive_seed(seed, f"eval-gt/{i}/{j}") for i in inits for j in range(J)]
        pr_seeds = [derive_seed(seed, f"eval-pred/{i}/{j}") for i in inits for j in range(J)]
        gt = simulate(spec, starts, ground_truth_drift(spec), S, gt_seeds)
        pr = simulate(spec, starts, drift, S, pr_seeds, on_divergence="mask")
        n_diverged += int(pr.diverged.sum())
        for k, _ in enumerate(inits):
            rows = slice(k * J, (k + 1) * J)
            ok = ~pr.diverged[rows]
            if ok.sum() < 2:
                continue
            g = ensemble_stats(gt.positions[rows])
            p = ensemble_stats(pr.positions[rows][ok])
            n_degenerate += int(np.sum(g.std[1:] < DEGENERATE_STD))
            pe_sum += position_error(g.mean[1:], g.std[1:], p.mean[1:]).mean(axis=-1)
            kl_sum += kl_normal(p.mean[1:], p.std[1:], g.mean[1:], g.std[1:]).mean(axis=(-2, -1))
            used += 1

    n_traj = I * J
    if n_diverged > MAX_DIVERGED_FRACTION * n_traj or used == 0:
        raise EvaluationError(f"{n_diverged} of {n_traj} predicted trajectories diverged")
    return MetricReport(
        steps=np.arange(1, S + 1),
        position_error=pe_sum / used,
        kl=kl_sum / used,
        brownian_error=brownian_error(gamma_fn(X0), spec),
        n_traj=n_traj,
        n_diverged=n_diverged,
        n_degenerate=n_degenerate,
        metadata={
            "model": getattr(model, "family", "unknown"),
            "kind": spec.kind,
            "n_particles": spec.n_particles,
            "kbt": spec.kbt,
            "seed": seed,
            "n_init": I,
            "seeds_per_init": J,
            "steps": S,
        },
    )


def zero_shot(
    model: ModelParams,
    train_spec: SystemSpec,
    n: int | None = None,
    kbt: float | None = None,
    protocol: Protocol = Protocol(),
    seed: int = 0,
) -> MetricReport:
    """Evaluate a graph model on a larger system and/or another temperature, unchanged."""
    if model.family not in GRAPH_FAMILIES:
        raise CapabilityError(f"{model.family} is not inductive and cannot be evaluated zero-shot")
    target = train_spec
    if n is not None:
        target = target.with_size(n)
    if kbt is not None:
        target = target.with_kbt(kbt)
    report = evaluate(model, target, protocol, seed)
    report.metadata["train_n_particles"] = train_spec.n_particles
    report.metadata["train_kbt"] = train_spec.kbt
    return report
