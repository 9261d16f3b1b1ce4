"""Euler-Maruyama integration of overdamped Langevin dynamics and dataset generation."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .systems import SystemSpec, spring_force

DIVERGENCE_LIMIT = 1e6
INIT_JITTER = 0.1

DriftFn = Callable[[np.ndarray, np.ndarray | None], tuple[np.ndarray, np.ndarray]]


class NumericalError(ArithmeticError):
    pass


class DivergenceError(NumericalError):
    def __init__(self, step: int, msg: str = ""):
        self.step = step
        super().__init__(msg or f"trajectory diverged at step {step}")


def derive_seed(seed: int, purpose: str) -> int:
    """Split a global seed into an independent 63-bit seed for ``purpose``."""
    digest = hashlib.sha256(f"{int(seed)}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass(frozen=True)
class NoiseStream:
    """Standard-normal draws for one trajectory.

    Step ``s`` consumes the ``s``-th block of ``n*3`` draws from a generator
    seeded only by ``seed``, so results never depend on batching or on which
    other trajectories are simulated alongside.
    """

    seed: int

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))


class _EnsembleNoise:
    def __init__(self, seeds, n: int, block: int = 64):
        self.gens = [NoiseStream(s).generator() for s in seeds]
        self.n = n
        self.block = block
        self.buf: np.ndarray | None = None
        self.pos = block

    def next(self) -> np.ndarray:
        if self.pos >= self.block:
            self.buf = np.stack([g.standard_normal((self.block, self.n, 3)) for g in self.gens])
            self.pos = 0
        out = self.buf[:, self.pos]
        self.pos += 1
        return out


@dataclass
class TrajectoryEnsemble:
    spec: SystemSpec
    positions: np.ndarray  # [n_traj, n_steps + 1, n, 3]
    seeds: list[int]
    diverged: np.ndarray = None  # [n_traj] bool

    def __post_init__(self):
        if self.diverged is None:
            self.diverged = np.zeros(self.positions.shape[0], dtype=bool)

    @property
    def n_traj(self) -> int:
        return self.positions.shape[0]

    @property
    def n_steps(self) -> int:
        return self.positions.shape[1] - 1

    @property
    def duration(self) -> float:
        return self.n_steps * self.spec.dt


@dataclass
class StepPairDataset:
    """One-step transitions ``X_t -> X_{t+dt}``.

    ``prev`` holds ``X_{t-dt}`` where ``has_prev`` is set; velocity features
    fall back to zero otherwise.
    """

    spec: SystemSpec
    inputs: np.ndarray
    targets: np.ndarray
    prev: np.ndarray
    has_prev: np.ndarray
    traj_ids: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def velocities(self) -> np.ndarray:
        v = (self.inputs - self.prev) / self.spec.dt
        return np.where(self.has_prev[:, None, None], v, 0.0)

    def subset(self, idx) -> "StepPairDataset":
        idx = np.asarray(idx)
        return StepPairDataset(
            self.spec,
            self.inputs[idx],
            self.targets[idx],
            self.prev[idx],
            self.has_prev[idx],
            None if self.traj_ids is None else self.traj_ids[idx],
        )


def em_step(spec: SystemSpec, X, force, gamma, noise, kbt: float | None = None) -> np.ndarray:
    """One Euler-Maruyama step: ``X + F/gamma dt + sqrt(2 kBT dt / gamma) xi``.

    Shapes ``[..., n, 3]`` for positions, forces and noise; ``[..., n]`` for gamma.
    """
    force = np.asarray(force, dtype=np.float64)
    if not np.all(np.isfinite(force)):
        bad = np.argwhere(~np.isfinite(force))[0]
        raise NumericalError(f"non-finite force on particle {int(bad[-2])}")
    gamma = np.asarray(gamma, dtype=np.float64)
    if np.any(gamma <= 0):
        raise ValueError("gamma must be positive")
    kbt = spec.kbt if kbt is None else kbt
    dt = spec.dt
    g = gamma[..., None]
    return X + force / g * dt + np.sqrt(2.0 * kbt * dt / g) * noise


def ground_truth_drift(spec: SystemSpec) -> DriftFn:
    gamma = spec.gamma_per_particle

    def drift(X, X_prev=None):
        return spring_force(spec, X), np.broadcast_to(gamma, X.shape[:-1])

    return drift


def simulate(
    spec: SystemSpec,
    X0: np.ndarray,
    drift: DriftFn,
    steps: int,
    seeds,
    on_divergence: str = "raise",
) -> TrajectoryEnsemble:
    """Roll out ``len(seeds)`` trajectories in lock-step.

    ``X0`` is ``[T, n, 3]``. ``drift(X, X_prev)`` returns forces ``[T, n, 3]``
    and gammas ``[T, n]``. With ``on_divergence="mask"`` diverging
    trajectories are frozen and flagged instead of raising.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    X0 = np.asarray(X0, dtype=np.float64)
    T, n = X0.shape[0], X0.shape[1]
    seeds = [int(s) for s in seeds]
    if len(seeds) != T:
        raise ValueError("one seed per trajectory required")
    out = np.empty((T, steps + 1, n, 3))
    out[:, 0] = X0
    noise = _EnsembleNoise(seeds, n)
    alive = np.ones(T, dtype=bool)
    X, X_prev = X0, None
    for s in range(steps):
        xi = noise.next()
        F, gamma = drift(X, X_prev)
        F = np.asarray(F, dtype=np.float64)
        if on_divergence == "raise":
            try:
                X_new = em_step(spec, X, F, gamma, xi)
            except NumericalError as exc:
                raise DivergenceError(s + 1, f"step {s + 1}: {exc}") from exc
            if np.any(np.abs(X_new) > DIVERGENCE_LIMIT):
                raise DivergenceError(s + 1)
        else:
            ok = np.all(np.isfinite(F), axis=(-2, -1)) & alive
            F = np.where(ok[:, None, None], F, 0.0)
            X_new = em_step(spec, X, F, gamma, xi)
            blown = ~np.all(np.abs(X_new) <= DIVERGENCE_LIMIT, axis=(-2, -1))
            alive &= ok & ~blown
            X_new = np.where(alive[:, None, None], X_new, X)
        out[:, s + 1] = X_new
        X_prev, X = X, X_new
    return TrajectoryEnsemble(spec, out, seeds, ~alive)


def rollout(
    spec: SystemSpec,
    X0: np.ndarray,
    force_fn: Callable[[np.ndarray], np.ndarray],
    gamma_fn: Callable[[], np.ndarray] | None,
    steps: int,
    seed: int,
) -> np.ndarray:
    """Single-trajectory roll-out; returns positions ``[steps + 1, n, 3]``."""
    gamma = spec.gamma_per_particle if gamma_fn is None else np.asarray(gamma_fn())

    def drift(X, X_prev=None):
        return force_fn(X[0])[None], np.broadcast_to(gamma, X.shape[:-1])

    ens = simulate(spec, np.asarray(X0)[None], drift, steps, [seed])
    return ens.positions[0]


def random_initial_condition(spec: SystemSpec, seed: int, jitter: float = INIT_JITTER) -> np.ndarray:
    """Regular polygon with side ``rest_length`` in the xy-plane plus Gaussian jitter."""
    n, R = spec.n_particles, spec.rest_length
    radius = R / (2.0 * math.sin(math.pi / n))
    theta = 2.0 * np.pi * np.arange(n) / n
    X = np.stack([radius * np.cos(theta), radius * np.sin(theta), np.zeros(n)], axis=1)
    if jitter > 0:
        rng = np.random.default_rng(seed)
        X = X + rng.normal(0.0, jitter * R, size=X.shape)
    return X


def generate_ensemble(spec: SystemSpec, n_traj: int, steps: int, seed: int) -> TrajectoryEnsemble:
    X0 = np.stack([random_initial_condition(spec, derive_seed(seed, f"init/{i}")) for i in range(n_traj)])
    seeds = [derive_seed(seed, f"noise/{i}") for i in range(n_traj)]
    return simulate(spec, X0, ground_truth_drift(spec), steps, seeds)


def extract_pairs(ens: TrajectoryEnsemble) -> StepPairDataset:
    P = ens.positions
    T, S = P.shape[0], P.shape[1] - 1
    inputs = P[:, :-1].reshape(T * S, *P.shape[2:])
    targets = P[:, 1:].reshape(T * S, *P.shape[2:])
    prev = np.concatenate([P[:, :1], P[:, :-2]], axis=1).reshape(T * S, *P.shape[2:])
    has_prev = np.tile(np.arange(S) > 0, T)
    traj_ids = np.repeat(np.arange(T), S)
    return StepPairDataset(ens.spec, inputs, targets, prev, has_prev, traj_ids)


def generate_training_data(
    spec: SystemSpec, n_traj: int = 100, points_per_traj: int = 100, seed: int = 0
) -> StepPairDataset:
    return extract_pairs(generate_ensemble(spec, n_traj, points_per_traj, seed))
