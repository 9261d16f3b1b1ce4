"""Benchmark spring systems and their ground-truth force fields."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

KINDS = ("linear", "nonlinear", "binary")
BINARY_TYPE0_FRACTION = 0.3


class SingularityError(ValueError):
    pass


@dataclass(frozen=True)
class SystemSpec:
    """Physical description of an n-particle spring system.

    ``bonds`` lists undirected springs ``(i, j)``; the particle graph carries
    each as two directed edges. ``gamma`` maps particle type to friction.
    """

    n_particles: int
    bonds: tuple[tuple[int, int], ...]
    force_law: str = "linear"
    k: float = 1.0
    rest_length: float = 1.0
    types: tuple[int, ...] = ()
    gamma: tuple[float, ...] = (1.0,)
    kbt: float = 1.0
    dt: float = 1e-3
    mass: float = 1.0
    kind: str = "linear"

    def __post_init__(self):
        if not self.types:
            object.__setattr__(self, "types", (0,) * self.n_particles)
        if self.n_particles < 2:
            raise ValueError(f"need at least 2 particles, got {self.n_particles}")
        if len(self.types) != self.n_particles:
            raise ValueError("types must have one entry per particle")
        if self.force_law not in ("linear", "cubic"):
            raise ValueError(f"unknown force law {self.force_law!r}")
        if any(g <= 0 for g in self.gamma):
            raise ValueError("every gamma must be positive")
        if self.kbt < 0:
            raise ValueError("kBT must be non-negative")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if any(t < 0 or t >= len(self.gamma) for t in self.types):
            raise ValueError("particle type without a gamma entry")
        for i, j in self.bonds:
            if not (0 <= i < self.n_particles and 0 <= j < self.n_particles) or i == j:
                raise ValueError(f"bond ({i}, {j}) references an invalid particle")
        expected_types = 2 if self.kind == "binary" else 1
        if len(set(self.types)) != expected_types or len(self.gamma) != expected_types:
            raise ValueError(f"{self.kind} systems need exactly {expected_types} particle type(s)")

    @property
    def n_types(self) -> int:
        return len(self.gamma)

    @property
    def gamma_per_particle(self) -> np.ndarray:
        return np.asarray(self.gamma)[np.asarray(self.types)]

    @property
    def edges(self) -> np.ndarray:
        """Directed edges ``[E, 2]`` as (sender, receiver): each bond both ways."""
        if not self.bonds:
            return np.zeros((0, 2), dtype=np.intp)
        b = np.asarray(self.bonds, dtype=np.intp)
        return np.concatenate([b, b[:, ::-1]], axis=0)

    def with_size(self, n: int) -> "SystemSpec":
        return default_spec(self.kind, n, kbt=self.kbt, dt=self.dt)

    def with_kbt(self, kbt: float) -> "SystemSpec":
        return replace(self, kbt=kbt)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_particles": self.n_particles,
            "force_law": self.force_law,
            "k": self.k,
            "rest_length": self.rest_length,
            "kbt": self.kbt,
            "dt": self.dt,
            "mass": self.mass,
            "gamma": list(self.gamma),
            "types": list(self.types),
            "bonds": [list(b) for b in self.bonds],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemSpec":
        return cls(
            n_particles=int(d["n_particles"]),
            bonds=tuple(tuple(int(x) for x in b) for b in d["bonds"]),
            force_law=d["force_law"],
            k=float(d["k"]),
            rest_length=float(d["rest_length"]),
            types=tuple(int(t) for t in d["types"]),
            gamma=tuple(float(g) for g in d["gamma"]),
            kbt=float(d["kbt"]),
            dt=float(d["dt"]),
            mass=float(d.get("mass", 1.0)),
            kind=d["kind"],
        )


def ring_bonds(n: int) -> tuple[tuple[int, int], ...]:
    seen, bonds = set(), []
    for i in range(n):
        j = (i + 1) % n
        key = (min(i, j), max(i, j))
        if key not in seen:
            seen.add(key)
            bonds.append((i, j))
    return tuple(bonds)


def default_spec(kind: str, n: int, kbt: float = 1.0, dt: float = 1e-3) -> SystemSpec:
    if kind not in KINDS:
        raise ValueError(f"unknown system kind {kind!r}; choose from {KINDS}")
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if kind == "binary":
        if n % 10:
            raise ValueError(f"binary systems need n divisible by 10 for the 3:7 mix, got {n}")
        n0 = round(BINARY_TYPE0_FRACTION * n)
        types = (0,) * n0 + (1,) * (n - n0)
        gamma = (1.0, 2.0)
    else:
        types = (0,) * n
        gamma = (1.0,)
    return SystemSpec(
        n_particles=n,
        bonds=ring_bonds(n),
        force_law="cubic" if kind == "nonlinear" else "linear",
        types=types,
        gamma=gamma,
        kbt=kbt,
        dt=dt,
        kind=kind,
    )


def spring_force(spec: SystemSpec, X: np.ndarray) -> np.ndarray:
    """Summed spring force on every particle; X is ``[..., n, 3]``."""
    X = np.asarray(X, dtype=np.float64)
    F = np.zeros_like(X)
    if not spec.bonds:
        return F
    b = np.asarray(spec.bonds, dtype=np.intp)
    i, j = b[:, 0], b[:, 1]
    diff = X[..., i, :] - X[..., j, :]
    d = np.linalg.norm(diff, axis=-1)
    if np.any(d <= 1e-9):
        bad = np.argwhere(d <= 1e-9)[0]
        raise SingularityError(f"bonded particles {tuple(b[bad[-1]])} coincide")
    stretch = d - spec.rest_length
    mag = -spec.k * (stretch if spec.force_law == "linear" else stretch**3)
    f = (mag / d)[..., None] * diff
    # accumulate per particle along the last-but-one axis
    np.add.at(np.moveaxis(F, -2, 0), i, np.moveaxis(f, -2, 0))
    np.add.at(np.moveaxis(F, -2, 0), j, -np.moveaxis(f, -2, 0))
    return F


def potential_energy(spec: SystemSpec, X: np.ndarray) -> float:
    X = np.asarray(X, dtype=np.float64)
    b = np.asarray(spec.bonds, dtype=np.intp)
    d = np.linalg.norm(X[b[:, 0]] - X[b[:, 1]], axis=-1)
    s = d - spec.rest_length
    if spec.force_law == "linear":
        return float(np.sum(0.5 * spec.k * s**2))
    return float(np.sum(0.25 * spec.k * s**4))


def ground_truth_sigma(spec: SystemSpec, particle: int) -> float:
    return math.sqrt(2.0 * spec.gamma[spec.types[particle]] * spec.kbt)
