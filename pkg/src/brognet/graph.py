"""Particle graphs: directed edges with relative-displacement features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .systems import SystemSpec


@dataclass
class ParticleGraph:
    """A (possibly batched) particle graph.

    A batch of ``B`` configurations is stored as a disjoint union with
    ``B * n`` nodes; ``batch_shape`` remembers how to fold results back.
    """

    n_nodes: int
    senders: np.ndarray
    receivers: np.ndarray
    node_types: np.ndarray  # one-hot [N, n_types]
    edge_features: np.ndarray  # [E, 3], X_sender - X_receiver
    batch_shape: tuple[int, ...] = ()

    @property
    def n_edges(self) -> int:
        return self.senders.shape[0]


def build_graph(spec: SystemSpec, X: np.ndarray, edges: np.ndarray | None = None) -> ParticleGraph:
    """Graph for positions ``X`` of shape ``[n, 3]`` or ``[B, n, 3]``."""
    X = np.asarray(X, dtype=np.float64)
    n = spec.n_particles
    if X.shape[-2:] != (n, 3):
        raise ValueError(f"positions of shape {X.shape} do not match {n} particles")
    if not np.all(np.isfinite(X)):
        raise ValueError("positions must be finite")
    batch_shape = X.shape[:-2]
    B = int(np.prod(batch_shape)) if batch_shape else 1
    edges = spec.edges if edges is None else np.asarray(edges, dtype=np.intp).reshape(-1, 2)
    offsets = (np.arange(B) * n)[:, None]
    senders = (edges[:, 0][None] + offsets).ravel()
    receivers = (edges[:, 1][None] + offsets).ravel()
    flat = X.reshape(B * n, 3)
    onehot = np.eye(spec.n_types)[np.asarray(spec.types)]
    return ParticleGraph(
        n_nodes=B * n,
        senders=senders,
        receivers=receivers,
        node_types=np.tile(onehot, (B, 1)),
        edge_features=flat[senders] - flat[receivers],
        batch_shape=batch_shape,
    )
