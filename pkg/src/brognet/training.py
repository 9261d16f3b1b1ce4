"""Gaussian negative log-likelihood training over one-step transitions."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tape, Tensor
from .integrator import NumericalError, StepPairDataset, derive_seed
from .models import GAMMA_FLOOR, ModelParams, Prediction, init_params, predict
from .systems import SystemSpec

log = logging.getLogger(__name__)

History = list[tuple[int, float, float]]


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 20
    lam: float = 1.0
    eps: float = 1e-6
    max_epochs: int = 10_000
    patience: int = 100
    min_delta: float = 1e-3
    split: float = 0.8
    seed: int = 0
    sample_noise_in_training: bool = False

    def __post_init__(self):
        if not 0.0 < self.split < 1.0:
            raise ValueError("split must lie strictly between 0 and 1")
        if self.eps <= 0 or self.lam <= 0:
            raise ValueError("eps and lam must be positive")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ValueError("batch_size, patience >= 1 and max_epochs >= 0 required")


@dataclass
class Checkpoint:
    """Everything needed to resume :func:`fit` where it stopped."""

    params: ModelParams
    opt_state: AdamState
    epoch: int = 0
    history: History = field(default_factory=list)
    best_params: ModelParams | None = None
    best_val: float = float("inf")
    ref_val: float = float("inf")
    stall: int = 0


@dataclass
class FitResult:
    params: ModelParams
    history: History
    checkpoint: Checkpoint


def gaussian_nll_loss(X_true, X_pred, sigma_hat, lam: float = 1.0, eps: float = 1e-6) -> Tensor:
    """Summed Gaussian NLL over transitions, divided by the particle count.

    ``X_true``/``X_pred`` are ``[B, n, 3]``; ``sigma_hat`` broadcasts against
    ``[B, n]``. Each coordinate contributes ``log v + lam * r**2 / v`` with
    ``v = max(sigma_hat**2, eps)``.
    """
    X_true, X_pred, sigma_hat = ad.as_tensor(X_true), ad.as_tensor(X_pred), ad.as_tensor(sigma_hat)
    for name, t in (("X_true", X_true), ("X_pred", X_pred), ("sigma_hat", sigma_hat)):
        if not np.all(np.isfinite(t.data)):
            raise NumericalError(f"non-finite values in {name}")
    n = X_true.shape[-2]
    var = ad.maximum(ad.square(sigma_hat), eps)
    var = ad.reshape(var, var.shape + (1,))
    resid2 = ad.square(ad.sub(X_true, X_pred))
    per_coord = ad.add(ad.log(var), ad.mul(ad.div(resid2, var), lam))
    return ad.div(ad.sum_all(per_coord), float(n))


def step_sigma(gamma: Tensor, kbt: float, dt: float) -> Tensor:
    """Per-step positional std sqrt(2 kBT dt / gamma), gamma floored at 1e-6."""
    return ad.sqrt(ad.div(2.0 * kbt * dt, ad.maximum(gamma, GAMMA_FLOOR)))


def predicted_mean(pred: Prediction, X, dt: float) -> Tensor:
    if pred.mean is not None:
        return pred.mean
    g = ad.maximum(pred.gamma, GAMMA_FLOOR)
    g = ad.reshape(g, g.shape + (1,))
    return ad.add(X, ad.mul(ad.div(pred.forces, g), dt))


def batch_loss(
    model: ModelParams,
    tensors: dict[str, Tensor] | None,
    batch: StepPairDataset,
    spec: SystemSpec,
    cfg: TrainConfig,
    noise: np.ndarray | None = None,
) -> Tensor:
    """Forward the model on a batch and score the Euler-Maruyama transition."""
    pred = predict(model, spec, batch.inputs, Xdot=batch.velocities, tensors=tensors)
    mean = predicted_mean(pred, batch.inputs, spec.dt)
    sigma = step_sigma(pred.gamma, spec.kbt, spec.dt)
    if noise is not None:
        mean = ad.add(mean, ad.mul(ad.reshape(sigma, sigma.shape + (1,)), noise))
    return gaussian_nll_loss(batch.targets, mean, sigma, cfg.lam, cfg.eps)


def loss_and_grads(model, batch, spec, cfg, noise=None) -> tuple[float, dict[str, np.ndarray]]:
    tensors = model.tensors(requires_grad=True)
    with Tape() as tape:
        loss = batch_loss(model, tensors, batch, spec, cfg, noise)
    names = list(tensors)
    grads = tape.gradient(loss, [tensors[k] for k in names])
    return float(loss.data), dict(zip(names, grads))


def train_step(
    params: ModelParams,
    opt_state: AdamState,
    batch: StepPairDataset,
    spec: SystemSpec,
    cfg: TrainConfig,
    noise: np.ndarray | None = None,
    batch_index: int = 0,
) -> tuple[ModelParams, AdamState, float]:
    loss, grads = loss_and_grads(params, batch, spec, cfg, noise)
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise TrainingError(f"non-finite loss or gradient at batch {batch_index}")
    new, opt_state = ad.adam_step(params.params, grads, opt_state, cfg.lr)
    return params.with_params(new), opt_state, loss


def dataset_loss(params: ModelParams, data: StepPairDataset, spec: SystemSpec, cfg: TrainConfig, chunk: int = 2000) -> float:
    """Mean loss per transition, no gradient tape."""
    if len(data) == 0:
        return float("nan")
    total = 0.0
    for start in range(0, len(data), chunk):
        part = data.subset(np.arange(start, min(start + chunk, len(data))))
        total += float(batch_loss(params, None, part, spec, cfg).data)
    return total / len(data)


def split_indices(n: int, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic train/validation partition from (n, seed)."""
    perm = np.random.default_rng(derive_seed(cfg.seed, "split")).permutation(n)
    n_train = int(round(cfg.split * n))
    if n > 1:
        n_train = min(max(n_train, 1), n - 1)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def fit(
    family: str,
    spec: SystemSpec,
    dataset: StepPairDataset,
    cfg: TrainConfig,
    init: ModelParams | None = None,
    resume: Checkpoint | None = None,
    on_epoch_end: Callable[[int, ModelParams], None] | None = None,
) -> FitResult:
    """Mini-batch Adam on the Gaussian NLL with patience-based stopping.

    Returns the parameters with the best validation loss. Each epoch's
    shuffle depends only on (seed, epoch), so a resumed run replays the same
    batches as an uninterrupted one.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    train_idx, val_idx = split_indices(len(dataset), cfg)
    train, val = dataset.subset(train_idx), dataset.subset(val_idx)
    if len(val) == 0:
        val = train

    if resume is not None:
        ck = resume
    else:
        model = init if init is not None else init_params(family, spec, derive_seed(cfg.seed, "init"))
        ck = Checkpoint(model, AdamState.zeros_like(model.params), best_params=model)

    while ck.epoch < cfg.max_epochs and ck.stall < cfg.patience:
        epoch = ck.epoch
        order = np.random.default_rng(derive_seed(cfg.seed, f"epoch/{epoch}")).permutation(len(train))
        noise_rng = np.random.default_rng(derive_seed(cfg.seed, f"train-noise/{epoch}"))
        total = 0.0
        params, opt = ck.params, ck.opt_state
        for b, start in enumerate(range(0, len(train), cfg.batch_size)):
            batch = train.subset(order[start : start + cfg.batch_size])
            noise = noise_rng.standard_normal(batch.inputs.shape) if cfg.sample_noise_in_training else None
            params, opt, loss = train_step(params, opt, batch, spec, cfg, noise, b)
            total += loss
        train_loss = total / len(train)
        val_loss = dataset_loss(params, val, spec, cfg)
        if not np.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss after epoch {epoch}")
        ck.params, ck.opt_state = params, opt
        ck.history.append((epoch, train_loss, val_loss))
        if val_loss < ck.best_val:
            ck.best_val, ck.best_params = val_loss, params
        if val_loss < ck.ref_val - cfg.min_delta:
            ck.ref_val, ck.stall = val_loss, 0
        else:
            ck.stall += 1
        ck.epoch = epoch + 1
        log.info("epoch %d train %.6f val %.6f", epoch, train_loss, val_loss)
        if on_epoch_end is not None:
            on_epoch_end(epoch, params)

    best = ck.best_params if ck.best_params is not None else ck.params
    return FitResult(best, list(ck.history), ck)
