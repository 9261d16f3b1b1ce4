import math

import numpy as np
import pytest

from brognet.autodiff import AdamState
from brognet.integrator import NumericalError, generate_training_data
from brognet.models import FAMILIES, init_params, predict
from brognet.systems import default_spec
from brognet.training import (
    TrainConfig,
    TrainingError,
    batch_loss,
    dataset_loss,
    fit,
    gaussian_nll_loss,
    loss_and_grads,
    split_indices,
    train_step,
)

from conftest import rel_err


@pytest.fixture(scope="module")
def small_data():
    spec = default_spec("linear", 5)
    return spec, generate_training_data(spec, n_traj=6, points_per_traj=20, seed=3)


def test_nll_zero_residual_unit_sigma():
    X = np.zeros((1, 2, 3))
    assert float(gaussian_nll_loss(X, X, np.ones((1, 2))).data) == 0.0


def test_nll_unit_residual():
    X = np.zeros((1, 1, 3))
    Y = X.copy()
    Y[0, 0, 0] = 1.0
    assert float(gaussian_nll_loss(Y, X, np.ones((1, 1))).data) == pytest.approx(1.0)


def test_nll_eps_floor():
    X = np.zeros((1, 1, 3))
    val = float(gaussian_nll_loss(X, X, np.zeros((1, 1)), eps=1e-6).data)
    assert val == pytest.approx(3 * math.log(1e-6))


def test_nll_lambda_scales_residual_only():
    X = np.zeros((1, 1, 3))
    Y = np.full((1, 1, 3), 0.5)
    sig = np.full((1, 1), 2.0)
    l1 = float(gaussian_nll_loss(Y, X, sig, lam=1.0).data)
    l3 = float(gaussian_nll_loss(Y, X, sig, lam=3.0).data)
    assert l3 - l1 == pytest.approx(2 * 3 * 0.25 / 4.0)


def test_nll_rejects_nan():
    with pytest.raises(NumericalError):
        gaussian_nll_loss(np.full((1, 1, 3), np.nan), np.zeros((1, 1, 3)), np.ones((1, 1)))


def test_nll_minimized_at_true_variance(rng):
    # for Gaussian residuals with variance s2 the expected loss is minimized at sigma^2 = s2
    r = rng.normal(0, 0.3, size=(2000, 4, 3))
    losses = {s: float(gaussian_nll_loss(r, 0 * r, np.full((2000, 4), s)).data) for s in (0.2, 0.3, 0.4)}
    assert losses[0.3] < losses[0.2] and losses[0.3] < losses[0.4]


@pytest.mark.parametrize("family", FAMILIES)
def test_loss_gradients_match_finite_differences(family):
    spec = default_spec("linear", 2)
    data = generate_training_data(spec, n_traj=2, points_per_traj=4, seed=1)
    model = init_params(family, spec, 0)
    cfg = TrainConfig()
    _, grads = loss_and_grads(model, data, spec, cfg)
    flat_a, flat_fd = [], []
    h = 1e-5
    for name, v in model.params.items():
        for idx in np.ndindex(v.shape):
            p_up = {k: a.copy() for k, a in model.params.items()}
            p_dn = {k: a.copy() for k, a in model.params.items()}
            p_up[name][idx] += h
            p_dn[name][idx] -= h
            up = float(batch_loss(model.with_params(p_up), None, data, spec, cfg).data)
            dn = float(batch_loss(model.with_params(p_dn), None, data, spec, cfg).data)
            flat_fd.append((up - dn) / (2 * h))
            flat_a.append(grads[name][idx])
    assert rel_err(np.array(flat_a), np.array(flat_fd)) < 1e-4


def test_gamma_learned_from_pure_noise():
    # with no forces the optimum gamma is set entirely by the step variance
    spec = default_spec("linear", 2, kbt=1.0)
    from brognet.systems import SystemSpec
    free = SystemSpec(n_particles=2, bonds=((0, 1),), k=0.0, kbt=1.0, dt=1e-3)
    data = generate_training_data(free, n_traj=20, points_per_traj=50, seed=0)
    cfg = TrainConfig(lr=3e-2, batch_size=100, max_epochs=60, patience=1000)
    res = fit("brognet", free, data, cfg)
    g = predict(res.params, free, data.inputs[:1]).gamma.data
    assert np.all(np.abs(g - 1.0) < 0.1)


def test_train_step_decreases_loss(small_data):
    spec, data = small_data
    model = init_params("brognet", spec, 0)
    cfg = TrainConfig(lr=1e-2)
    opt = AdamState.zeros_like(model.params)
    start = dataset_loss(model, data, spec, cfg)
    for _ in range(20):
        model, opt, _ = train_step(model, opt, data, spec, cfg)
    assert dataset_loss(model, data, spec, cfg) < start


def test_adam_step_size_bound(small_data):
    spec, data = small_data
    model = init_params("bdgnn", spec, 0)
    cfg = TrainConfig(lr=1e-3)
    new, _, _ = train_step(model, AdamState.zeros_like(model.params), data, spec, cfg)
    for k in model.params:
        assert np.all(np.abs(new.params[k] - model.params[k]) <= 1e-3 * (1 + 1e-9))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_step_flags_non_finite(small_data):
    spec, data = small_data
    model = init_params("brognet", spec, 0)
    bad = {k: v.copy() for k, v in model.params.items()}
    bad["force/0/w"][0, 0] = np.inf
    with pytest.raises((TrainingError, NumericalError)):
        train_step(model.with_params(bad), AdamState.zeros_like(bad), data, spec, TrainConfig(), batch_index=4)


def test_zero_epochs_returns_init(small_data):
    spec, data = small_data
    init = init_params("brognet", spec, 9)
    res = fit("brognet", spec, data, TrainConfig(max_epochs=0), init=init)
    assert res.history == []
    assert all(np.array_equal(res.params.params[k], init.params[k]) for k in init.params)


def test_fit_is_deterministic(small_data):
    spec, data = small_data
    cfg = TrainConfig(max_epochs=3, seed=4)
    a = fit("brognet", spec, data, cfg)
    b = fit("brognet", spec, data, cfg)
    assert a.history == b.history
    assert all(np.array_equal(a.params.params[k], b.params.params[k]) for k in a.params.params)


def test_split_is_deterministic_and_disjoint():
    cfg = TrainConfig(seed=2)
    tr, va = split_indices(100, cfg)
    tr2, va2 = split_indices(100, cfg)
    assert np.array_equal(tr, tr2) and np.array_equal(va, va2)
    assert len(tr) == 80 and len(va) == 20
    assert set(tr).isdisjoint(va)
    assert not np.array_equal(split_indices(100, TrainConfig(seed=3))[0], tr)


def test_resume_matches_uninterrupted(small_data):
    spec, data = small_data
    full = fit("brognet", spec, data, TrainConfig(max_epochs=4, seed=1))
    part = fit("brognet", spec, data, TrainConfig(max_epochs=2, seed=1))
    resumed = fit("brognet", spec, data, TrainConfig(max_epochs=4, seed=1), resume=part.checkpoint)
    assert resumed.history == full.history
    for k in full.params.params:
        assert np.array_equal(resumed.params.params[k], full.params.params[k])


def test_early_stopping_on_patience(small_data):
    spec, data = small_data
    res = fit("brognet", spec, data, TrainConfig(max_epochs=50, patience=2, min_delta=1e9))
    # the first epoch always improves on the infinite reference, then two stalls
    assert len(res.history) == 3


def test_history_and_best_params(small_data):
    spec, data = small_data
    res = fit("bdgnn", spec, data, TrainConfig(max_epochs=5, lr=1e-2))
    vals = [h[2] for h in res.history]
    assert min(vals) == pytest.approx(res.checkpoint.best_val)
    _, val_idx = split_indices(len(data), TrainConfig())
    assert dataset_loss(res.params, data.subset(val_idx), spec, TrainConfig()) == pytest.approx(min(vals))


def test_noise_sampling_flag_changes_training(small_data):
    spec, data = small_data
    a = fit("brognet", spec, data, TrainConfig(max_epochs=1))
    b = fit("brognet", spec, data, TrainConfig(max_epochs=1, sample_noise_in_training=True))
    assert a.history[0][1] != b.history[0][1]


def true_dynamics_loss(data, spec, gamma_scale=1.0):
    from brognet.systems import spring_force

    gamma = spec.gamma_per_particle * gamma_scale
    mean = data.inputs + spring_force(spec, data.inputs) / gamma[:, None] * spec.dt
    sigma = np.sqrt(2 * spec.kbt * spec.dt / gamma)
    return float(gaussian_nll_loss(data.targets, mean, np.broadcast_to(sigma, data.inputs.shape[:2])).data) / len(data)


@pytest.mark.parametrize("kind,n", [("linear", 5), ("binary", 10)])
def test_true_force_teacher_prefers_true_gamma(kind, n):
    spec = default_spec(kind, n)
    data = generate_training_data(spec, n_traj=20, points_per_traj=50, seed=8)
    losses = {s: true_dynamics_loss(data, spec, s) for s in (0.5, 1.0, 2.0)}
    assert losses[1.0] < losses[0.5] and losses[1.0] < losses[2.0]


def test_training_closes_most_of_the_gap_to_true_dynamics():
    # the loss is a log-density and can be negative, so progress is measured
    # as the excess over the loss of the true force law with the true gamma
    spec = default_spec("linear", 5)
    data = generate_training_data(spec, n_traj=100, points_per_traj=100, seed=0)
    cfg = TrainConfig(max_epochs=10, seed=0)
    _, val_idx = split_indices(len(data), cfg)
    val = data.subset(val_idx)
    floor = true_dynamics_loss(val, spec)
    init = init_params("brognet", spec, 0)
    before = dataset_loss(init, val, spec, cfg) - floor
    after = dataset_loss(fit("brognet", spec, data, cfg, init=init).params, val, spec, cfg) - floor
    assert before > 0
    assert after < 0.5 * before


def test_zero_residual_leaves_only_variance_gradient():
    from brognet.autodiff import Tape, Tensor

    X = np.random.default_rng(0).normal(size=(3, 2, 3))
    pred = Tensor(X.copy(), requires_grad=True)
    sig = Tensor(np.full((3, 2), 0.5), requires_grad=True)
    with Tape() as tape:
        loss = gaussian_nll_loss(X, pred, sig)
    g_pred, g_sig = tape.gradient(loss, [pred, sig])
    assert np.all(g_pred == 0)
    # d/ds of 3*log(s^2)/n per particle = 6 / (s n)
    np.testing.assert_allclose(g_sig, 6 / (0.5 * 2))
