"""Training loop: loss algebra, determinism, divergence guard, EMA.

The key algebraic fact: with the residual output form, the noise-regression
loss equals half the sigma^2-weighted squared distance between the full
network map and the analytically perfect map, per sample.  Both sides are
averaged over synthesized-channel elements only.
"""

import numpy as np
import pytest

from mmsynth import tensor as T
from mmsynth.errors import ContractError, TrainingDiverged
from mmsynth.modality import (ModalitySet, _make_partition, enumerate_partitions,
                              partition_from_missing)
from mmsynth.network import NetConfig, score_shifted_output, init_params
from mmsynth.rng import derive_seed
from mmsynth.sde import VPSDE
from mmsynth.tensor import GradTape, Tensor
from mmsynth.training import (TrainConfig, _step_partition, dsm_loss,
                              make_train_state, train, train_step)
from mmsynth.worlds import gaussian_pair

MSET = ModalitySet(("m0", "m1"))
SDE = VPSDE()


def tiny_net():
    return NetConfig(widths=(16,), embed_dim=8, kernel_size=1)


def tiny_state(steps=50, seed=3, **kw):
    world = gaussian_pair(0.8)
    data = world.sample_joint(512, seed=99)
    cfg = TrainConfig(steps=steps, batch=16, lr=1e-3, seed=seed, **kw)
    return make_train_state(data, list(world.names), tiny_net(), cfg, SDE), data


def tensor_params(params):
    return {k: Tensor(v) for k, v in params.items()}


def test_zero_init_loss_is_half_mean_square_noise():
    state, data = tiny_state()
    part = partition_from_missing(state.mset, "m0")
    n = 256
    x0 = data[:n]
    t = np.full(n, 0.5)
    eps = np.random.default_rng(0).standard_normal(x0.shape)
    loss = dsm_loss(state.net_cfg, tensor_params(state.params), SDE,
                    x0, part, t, eps).item()
    # eps_hat = 0 at init, so the loss is exactly the A-channel noise energy
    expect = 0.5 * np.mean(eps[:, 0] ** 2)
    assert abs(loss - expect) < 1e-12
    # and statistically that is 1/2
    assert abs(loss - 0.5) < 0.05


def test_loss_ignores_conditional_channel_noise():
    state, data = tiny_state()
    part = partition_from_missing(state.mset, "m0")
    x0 = data[:64]
    t = np.full(64, 0.4)
    g = np.random.default_rng(1)
    eps = g.standard_normal(x0.shape)
    loss1 = dsm_loss(state.net_cfg, tensor_params(state.params), SDE,
                     x0, part, t, eps).item()
    eps2 = eps.copy()
    eps2[:, 1] = g.standard_normal(eps[:, 1].shape)   # scramble B noise only
    loss2 = dsm_loss(state.net_cfg, tensor_params(state.params), SDE,
                     x0, part, t, eps2).item()
    assert loss1 == loss2


def _nonzero_head_params(net_cfg, mset_count, seed):
    params = init_params(net_cfg, mset_count, seed=seed)
    g = np.random.default_rng(seed + 1)
    for k in params:
        if "head" in k and k.endswith(".w"):
            params[k] = 0.2 * g.standard_normal(params[k].shape)
    return params


def test_eps_loss_equals_weighted_map_distance_per_sample():
    # half sigma^2 times the squared gap between the network map and the
    # perfect map, elementwise over A, equals the noise-regression loss
    net_cfg = tiny_net()
    params = _nonzero_head_params(net_cfg, 2, seed=7)
    part = partition_from_missing(MSET, "m1")
    g = np.random.default_rng(2)
    for trial in range(10):
        x0 = g.standard_normal((1, 2, 1, 1))
        t = float(0.1 + 0.85 * g.random())
        eps = g.standard_normal(x0.shape)
        loss_eps = dsm_loss(net_cfg, tensor_params(params), SDE, x0, part,
                            np.array([t]), eps).item()

        a_t = SDE.perturb(x0, t, eps)[0, list(part.synth)]
        b = x0[0, list(part.cond)]
        nn_map = score_shifted_output(net_cfg, params, a_t, b, t, part, SDE)
        sig = float(SDE.sigma(t))
        target_a = a_t + SDE.analytic_score_target(
            a_t, x0[0, list(part.synth)], t)
        gap = nn_map[list(part.synth)] - target_a
        loss_map = 0.5 * sig * sig * np.mean(gap ** 2)
        assert abs(loss_eps - loss_map) <= 1e-10 * max(abs(loss_eps), 1e-12)


def test_literal_weighting_rescales_by_sigma():
    net_cfg = tiny_net()
    params = _nonzero_head_params(net_cfg, 2, seed=8)
    part = partition_from_missing(MSET, "m0")
    g = np.random.default_rng(3)
    x0 = g.standard_normal((8, 2, 1, 1))
    eps = g.standard_normal(x0.shape)
    t = np.full(8, 0.6)
    base = dsm_loss(net_cfg, tensor_params(params), SDE, x0, part, t, eps,
                    score_residual=False).item()
    lit = dsm_loss(net_cfg, tensor_params(params), SDE, x0, part, t, eps,
                   score_residual=True).item()
    sig = float(SDE.sigma(0.6))
    assert lit == pytest.approx(base / sig ** 2, rel=1e-12)


def test_dsm_loss_validates_inputs():
    net_cfg = tiny_net()
    params = tensor_params(init_params(net_cfg, 2, seed=0))
    x0 = np.zeros((4, 2, 1, 1))
    eps = np.zeros_like(x0)
    with pytest.raises(ContractError):
        dsm_loss(net_cfg, params, SDE, x0, _make_partition(2, []),
                 np.full(4, 0.5), eps)
    part = partition_from_missing(MSET, "m0")
    with pytest.raises(ContractError):
        dsm_loss(net_cfg, params, SDE, x0, part, np.full(4, SDE.t_min / 2), eps)


def test_gradients_flow_only_from_a_channels():
    # the loss is independent of B-channel noise, so its gradient w.r.t.
    # params must match when B noise changes
    net_cfg = tiny_net()
    params = _nonzero_head_params(net_cfg, 2, seed=9)
    part = partition_from_missing(MSET, "m0")
    g = np.random.default_rng(4)
    x0 = g.standard_normal((4, 2, 1, 1))
    t = np.full(4, 0.5)
    eps = g.standard_normal(x0.shape)

    def grads_for(e):
        with GradTape() as tape:
            pt = {k: tape.watch(Tensor(v)) for k, v in params.items()}
            loss = dsm_loss(net_cfg, pt, SDE, x0, part, t, e)
            names = list(pt)
            return dict(zip(names, tape.gradients(loss, [pt[k] for k in names])))

    g1 = grads_for(eps)
    eps2 = eps.copy()
    eps2[:, 1] = 7.7
    g2 = grads_for(eps2)
    # B-channel noise enters x_t nowhere (B uses clean x0), so identical
    for k in g1:
        assert np.array_equal(g1[k], g2[k])


def test_training_reduces_loss():
    state, data = tiny_state(steps=300, seed=5)
    losses = train(state, data)
    assert len(losses) == 300
    assert np.mean(losses[-50:]) < 0.6 * np.mean(losses[:10])


def test_training_is_deterministic_in_seed():
    s1, data = tiny_state(steps=40, seed=11)
    s2, _ = tiny_state(steps=40, seed=11)
    s3, _ = tiny_state(steps=40, seed=12)
    l1 = train(s1, data)
    l2 = train(s2, data)
    l3 = train(s3, data)
    assert l1 == l2
    for k in s1.params:
        assert np.array_equal(s1.params[k], s2.params[k])
        assert np.array_equal(s1.ema[k], s2.ema[k])
    assert l1 != l3


def test_train_runs_remaining_steps_only():
    state, data = tiny_state(steps=30)
    first = train(state, data, n_steps=12)
    assert len(first) == 12 and state.step == 12
    rest = train(state, data)
    assert len(rest) == 18 and state.step == 30
    assert train(state, data) == []


def test_step_partition_schedules():
    state, _ = tiny_state()
    # uniform: all proper partitions appear under the real per-step seeds
    seen = set()
    for s in range(100):
        state.step = s
        p = _step_partition(state, derive_seed(state.cfg.seed, 0, s))
        seen.add(p.synth)
    assert seen == {(0,), (1,)}
    # cycle: deterministic round robin in enumeration order
    state.cfg.partition_schedule = "cycle"
    order = []
    for s in range(4):
        state.step = s
        order.append(_step_partition(state, 0).synth)
    assert order == [(0,), (1,), (0,), (1,)]


def test_ema_follows_update_rule():
    state, data = tiny_state(steps=5)
    p0 = {k: v.copy() for k, v in state.params.items()}
    train_step(state, data)
    d = state.cfg.ema_decay
    for k in state.params:
        expect = d * p0[k] + (1.0 - d) * state.params[k]
        assert np.allclose(state.ema[k], expect, atol=1e-15)


def test_divergence_raises_with_diagnostics():
    state, data = tiny_state()
    head = [k for k in state.params if "head" in k and k.endswith(".w")][0]
    state.params[head][:] = np.nan
    with pytest.raises(TrainingDiverged, match="step"):
        train_step(state, data)


def test_make_train_state_validates():
    with pytest.raises(ContractError):
        make_train_state(np.zeros((0, 2, 1, 1)), ["a", "b"])
    with pytest.raises(ContractError):
        make_train_state(np.zeros((4, 3, 1, 1)), ["a", "b"])


def test_make_train_state_truncates_widths_for_small_images():
    data = np.zeros((4, 2, 1, 1))
    state = make_train_state(data, ["a", "b"],
                             NetConfig(widths=(8, 16, 32), embed_dim=8,
                                       kernel_size=1),
                             TrainConfig(steps=1, batch=2, lr=1e-3, seed=0),
                             SDE)
    assert state.net_cfg.widths == (8,)
    assert state.partitions == enumerate_partitions(state.mset)
