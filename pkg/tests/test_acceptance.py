"""Acceptance gate: nine end-to-end claims, one printed verdict line each.

Each test measures its quantities, prints a single [PASS]/[FAIL] line with
the observed values (bypassing capture, so verdicts land in live output),
then asserts.  The two trained models are session fixtures; their training
time counts against the stated budgets.  Everything is seeded, so the whole
gate is deterministic run to run.
"""

import math
import pathlib
import time

import numpy as np
import pytest

from mmsynth import rng
from mmsynth import tensor as T
from mmsynth.cli import main as cli_main
from mmsynth.metrics import eval_report, mae, psnr, ssim
from mmsynth.modality import enumerate_partitions, format_partition
from mmsynth.network import NetConfig, init_params, score_shifted_output
from mmsynth.sampling import (NetScoreSource, OracleScoreSource, SamplerConfig,
                              generate, generate_many)
from mmsynth.sde import VPSDE
from mmsynth.training import TrainConfig, dsm_loss, make_train_state, train
from mmsynth.verification import (ks_statistic, net_score_errors,
                                  sampler_moment_errors)
from mmsynth.worlds import (ShapeWorld, gaussian_pair, gaussian_trio,
                            lesion_contrast, make_shape_dataset,
                            make_shape_subject)


def _verdict(capsys, num, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}"
    with capsys.disabled():
        print(f"\n{line}")
    assert ok, line


# --------------------------------------------------------------------------
# trained fixtures

@pytest.fixture(scope="session")
def gauss3_model():
    """Single network over all six partitions of the three-modality world."""
    world = gaussian_trio()
    data = world.sample_joint(16384, seed=11)
    state = make_train_state(
        data, world.names,
        net_cfg=NetConfig(widths=(128,), embed_dim=64, kernel_size=1),
        train_cfg=TrainConfig(steps=15000, batch=256, lr=1e-3, seed=5))
    t0 = time.monotonic()
    train(state, data)
    return world, state, time.monotonic() - t0


@pytest.fixture(scope="session")
def shapes_model():
    """Network trained on the shape-and-lesion image world."""
    world = ShapeWorld()
    data = make_shape_dataset(world, 2048, seed=21)
    state = make_train_state(
        data, world.names,
        net_cfg=NetConfig(widths=(16, 32), embed_dim=64, kernel_size=3),
        train_cfg=TrainConfig(steps=4000, batch=8, lr=5e-4, seed=9))
    t0 = time.monotonic()
    train(state, data)
    return world, state, time.monotonic() - t0


# --------------------------------------------------------------------------
# 1: every differentiable primitive against central finite differences

def _fd_worst_rel(arrays, forward, h=1e-5):
    with T.GradTape() as tape:
        ts = [tape.watch(T.Tensor(a)) for a in arrays]
        grads = tape.gradients(forward(ts), ts)
    worst = 0.0
    for idx, a in enumerate(arrays):
        fd = np.zeros_like(a)
        for j in range(fd.size):
            hi = [x.copy() for x in arrays]
            lo = [x.copy() for x in arrays]
            hi[idx].reshape(-1)[j] += h
            lo[idx].reshape(-1)[j] -= h
            fp = forward([T.Tensor(x) for x in hi]).item()
            fm = forward([T.Tensor(x) for x in lo]).item()
            fd.reshape(-1)[j] = (fp - fm) / (2.0 * h)
        denom = max(np.linalg.norm(fd), 1e-10)
        worst = max(worst, float(np.linalg.norm(grads[idx] - fd) / denom))
    return worst


def test_criterion_1_gradients_match_finite_differences(capsys):
    t0 = time.monotonic()
    cot = {}

    def reduce(out, key, g):
        if key not in cot:
            cot[key] = T.Tensor(g.standard_normal(out.shape))
        return T.tsum(T.mul(out, cot[key]))

    x4 = lambda g: g.standard_normal((2, 3, 4, 4))
    pair = lambda g: [g.standard_normal((3, 4)), g.standard_normal((3, 4))]
    cases = {
        "add": (pair, lambda ts, g: reduce(T.add(*ts), "add", g)),
        "sub": (pair, lambda ts, g: reduce(T.sub(*ts), "sub", g)),
        "mul": (pair, lambda ts, g: reduce(T.mul(*ts), "mul", g)),
        "scale": (lambda g: [g.standard_normal((3, 4))],
                  lambda ts, g: reduce(T.scale(ts[0], -1.7), "scale", g)),
        "silu": (lambda g: [g.standard_normal((3, 4))],
                 lambda ts, g: reduce(T.silu(ts[0]), "silu", g)),
        "bias_add": (lambda g: [x4(g), g.standard_normal(3)],
                     lambda ts, g: reduce(T.bias_add(*ts), "bias_add", g)),
        "matmul": (lambda g: [g.standard_normal((3, 4)), g.standard_normal((4, 2))],
                   lambda ts, g: reduce(T.matmul(*ts), "matmul", g)),
        "conv2d": (lambda g: [x4(g), g.standard_normal((2, 3, 3, 3))],
                   lambda ts, g: reduce(T.conv2d(ts[0], ts[1], padding=1), "conv", g)),
        "upsample2": (lambda g: [g.standard_normal((1, 2, 3, 3))],
                      lambda ts, g: reduce(T.upsample2(ts[0]), "up", g)),
        "avgpool2": (lambda g: [x4(g)],
                     lambda ts, g: reduce(T.avgpool2(ts[0]), "pool", g)),
        "group_norm": (lambda g: [x4(g), g.standard_normal(3), g.standard_normal(3)],
                       lambda ts, g: reduce(T.group_norm(*ts), "gn", g)),
        "concat_channels": (lambda g: [x4(g), g.standard_normal((2, 2, 4, 4))],
                            lambda ts, g: reduce(T.concat_channels(*ts), "cat", g)),
        "tsum": (lambda g: [g.standard_normal((3, 4))],
                 lambda ts, g: T.tsum(ts[0])),
        "mean_sq": (lambda g: [g.standard_normal((3, 4))],
                    lambda ts, g: T.mean_sq(ts[0])),
    }
    worst, worst_name = 0.0, ""
    for ci, (name, (make, fwd)) in enumerate(cases.items()):
        for trial in range(20):
            g = np.random.default_rng(1000 * ci + trial)
            arrays = [a.copy() for a in make(g)]
            err = _fd_worst_rel(arrays, lambda ts: fwd(ts, g))
            if err > worst:
                worst, worst_name = err, name
        cot.clear()
    elapsed = time.monotonic() - t0
    ok = worst <= 1e-4 and elapsed < 60
    _verdict(capsys, 1, ok,
             f"{len(cases)} primitives x 20 trials, worst rel err "
             f"{worst:.2e} at {worst_name} (tol 1e-4), {elapsed:.1f}s (limit 60s)")


# --------------------------------------------------------------------------
# 2: forward Euler simulation against the closed-form perturbation kernel

def test_criterion_2_forward_euler_matches_kernel_moments(capsys):
    sde = VPSDE()
    paths, steps, x0 = 10_000, 10_000, 1.5
    dt = 1.0 / steps
    t0 = time.monotonic()
    x = np.full(paths, x0)
    snaps = {}
    for k in range(steps):
        beta = sde.beta(k * dt)
        z = rng.randn((paths,), rng.derive_seed(77, k))
        x = x - 0.5 * beta * x * dt + math.sqrt(beta * dt) * z
        tk = (k + 1) * dt
        for tt in (0.25, 0.5, 1.0):
            if abs(tk - tt) < dt / 2:
                snaps[tt] = x.copy()
    elapsed = time.monotonic() - t0
    worst_m = worst_s = 0.0
    for tt, xs in snaps.items():
        al, sg = float(sde.alpha(tt)), float(sde.sigma(tt))
        worst_m = max(worst_m, abs(xs.mean() - al * x0) / abs(x0))
        worst_s = max(worst_s, abs(xs.std() / sg - 1.0))
    ok = len(snaps) == 3 and worst_m <= 0.02 and worst_s <= 0.02 and elapsed < 120
    _verdict(capsys, 2, ok,
             f"1e4 paths x 1e4 steps at t in (0.25, 0.5, 1.0): mean err "
             f"{worst_m:.4f}, std err {worst_s:.4f} (tol 0.02), "
             f"{elapsed:.1f}s (limit 120s)")


# --------------------------------------------------------------------------
# 3: reverse-time sampler with the analytic score against the closed form

def test_criterion_3_oracle_sampler_matches_conditional_law(capsys):
    world = gaussian_pair(0.8)
    source = OracleScoreSource(world, VPSDE())
    part = enumerate_partitions(world.mset)[0]      # synthesize m0 given m1
    t0 = time.monotonic()
    draws = generate_many(source, np.ones((1, 1, 1)), part,
                          SamplerConfig(steps=1000), seed=31, n_draws=10_000)
    elapsed = time.monotonic() - t0
    flat = draws.reshape(-1)
    m_err = abs(float(flat.mean()) - 0.8)           # E[m0 | m1 = 1] = 0.8
    v_err = abs(float(flat.var(ddof=1)) - 0.36)     # Var[m0 | m1] = 0.36
    ks = ks_statistic(flat, 0.8, 0.36)
    ok = m_err <= 0.02 and v_err <= 0.02 and ks < 0.02 and elapsed < 300
    _verdict(capsys, 3, ok,
             f"1e4 draws at 1000 steps: mean err {m_err:.4f}, var err "
             f"{v_err:.4f}, KS {ks:.4f} (tol 0.02), {elapsed:.1f}s (limit 300s)")


# --------------------------------------------------------------------------
# 4: conditional channels are bit-frozen at every sampler step

class _CondRecorder:
    """Score-source wrapper that snapshots the conditional block per call."""

    def __init__(self, inner):
        self.inner = inner
        self.schedule = inner.schedule
        self.mset = inner.mset
        self.image_hw = inner.image_hw
        self.states = []

    def score(self, x, t, partition):
        self.states.append(x[:, list(partition.cond)].copy())
        return self.inner.score(x, t, partition)


def test_criterion_4_conditional_channels_bit_frozen(capsys):
    world = gaussian_trio()
    part = enumerate_partitions(world.mset)[0]      # synth m0 | cond m1, m2

    params = init_params(NetConfig(widths=(8, 16), embed_dim=16, kernel_size=3),
                         3, seed=4)
    g = np.random.default_rng(4)
    for k in params:
        if k.startswith("head.") and k.endswith(".w"):
            params[k] = 0.1 * g.standard_normal(params[k].shape)
    net = NetScoreSource(NetConfig(widths=(8, 16), embed_dim=16, kernel_size=3),
                         params, VPSDE(), world.mset, (8, 8))

    results = []
    for label, source, steps, b_shape in (
            ("net", net, 64, (2, 8, 8)),
            ("oracle", OracleScoreSource(world, VPSDE()), 200, (2, 1, 1))):
        b = rng.rand(b_shape, seed=12)
        rec = _CondRecorder(source)
        generate(rec, b, part, SamplerConfig(steps=steps), seed=13)
        frozen = sum(1 for s in rec.states if np.array_equal(s[0], b))
        results.append((label, frozen, len(rec.states), steps))
    ok = all(f == n == s for _, f, n, s in results)
    _verdict(capsys, 4, ok,
             "conditional block bit-identical at " +
             ", ".join(f"{f}/{s} steps ({lbl})" for lbl, f, n, s in results) +
             ", zero tolerance")


# --------------------------------------------------------------------------
# 5: one network serves every partition of the three-modality world

def test_criterion_5_one_net_covers_every_partition(capsys, gauss3_model):
    world, state, train_s = gauss3_model
    t0 = time.monotonic()
    source = NetScoreSource.from_state(state)
    errs = net_score_errors(source, world, seed=3, n_points=500)
    worst_l2 = max(errs.values())
    worst_m = worst_v = 0.0
    for pi, part in enumerate(enumerate_partitions(world.mset)):
        b = np.ones(len(part.cond))
        m, v = sampler_moment_errors(source, world, part,
                                     SamplerConfig(steps=500), 6000,
                                     seed=100 + pi, b_values=b)
        worst_m, worst_v = max(worst_m, m), max(worst_v, v)
    total = train_s + time.monotonic() - t0
    ok = (len(errs) == 6 and worst_l2 <= 0.15
          and worst_m <= 0.05 and worst_v <= 0.05 and total < 1800)
    _verdict(capsys, 5, ok,
             f"6 partitions, one net ({state.step} steps, {train_s:.0f}s train): "
             f"worst score rel L2 {worst_l2:.4f} (tol 0.15), sampler mean err "
             f"{worst_m:.4f} / var err {worst_v:.4f} (tol 0.05), "
             f"total {total:.0f}s (limit 1800s)")


# --------------------------------------------------------------------------
# 6: repeated conditional draws recover both lesion-contrast signs

def test_criterion_6_conditional_draws_show_both_lesion_signs(capsys, shapes_model):
    world, state, train_s = shapes_model
    t0 = time.monotonic()
    subj = None
    for probe in range(10_000, 10_050):
        cand = make_shape_subject(world, seed=probe)
        if cand.has_lesion:
            subj = cand
            break
    assert subj is not None
    part = enumerate_partitions(world.mset)[0]      # synthesize channel 0
    source = NetScoreSource.from_state(state)
    draws = generate_many(source, subj.image[1:], part,
                          SamplerConfig(steps=250), seed=77, n_draws=50)
    signs = [np.sign(lesion_contrast(world, d[0], subj.lesion_mask))
             for d in draws]
    pos, neg = sum(s > 0 for s in signs), sum(s < 0 for s in signs)
    total = train_s + time.monotonic() - t0
    ok = pos >= 5 and neg >= 5 and total < 3600
    _verdict(capsys, 6, ok,
             f"50 draws of the same conditional input ({state.step} steps, "
             f"{train_s:.0f}s train): contrast signs +{pos} / -{neg} "
             f"(need both >= 5), total {total:.0f}s (limit 3600s)")


# --------------------------------------------------------------------------
# 7: metric values on known examples; passthrough rows are perfect

def test_criterion_7_metric_values_and_passthrough(capsys):
    # hand examples
    p20 = psnr(np.zeros((8, 8)), np.full((8, 8), 0.1))     # 20*log10(1/0.1)
    x = rng.rand((16, 16), 90)
    a, b = 0.4, 0.9
    ssim_const = ssim(np.full((16, 16), a), np.full((16, 16), b))
    want_const = (2 * a * b + 1e-4) / (a * a + b * b + 1e-4)
    hand_ok = (abs(p20 - 20.0) < 1e-9
               and psnr(x, x.copy()) == math.inf
               and ssim(x, x.copy()) == 1.0
               and mae(x, x.copy()) == 0.0
               and mae(np.array([1.0, -1.0, 0.5]), np.zeros(3)) == 2.5 / 3.0
               and abs(ssim_const - want_const) < 1e-9)

    # passthrough report over every partition of a three-modality image world
    world = ShapeWorld()
    data = make_shape_dataset(world, 3, seed=60)
    state = make_train_state(data, world.names,
                             net_cfg=NetConfig(widths=(8,), embed_dim=8,
                                               kernel_size=1))
    parts = enumerate_partitions(world.mset)
    rep = eval_report(NetScoreSource.from_state(state), data, parts,
                      SamplerConfig(steps=10), seed=1, passthrough=True)
    rows_ok = all(r.psnr_mean == math.inf and r.psnr_std == 0.0
                  and r.ssim_mean == 1.0 and r.ssim_std == 0.0
                  and r.mae_mean == 0.0 and r.mae_std == 0.0
                  for r in rep.rows)
    ok = hand_ok and rows_ok and len(rep.rows) == 9
    _verdict(capsys, 7, ok,
             f"hand values match (20 dB dev {abs(p20 - 20.0):.1e}, constant-"
             f"image ssim dev {abs(ssim_const - want_const):.1e}); "
             f"{len(rep.rows)}/9 passthrough rows at psnr inf, ssim 1.0, mae 0.0")


# --------------------------------------------------------------------------
# 8: the full pipeline is byte-reproducible end to end

def _run_pipeline(root: pathlib.Path) -> dict[str, bytes]:
    root.mkdir(parents=True, exist_ok=True)
    d = str(root / "data.mmct")
    c = str(root / "ckpt.mmck")
    s = str(root / "samples.mmct")
    r = str(root / "report.csv")
    assert cli_main(["make-data", "--world", "gaussian2", "--n", "16",
                     "--seed", "13", "--out", d]) == 0
    assert cli_main(["train", "--data", d, "--steps", "200", "--seed", "7",
                     "--out", c, "--set", "net.widths=16",
                     "--set", "net.embed_dim=16", "--set", "net.kernel_size=1",
                     "--set", "train.batch=8"]) == 0
    assert cli_main(["sample", "--checkpoint", c, "--input", d, "--index", "0",
                     "--missing", "m0", "--steps", "100", "--seed", "21",
                     "--draws", "3", "--out", s]) == 0
    assert cli_main(["eval", "--checkpoint", c, "--data", d, "--steps", "50",
                     "--seed", "3", "--out", r]) == 0
    return {p.name: p.read_bytes()
            for p in (root / n for n in ("data.mmct", "data.mmct.names",
                                         "ckpt.mmck", "samples.mmct",
                                         "report.csv"))}


def test_criterion_8_pipeline_reruns_byte_identical(capsys, tmp_path):
    t0 = time.monotonic()
    first = _run_pipeline(tmp_path / "run1")
    second = _run_pipeline(tmp_path / "run2")
    elapsed = time.monotonic() - t0
    same = [name for name in first if first[name] == second[name]]
    ok = len(same) == len(first) == 5
    _verdict(capsys, 8, ok,
             f"make-data/train/sample/eval twice: {len(same)}/{len(first)} "
             f"artifacts byte-identical "
             f"({sum(len(v) for v in first.values())} bytes, {elapsed:.1f}s)")


# --------------------------------------------------------------------------
# 9: the loss weighting identity, per sample, to 1e-10 relative

def test_criterion_9_weighting_identity(capsys):
    # the trained objective (noise residual) must equal sigma(t)^2 times the
    # raw score residual, and 1/2 sigma^2 times the squared gap between the
    # score-shifted output and the perturbed input plus the kernel score
    world = gaussian_pair(0.8)
    sde = VPSDE()
    net_cfg = NetConfig(widths=(8,), embed_dim=8, kernel_size=1)
    parts = enumerate_partitions(world.mset)
    worst = 0.0
    for trial in range(12):
        params = init_params(net_cfg, 2, seed=trial)
        g = np.random.default_rng(200 + trial)
        for k in params:
            if k.startswith("head.") and k.endswith(".w"):
                params[k] = 0.3 * g.standard_normal(params[k].shape)
        part = parts[trial % 2]
        x0 = world.sample_joint(1, seed=300 + trial)
        t = float(0.05 + 0.9 * g.random())
        eps = rng.randn(x0.shape, seed=400 + trial)
        pt = {k: T.Tensor(v) for k, v in params.items()}

        base = dsm_loss(net_cfg, pt, sde, x0, part, np.array([t]), eps,
                        score_residual=False).item()
        raw = dsm_loss(net_cfg, pt, sde, x0, part, np.array([t]), eps,
                       score_residual=True).item()
        sig2 = float(sde.sigma(t)) ** 2
        worst = max(worst, abs(base - sig2 * raw) / abs(base))

        synth, cond = list(part.synth), list(part.cond)
        a_t = sde.perturb(x0, np.array([t]), eps)[0][synth]
        out = score_shifted_output(net_cfg, params, a_t, x0[0][cond], t,
                                   part, sde)
        target = sde.analytic_score_target(a_t, x0[0][synth], t)
        gap = out[synth] - (a_t + target)
        via_score = 0.5 * sig2 * float(np.mean(gap * gap))
        worst = max(worst, abs(base - via_score) / abs(base))
    ok = worst <= 1e-10
    _verdict(capsys, 9, ok,
             f"12 random nets/batches: noise-residual loss vs sigma^2-scaled "
             f"score forms, worst rel dev {worst:.2e} (tol 1e-10)")
