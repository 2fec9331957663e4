"""Counter-mode RNG: frozen reference outputs, determinism, distributions.

The raw generator is SplitMix64 evaluated at (seed + (i+1)*PHI), so output i
equals the (i+1)-th draw of sequential SplitMix64 seeded with `seed`.  The
hex constants below were produced by an independent big-int implementation
of the published algorithm; the seed-0 head matches the widely circulated
test vector.
"""

import math

import numpy as np
import pytest

from mmsynth import rng
from mmsynth.errors import ShapeError

# sequential SplitMix64 outputs, frozen from a clean-room implementation
SPLITMIX_SEED0 = [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4,
                  0x06C45D188009454F, 0xF88BB8A8724C81EC]
SPLITMIX_SEED42 = [0xBDD732262FEB6E95, 0x28EFE333B266F103,
                   0x47526757130F9F52, 0x581CE1FF0E4AE394]
SPLITMIX_BIG = [0x2B4FFD9E10C21B6D, 0x3C124360584F4C26,
                0x6F8656A673B35F69, 0x2A88D6F25C353492]
BIG_SEED = 2 ** 63 + 12345

# uniform[0] = (raw0 >> 11) * 2^-53; normal[0] via Box-Muller cosine branch
UNIFORM0_SEED42 = 0.7415648787718233
NORMAL0_SEED42 = 0.4147197504315305


def test_raw_matches_frozen_reference():
    for seed, expect in [(0, SPLITMIX_SEED0), (42, SPLITMIX_SEED42),
                         (BIG_SEED, SPLITMIX_BIG)]:
        got = np.asarray(rng._raw(seed, np.arange(4)), dtype=np.uint64)
        assert [int(v) for v in got] == expect


def test_uniform_and_normal_frozen_values():
    assert float(rng.uniforms(42, np.arange(1))[0]) == UNIFORM0_SEED42
    assert float(rng.normals(42, np.arange(1))[0]) == NORMAL0_SEED42


def test_normal_matches_box_muller_by_hand():
    # normal i consumes raw counters 2i and 2i+1
    for i in (0, 3, 17):
        r0 = int(np.asarray(rng._raw(99, np.array([2 * i])), dtype=np.uint64)[0])
        r1 = int(np.asarray(rng._raw(99, np.array([2 * i + 1])), dtype=np.uint64)[0])
        u1 = ((r0 >> 11) + 1) * 2.0 ** -53
        u2 = (r1 >> 11) * 2.0 ** -53
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        assert float(rng.normals(99, np.array([i]))[0]) == z


def test_counter_mode_is_order_free():
    all_at_once = rng.normals(7, np.arange(64))
    shuffled = np.array([31, 2, 63, 0, 17])
    assert np.array_equal(rng.normals(7, shuffled), all_at_once[shuffled])


def test_vectorised_equals_scalar_loop():
    counters = np.arange(40)
    vec = rng.uniforms(5, counters)
    loop = np.array([float(rng.uniforms(5, np.array([c]))[0]) for c in counters])
    assert np.array_equal(vec, loop)


def test_broadcast_over_seed_arrays():
    seeds = np.array([[3], [4], [5]], dtype=np.uint64)
    counters = np.arange(6)[None, :]
    block = rng.normals(seeds, counters)
    assert block.shape == (3, 6)
    for r, s in enumerate((3, 4, 5)):
        assert np.array_equal(block[r], rng.normals(s, np.arange(6)))


def test_randn_rand_shapes_and_determinism():
    a = rng.randn((4, 5), seed=11)
    b = rng.randn((4, 5), seed=11)
    assert a.shape == (4, 5) and np.array_equal(a, b)
    c = rng.randn((4, 5), seed=12)
    assert not np.array_equal(a, c)
    u = rng.rand((1000,), seed=3)
    assert u.min() >= 0.0 and u.max() < 1.0


def test_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        rng.randn((0, 3), seed=1)
    with pytest.raises(ShapeError):
        rng.rand((-1,), seed=1)


def test_moments_of_large_sample():
    z = rng.randn((200_000,), seed=101)
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1.0) < 0.02
    # third moment vanishes for a symmetric law
    assert abs((z ** 3).mean()) < 0.03


def test_uniform_histogram_is_flat():
    u = rng.rand((100_000,), seed=55)
    counts, _ = np.histogram(u, bins=20, range=(0.0, 1.0))
    # each bin expects 5000 draws, sd ~ 69
    assert np.all(np.abs(counts - 5000) < 350)


def test_derive_seed_is_deterministic_and_spread():
    assert rng.derive_seed(1, 2, 3) == rng.derive_seed(1, 2, 3)
    seen = {rng.derive_seed(0, k) for k in range(1000)}
    assert len(seen) == 1000
    assert rng.derive_seed(0, 1, 2) != rng.derive_seed(0, 2, 1)
    # no indices means no folding: the parent stream itself
    assert rng.derive_seed(5) == 5


def test_derived_streams_do_not_collide():
    a = rng.randn((1000,), seed=rng.derive_seed(9, 0))
    b = rng.randn((1000,), seed=rng.derive_seed(9, 1))
    assert abs(float(np.corrcoef(a, b)[0, 1])) < 0.1


def test_uniform_ints_bounds_and_reach():
    v = rng.uniform_ints(31, 10_000, 6)
    assert v.min() >= 0 and v.max() <= 5
    assert set(np.unique(v)) == set(range(6))
    counts = np.bincount(v, minlength=6)
    assert np.all(np.abs(counts - 10_000 / 6) < 250)


def test_uniform_ints_validates_bound():
    with pytest.raises(ShapeError):
        rng.uniform_ints(0, 4, 0)
