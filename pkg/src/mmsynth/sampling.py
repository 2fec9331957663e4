"""Conditional reverse-time generation by Euler-Maruyama integration.

Starting from prior noise on the channels to synthesize, with the
conditional channels pinned to the given images, the sampler walks the
reverse SDE on the time grid t_k = k/T for k = T down to 1:

    a  <-  a - f(t_k) a dt + g(t_k)^2 score(x, t_k) dt + g(t_k) n sqrt(dt)

with dt = 1/T and fresh standard normal n at every step, including by
default the final one (--no-final-noise drops just that last injection).
The score comes either from a trained network (noise prediction converted
to -eps/sigma) or from a Gaussian world's closed form.  Conditional
channels are never written: they stay bit-identical from initialization to
output.

Randomness layout: one draw keyed by `seed` takes its prior from counter
block 0 and its step-k noise from counter block k (block size = number of
synthesized values), so independent draws are independent streams and a
batch of draws is evaluated with vectorized counter arithmetic, bitwise
equal to running the draws one at a time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import ConfigError, ContractError, NumericalError
from .modality import ModalitySet, Partition, with_mask_planes
from .network import NetConfig, forward, score_from_eps
from .sde import VPSDE
from .tensor import Tensor


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 1000
    final_noise: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")


class NetScoreSource:
    """Score from a trained network (EMA parameters by default)."""

    def __init__(self, net_cfg: NetConfig, params: dict[str, np.ndarray],
                 schedule: VPSDE, mset: ModalitySet, image_hw: tuple[int, int]):
        self.net_cfg = net_cfg
        self.params = {k: Tensor(v) for k, v in params.items()}
        self.schedule = schedule
        self.mset = mset
        self.image_hw = tuple(image_hw)

    @classmethod
    def from_state(cls, state, use_ema: bool = True) -> "NetScoreSource":
        params = state.ema if use_ema else state.params
        return cls(state.net_cfg, params, state.schedule, state.mset, state.image_hw)

    def score(self, x: np.ndarray, t: float, partition: Partition) -> np.ndarray:
        n, c = x.shape[0], x.shape[1]
        net_in = Tensor(with_mask_planes(x, partition))
        code = np.broadcast_to(partition.code, (n, c))
        eps_hat = forward(self.net_cfg, self.params, net_in,
                          np.full(n, float(t)), code)
        return score_from_eps(eps_hat.data, t, partition, self.schedule)


class OracleScoreSource:
    """Closed-form conditional score of a Gaussian world."""

    def __init__(self, world, schedule: VPSDE):
        self.world = world
        self.schedule = schedule
        self.mset = world.mset
        self.image_hw = world.image_hw

    def score(self, x: np.ndarray, t: float, partition: Partition) -> np.ndarray:
        n = x.shape[0]
        a_flat = x[:, list(partition.synth)].reshape(n, -1)
        b_flat = x[:, list(partition.cond)].reshape(n, -1)
        s = self.world.analytic_conditional_score(a_flat, b_flat, t,
                                                  partition, self.schedule)
        out = np.zeros_like(x)
        out[:, list(partition.synth)] = s.reshape(n, len(partition.synth), *x.shape[2:])
        return out


def _check_inputs(source, b: np.ndarray, partition: Partition, cfg: SamplerConfig):
    c = source.mset.count
    if partition.mask.shape[0] != c:
        raise ContractError(f"partition is over {partition.mask.shape[0]} modalities, "
                            f"score source over {c}")
    h, w = source.image_hw
    nb = len(partition.cond)
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (nb, h, w):
        raise ContractError(f"b must supply the conditional channels with shape "
                            f"{(nb, h, w)}, got {b.shape}")
    t_min = source.schedule.t_min
    if 1.0 / cfg.steps < t_min - 1e-12:
        raise ConfigError(f"{cfg.steps} steps would reach t = {1.0 / cfg.steps:.3g} "
                          f"below the schedule's t_min = {t_min}")
    return b


def _integrate(source, b: np.ndarray, partition: Partition, cfg: SamplerConfig,
               seeds: np.ndarray, watch=None) -> np.ndarray:
    c = source.mset.count
    h, w = source.image_hw
    synth = list(partition.synth)
    n_a, m = len(synth), len(seeds)
    e = n_a * h * w
    t_steps = cfg.steps
    dt = 1.0 / t_steps
    seeds_col = np.asarray(seeds, dtype=np.uint64)[:, None]
    counters = np.arange(e, dtype=np.uint64)[None, :]

    x = np.empty((m, c, h, w))
    x[:, list(partition.cond)] = b[None]
    x[:, synth] = rng.normals(seeds_col, counters).reshape(m, n_a, h, w)

    sched = source.schedule
    for k in range(t_steps, 0, -1):
        t = k / t_steps
        score = source.score(x, t, partition)
        f = float(sched.drift_coef(t))
        g2 = float(sched.beta(t))
        g = float(sched.diffusion_coef(t))
        noise = rng.normals(seeds_col, np.uint64(k) * np.uint64(e) + counters)
        noise = noise.reshape(m, n_a, h, w)
        if k == 1 and not cfg.final_noise:
            noise = np.zeros_like(noise)
        a = x[:, synth]
        a = a - f * a * dt + g2 * score[:, synth] * dt + g * noise * np.sqrt(dt)
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite sampler state at step k={k} (t={t:.4g})")
        x[:, synth] = a
        if watch is not None:
            watch(k, x)
    return x[:, synth]


def generate(source, b: np.ndarray, partition: Partition, cfg: SamplerConfig,
             seed: int, watch=None) -> np.ndarray:
    """One conditional draw; returns the synthesized A channels [|A|, H, W].

    `b` holds the conditional channels in modality order, shape [|B|, H, W].
    `watch(k, x)` is called after every update with the full state, for
    inspection; callers must not mutate x.
    """
    b = _check_inputs(source, b, partition, cfg)
    return _integrate(source, b, partition, cfg, np.array([seed], dtype=np.uint64),
                      watch=watch)[0]


def generate_many(source, b: np.ndarray, partition: Partition, cfg: SamplerConfig,
                  seed: int, n_draws: int) -> np.ndarray:
    """n_draws independent draws, vectorized; [n_draws, |A|, H, W].

    Draw i uses the stream derive_seed(seed, i); the result is bitwise equal
    to calling `generate` n_draws times with those seeds.
    """
    if n_draws < 1:
        raise ContractError(f"need n_draws >= 1, got {n_draws}")
    b = _check_inputs(source, b, partition, cfg)
    seeds = np.array([rng.derive_seed(seed, i) for i in range(n_draws)], dtype=np.uint64)
    return _integrate(source, b, partition, cfg, seeds)


def uncertainty_map(source, b: np.ndarray, partition: Partition, cfg: SamplerConfig,
                    n_draws: int, seed: int):
    """Pixelwise mean and sample standard deviation over repeated draws."""
    if n_draws < 2:
        raise ContractError(f"uncertainty needs n_draws >= 2, got {n_draws}")
    draws = generate_many(source, b, partition, cfg, seed, n_draws)
    return draws.mean(axis=0), draws.std(axis=0, ddof=1)
