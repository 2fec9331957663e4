"""Denoising score matching over every missing-modality configuration.

Each training step draws one partition {A|B}, a batch of paired samples,
per-sample times on [t_min, 1], and Gaussian noise; perturbs the A channels
with the forward kernel while B stays clean; and regresses the network's
noise prediction onto the drawn noise over the A channels only.  Because
the partition is drawn uniformly per step, the long-run objective is the
uniform average over all configurations, optimized by a single parameter
set.

The default loss is the sigma^2-weighted form (plain noise regression):

    1/2 * mean over (batch, A-channels, pixels) of (eps_hat - eps)^2

which equals 1/2 sigma(t)^2 times the raw score-matching residual per
sample.  The unweighted raw form is available via score_residual but is
numerically dominated by small-t draws.

Every random draw is a pure function of (seed, step), so training can be
stopped at a checkpoint and resumed bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .errors import ConfigError, ContractError, TrainingDiverged
from .modality import (ModalitySet, Partition, enumerate_partitions,
                       mix_channels, with_mask_planes)
from .network import NetConfig, effective_widths, forward, init_params
from .optim import AdamState, adam_step
from .sde import VPSDE, draw_times
from . import tensor as T
from .tensor import GradTape, Tensor


@dataclass
class TrainConfig:
    batch: int = 32
    steps: int = 2000
    lr: float = 2e-4
    ema_decay: float = 0.999
    seed: int = 0
    score_residual: bool = False
    partition_schedule: str = "uniform"   # "uniform" or "cycle"
    allow_unconditional: bool = False

    def __post_init__(self):
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")
        if self.partition_schedule not in ("uniform", "cycle"):
            raise ConfigError(f"unknown partition schedule {self.partition_schedule!r}")


@dataclass
class TrainState:
    mset: ModalitySet
    net_cfg: NetConfig
    schedule: VPSDE
    cfg: TrainConfig
    params: dict[str, np.ndarray]
    ema: dict[str, np.ndarray]
    opt: AdamState
    step: int
    image_hw: tuple[int, int]
    partitions: list[Partition] = field(default_factory=list)

    def __post_init__(self):
        if not self.partitions:
            self.partitions = enumerate_partitions(self.mset, self.cfg.allow_unconditional)


def make_train_state(data: np.ndarray, names, net_cfg: NetConfig | None = None,
                     train_cfg: TrainConfig | None = None,
                     schedule: VPSDE | None = None) -> TrainState:
    """Fresh trainer for a dataset of shape [N, |C|, H, W]."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 4 or data.shape[0] < 1:
        raise ContractError(f"dataset must be a nonempty [N,C,H,W] array, got {data.shape}")
    mset = ModalitySet(tuple(names))
    if data.shape[1] != mset.count:
        raise ContractError(f"dataset has {data.shape[1]} channels for {mset.count} names")
    net_cfg = net_cfg or NetConfig()
    train_cfg = train_cfg or TrainConfig()
    schedule = schedule or VPSDE()
    h, w = data.shape[2], data.shape[3]
    ew = effective_widths(net_cfg.widths, h, w)
    if ew != net_cfg.widths:
        net_cfg = replace(net_cfg, widths=ew)
    params = init_params(net_cfg, mset.count, rng.derive_seed(train_cfg.seed, 1))
    ema = {k: v.copy() for k, v in params.items()}
    return TrainState(mset=mset, net_cfg=net_cfg, schedule=schedule, cfg=train_cfg,
                      params=params, ema=ema, opt=AdamState(params), step=0,
                      image_hw=(h, w))


def dsm_loss(net_cfg: NetConfig, params: dict[str, Tensor], schedule: VPSDE,
             x0: np.ndarray, partition: Partition, t_draws: np.ndarray,
             eps_draws: np.ndarray, score_residual: bool = False) -> Tensor:
    """Scalar score-matching loss for one batch under one partition.

    B channels contribute exactly zero: the residual is multiplied by the
    synthesis indicator before the reduction, and the mean is taken over the
    A-channel elements only (the C/|A| rescale below).
    """
    n_a = len(partition.synth)
    if n_a == 0:
        raise ContractError("partition has no channels to synthesize")
    x0 = np.asarray(x0, dtype=np.float64)
    t_draws = np.asarray(t_draws, dtype=np.float64)
    eps_draws = np.asarray(eps_draws, dtype=np.float64)
    if np.any(t_draws < schedule.t_min):
        raise ContractError(f"training times must be >= t_min = {schedule.t_min}")
    n, c = x0.shape[0], x0.shape[1]

    a_t = schedule.perturb(x0, t_draws, eps_draws)
    x_t = mix_channels(x0, a_t, partition)
    net_in = Tensor(with_mask_planes(x_t, partition))
    code = np.broadcast_to(partition.code, (n, c))

    eps_hat = forward(net_cfg, params, net_in, t_draws, code)
    synth = (1.0 - partition.mask)[None, :, None, None]
    resid = T.mul(T.sub(eps_hat, Tensor(eps_draws)), Tensor(np.broadcast_to(synth, x0.shape)))
    if score_residual:
        # raw score residual: divide by sigma(t) per sample before squaring
        inv_sig = (1.0 / schedule.sigma(t_draws)).reshape(n, 1, 1, 1)
        resid = T.mul(resid, Tensor(np.broadcast_to(inv_sig, x0.shape)))
    return T.scale(T.mean_sq(resid), 0.5 * c / n_a)


def _step_partition(state: TrainState, step_seed: int) -> Partition:
    parts = state.partitions
    if state.cfg.partition_schedule == "cycle":
        return parts[state.step % len(parts)]
    idx = int(rng.uniform_ints(rng.derive_seed(step_seed, 0), 1, len(parts))[0])
    return parts[idx]


def train_step(state: TrainState, data: np.ndarray) -> float:
    """One optimizer update; returns the loss value."""
    cfg = state.cfg
    sseed = rng.derive_seed(cfg.seed, 0, state.step)
    partition = _step_partition(state, sseed)
    n = data.shape[0]
    idx = rng.uniform_ints(rng.derive_seed(sseed, 1), cfg.batch, n)
    x0 = data[idx]
    t = draw_times(cfg.batch, rng.derive_seed(sseed, 2), state.schedule.t_min)
    eps = rng.randn(x0.shape, rng.derive_seed(sseed, 3))

    with GradTape() as tape:
        pt = {k: tape.watch(Tensor(v)) for k, v in state.params.items()}
        loss = dsm_loss(state.net_cfg, pt, state.schedule, x0, partition, t, eps,
                        cfg.score_residual)
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingDiverged(
            f"non-finite loss at step {state.step} "
            f"(synth channels {partition.synth}, t in [{t.min():.4g}, {t.max():.4g}])")
    names = list(state.params)
    grads = dict(zip(names, tape.gradients(loss, [pt[k] for k in names])))
    adam_step(state.params, grads, state.opt, cfg.lr)
    d = cfg.ema_decay
    for k, p in state.params.items():
        e = state.ema[k]
        e *= d
        e += (1.0 - d) * p
    state.step += 1
    return value


def train(state: TrainState, data: np.ndarray, n_steps: int | None = None,
          log_every: int = 0, log=print) -> list[float]:
    """Run n_steps updates (default: cfg.steps minus steps already done)."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 4 or data.shape[0] < 1:
        raise ContractError(f"dataset must be a nonempty [N,C,H,W] array, got {data.shape}")
    if n_steps is None:
        n_steps = max(0, state.cfg.steps - state.step)
    losses = []
    for _ in range(n_steps):
        value = train_step(state, data)
        losses.append(value)
        if log_every and state.step % log_every == 0:
            log(f"step {state.step}  loss {value:.6f}")
    return losses
