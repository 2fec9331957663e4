"""Multi-in multi-out conditional score network.

A small U-Net that consumes every modality at once (noisy channels for the
set being synthesized, clean channels for the conditions, plus the binary
mask planes saying which is which), the diffusion time t, and the mask again
as an embedded configuration code.  It predicts the noise eps for every
channel; consumers convert that to a score via -eps/sigma(t) and zero the
conditional channels, so the same parameters serve every possible
missing-modality configuration.

The final 1x1 convolution is zero-initialized, which makes the network's raw
output identically zero at initialization; in the residual view (input plus
score) a fresh network is therefore exactly the identity on images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng, tensor as T
from .errors import ConfigError, DomainError, ShapeError
from .modality import Partition, apply_mask
from .sde import VPSDE
from .tensor import Tensor


@dataclass(frozen=True)
class NetConfig:
    widths: tuple[int, ...] = (32, 64, 128)
    embed_dim: int = 64
    kernel_size: int = 3

    def __post_init__(self):
        w = tuple(int(x) for x in self.widths)
        if not w or any(x < 1 for x in w):
            raise ConfigError(f"widths must be positive, got {self.widths}")
        object.__setattr__(self, "widths", w)
        if self.embed_dim < 4 or self.embed_dim % 2:
            raise ConfigError(f"embed_dim must be even and >= 4, got {self.embed_dim}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and >= 1, got {self.kernel_size}")


def effective_widths(widths, h: int, w: int) -> tuple[int, ...]:
    """Truncate the stage list to what the image size can support.

    Each stage beyond the first costs one 2x downsampling, so s stages need
    H and W divisible by 2^(s-1).  Tiny images (down to 1x1) degenerate to a
    single stage with no resampling.
    """
    widths = tuple(int(x) for x in widths)
    s = len(widths)
    while s > 1 and (h % (1 << (s - 1)) or w % (1 << (s - 1))):
        s -= 1
    return widths[:s]


def _sinusoidal(t: np.ndarray, dim: int) -> np.ndarray:
    # geometric frequencies 1 .. 1000 over half the embedding, sin/cos pairs
    half = dim // 2
    j = np.arange(half, dtype=np.float64)
    freqs = 1000.0 ** (j / (half - 1))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def init_params(cfg: NetConfig, n_modalities: int, seed: int) -> dict[str, np.ndarray]:
    """Fresh parameter set; deterministic in (cfg, n_modalities, seed)."""
    c = int(n_modalities)
    if c < 2:
        raise ConfigError(f"need at least 2 modalities, got {c}")
    k = cfg.kernel_size
    e = cfg.embed_dim
    ws = cfg.widths
    s = len(ws)
    params: dict[str, np.ndarray] = {}
    counter = [0]

    def draw(shape, fan_in, gain=2.0):
        sd = rng.derive_seed(seed, counter[0])
        counter[0] += 1
        return rng.randn(shape, sd) * np.sqrt(gain / fan_in)

    def conv(name, cin, cout):
        params[f"{name}.w"] = draw((cout, cin, k, k), cin * k * k)
        params[f"{name}.b"] = np.zeros(cout)

    def norm(name, ch):
        params[f"{name}.g"] = np.ones(ch)
        params[f"{name}.b"] = np.zeros(ch)

    def linear(name, fin, fout, gain=1.0):
        params[f"{name}.w"] = draw((fin, fout), fin, gain)
        params[f"{name}.b"] = np.zeros(fout)

    conv("stem", 2 * c, ws[0])
    prev = ws[0]
    for i in range(1, s):          # encoder stages (widths[0..s-2])
        wi = ws[i - 1]
        conv(f"enc{i}.c1", prev, wi)
        norm(f"enc{i}.n1", wi)
        conv(f"enc{i}.c2", wi, wi)
        norm(f"enc{i}.n2", wi)
        prev = wi
    conv("bot.c1", prev, ws[-1])
    norm("bot.n1", ws[-1])
    conv("bot.c2", ws[-1], ws[-1])
    norm("bot.n2", ws[-1])

    linear("temb.l1", e, e)
    linear("temb.l2", e, e)
    linear("cemb", c, e)
    linear("inj.bot", e, ws[-1])

    deep = ws[-1]
    for i in range(s - 1, 0, -1):  # decoder stages, deepest first
        wi = ws[i - 1]
        conv(f"dec{i}.c1", deep + wi, wi)
        norm(f"dec{i}.n1", wi)
        linear(f"inj.dec{i}", e, wi)
        conv(f"dec{i}.c2", wi, wi)
        norm(f"dec{i}.n2", wi)
        deep = wi
    norm("head.n", ws[0])
    params["head.w"] = np.zeros((c, ws[0], 1, 1))   # zero init: raw output is 0
    params["head.b"] = np.zeros(c)
    return params


def _check_t(t: np.ndarray, n: int):
    if t.shape != (n,):
        raise ShapeError(f"t must have shape ({n},), got {t.shape}")
    if np.any(t <= 0.0) or np.any(t > 1.0):
        raise DomainError("network time must lie in (0, 1]")


def forward(cfg: NetConfig, params: dict[str, Tensor], x: Tensor,
            t: np.ndarray, code: np.ndarray) -> Tensor:
    """Batched noise prediction.

    x: [N, 2C, H, W] images-plus-mask-planes; t: [N] times in [t_min, 1];
    code: [N, C] configuration codes.  Returns eps_hat [N, C, H, W].
    Differentiable in `params` when they are tape-watched tensors.
    """
    if x.ndim != 4:
        raise ShapeError(f"network input must be [N,2C,H,W], got {x.shape}")
    n, c2, h, w = x.shape
    if c2 % 2:
        raise ShapeError(f"input channel count must be even, got {c2}")
    c = c2 // 2
    ws = cfg.widths
    s = len(ws)
    if h % (1 << (s - 1)) or w % (1 << (s - 1)):
        raise ShapeError(
            f"{h}x{w} images cannot pass {s} stages (need divisibility by {1 << (s - 1)})")
    t = np.asarray(t, dtype=np.float64)
    _check_t(t, n)
    code = np.asarray(code, dtype=np.float64)
    if code.shape != (n, c):
        raise ShapeError(f"code must have shape ({n},{c}), got {code.shape}")

    p = params
    pad = cfg.kernel_size // 2

    def block(hh, name, emb_name=None):
        hh = T.conv2d(hh, p[f"{name[0]}.w"], padding=pad)
        hh = T.bias_add(hh, p[f"{name[0]}.b"])
        hh = T.group_norm(hh, p[f"{name[1]}.g"], p[f"{name[1]}.b"])
        if emb_name is not None:
            site = T.bias_add(T.matmul(emb, p[f"{emb_name}.w"]), p[f"{emb_name}.b"])
            hh = T.bias_add(hh, site)
        return T.silu(hh)

    tfeat = Tensor(_sinusoidal(t, cfg.embed_dim))
    temb = T.silu(T.bias_add(T.matmul(tfeat, p["temb.l1.w"]), p["temb.l1.b"]))
    temb = T.bias_add(T.matmul(temb, p["temb.l2.w"]), p["temb.l2.b"])
    cemb = T.bias_add(T.matmul(Tensor(code), p["cemb.w"]), p["cemb.b"])
    emb = T.add(temb, cemb)

    hh = T.bias_add(T.conv2d(x, p["stem.w"], padding=pad), p["stem.b"])
    skips = []
    for i in range(1, s):
        hh = block(hh, (f"enc{i}.c1", f"enc{i}.n1"))
        hh = block(hh, (f"enc{i}.c2", f"enc{i}.n2"))
        skips.append(hh)
        hh = T.avgpool2(hh)
    hh = block(hh, ("bot.c1", "bot.n1"), "inj.bot")
    hh = block(hh, ("bot.c2", "bot.n2"))
    for i in range(s - 1, 0, -1):
        hh = T.upsample2(hh)
        hh = T.concat_channels(hh, skips.pop())
        hh = block(hh, (f"dec{i}.c1", f"dec{i}.n1"), f"inj.dec{i}")
        hh = block(hh, (f"dec{i}.c2", f"dec{i}.n2"))
    hh = T.silu(T.group_norm(hh, p["head.n.g"], p["head.n.b"]))
    return T.bias_add(T.conv2d(hh, p["head.w"], padding=0), p["head.b"])


def raw_forward(cfg: NetConfig, params: dict[str, np.ndarray],
                masked_input: np.ndarray, t: float, code: np.ndarray) -> np.ndarray:
    """Single-sample inference: [2C,H,W] in, eps_hat [C,H,W] out."""
    x = np.asarray(masked_input, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"masked_input must be [2C,H,W], got {x.shape}")
    pt = {k: Tensor(v) for k, v in params.items()}
    out = forward(cfg, pt, Tensor(x[None]), np.array([float(t)]),
                  np.asarray(code, dtype=np.float64)[None])
    return out.data[0]


def score_from_eps(eps_hat: np.ndarray, t, partition: Partition,
                   schedule: VPSDE) -> np.ndarray:
    """Convert predicted noise to a conditional score.

    Channel i gets -eps_hat_i / sigma(t) for i in A and exactly 0.0 for
    i in B (the conditional channels never move).
    """
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if np.any(np.asarray(t) < schedule.t_min):
        raise DomainError(f"score needs t >= {schedule.t_min}")
    sig = schedule.sigma(t)
    if sig.ndim == 1:
        sig = sig.reshape(sig.shape + (1,) * (eps_hat.ndim - 1))
    synth_plane = 1.0 - partition.mask  # 1 on A, 0 on B
    if eps_hat.ndim == 4:
        synth_plane = synth_plane[None, :, None, None]
    elif eps_hat.ndim == 3:
        synth_plane = synth_plane[:, None, None]
    else:
        raise ShapeError(f"eps_hat must be [C,H,W] or [N,C,H,W], got {eps_hat.shape}")
    return -(eps_hat / sig) * synth_plane


def score_shifted_output(cfg: NetConfig, params: dict[str, np.ndarray],
                         a_t: np.ndarray, b: np.ndarray, t: float,
                         partition: Partition, schedule: VPSDE) -> np.ndarray:
    """Full network functionality: images in, images plus (score, 0) out.

    a_t supplies the A channels, b the B channels.  The returned B channels
    are bit-exact copies of b; the returned A channels are a_t plus the
    predicted conditional score at time t.
    """
    c = partition.mask.shape[0]
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != len(partition.cond):
        raise ShapeError(f"b must supply the {len(partition.cond)} conditional channels, "
                         f"got {b.shape[0]}")
    h, w = b.shape[1:]
    sample = np.zeros((c, h, w))
    sample[list(partition.cond)] = b
    net_in = apply_mask(sample, partition, a_t)
    eps_hat = raw_forward(cfg, params, net_in, t, partition.code)
    score = score_from_eps(eps_hat, t, partition, schedule)
    out = net_in[:c].copy()
    out[list(partition.synth)] += score[list(partition.synth)]
    return out
