"""Modality sets, partitions into synthesized and conditional channels, masks.

A model works on a fixed ordered set of modalities (image channels).  Any
generation task splits that set into A (channels to synthesize) and B
(channels given as conditions).  The per-modality binary mask encodes the
split: mask[i] = 1 means modality i is conditional and kept frozen,
mask[i] = 0 means modality i is synthesized.  The same mask vector is what
the network receives as its configuration code, both as constant per-pixel
planes stacked onto the input and as an embedded vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class ModalitySet:
    """Ordered, immutable collection of modality names (the channel contract)."""

    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        if len(names) < 2:
            raise ConfigError(f"need at least 2 modalities, got {len(names)}")
        if len(set(names)) != len(names):
            raise ConfigError(f"modality names must be unique, got {names}")
        object.__setattr__(self, "names", names)

    @property
    def count(self) -> int:
        return len(self.names)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigError(f"unknown modality {name!r}; have {list(self.names)}") from None


@dataclass(frozen=True)
class Partition:
    """One split {A|B}: synth holds the A indices, cond the B indices."""

    synth: tuple[int, ...]
    cond: tuple[int, ...]
    mask: np.ndarray = field(compare=False)   # [|C|] float64, 1 = conditional

    @property
    def code(self) -> np.ndarray:
        """Configuration code fed to the network (the mask itself)."""
        return self.mask


def _make_partition(count: int, synth_indices) -> Partition:
    synth = tuple(sorted(int(i) for i in synth_indices))
    cond = tuple(i for i in range(count) if i not in synth)
    mask = np.ones(count, dtype=np.float64)
    mask[list(synth)] = 0.0
    mask.flags.writeable = False
    return Partition(synth=synth, cond=cond, mask=mask)


def enumerate_partitions(mset: ModalitySet,
                         allow_unconditional: bool = False) -> list[Partition]:
    """All splits with nonempty A, in increasing-bitmask order of A.

    Bit i of the enumeration index corresponds to modality i being in A.
    By default B must also be nonempty, giving 2^|C| - 2 partitions; passing
    allow_unconditional=True appends the B-empty split (generate everything).
    """
    c = mset.count
    out = []
    for bits in range(1, 2 ** c):
        synth = [i for i in range(c) if bits >> i & 1]
        if len(synth) == c and not allow_unconditional:
            continue
        out.append(_make_partition(c, synth))
    return out


def sample_partition(mset: ModalitySet, seed: int,
                     allow_unconditional: bool = False) -> Partition:
    """One partition drawn uniformly from enumerate_partitions."""
    parts = enumerate_partitions(mset, allow_unconditional)
    idx = int(rng.uniform_ints(seed, 1, len(parts))[0])
    return parts[idx]


def partition_from_missing(mset: ModalitySet, missing_names) -> Partition:
    """Partition whose A side is the given modality names (CLI `--missing`).

    Accepts ',' or '+' between names so the labels printed by reports
    (`format_partition`, e.g. 'flair+t2') parse back unchanged.
    """
    if isinstance(missing_names, str):
        missing_names = [s for s in missing_names.replace("+", ",").split(",") if s]
    idx = [mset.index_of(n.strip()) for n in missing_names]
    if not idx:
        raise ConfigError("no modalities to synthesize were named")
    if len(set(idx)) != len(idx):
        raise ConfigError(f"duplicate modality names in {missing_names}")
    if len(idx) == mset.count:
        raise ConfigError("cannot synthesize every modality; at least one condition is required")
    return _make_partition(mset.count, idx)


def format_partition(p: Partition, mset: ModalitySet) -> str:
    """Human-readable A side, e.g. 'flair+t2'."""
    return "+".join(mset.names[i] for i in p.synth)


def mask_planes(p: Partition, h: int, w: int) -> np.ndarray:
    """The mask broadcast to constant per-pixel planes, shape [|C|, H, W]."""
    c = p.mask.shape[0]
    return np.broadcast_to(p.mask[:, None, None], (c, h, w)).copy()


def apply_mask(sample: np.ndarray, p: Partition, a_t_channels: np.ndarray) -> np.ndarray:
    """Assemble one network input of shape [2|C|, H, W].

    Image channels: the clean sample on B, the supplied noisy channels on A
    (a_t_channels lists exactly the A channels in index order).  Mask planes
    follow.  B pixels are copied from `sample` untouched.
    """
    sample = np.asarray(sample, dtype=np.float64)
    if sample.ndim != 3:
        raise ContractError(f"sample must be [C,H,W], got shape {sample.shape}")
    c, h, w = sample.shape
    if c != p.mask.shape[0]:
        raise ContractError(f"sample has {c} channels, partition expects {p.mask.shape[0]}")
    a_t_channels = np.asarray(a_t_channels, dtype=np.float64)
    if a_t_channels.shape != (len(p.synth), h, w):
        raise ContractError(
            f"a_t channels must have shape {(len(p.synth), h, w)}, got {a_t_channels.shape}")
    imgs = sample.copy()
    imgs[list(p.synth)] = a_t_channels
    return np.concatenate([imgs, mask_planes(p, h, w)], axis=0)


def mix_channels(x0: np.ndarray, a_t_full: np.ndarray, p: Partition) -> np.ndarray:
    """Batched channel mix: A channels from a_t_full, B channels from x0.

    Both inputs are [N, C, H, W].  B channels of the result are bit-exact
    copies of x0 (multiplication by 1.0 and addition of 0.0 are exact).
    """
    m = p.mask[None, :, None, None]
    return x0 * m + a_t_full * (1.0 - m)


def with_mask_planes(images: np.ndarray, p: Partition) -> np.ndarray:
    """Stack mask planes onto [N, C, H, W] images, giving [N, 2C, H, W]."""
    n, c, h, w = images.shape
    planes = np.broadcast_to(p.mask[None, :, None, None], (n, c, h, w))
    return np.concatenate([images, planes], axis=1)
