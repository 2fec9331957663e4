"""Bit-exact binary file formats and config/state bridging.

All integers are little-endian; all payloads are raw little-endian float64.

Tensor file (magic MMCT): version u16, dtype u8 (0 = f64), ndims u8,
dims as u32 each, then the row-major payload.  Datasets are a tensor of
shape [N, |C|, H, W] plus a `<path>.names` sidecar listing modality names
in channel order, one per line.

Checkpoint file (magic MMCK): a config snapshot (the same text format the
config parser reads), modality names, image size, step counters, then
named parameter blocks (raw and EMA parameter sets and the two Adam moment
sets).  Loading requires nothing beyond the file; save -> load -> save is
byte-identical.

World file (magic MMGW): modality names and dimensions plus the joint mean
and covariance of a Gaussian world.

PGM export: binary 8-bit P5, value = floor(255 v + 0.5), for eyeballing
channels with any image viewer.
"""

from __future__ import annotations

import struct
import warnings

import numpy as np

from .config import default_config, format_config, parse_config_text
from .errors import ContractError, CorruptionError, FormatError
from .modality import ModalitySet
from .network import NetConfig
from .optim import AdamState
from .sde import VPSDE
from .training import TrainConfig, TrainState
from .worlds import GaussianWorld

_TENSOR_MAGIC = b"MMCT"
_CKPT_MAGIC = b"MMCK"
_WORLD_MAGIC = b"MMGW"
_VERSION = 1


def _read_exact(f, n: int, path: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CorruptionError(f"{path}: truncated, expected {n} more bytes, "
                              f"got {len(data)}")
    return data


def _expect_magic(f, magic: bytes, path: str):
    got = f.read(len(magic))
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")


def _read_u16(f, path):
    return struct.unpack("<H", _read_exact(f, 2, path))[0]


def _read_u32(f, path):
    return struct.unpack("<I", _read_exact(f, 4, path))[0]


def _read_u64(f, path):
    return struct.unpack("<Q", _read_exact(f, 8, path))[0]


def _read_str(f, path):
    n = _read_u16(f, path)
    return _read_exact(f, n, path).decode("utf-8")


def _write_str(f, s: str):
    b = s.encode("utf-8")
    f.write(struct.pack("<H", len(b)))
    f.write(b)


def _check_eof(f, path):
    if f.read(1):
        raise CorruptionError(f"{path}: trailing bytes after expected end of file")


# --------------------------------------------------------------------------
# tensors and datasets

def _write_tensor_body(f, arr: np.ndarray):
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    f.write(_TENSOR_MAGIC)
    f.write(struct.pack("<H", _VERSION))
    f.write(struct.pack("<B", 0))                 # dtype 0 = f64
    f.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        f.write(struct.pack("<I", d))
    f.write(arr.astype("<f8", copy=False).tobytes())


def _read_tensor_body(f, path: str) -> np.ndarray:
    _expect_magic(f, _TENSOR_MAGIC, path)
    version = _read_u16(f, path)
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported tensor version {version}")
    dtype = _read_exact(f, 1, path)[0]
    if dtype != 0:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    ndims = _read_exact(f, 1, path)[0]
    if ndims < 1:
        raise FormatError(f"{path}: tensor must have at least one dimension")
    dims = tuple(_read_u32(f, path) for _ in range(ndims))
    if any(d < 1 for d in dims):
        raise FormatError(f"{path}: zero extent in dims {dims}")
    count = int(np.prod(dims))
    payload = _read_exact(f, 8 * count, path)
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)


def write_tensor(path: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.ndim < 1:
        raise ContractError("cannot write a 0-d tensor")
    with open(path, "wb") as f:
        _write_tensor_body(f, arr)


def read_tensor(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        arr = _read_tensor_body(f, path)
        _check_eof(f, path)
    return arr


def write_dataset(path: str, data: np.ndarray, names) -> None:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 4:
        raise ContractError(f"dataset must be [N,C,H,W], got shape {data.shape}")
    names = [str(n) for n in names]
    if len(names) != data.shape[1]:
        raise ContractError(f"{len(names)} names for {data.shape[1]} channels")
    write_tensor(path, data)
    with open(path + ".names", "w", encoding="utf-8") as f:
        f.write("\n".join(names) + "\n")


def read_dataset(path: str):
    data = read_tensor(path)
    if data.ndim != 4:
        raise FormatError(f"{path}: dataset must be [N,C,H,W], got shape {data.shape}")
    names_path = path + ".names"
    try:
        with open(names_path, "r", encoding="utf-8") as f:
            names = [ln.strip() for ln in f if ln.strip()]
    except FileNotFoundError:
        raise FormatError(f"{names_path}: missing modality-names sidecar") from None
    if len(names) != data.shape[1]:
        raise FormatError(f"{names_path}: {len(names)} names for "
                          f"{data.shape[1]} channels")
    return data, names


# --------------------------------------------------------------------------
# config <-> structured state

def build_schedule(cfg: dict) -> VPSDE:
    return VPSDE(cfg["sde.beta_min"], cfg["sde.beta_max"], cfg["sde.t_min"])


def build_net_config(cfg: dict) -> NetConfig:
    return NetConfig(widths=cfg["net.widths"], embed_dim=cfg["net.embed_dim"],
                     kernel_size=cfg["net.kernel_size"])


def build_train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(batch=cfg["train.batch"], steps=cfg["train.steps"],
                       lr=cfg["train.lr"], ema_decay=cfg["train.ema"],
                       seed=cfg["train.seed"], score_residual=cfg["train.score_residual"],
                       partition_schedule=cfg["train.partition_schedule"],
                       allow_unconditional=cfg["partitions.allow_unconditional"])


def snapshot_config(state: TrainState, base: dict | None = None) -> dict:
    """The effective config of a trainer, for embedding into artifacts."""
    cfg = dict(base) if base is not None else default_config()
    cfg["sde.beta_min"] = state.schedule.beta_min
    cfg["sde.beta_max"] = state.schedule.beta_max
    cfg["sde.t_min"] = state.schedule.t_min
    cfg["net.widths"] = state.net_cfg.widths
    cfg["net.embed_dim"] = state.net_cfg.embed_dim
    cfg["net.kernel_size"] = state.net_cfg.kernel_size
    cfg["train.batch"] = state.cfg.batch
    cfg["train.steps"] = state.cfg.steps
    cfg["train.lr"] = state.cfg.lr
    cfg["train.ema"] = state.cfg.ema_decay
    cfg["train.seed"] = state.cfg.seed
    cfg["train.score_residual"] = state.cfg.score_residual
    cfg["train.partition_schedule"] = state.cfg.partition_schedule
    cfg["partitions.allow_unconditional"] = state.cfg.allow_unconditional
    return cfg


# --------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path: str, state: TrainState, base_cfg: dict | None = None) -> None:
    cfg_text = format_config(snapshot_config(state, base_cfg))
    blocks: list[tuple[str, np.ndarray]] = []
    for prefix, group in (("raw", state.params), ("ema", state.ema),
                          ("m", state.opt.m), ("v", state.opt.v)):
        for k, arr in group.items():
            blocks.append((f"{prefix}.{k}", arr))
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<H", _VERSION))
        data = cfg_text.encode("utf-8")
        f.write(struct.pack("<I", len(data)))
        f.write(data)
        f.write(struct.pack("<B", state.mset.count))
        for name in state.mset.names:
            _write_str(f, name)
        f.write(struct.pack("<II", *state.image_hw))
        f.write(struct.pack("<Q", state.step))
        f.write(struct.pack("<Q", state.opt.step))
        f.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks:
            _write_str(f, name)
            _write_tensor_body(f, arr)


def load_checkpoint(path: str) -> TrainState:
    with open(path, "rb") as f:
        _expect_magic(f, _CKPT_MAGIC, path)
        version = _read_u16(f, path)
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        cfg_len = _read_u32(f, path)
        cfg = parse_config_text(_read_exact(f, cfg_len, path).decode("utf-8"),
                                base=default_config())
        n_names = _read_exact(f, 1, path)[0]
        names = tuple(_read_str(f, path) for _ in range(n_names))
        h, w = struct.unpack("<II", _read_exact(f, 8, path))
        step = _read_u64(f, path)
        adam_step_count = _read_u64(f, path)
        n_blocks = _read_u32(f, path)
        groups: dict[str, dict[str, np.ndarray]] = {
            "raw": {}, "ema": {}, "m": {}, "v": {}}
        for _ in range(n_blocks):
            name = _read_str(f, path)
            prefix, _, key = name.partition(".")
            if prefix not in groups or not key:
                raise FormatError(f"{path}: unknown parameter block {name!r}")
            if key in groups[prefix]:
                raise FormatError(f"{path}: duplicate parameter block {name!r}")
            groups[prefix][key] = _read_tensor_body(f, path)
        _check_eof(f, path)

    keysets = {p: set(g) for p, g in groups.items()}
    if not (keysets["raw"] == keysets["ema"] == keysets["m"] == keysets["v"]):
        raise FormatError(f"{path}: parameter groups disagree on parameter names")

    opt = AdamState(groups["raw"])
    opt.m = groups["m"]
    opt.v = groups["v"]
    opt.step = adam_step_count
    return TrainState(mset=ModalitySet(names), net_cfg=build_net_config(cfg),
                      schedule=build_schedule(cfg), cfg=build_train_config(cfg),
                      params=groups["raw"], ema=groups["ema"], opt=opt,
                      step=step, image_hw=(h, w))


# --------------------------------------------------------------------------
# Gaussian world files

def write_world(path: str, world: GaussianWorld) -> None:
    with open(path, "wb") as f:
        f.write(_WORLD_MAGIC)
        f.write(struct.pack("<H", _VERSION))
        f.write(struct.pack("<B", world.mset.count))
        for name, dim in zip(world.names, world.dims):
            _write_str(f, name)
            f.write(struct.pack("<I", dim))
        f.write(world.mu.astype("<f8").tobytes())
        f.write(np.ascontiguousarray(world.sigma).astype("<f8").tobytes())


def read_world(path: str) -> GaussianWorld:
    with open(path, "rb") as f:
        _expect_magic(f, _WORLD_MAGIC, path)
        version = _read_u16(f, path)
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported world version {version}")
        count = _read_exact(f, 1, path)[0]
        if count < 2:
            raise FormatError(f"{path}: world needs at least 2 modalities, got {count}")
        names, dims = [], []
        for _ in range(count):
            names.append(_read_str(f, path))
            dims.append(_read_u32(f, path))
        d = sum(dims)
        mu = np.frombuffer(_read_exact(f, 8 * d, path), dtype="<f8").astype(np.float64)
        sigma = np.frombuffer(_read_exact(f, 8 * d * d, path),
                              dtype="<f8").astype(np.float64).reshape(d, d)
        _check_eof(f, path)
    return GaussianWorld(names, dims, mu, sigma)


# --------------------------------------------------------------------------
# PGM export

def export_pgm(path: str, channel: np.ndarray) -> None:
    """8-bit binary PGM of one [0,1] image channel; v -> floor(255 v + 0.5)."""
    channel = np.asarray(channel, dtype=np.float64)
    if channel.ndim != 2:
        raise ContractError(f"PGM export needs a 2-d channel, got shape {channel.shape}")
    if channel.min() < 0.0 or channel.max() > 1.0:
        warnings.warn(f"{path}: values outside [0, 1] clamped for PGM export")
        channel = np.clip(channel, 0.0, 1.0)
    h, w = channel.shape
    pix = np.floor(255.0 * channel + 0.5).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pix.tobytes())
