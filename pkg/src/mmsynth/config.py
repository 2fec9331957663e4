"""Line-based configuration: `section.key = value` pairs with # comments.

Every known key has a type and default below; unknown keys are hard errors
so typos never pass silently.  Later assignments override earlier ones.
The same syntax is used for config files, `--set` overrides, and the
snapshot echoed into checkpoints and report headers.
"""

from __future__ import annotations

from .errors import ConfigError


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1"):
        return True
    if v in ("false", "0"):
        return False
    raise ConfigError(f"expected true/false, got {s!r}")


def _parse_int_list(s: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in s.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {s!r}") from None


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# key -> (parser, default)
KEYS: dict[str, tuple] = {
    "sde.beta_min": (float, 0.1),
    "sde.beta_max": (float, 20.0),
    "sde.t_min": (float, 1e-3),
    "net.widths": (_parse_int_list, (32, 64, 128)),
    "net.embed_dim": (int, 64),
    "net.kernel_size": (int, 3),
    "train.batch": (int, 32),
    "train.steps": (int, 2000),
    "train.lr": (float, 2e-4),
    "train.ema": (float, 0.999),
    "train.seed": (int, 0),
    "train.score_residual": (_parse_bool, False),
    "train.partition_schedule": (str, "uniform"),
    "partitions.allow_unconditional": (_parse_bool, False),
    "sample.steps": (int, 1000),
    "sample.final_noise": (_parse_bool, True),
}


def default_config() -> dict:
    return {k: v for k, (_, v) in KEYS.items()}


def set_key(cfg: dict, key: str, raw_value: str) -> None:
    key = key.strip()
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    parser = KEYS[key][0]
    try:
        cfg[key] = parser(raw_value.strip())
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"bad value {raw_value!r} for {key}") from None


def parse_config_text(text: str, base: dict | None = None) -> dict:
    cfg = dict(base) if base is not None else default_config()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {line!r}")
        key, value = line.split("=", 1)
        set_key(cfg, key, value)
    return cfg


def load_config(path: str, base: dict | None = None) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read(), base)


def apply_overrides(cfg: dict, assignments) -> dict:
    """Apply `key=value` strings (CLI --set) in order."""
    for a in assignments:
        if "=" not in a:
            raise ConfigError(f"override must look like section.key=value, got {a!r}")
        key, value = a.split("=", 1)
        set_key(cfg, key, value)
    return cfg


def format_config(cfg: dict) -> str:
    """Canonical text form, registry order; parses back to the same values."""
    unknown = set(cfg) - set(KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    return "\n".join(f"{k} = {_fmt(cfg[k])}" for k in KEYS if k in cfg) + "\n"
