"""Verification worlds with known ground truth.

GaussianWorld: a jointly Gaussian population over the concatenated modality
vector.  Conditioning on any subset is closed-form (Schur complement), and
the diffused conditional density stays Gaussian, so the exact conditional
score is available at every t.  Trained networks and the sampler are
verified against these closed forms.

ShapeWorld: 32x32 three-channel images of a shared ellipse, each channel a
different contrast mapping, with an optional small lesion disc.  The lesion's
contrast in channel 0 has a random sign per subject while channels 1 and 2
render it deterministically; given channels 1 and 2, channel 0's lesion is
genuinely ambiguous (50/50 brighter or darker), which is what repeated
conditional draws are expected to reproduce.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import ConfigError, ContractError, DomainError, NumericalError
from .modality import ModalitySet, Partition
from .sde import VPSDE

_COND_LIMIT = 1e12


class GaussianWorld:
    """Jointly Gaussian modalities; the analytic oracle."""

    def __init__(self, names, dims, mu, sigma):
        self.mset = ModalitySet(tuple(names))
        self.dims = tuple(int(d) for d in dims)
        if len(self.dims) != self.mset.count or any(d < 1 for d in self.dims):
            raise ConfigError(f"need one positive dimension per modality, got {self.dims}")
        d_total = sum(self.dims)
        self.mu = np.asarray(mu, dtype=np.float64).reshape(d_total)
        sigma = np.asarray(sigma, dtype=np.float64)
        if sigma.shape != (d_total, d_total):
            raise ConfigError(f"covariance must be {d_total}x{d_total}, got {sigma.shape}")
        if not np.allclose(sigma, sigma.T, atol=1e-12):
            raise ConfigError("covariance must be symmetric")
        self.sigma = 0.5 * (sigma + sigma.T)
        ev_min = float(np.linalg.eigvalsh(self.sigma)[0])
        if ev_min <= 1e-8:
            raise ConfigError(f"covariance must be positive definite "
                              f"(smallest eigenvalue {ev_min:.3e})")
        off = np.cumsum((0,) + self.dims)
        self._slices = [np.arange(off[i], off[i + 1]) for i in range(len(self.dims))]

    @property
    def names(self):
        return self.mset.names

    def indices(self, modality_ids) -> np.ndarray:
        """Flat vector indices covered by the given modalities, in order."""
        if len(modality_ids) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([self._slices[i] for i in modality_ids])

    @property
    def image_hw(self) -> tuple[int, int]:
        d = set(self.dims)
        if len(d) != 1:
            raise ContractError("modalities with differing dimensions cannot be "
                                "stacked as image channels")
        d = d.pop()
        h = int(np.sqrt(d))
        return (h, h) if h * h == d else (1, d)

    def conditional_moments(self, b_values: np.ndarray, partition: Partition):
        """Mean and covariance of the A block given the B block.

        b_values: [dB] or [N, dB].  Returns (mu [.., dA], cov [dA, dA]).
        """
        ia = self.indices(partition.synth)
        ib = self.indices(partition.cond)
        b_values = np.asarray(b_values, dtype=np.float64)
        if b_values.shape[-1] != ib.size:
            raise ContractError(f"b has {b_values.shape[-1]} values for "
                                f"{ib.size} conditional dimensions")
        mu_a, mu_b = self.mu[ia], self.mu[ib]
        s_aa = self.sigma[np.ix_(ia, ia)]
        if ib.size == 0:
            return np.broadcast_to(mu_a, b_values.shape[:-1] + (ia.size,)).copy(), s_aa
        s_bb = self.sigma[np.ix_(ib, ib)]
        s_ba = self.sigma[np.ix_(ib, ia)]
        cond = float(np.linalg.cond(s_bb))
        if not np.isfinite(cond) or cond > _COND_LIMIT:
            raise NumericalError(f"conditional covariance block is numerically "
                                 f"singular (condition number {cond:.3e})")
        w = np.linalg.solve(s_bb, s_ba)          # [dB, dA]
        mu_c = mu_a + (b_values - mu_b) @ w
        cov_c = s_aa - s_ba.T @ w
        return mu_c, cov_c

    def analytic_conditional_score(self, a_t: np.ndarray, b: np.ndarray, t: float,
                                   partition: Partition, schedule: VPSDE) -> np.ndarray:
        """Exact score of the diffused conditional law at time t.

        a_t | b is N(alpha mu_c, alpha^2 cov_c + sigma^2 I); the score is
        -(alpha^2 cov_c + sigma^2 I)^{-1} (a_t - alpha mu_c).
        a_t: [dA] or [N, dA]; b: [dB] or [N, dB] (broadcast over draws).
        """
        if float(t) < schedule.t_min:
            raise DomainError(f"score needs t >= {schedule.t_min}")
        a_t = np.asarray(a_t, dtype=np.float64)
        mu_c, cov_c = self.conditional_moments(b, partition)
        al = float(schedule.alpha(t))
        sg = float(schedule.sigma(t))
        cov_t = al * al * cov_c + sg * sg * np.eye(cov_c.shape[0])
        resid = a_t - al * mu_c
        return -np.linalg.solve(cov_t, np.atleast_2d(resid).T).T.reshape(a_t.shape)

    def sample_joint(self, n: int, seed: int) -> np.ndarray:
        """n i.i.d. draws from N(mu, Sigma), as [n, |C|, H, W] channel stacks."""
        if n < 1:
            raise ContractError(f"need n >= 1, got {n}")
        h, w = self.image_hw
        try:
            chol = np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError as e:
            raise ConfigError(f"covariance is not positive definite: {e}") from None
        z = rng.randn((n, self.mu.size), seed)
        flat = self.mu + z @ chol.T
        return flat.reshape(n, self.mset.count, h, w)


def gaussian_pair(rho: float = 0.8) -> GaussianWorld:
    """Two scalar modalities with correlation rho; the hand-checkable world."""
    if not -1.0 < rho < 1.0:
        raise ConfigError(f"correlation must lie in (-1, 1), got {rho}")
    return GaussianWorld(("m0", "m1"), (1, 1), np.zeros(2),
                         np.array([[1.0, rho], [rho, 1.0]]))


def gaussian_trio() -> GaussianWorld:
    """Three scalar modalities, pairwise correlations 0.8, 0.5, 0.3."""
    sigma = np.array([[1.0, 0.8, 0.5],
                      [0.8, 1.0, 0.3],
                      [0.5, 0.3, 1.0]])
    return GaussianWorld(("m0", "m1", "m2"), (1, 1, 1), np.zeros(3), sigma)


# --------------------------------------------------------------------------
# shape-and-lesion images

@dataclass(frozen=True)
class ShapeWorld:
    size: int = 32
    names: tuple[str, ...] = ("m0", "m1", "m2")
    background: tuple[float, ...] = (0.10, 0.20, 0.15)
    amplitude: tuple[float, ...] = (0.70, 0.50, 0.60)
    # lesion contrast deltas; channel 0's magnitude gets a random sign
    lesion_delta: tuple[float, ...] = (0.25, 0.20, -0.22)
    noise_std: float = 0.01
    lesion_prob: float = 0.5

    def __post_init__(self):
        if len(self.names) != 3:
            raise ConfigError("this world is defined for exactly 3 modalities")
        if self.size < 12:
            raise ConfigError(f"image size must be >= 12, got {self.size}")

    @property
    def mset(self) -> ModalitySet:
        return ModalitySet(self.names)


@dataclass
class ShapeSubject:
    image: np.ndarray            # [3, size, size] in [0, 1]
    ellipse_mask: np.ndarray     # bool [size, size]
    lesion_mask: np.ndarray      # bool [size, size]; all False when no lesion
    has_lesion: bool
    sign0: int                   # +1 / -1 channel-0 lesion sign; 0 when no lesion
    params: dict = field(default_factory=dict)


def make_shape_subject(world: ShapeWorld, seed: int) -> ShapeSubject:
    """One subject: shared ellipse, per-channel contrast, optional lesion."""
    s = world.size
    u = rng.rand((10,), rng.derive_seed(seed, 0))
    cx = (0.35 + 0.30 * u[0]) * s
    cy = (0.35 + 0.30 * u[1]) * s
    rx = (0.15 + 0.13 * u[2]) * s
    ry = (0.15 + 0.13 * u[3]) * s
    phi = np.pi * u[4]

    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    xr = dx * np.cos(phi) + dy * np.sin(phi)
    yr = -dx * np.sin(phi) + dy * np.cos(phi)
    ellipse = (xr / rx) ** 2 + (yr / ry) ** 2 <= 1.0

    has_lesion = bool(u[5] < world.lesion_prob)
    sign0 = 0
    lesion = np.zeros((s, s), dtype=bool)
    if has_lesion:
        sign0 = 1 if u[6] < 0.5 else -1
        rl = 2.5 + 1.5 * u[9]
        # keep the disc inside the ellipse's inscribed circle so the
        # thresholded support of every channel is exactly the ellipse
        max_off = max(0.0, min(rx, ry) - rl - 1.0)
        lx = cx + (2.0 * u[7] - 1.0) * 0.6 * max_off
        ly = cy + (2.0 * u[8] - 1.0) * 0.6 * max_off
        lesion = (xx - lx) ** 2 + (yy - ly) ** 2 <= rl * rl

    noise = world.noise_std * rng.randn((3, s, s), rng.derive_seed(seed, 1))
    chans = []
    for k in range(3):
        delta = world.lesion_delta[k] * (sign0 if k == 0 else 1.0) if has_lesion else 0.0
        img = world.background[k] + world.amplitude[k] * ellipse + delta * lesion + noise[k]
        chans.append(img)
    image = np.clip(np.stack(chans), 0.0, 1.0)
    return ShapeSubject(image=image, ellipse_mask=ellipse, lesion_mask=lesion,
                        has_lesion=has_lesion, sign0=sign0,
                        params={"center": (cx, cy), "axes": (rx, ry), "angle": phi})


def make_shape_dataset(world: ShapeWorld, n: int, seed: int) -> np.ndarray:
    """n subjects as one [n, 3, size, size] array (per-subject derived seeds)."""
    if n < 1:
        raise ContractError(f"need n >= 1, got {n}")
    return np.stack([make_shape_subject(world, rng.derive_seed(seed, i)).image
                     for i in range(n)])


def lesion_contrast(world: ShapeWorld, channel0: np.ndarray,
                    lesion_mask: np.ndarray) -> float:
    """Mean channel-0 deviation from healthy tissue level over the lesion disc.

    Positive means the lesion rendered brighter than surrounding tissue,
    negative darker; the sign is the quantity of interest for diversity
    checks on repeated conditional draws.
    """
    if not lesion_mask.any():
        raise ContractError("subject has no lesion pixels")
    inside_level = world.background[0] + world.amplitude[0]
    return float(np.mean(channel0[lesion_mask]) - inside_level)


def build_world(name: str):
    """World registry used by the command-line tools."""
    table = {
        "gaussian2": lambda: gaussian_pair(0.8),
        "gaussian3": gaussian_trio,
        "shapes": ShapeWorld,
    }
    if name not in table:
        raise ConfigError(f"unknown world {name!r}; choose from {sorted(table)}")
    return table[name]()
