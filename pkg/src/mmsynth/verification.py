"""Oracle-based verification suites.

Everything here compares an implementation against something independently
computable: finite differences of a Gaussian log-density versus the closed
form, a trained network's score versus the analytic conditional score, and
sampler output moments versus Schur-complement conditional moments.  The
command-line `oracle-check` subcommand and the acceptance tests share these
functions so there is exactly one definition of each check.
"""

from __future__ import annotations

import math

import numpy as np

from . import rng
from .errors import ContractError
from .modality import Partition, enumerate_partitions, format_partition
from .sampling import SamplerConfig, generate_many
from .sde import VPSDE
from .worlds import GaussianWorld

DEFAULT_T_GRID = tuple(round(0.1 * k, 1) for k in range(1, 11))


def gaussian_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    d = mean.size
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise ContractError("covariance must be positive definite")
    r = x - mean
    return float(-0.5 * (r @ np.linalg.solve(cov, r) + logdet + d * math.log(2 * math.pi)))


def fd_conditional_score(world: GaussianWorld, a_t: np.ndarray, b: np.ndarray,
                         t: float, partition: Partition, schedule: VPSDE,
                         h: float = 1e-5) -> np.ndarray:
    """Central finite differences of the diffused conditional log-density."""
    mu_c, cov_c = world.conditional_moments(b, partition)
    al = float(schedule.alpha(t))
    sg = float(schedule.sigma(t))
    cov_t = al * al * cov_c + sg * sg * np.eye(cov_c.shape[0])
    mean_t = al * mu_c
    out = np.zeros_like(a_t)
    for i in range(a_t.size):
        hi = a_t.copy()
        lo = a_t.copy()
        hi[i] += h
        lo[i] -= h
        out[i] = (gaussian_logpdf(hi, mean_t, cov_t)
                  - gaussian_logpdf(lo, mean_t, cov_t)) / (2 * h)
    return out


def score_fd_max_rel_err(world: GaussianWorld, schedule: VPSDE, seed: int,
                         t_list=(0.1, 0.35, 0.7, 1.0), n_points: int = 5) -> float:
    """Worst relative deviation of the analytic score from finite differences."""
    worst = 0.0
    for pi, part in enumerate(enumerate_partitions(world.mset)):
        ia = world.indices(part.synth)
        ib = world.indices(part.cond)
        for ti, t in enumerate(t_list):
            pts = world.sample_joint(n_points, rng.derive_seed(seed, pi, ti))
            flat = pts.reshape(n_points, -1)
            eps = rng.randn((n_points, ia.size), rng.derive_seed(seed, pi, ti, 1))
            for j in range(n_points):
                a0, bv = flat[j][ia], flat[j][ib]
                a_t = float(schedule.alpha(t)) * a0 + float(schedule.sigma(t)) * eps[j]
                s = world.analytic_conditional_score(a_t, bv, t, part, schedule)
                fd = fd_conditional_score(world, a_t, bv, t, part, schedule)
                denom = np.linalg.norm(s)
                if denom > 0:
                    worst = max(worst, float(np.linalg.norm(fd - s) / denom))
    return worst


def net_score_errors(source, world: GaussianWorld, seed: int,
                     n_points: int = 1000, t_grid=DEFAULT_T_GRID,
                     partitions: list[Partition] | None = None) -> dict[str, float]:
    """Relative L2 score error of a score source per partition.

    For each partition and each t on the grid, draws joint samples, diffuses
    the A block with the forward kernel, and compares the source's score to
    the closed form: ||s_hat - s|| / ||s|| over the whole batch, averaged
    over the grid.  Works for trained-network and oracle sources alike.
    """
    partitions = partitions or enumerate_partitions(world.mset)
    h, w = world.image_hw
    c = world.mset.count
    schedule = source.schedule
    out: dict[str, float] = {}
    for pi, part in enumerate(partitions):
        synth = list(part.synth)
        errs = []
        for ti, t in enumerate(t_grid):
            x0 = world.sample_joint(n_points, rng.derive_seed(seed, pi, ti))
            eps = rng.randn((n_points, len(synth), h, w),
                            rng.derive_seed(seed, pi, ti, 1))
            x = x0.copy()
            al = float(schedule.alpha(t))
            sg = float(schedule.sigma(t))
            x[:, synth] = al * x0[:, synth] + sg * eps
            s_hat = source.score(x, t, part)[:, synth].reshape(n_points, -1)
            a_flat = x[:, synth].reshape(n_points, -1)
            b_flat = x0[:, list(part.cond)].reshape(n_points, -1)
            s = world.analytic_conditional_score(a_flat, b_flat, t, part, schedule)
            errs.append(float(np.linalg.norm(s_hat - s) / np.linalg.norm(s)))
        out[format_partition(part, world.mset)] = float(np.mean(errs))
    return out


def sampler_moment_errors(source, world: GaussianWorld, partition: Partition,
                          cfg: SamplerConfig, n_draws: int, seed: int,
                          b_values: np.ndarray):
    """Generate conditionally and compare draw moments to the closed form.

    Returns (mean_err, var_err): the worst absolute deviation of the draw
    mean from mu_{a|b} and of the per-component draw variance from the
    diagonal of Sigma_{a|b}.
    """
    h, w = world.image_hw
    b_values = np.asarray(b_values, dtype=np.float64)
    b_imgs = b_values.reshape(len(partition.cond), h, w)
    draws = generate_many(source, b_imgs, partition, cfg, seed, n_draws)
    flat = draws.reshape(n_draws, -1)
    mu_c, cov_c = world.conditional_moments(b_values, partition)
    mean_err = float(np.max(np.abs(flat.mean(axis=0) - mu_c)))
    var_err = float(np.max(np.abs(flat.var(axis=0, ddof=1) - np.diag(cov_c))))
    return mean_err, var_err


def normal_cdf(x: np.ndarray, mean: float, var: float) -> np.ndarray:
    z = (np.asarray(x, dtype=np.float64) - mean) / math.sqrt(2.0 * var)
    return 0.5 * (1.0 + np.array([math.erf(v) for v in z.ravel()]).reshape(z.shape))


def ks_statistic(samples: np.ndarray, mean: float, var: float) -> float:
    """One-sample Kolmogorov-Smirnov distance to N(mean, var)."""
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = x.size
    f = normal_cdf(x, mean, var)
    i = np.arange(n, dtype=np.float64)
    return float(max(np.max((i + 1) / n - f), np.max(f - i / n)))
