"""Variance-preserving forward diffusion.

The forward process is dx = f(t) x dt + g(t) dw on t in [0, 1] with a
linear noise schedule

    beta(t) = beta_min + t (beta_max - beta_min)
    f(t)    = -1/2 beta(t)
    g(t)    = sqrt(beta(t))

whose transition kernel is Gaussian: x_t = alpha(t) x_0 + sigma(t) eps with

    alpha(t) = exp(-1/4 t^2 (beta_max - beta_min) - 1/2 t beta_min)
    sigma(t) = sqrt(1 - alpha(t)^2)

so alpha^2 + sigma^2 = 1 holds exactly at every t (variance preserving).
All time functions accept scalars or arrays and check the [0, 1] domain.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError

# Default floor for times at which score targets are formed or the sampler
# stops; below it sigma(t) -> 0 and 1/sigma blows up.
T_MIN = 1e-3


class VPSDE:
    """Linear-schedule variance-preserving SDE."""

    def __init__(self, beta_min: float = 0.1, beta_max: float = 20.0,
                 t_min: float = T_MIN):
        beta_min = float(beta_min)
        beta_max = float(beta_max)
        t_min = float(t_min)
        if not beta_min > 0.0:
            raise DomainError(f"beta_min must be positive, got {beta_min}")
        if not beta_max > beta_min:
            raise DomainError(f"beta_max must exceed beta_min, got {beta_max} <= {beta_min}")
        if not 0.0 < t_min < 1.0:
            raise DomainError(f"t_min must lie in (0, 1), got {t_min}")
        self.beta_min = beta_min
        self.beta_max = beta_max
        self.t_min = t_min

    def _check_t(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise DomainError("t must lie in [0, 1]")
        return t

    def beta(self, t):
        t = self._check_t(t)
        return self.beta_min + t * (self.beta_max - self.beta_min)

    def drift_coef(self, t):
        """f(t); the drift is f(t) * x."""
        return -0.5 * self.beta(t)

    def diffusion_coef(self, t):
        """g(t)."""
        return np.sqrt(self.beta(t))

    def alpha(self, t):
        t = self._check_t(t)
        return np.exp(-0.25 * t * t * (self.beta_max - self.beta_min)
                      - 0.5 * t * self.beta_min)

    def sigma(self, t):
        a = self.alpha(t)
        return np.sqrt(1.0 - a * a)

    def perturb(self, x0: np.ndarray, t, eps: np.ndarray) -> np.ndarray:
        """Sample the transition kernel: alpha(t) x0 + sigma(t) eps.

        `t` is either a scalar applied to every sample or a 1-d array of
        per-sample times broadcast over the leading axis of `x0`.
        """
        x0 = np.asarray(x0, dtype=np.float64)
        eps = np.asarray(eps, dtype=np.float64)
        if eps.shape != x0.shape:
            raise DomainError(f"perturb: eps shape {eps.shape} != x0 shape {x0.shape}")
        a, s = self._per_sample(t, x0)
        return a * x0 + s * eps

    def analytic_score_target(self, x_t: np.ndarray, x0: np.ndarray, t) -> np.ndarray:
        """Gradient of log N(x_t; alpha(t) x0, sigma(t)^2 I) in x_t.

        Equals -(x_t - alpha x0)/sigma^2, i.e. -eps/sigma when x_t came from
        `perturb`.  Undefined as sigma -> 0, hence the t_min floor.
        """
        x_t = np.asarray(x_t, dtype=np.float64)
        x0 = np.asarray(x0, dtype=np.float64)
        if x_t.shape != x0.shape:
            raise DomainError(f"score target: shapes {x_t.shape} and {x0.shape} differ")
        if np.any(np.asarray(t) < self.t_min):
            raise DomainError(f"score target needs t >= {self.t_min}")
        a, s = self._per_sample(t, x_t)
        return -(x_t - a * x0) / (s * s)

    def _per_sample(self, t, ref: np.ndarray):
        # alpha/sigma shaped to broadcast over the leading axis of `ref`
        a = self.alpha(t)
        s = self.sigma(t)
        if a.ndim == 1:
            if a.shape[0] != ref.shape[0]:
                raise DomainError(f"{a.shape[0]} times for {ref.shape[0]} samples")
            extra = (1,) * (ref.ndim - 1)
            a = a.reshape(a.shape + extra)
            s = s.reshape(s.shape + extra)
        return a, s


def prior_sample(shape, seed: int) -> np.ndarray:
    """Draw from the prior pi = N(0, I); the terminal law of the forward SDE."""
    from . import rng
    return rng.randn(shape, seed)


def draw_times(n: int, seed: int, t_min: float = T_MIN) -> np.ndarray:
    """n training times uniform on [t_min, 1]."""
    from . import rng
    u = rng.rand((n,), seed)
    return t_min + (1.0 - t_min) * u
