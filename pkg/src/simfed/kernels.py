"""Closed-form predictions for what converged training should look like.

For the linear RBF model the tangent kernel is the constant Gram matrix
``Theta = F F^T`` of the feature map, so long-run gradient descent on the
pooled squared loss has an exact limit: starting from weights ``w0`` the
converged function is

    f_inf(x) = f_w0(x) + Theta(x, X) Theta(X, X)^-1 (Y - f_w0(X)).

Averaged over random initializations whose function values are Gaussian with
covariance ``sigma^2 Theta``, the converged modes are themselves Gaussian
with the kernel-regression mean and a shrunk covariance. This module
computes those reference quantities (plus an exponential-decay fit for loss
traces) so the simulator's empirical behaviour can be checked against them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, ContractError, FitError, NumericalError

__all__ = [
    "GramMatrix",
    "GpPosterior",
    "DecayFit",
    "VarianceScaling",
    "gram",
    "kernel_cross",
    "gp_posterior",
    "variance_ratio_check",
    "fit_decay",
]

DEFAULT_JITTER_SCALE = 1e-10


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """Tangent kernel on the training inputs, with the jitter actually added."""

    theta: np.ndarray
    jitter: float

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    @property
    def regularized(self) -> np.ndarray:
        return self.theta + self.jitter * np.eye(self.n)


def kernel_cross(model, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Kernel block Theta(A, B) = features(A) @ features(B)^T."""
    return model.features(xa) @ model.features(xb).T


def gram(model, x: np.ndarray, jitter: float | None = None) -> GramMatrix:
    """Gram matrix of the model's feature map on ``x``.

    ``jitter=None`` picks ``1e-10 * trace / n``, enough to make Cholesky
    succeed on duplicated inputs without visibly moving the posterior.
    """
    f = model.features(x)
    theta = f @ f.T
    theta = 0.5 * (theta + theta.T)
    if jitter is None:
        jitter = DEFAULT_JITTER_SCALE * float(np.trace(theta)) / theta.shape[0]
    elif jitter < 0:
        raise ContractError("jitter must be non-negative")
    return GramMatrix(theta=theta, jitter=float(jitter))


class GpPosterior:
    """Gaussian description of converged modes, conditioned on (X, Y).

    ``mean`` is the kernel interpolant of the data. The covariance assumes
    init function values with covariance ``sigma^2 Theta`` (the flat i.i.d.
    N(0, sigma^2) weight init of the linear model); an arbitrary init
    covariance can be supplied as ``init_kernel(A, B)`` instead.
    """

    def __init__(self, model, x: np.ndarray, y: np.ndarray, *, sigma: float = 1.0,
                 jitter: float | None = None,
                 init_kernel: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None):
        if sigma <= 0:
            raise ContractError("sigma must be positive")
        y = np.asarray(y, dtype=np.float64).ravel()
        g = gram(model, x, jitter=jitter)
        if y.shape[0] != g.n:
            raise ContractError("x and y sizes differ")
        a = g.regularized
        try:
            chol = np.linalg.cholesky(a)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                "Gram matrix is not positive definite even with jitter",
                condition=float(np.linalg.cond(a)),
            ) from exc
        self.model = model
        self.x = np.asarray(x, dtype=np.float64)
        self.y = y
        self.sigma = float(sigma)
        self.gram = g
        self._chol = chol
        self._init_kernel = init_kernel
        self._alpha = self._solve(y)

    def _solve(self, b: np.ndarray) -> np.ndarray:
        z = np.linalg.solve(self._chol, b)
        return np.linalg.solve(self._chol.T, z)

    def mean(self, xs: np.ndarray) -> np.ndarray:
        """Posterior mean Theta(x*, X) Theta^-1 Y."""
        return kernel_cross(self.model, xs, self.x) @ self._alpha

    def limit_prediction(self, w0: np.ndarray, xs: np.ndarray) -> np.ndarray:
        """Exact gradient-flow limit for one specific init ``w0``.

        Residual form: the init's own prediction plus the kernel solve of
        its training residual. For the linear model this is what infinitely
        long full-batch descent converges to.
        """
        from . import models

        f0_train = models.predict(self.model, w0, self.x)
        f0_star = models.predict(self.model, w0, xs)
        return f0_star + kernel_cross(self.model, xs, self.x) @ self._solve(self.y - f0_train)

    def cov(self, xs: np.ndarray, xs2: np.ndarray | None = None) -> np.ndarray:
        """Posterior covariance between test points.

        With the default init law this is
        ``sigma^2 (Theta(s,s') - Theta(s,X) Theta^-1 Theta(X,s'))``; with a
        custom ``init_kernel`` K it is the conditioned form
        ``K(s,s') - Q K(X,s') - K(s,X) Q'^T + Q K(X,X) Q'^T`` where
        ``Q = Theta(s,X) Theta^-1``.
        """
        xs2 = xs if xs2 is None else xs2
        q1 = self._solve_rows(xs)
        q2 = q1 if xs2 is xs else self._solve_rows(xs2)
        if self._init_kernel is None:
            cross = kernel_cross(self.model, xs, xs2)
            c = self.sigma ** 2 * (cross - q1 @ kernel_cross(self.model, self.x, xs2))
        else:
            k = self._init_kernel
            c = (k(xs, xs2) - q1 @ k(self.x, xs2) - k(xs, self.x) @ q2.T
                 + q1 @ k(self.x, self.x) @ q2.T)
        if xs2 is xs:
            c = 0.5 * (c + c.T)
        return c

    def _solve_rows(self, xs: np.ndarray) -> np.ndarray:
        return self._solve(kernel_cross(self.model, self.x, xs)).T

    def var(self, xs: np.ndarray) -> np.ndarray:
        """Pointwise posterior variance, clipped at zero against roundoff."""
        return np.maximum(np.diag(self.cov(xs)), 0.0)


def gp_posterior(model, x: np.ndarray, y: np.ndarray, *, sigma: float = 1.0,
                 jitter: float | None = None,
                 init_kernel: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
                 ) -> GpPosterior:
    return GpPosterior(model, x, y, sigma=sigma, jitter=jitter, init_kernel=init_kernel)


@dataclass(frozen=True)
class VarianceScaling:
    """Log-log fit of ensemble variance against ensemble size."""

    slope: float
    intercept: float
    ratios: dict[tuple[int, int], float]


def variance_ratio_check(var_by_k: dict[int, float]) -> VarianceScaling:
    """Fit ``log var ~ slope * log K``; averaging K independent modes should
    give slope near -1. Also reports every pairwise ``var[i]/var[j]`` for
    ``i < j``."""
    if len(var_by_k) < 3:
        raise ConfigError("need at least three ensemble sizes for a slope")
    ks = sorted(var_by_k)
    if any(k < 1 for k in ks):
        raise ConfigError("ensemble sizes must be positive")
    if any(var_by_k[k] <= 0 for k in ks):
        raise ConfigError("variances must be positive to fit in log space")
    lk = np.log(np.array(ks, dtype=np.float64))
    lv = np.log(np.array([var_by_k[k] for k in ks]))
    slope, intercept = np.polyfit(lk, lv, 1)
    ratios = {(a, b): var_by_k[a] / var_by_k[b] for i, a in enumerate(ks) for b in ks[i + 1:]}
    return VarianceScaling(slope=float(slope), intercept=float(intercept), ratios=ratios)


@dataclass(frozen=True)
class DecayFit:
    """Exponential fit ``loss ~ exp(intercept - rate * round)`` on the
    pre-plateau prefix of a loss trace."""

    rate: float
    intercept: float
    r_squared: float
    fit_start: int
    fit_end: int          # exclusive
    plateau: float
    degenerate: bool


def fit_decay(losses, *, rounds: np.ndarray | None = None, floor_quantile: float = 0.2,
              floor_margin: float = 0.05) -> DecayFit:
    """Fit the exponential phase of a training-loss trace.

    ``losses`` is either a 1-D loss sequence or an (n, 2) array of
    (round, loss) pairs; an explicit ``rounds`` argument overrides the
    x-coordinates either way. The plateau is the median of the trailing
    ``floor_quantile`` of the trace; the fit covers the longest prefix whose
    losses stay above ``plateau * (1 + floor_margin)``, in log space by
    least squares, and ``fit_start``/``fit_end`` are trace indices of that
    half-open window. A flat trace is reported as one degenerate fit (rate
    0) rather than an error; a trace that starts at or below its own
    plateau has no fit window and raises :class:`~simfed.errors.FitError`.
    """
    arr = np.asarray(losses, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[1] == 2:
        if rounds is None:
            rounds = arr[:, 0]
        arr = arr[:, 1]
    losses = arr.ravel()
    n = losses.shape[0]
    rounds = np.arange(n, dtype=np.float64) if rounds is None else \
        np.asarray(rounds, dtype=np.float64).ravel()
    if rounds.shape[0] != n:
        raise ContractError("rounds and losses lengths differ")
    if n < 5:
        raise ContractError("need at least 5 rounds to fit a decay")
    if not np.all(np.isfinite(losses)):
        raise ContractError("loss trace contains non-finite values")
    if np.any(losses <= 0):
        raise ContractError("loss trace must be positive to fit in log space")
    tail = max(1, int(np.ceil(floor_quantile * n)))
    plateau = float(np.median(losses[-tail:]))
    spread = losses.max() - losses.min()
    if spread <= 1e-12 * max(losses.max(), 1e-300):
        return DecayFit(rate=0.0, intercept=float(np.log(plateau)), r_squared=float("nan"),
                        fit_start=0, fit_end=0, plateau=plateau, degenerate=True)
    threshold = plateau * (1.0 + floor_margin)
    above = losses > threshold
    end = int(np.argmin(above)) if not above.all() else n
    if end < 3:
        raise FitError(f"only {end} rounds above the plateau; nothing to fit")
    logl = np.log(losses[:end])
    slope, intercept = np.polyfit(rounds[:end], logl, 1)
    resid = logl - (slope * rounds[:end] + intercept)
    ss_tot = float(np.sum((logl - logl.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(rate=float(-slope), intercept=float(intercept),
                    r_squared=max(r2, 0.0), fit_start=0, fit_end=end,
                    plateau=plateau, degenerate=False)
