"""Measurements on trained ensembles.

Prediction averaging, the bias/variance decomposition over repeated training
runs, per-mode accuracy/uncertainty summaries, and a 2-D affine slice
through weight space for loss-landscape plots.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import models
from .errors import ConfigError, ContractError, DegeneratePlaneError, UnsupportedOperationError
from .federation import Ensemble

__all__ = [
    "BiasVarianceReport",
    "ModeStats",
    "SurfaceGrid",
    "ensemble_predict",
    "ensemble_classify",
    "bias_variance",
    "mode_stats",
    "loss_surface_projection",
    "n_threads",
]

THREADS_ENV = "SIMFED_THREADS"


def n_threads() -> int:
    """Worker cap from the environment; defaults to 1 (fully serial)."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {value}")
    return value


def ensemble_predict(model, ensemble: Ensemble, x: np.ndarray) -> np.ndarray:
    """Average the modes in output space.

    Regression: mean of the K predictions, shape (n,). Classification: mean
    of the K softmax probability rows, shape (n, C); averaging after the
    softmax keeps the result a probability distribution.
    """
    if getattr(model, "task", "regression") == "classification":
        return np.mean([models.predict_proba(model, w, x) for w in ensemble.modes], axis=0)
    return np.mean([models.predict(model, w, x) for w in ensemble.modes], axis=0)


def ensemble_classify(model, ensemble: Ensemble, x: np.ndarray) -> np.ndarray:
    """Hard labels: argmax of the averaged probabilities."""
    probs = ensemble_predict(model, ensemble, x)
    if probs.ndim != 2:
        raise UnsupportedOperationError("hard labels need a classification model")
    return probs.argmax(axis=1)


@dataclass(frozen=True)
class BiasVarianceReport:
    """Decomposition over repeated training runs at fixed data.

    ``bias_sq`` is the mean squared gap between the across-run mean
    prediction and the noiseless target; ``variance`` the mean over test
    points and runs of the squared deviation from that mean prediction.
    ``bias_rms`` gives the square root alongside, since reported "bias"
    numbers are ambiguous between the two conventions.
    """

    bias_sq: float
    variance: float
    n_repeats: int
    n_points: int
    label: str | None = None

    @property
    def bias_rms(self) -> float:
        return self.bias_sq ** 0.5


def bias_variance(runner: Callable[[int], np.ndarray], noiseless: np.ndarray,
                  n_repeats: int, *, label: str | None = None) -> BiasVarianceReport:
    """Call ``runner(j)`` for ``j = 0..n_repeats-1`` and decompose the spread.

    Each call must return predictions on one fixed test grid; only the
    repeat index (seeding init and selection) varies. Repeats may execute on
    a thread pool capped by ``SIMFED_THREADS``, but results are reduced in
    repeat order so the report does not depend on scheduling.
    """
    if n_repeats < 2:
        raise ConfigError("need at least 2 repeats to estimate variance")
    noiseless = np.asarray(noiseless, dtype=np.float64).ravel()
    workers = min(n_threads(), n_repeats)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            preds = list(pool.map(runner, range(n_repeats)))
    else:
        preds = [runner(j) for j in range(n_repeats)]
    h = np.stack([np.asarray(p, dtype=np.float64).ravel() for p in preds])
    if h.shape[1] != noiseless.shape[0]:
        raise ContractError("runner predictions and noiseless target sizes differ")
    mean_pred = h.mean(axis=0)
    bias_sq = float(np.mean((mean_pred - noiseless) ** 2))
    variance = float(np.mean((h - mean_pred) ** 2))
    return BiasVarianceReport(bias_sq=bias_sq, variance=variance, n_repeats=n_repeats,
                              n_points=noiseless.shape[0], label=label)


@dataclass(frozen=True)
class ModeStats:
    """Per-mode test accuracy plus the mean predictive entropy (natural log)."""

    accuracies: tuple[float, ...]
    avg_entropy: float

    @property
    def acc_min(self) -> float:
        return min(self.accuracies)

    @property
    def acc_max(self) -> float:
        return max(self.accuracies)

    @property
    def acc_spread(self) -> float:
        return self.acc_max - self.acc_min


def mode_stats(model, ensemble: Ensemble, x: np.ndarray, y: np.ndarray) -> ModeStats:
    """Accuracy of every single mode on (x, y) and their average uncertainty."""
    if getattr(model, "task", "regression") != "classification":
        raise UnsupportedOperationError("mode accuracy stats need a classification model")
    y = np.asarray(y, dtype=np.int64).ravel()
    accs = []
    entropies = []
    for w in ensemble.modes:
        probs = models.predict_proba(model, w, x)
        accs.append(float(np.mean(probs.argmax(axis=1) == y)))
        p = np.maximum(probs, 1e-300)
        entropies.append(float(np.mean(-np.sum(p * np.log(p), axis=1))))
    return ModeStats(accuracies=tuple(accs), avg_entropy=float(np.mean(entropies)))


@dataclass(frozen=True, eq=False)
class SurfaceGrid:
    """Loss evaluated on the plane through three weight vectors.

    Plane coordinates: the first anchor sits at (0, 0), the second at
    (|b - a|, 0), the third at its orthogonal decomposition; the grid covers
    the anchors' bounding box plus a margin.
    """

    u_axis: np.ndarray
    v_axis: np.ndarray
    loss: np.ndarray               # (len(u_axis), len(v_axis))
    origin: np.ndarray             # weights at (0, 0)
    basis: tuple[np.ndarray, np.ndarray]
    anchor_uv: tuple[tuple[float, float], ...]

    def weights_at(self, u: float, v: float) -> np.ndarray:
        e1, e2 = self.basis
        return self.origin + u * e1 + v * e2

    def to_rows(self):
        """Yield (u, v, loss, log_loss) in row-major order."""
        for i, u in enumerate(self.u_axis):
            for j, v in enumerate(self.v_axis):
                val = float(self.loss[i, j])
                yield float(u), float(v), val, float(np.log(val)) if val > 0 else float("-inf")


def loss_surface_projection(model, x: np.ndarray, y: np.ndarray,
                            w_a: np.ndarray, w_b: np.ndarray, w_c: np.ndarray,
                            *, grid_n: int = 25, margin: float = 0.25) -> SurfaceGrid:
    """Training loss on the affine plane spanned by three weight vectors.

    The basis is the Gram-Schmidt frame of (b - a, c - a). If the three
    points are (numerically) collinear there is no plane to span and
    :class:`~simfed.errors.DegeneratePlaneError` is raised.
    """
    if grid_n < 2:
        raise ContractError("grid_n must be >= 2")
    if margin < 0:
        raise ContractError("margin must be non-negative")
    w_a = np.asarray(w_a, dtype=np.float64).ravel()
    d1 = np.asarray(w_b, dtype=np.float64).ravel() - w_a
    d2 = np.asarray(w_c, dtype=np.float64).ravel() - w_a
    n1 = float(np.linalg.norm(d1))
    if n1 <= 1e-12:
        raise DegeneratePlaneError("first two anchors coincide")
    e1 = d1 / n1
    perp = d2 - (d2 @ e1) * e1
    n2 = float(np.linalg.norm(perp))
    if n2 <= 1e-10 * max(float(np.linalg.norm(d2)), 1e-30):
        raise DegeneratePlaneError("anchors are collinear; no plane to project onto")
    e2 = perp / n2
    uc = float(d2 @ e1)
    anchors = ((0.0, 0.0), (n1, 0.0), (uc, n2))
    us = [p[0] for p in anchors]
    vs = [p[1] for p in anchors]
    du = (max(us) - min(us)) * margin
    dv = (max(vs) - min(vs)) * margin
    u_axis = np.linspace(min(us) - du, max(us) + du, grid_n)
    v_axis = np.linspace(min(vs) - dv, max(vs) + dv, grid_n)
    grid = np.empty((grid_n, grid_n))
    for i, u in enumerate(u_axis):
        for j, v in enumerate(v_axis):
            grid[i, j] = models.loss(model, w_a + u * e1 + v * e2, x, y)
    return SurfaceGrid(u_axis=u_axis, v_axis=v_axis, loss=grid, origin=w_a,
                       basis=(e1, e2), anchor_uv=anchors)
