"""Differentiable predictors trained on clients.

Two model families:

* ``RbfFeatureModel`` — a linear-in-weights model ``f(x) = w . phi(x)`` over
  fixed Gaussian radial-basis features on 1-D inputs. Because it is linear in
  ``w``, its tangent kernel is the feature inner product and stays constant
  during training, which is what makes the closed-form posterior checks in
  :mod:`simfed.kernels` exact.
* ``MlpModel`` — a small fully-connected network (tanh or relu hidden
  layers) for the synthetic classification experiments.

Weights are flat float64 vectors throughout; models are immutable
descriptions, so training functions are pure given their inputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ._accel import ops
from .errors import ContractError, DivergenceError

__all__ = [
    "RbfFeatureModel",
    "MlpModel",
    "InitSpec",
    "init_weights",
    "predict",
    "predict_proba",
    "softmax",
    "loss",
    "loss_and_grad",
    "local_training",
    "save_weights",
    "load_weights",
]

_ACT_IDS = {"tanh": 0, "relu": 1}


@dataclass(frozen=True)
class RbfFeatureModel:
    """Linear model on Gaussian RBF features of a scalar input.

    ``phi_j(x) = exp(-(x - centers[j])^2 / (2 bandwidth^2))`` with centers
    fixed after construction.
    """

    centers: np.ndarray
    bandwidth: float = 0.08
    task: str = field(default="regression", init=False)

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ContractError("bandwidth must be positive")
        c = np.ascontiguousarray(np.asarray(self.centers, dtype=np.float64).ravel())
        object.__setattr__(self, "centers", c)

    @classmethod
    def sample(cls, n_centers: int = 100, bandwidth: float = 0.08,
               seed: int | np.random.Generator = 0) -> "RbfFeatureModel":
        """Model with ``n_centers`` centers drawn uniformly from [-1, 1]."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return cls(centers=rng.uniform(-1.0, 1.0, size=n_centers), bandwidth=bandwidth)

    @property
    def n_params(self) -> int:
        return self.centers.shape[0]

    def features(self, x: np.ndarray) -> np.ndarray:
        """Design matrix (n, n_centers) for inputs ``x``."""
        return ops().rbf_features(_as_scalar_inputs(x), self.centers, self.bandwidth)


@dataclass(frozen=True)
class MlpModel:
    """Fully-connected network; weights+biases live in one flat vector.

    ``sizes`` is (d_in, hidden..., d_out). ``task`` decides the loss:
    squared error for regression (d_out must be 1), mean cross-entropy with
    softmax for classification.
    """

    sizes: tuple[int, ...]
    activation: str = "tanh"
    task: str = "classification"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ContractError(f"invalid layer sizes {sizes}")
        if self.activation not in _ACT_IDS:
            raise ContractError(f"activation must be one of {sorted(_ACT_IDS)}")
        if self.task not in ("regression", "classification"):
            raise ContractError("task must be 'regression' or 'classification'")
        if self.task == "regression" and sizes[-1] != 1:
            raise ContractError("regression MLP needs a single output unit")
        object.__setattr__(self, "sizes", sizes)

    @property
    def n_params(self) -> int:
        return sum(din * dout + dout for din, dout in zip(self.sizes[:-1], self.sizes[1:]))

    @property
    def _sizes_arr(self) -> np.ndarray:
        return np.asarray(self.sizes, dtype=np.int64)

    @property
    def _act_id(self) -> int:
        return _ACT_IDS[self.activation]

    def unflatten(self, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per-layer (W, b) views of the flat vector."""
        w = _check_weights(self, w)
        out, off = [], 0
        for din, dout in zip(self.sizes[:-1], self.sizes[1:]):
            W = w[off:off + din * dout].reshape(din, dout)
            off += din * dout
            b = w[off:off + dout]
            off += dout
            out.append((W, b))
        return out

    def flatten(self, layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
        """Inverse of :meth:`unflatten`; round-trips exactly."""
        parts = []
        for W, b in layers:
            parts.append(np.asarray(W, dtype=np.float64).ravel())
            parts.append(np.asarray(b, dtype=np.float64).ravel())
        w = np.concatenate(parts)
        return _check_weights(self, w)


@dataclass(frozen=True)
class InitSpec:
    """How to draw initial weights.

    ``normal_scaled`` draws every coordinate i.i.d. N(0, sigma^2); for the
    linear RBF model this makes the function-space covariance at init exactly
    sigma^2 times the tangent kernel, which the posterior oracle relies on.
    ``he`` and ``xavier`` use the usual per-layer fan scalings with zero
    biases.
    """

    scheme: str = "normal_scaled"
    sigma: float = 1.0

    def __post_init__(self):
        if self.scheme not in ("normal_scaled", "he", "xavier"):
            raise ContractError(f"unknown init scheme {self.scheme!r}")
        if self.sigma <= 0:
            raise ContractError("init sigma must be positive")


def init_weights(model, spec: InitSpec, seed: int | np.random.Generator) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if spec.scheme == "normal_scaled" or isinstance(model, RbfFeatureModel):
        scale = spec.sigma if spec.scheme == "normal_scaled" else _fan_scale(spec.scheme, model.n_params, 1)
        return rng.normal(0.0, scale, size=model.n_params)
    parts = []
    for din, dout in zip(model.sizes[:-1], model.sizes[1:]):
        parts.append(rng.normal(0.0, _fan_scale(spec.scheme, din, dout), size=din * dout))
        parts.append(np.zeros(dout))
    return np.concatenate(parts)


def _fan_scale(scheme: str, fan_in: int, fan_out: int) -> float:
    if scheme == "he":
        return float(np.sqrt(2.0 / fan_in))
    return float(np.sqrt(2.0 / (fan_in + fan_out)))


def predict(model, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Model output: (n,) for the RBF / regression MLP, (n, C) logits otherwise."""
    w = _check_weights(model, w)
    if isinstance(model, RbfFeatureModel):
        return model.features(x) @ w
    out = ops().mlp_forward(w, model._sizes_arr, model._act_id, _as_matrix_inputs(model, x))
    return out[:, 0] if model.task == "regression" else out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted by the row max so large logits cannot overflow."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(model, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Class probabilities (n, C); only defined for classification models."""
    from .errors import UnsupportedOperationError

    if getattr(model, "task", "regression") != "classification":
        raise UnsupportedOperationError("probabilities are only defined for classifiers")
    return softmax(predict(model, w, x))


def loss_and_grad(model, w: np.ndarray, x: np.ndarray, y: np.ndarray,
                  features: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Mean data loss on the batch and its exact analytic gradient.

    Squared error ``(1/2n) sum (f(x)-y)^2`` for regression, mean softmax
    cross-entropy for classification. ``features`` may carry a precomputed
    RBF design matrix for this ``x``.
    """
    w = _check_weights(model, w)
    x, y = _check_batch(model, x, y)
    if isinstance(model, RbfFeatureModel):
        F = model.features(x) if features is None else features
        return ops().linear_loss_grad(F, y, w)
    if model.task == "regression":
        return ops().mlp_sq_loss_grad(w, model._sizes_arr, model._act_id, x, y)
    return ops().mlp_xent_loss_grad(w, model._sizes_arr, model._act_id, x, y)


def loss(model, w: np.ndarray, x: np.ndarray, y: np.ndarray,
         features: np.ndarray | None = None) -> float:
    """Mean data loss only (cheaper than :func:`loss_and_grad` for the RBF model)."""
    w = _check_weights(model, w)
    x, y = _check_batch(model, x, y)
    if isinstance(model, RbfFeatureModel):
        F = model.features(x) if features is None else features
        return ops().linear_loss(F, y, w)
    return loss_and_grad(model, w, x, y)[0]


def local_training(
    model,
    w0: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    *,
    epochs: int,
    lr: float,
    prox_mu: float = 0.0,
    prox_anchor: np.ndarray | None = None,
    l2_prior: float = 0.0,
    batch_size: int | None = None,
    rng: np.random.Generator | None = None,
    features: np.ndarray | None = None,
    return_losses: bool = False,
):
    """Run ``epochs`` of (full-batch) gradient descent on one client's data.

    The objective is ``data_loss + (prox_mu/2)||w - anchor||^2 +
    (l2_prior/2)||w||^2``; with ``prox_mu=0`` this is plain local SGD. The
    anchor defaults to ``w0`` (the weights the server broadcast). Reported
    losses are the plain data losses at ``w0`` and at the final weights.

    ``batch_size`` switches to mini-batch SGD with a fresh shuffle per epoch
    drawn from ``rng`` (required in that case). Raises
    :class:`~simfed.errors.DivergenceError` as soon as a non-finite loss
    shows up.
    """
    w0 = _check_weights(model, w0)
    x, y = _check_batch(model, x, y)
    if epochs < 1:
        raise ContractError("epochs must be >= 1")
    if lr < 0:
        raise ContractError("lr must be non-negative")
    if prox_mu < 0 or l2_prior < 0:
        raise ContractError("prox_mu and l2_prior must be non-negative")
    anchor = w0 if prox_anchor is None else _check_weights(model, prox_anchor)

    n = x.shape[0]
    if batch_size is not None and batch_size < n:
        if rng is None:
            raise ContractError("mini-batch training needs an rng for the shuffle")
        return _minibatch_sgd(model, w0, x, y, epochs, lr, prox_mu, anchor,
                              l2_prior, int(batch_size), rng, return_losses)

    if isinstance(model, RbfFeatureModel):
        F = model.features(x) if features is None else features
        w, lb, la, bad = ops().linear_gd(F, y, w0, epochs, lr, prox_mu, anchor, l2_prior)
    elif model.task == "regression":
        w, lb, la, bad = ops().mlp_gd_sq(w0, model._sizes_arr, model._act_id, x, y,
                                         epochs, lr, prox_mu, anchor, l2_prior)
    else:
        w, lb, la, bad = ops().mlp_gd_xent(w0, model._sizes_arr, model._act_id, x, y,
                                           epochs, lr, prox_mu, anchor, l2_prior)
    if bad >= 0:
        raise DivergenceError(f"non-finite training loss at epoch {bad}", epoch=int(bad))
    return (w, lb, la) if return_losses else w


def _minibatch_sgd(model, w0, x, y, epochs, lr, prox_mu, anchor, l2, batch_size, rng,
                   return_losses):
    w = w0.copy()
    loss_before = loss(model, w, x, y)
    n = x.shape[0]
    for e in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            bl, g = loss_and_grad(model, w, x[idx], y[idx])
            if not np.isfinite(bl):
                raise DivergenceError(f"non-finite training loss at epoch {e}", epoch=e)
            if prox_mu != 0.0:
                g = g + prox_mu * (w - anchor)
            if l2 != 0.0:
                g = g + l2 * w
            w = w - lr * g
    loss_after = loss(model, w, x, y)
    if not np.isfinite(loss_after):
        raise DivergenceError(f"non-finite training loss at epoch {epochs}", epoch=epochs)
    return (w, loss_before, loss_after) if return_losses else w


# ---------------------------------------------------------------------------
# checkpoint format: little-endian uint64 length header + float64 payload

def save_weights(path, w: np.ndarray) -> None:
    w = np.asarray(w, dtype=np.float64).ravel()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", w.shape[0]))
        fh.write(w.astype("<f8").tobytes())


def load_weights(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise ContractError(f"truncated weight file {path}")
    (n,) = struct.unpack("<Q", raw[:8])
    if len(raw) != 8 + 8 * n:
        raise ContractError(f"weight file {path} length mismatch (header says {n})")
    return np.frombuffer(raw[8:], dtype="<f8").astype(np.float64)


# ---------------------------------------------------------------------------

def _check_weights(model, w) -> np.ndarray:
    w = np.ascontiguousarray(np.asarray(w, dtype=np.float64).ravel())
    if w.shape[0] != model.n_params:
        raise ContractError(f"weight vector has {w.shape[0]} entries, model needs {model.n_params}")
    return w


def _as_scalar_inputs(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2 and x.shape[1] == 1:
        x = x[:, 0]
    if x.ndim != 1:
        raise ContractError(f"RBF model takes scalar inputs, got shape {x.shape}")
    return np.ascontiguousarray(x)


def _as_matrix_inputs(model, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] != model.sizes[0]:
        raise ContractError(f"expected inputs with {model.sizes[0]} features, got shape {x.shape}")
    return np.ascontiguousarray(x)


def _check_batch(model, x, y):
    if isinstance(model, RbfFeatureModel):
        x = _as_scalar_inputs(x)
    else:
        x = _as_matrix_inputs(model, x)
    if x.shape[0] == 0:
        raise ContractError("empty batch")
    if getattr(model, "task", "regression") == "classification":
        y = np.ascontiguousarray(np.asarray(y, dtype=np.int64).ravel())
        n_classes = model.sizes[-1]
        if y.size and (y.min() < 0 or y.max() >= n_classes):
            raise ContractError(f"labels outside [0, {n_classes})")
    else:
        y = np.ascontiguousarray(np.asarray(y, dtype=np.float64).ravel())
    if y.shape[0] != x.shape[0]:
        raise ContractError(f"{x.shape[0]} inputs but {y.shape[0]} targets")
    return x, y
