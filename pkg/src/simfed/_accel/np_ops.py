"""Pure-numpy implementations of the training kernels.

Reference semantics for the numba twins in ``nb_ops``; every function here
has an identically-named, identically-shaped counterpart there.

Conventions shared by both backends:

* weights are flat float64 vectors; MLP layouts are ``[W0, b0, W1, b1, ...]``
  with ``W`` stored row-major as (fan_in, fan_out)
* ``act_id``: 0 = tanh, 1 = relu
* gradient-descent loops return ``(w, loss_before, loss_after, bad_epoch)``
  where ``bad_epoch`` is -1 on success and the first epoch with a non-finite
  loss otherwise (the caller raises)
* reported losses are the plain data losses; the proximal and L2 penalty
  terms steer the updates but are not folded into the returned numbers
"""

from __future__ import annotations

import numpy as np


def rbf_features(x: np.ndarray, centers: np.ndarray, bandwidth: float) -> np.ndarray:
    d = x[:, None] - centers[None, :]
    return np.exp(-(d * d) / (2.0 * bandwidth * bandwidth))


def linear_loss(F: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    r = F @ w - y
    return 0.5 * float(r @ r) / F.shape[0]


def linear_loss_grad(F: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[float, np.ndarray]:
    n = F.shape[0]
    r = F @ w - y
    loss = 0.5 * float(r @ r) / n
    grad = (F.T @ r) / n
    return loss, grad


def linear_gd(
    F: np.ndarray,
    y: np.ndarray,
    w0: np.ndarray,
    epochs: int,
    lr: float,
    prox_mu: float,
    anchor: np.ndarray,
    l2: float,
) -> tuple[np.ndarray, float, float, int]:
    w = w0.copy()
    loss_before = linear_loss(F, y, w)
    if not np.isfinite(loss_before):
        return w, loss_before, loss_before, 0
    n = F.shape[0]
    for e in range(epochs):
        r = F @ w - y
        loss = 0.5 * float(r @ r) / n
        if not np.isfinite(loss):
            return w, loss_before, loss, e
        g = (F.T @ r) / n
        if prox_mu != 0.0:
            g = g + prox_mu * (w - anchor)
        if l2 != 0.0:
            g = g + l2 * w
        w = w - lr * g
    loss_after = linear_loss(F, y, w)
    if not np.isfinite(loss_after):
        return w, loss_before, loss_after, epochs
    return w, loss_before, loss_after, -1


def _mlp_unpack(wflat: np.ndarray, sizes: np.ndarray):
    Ws, bs = [], []
    off = 0
    for l in range(len(sizes) - 1):
        din, dout = int(sizes[l]), int(sizes[l + 1])
        Ws.append(wflat[off:off + din * dout].reshape(din, dout))
        off += din * dout
        bs.append(wflat[off:off + dout])
        off += dout
    return Ws, bs


def mlp_forward(wflat: np.ndarray, sizes: np.ndarray, act_id: int, X: np.ndarray) -> np.ndarray:
    Ws, bs = _mlp_unpack(wflat, sizes)
    A = X
    last = len(Ws) - 1
    for l, (W, b) in enumerate(zip(Ws, bs)):
        Z = A @ W + b
        if l < last:
            A = np.tanh(Z) if act_id == 0 else np.maximum(Z, 0.0)
        else:
            A = Z
    return A


def _mlp_acts(wflat, sizes, act_id, X):
    Ws, bs = _mlp_unpack(wflat, sizes)
    acts = [X]
    last = len(Ws) - 1
    A = X
    for l, (W, b) in enumerate(zip(Ws, bs)):
        Z = A @ W + b
        if l < last:
            A = np.tanh(Z) if act_id == 0 else np.maximum(Z, 0.0)
        else:
            A = Z
        acts.append(A)
    return Ws, acts


def _mlp_backprop(wflat, sizes, act_id, Ws, acts, delta):
    # delta: d(loss)/d(logits), shape (n, d_out)
    grad = np.empty_like(wflat)
    off = wflat.shape[0]
    for l in range(len(Ws) - 1, -1, -1):
        din, dout = int(sizes[l]), int(sizes[l + 1])
        off -= dout
        grad[off:off + dout] = delta.sum(axis=0)
        off -= din * dout
        grad[off:off + din * dout] = (acts[l].T @ delta).ravel()
        if l > 0:
            delta = delta @ Ws[l].T
            A = acts[l]
            if act_id == 0:
                delta = delta * (1.0 - A * A)
            else:
                delta = delta * (A > 0.0)
    return grad


def mlp_sq_loss_grad(wflat, sizes, act_id, X, y) -> tuple[float, np.ndarray]:
    Ws, acts = _mlp_acts(wflat, sizes, act_id, X)
    n = X.shape[0]
    out = acts[-1][:, 0]
    r = out - y
    loss = 0.5 * float(r @ r) / n
    delta = (r / n)[:, None]
    return loss, _mlp_backprop(wflat, sizes, act_id, Ws, acts, delta)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def mlp_xent_loss_grad(wflat, sizes, act_id, X, labels) -> tuple[float, np.ndarray]:
    Ws, acts = _mlp_acts(wflat, sizes, act_id, X)
    n = X.shape[0]
    P = _softmax(acts[-1])
    idx = np.arange(n)
    loss = -float(np.log(P[idx, labels]).sum()) / n
    delta = P.copy()
    delta[idx, labels] -= 1.0
    delta /= n
    return loss, _mlp_backprop(wflat, sizes, act_id, Ws, acts, delta)


def _mlp_gd(loss_grad, wflat, sizes, act_id, X, t, epochs, lr, prox_mu, anchor, l2):
    w = wflat.copy()
    loss_before, _ = loss_grad(w, sizes, act_id, X, t)
    if not np.isfinite(loss_before):
        return w, loss_before, loss_before, 0
    for e in range(epochs):
        loss, g = loss_grad(w, sizes, act_id, X, t)
        if not np.isfinite(loss):
            return w, loss_before, loss, e
        if prox_mu != 0.0:
            g = g + prox_mu * (w - anchor)
        if l2 != 0.0:
            g = g + l2 * w
        w = w - lr * g
    loss_after, _ = loss_grad(w, sizes, act_id, X, t)
    if not np.isfinite(loss_after):
        return w, loss_before, loss_after, epochs
    return w, loss_before, loss_after, -1


def mlp_gd_sq(wflat, sizes, act_id, X, y, epochs, lr, prox_mu, anchor, l2):
    return _mlp_gd(mlp_sq_loss_grad, wflat, sizes, act_id, X, y, epochs, lr, prox_mu, anchor, l2)


def mlp_gd_xent(wflat, sizes, act_id, X, labels, epochs, lr, prox_mu, anchor, l2):
    return _mlp_gd(mlp_xent_loss_grad, wflat, sizes, act_id, X, labels, epochs, lr, prox_mu, anchor, l2)
