"""Numba twins of the ``np_ops`` kernels.

Same signatures, same float64 semantics; loops are written out because the
per-call matrices are small (a client batch is a handful of points) and BLAS
dispatch overhead would dominate. ``cache=True`` persists the compiled
kernels across processes, so only the very first run of a fresh checkout pays
the JIT cost.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def rbf_features(x, centers, bandwidth):
    n = x.shape[0]
    m = centers.shape[0]
    out = np.empty((n, m))
    inv = 1.0 / (2.0 * bandwidth * bandwidth)
    for i in range(n):
        for j in range(m):
            d = x[i] - centers[j]
            out[i, j] = np.exp(-d * d * inv)
    return out


@njit(cache=True)
def linear_loss(F, y, w):
    n, m = F.shape
    acc = 0.0
    for i in range(n):
        s = 0.0
        for j in range(m):
            s += F[i, j] * w[j]
        r = s - y[i]
        acc += r * r
    return 0.5 * acc / n


@njit(cache=True)
def linear_loss_grad(F, y, w):
    n, m = F.shape
    grad = np.zeros(m)
    acc = 0.0
    for i in range(n):
        s = 0.0
        for j in range(m):
            s += F[i, j] * w[j]
        r = s - y[i]
        acc += r * r
        for j in range(m):
            grad[j] += F[i, j] * r
    for j in range(m):
        grad[j] /= n
    return 0.5 * acc / n, grad


@njit(cache=True)
def linear_gd(F, y, w0, epochs, lr, prox_mu, anchor, l2):
    w = w0.copy()
    loss_before = linear_loss(F, y, w)
    if not np.isfinite(loss_before):
        return w, loss_before, loss_before, 0
    for e in range(epochs):
        loss, g = linear_loss_grad(F, y, w)
        if not np.isfinite(loss):
            return w, loss_before, loss, e
        if prox_mu != 0.0:
            for j in range(w.shape[0]):
                g[j] += prox_mu * (w[j] - anchor[j])
        if l2 != 0.0:
            for j in range(w.shape[0]):
                g[j] += l2 * w[j]
        w = w - lr * g
    loss_after = linear_loss(F, y, w)
    if not np.isfinite(loss_after):
        return w, loss_before, loss_after, epochs
    return w, loss_before, loss_after, -1


@njit(cache=True)
def _mlp_acts(wflat, sizes, act_id, X):
    L = sizes.shape[0] - 1
    acts = [X]
    A = X
    off = 0
    for l in range(L):
        din = sizes[l]
        dout = sizes[l + 1]
        W = wflat[off:off + din * dout].reshape(din, dout)
        off += din * dout
        b = wflat[off:off + dout]
        off += dout
        Z = A @ W + b
        if l < L - 1:
            if act_id == 0:
                A = np.tanh(Z)
            else:
                A = np.maximum(Z, 0.0)
        else:
            A = Z
        acts.append(A)
    return acts


@njit(cache=True)
def mlp_forward(wflat, sizes, act_id, X):
    acts = _mlp_acts(wflat, sizes, act_id, X)
    return acts[len(acts) - 1]


@njit(cache=True)
def _mlp_backprop(wflat, sizes, act_id, acts, delta):
    L = sizes.shape[0] - 1
    grad = np.empty_like(wflat)
    off = wflat.shape[0]
    for l in range(L - 1, -1, -1):
        din = sizes[l]
        dout = sizes[l + 1]
        off -= dout
        for c in range(dout):
            s = 0.0
            for i in range(delta.shape[0]):
                s += delta[i, c]
            grad[off + c] = s
        off -= din * dout
        GW = np.ascontiguousarray(acts[l].T) @ delta
        grad[off:off + din * dout] = GW.ravel()
        if l > 0:
            W = wflat[off:off + din * dout].reshape(din, dout)
            delta = delta @ np.ascontiguousarray(W.T)
            A = acts[l]
            if act_id == 0:
                delta = delta * (1.0 - A * A)
            else:
                delta = delta * np.where(A > 0.0, 1.0, 0.0)
    return grad


@njit(cache=True)
def mlp_sq_loss_grad(wflat, sizes, act_id, X, y):
    acts = _mlp_acts(wflat, sizes, act_id, X)
    n = X.shape[0]
    out = acts[len(acts) - 1]
    acc = 0.0
    delta = np.empty((n, 1))
    for i in range(n):
        r = out[i, 0] - y[i]
        acc += r * r
        delta[i, 0] = r / n
    loss = 0.5 * acc / n
    return loss, _mlp_backprop(wflat, sizes, act_id, acts, delta)


@njit(cache=True)
def mlp_xent_loss_grad(wflat, sizes, act_id, X, labels):
    acts = _mlp_acts(wflat, sizes, act_id, X)
    n = X.shape[0]
    logits = acts[len(acts) - 1]
    C = logits.shape[1]
    delta = np.empty((n, C))
    loss = 0.0
    for i in range(n):
        mx = logits[i, 0]
        for c in range(1, C):
            if logits[i, c] > mx:
                mx = logits[i, c]
        s = 0.0
        for c in range(C):
            delta[i, c] = np.exp(logits[i, c] - mx)
            s += delta[i, c]
        for c in range(C):
            delta[i, c] /= s
        loss += -np.log(delta[i, labels[i]])
        delta[i, labels[i]] -= 1.0
        for c in range(C):
            delta[i, c] /= n
    loss /= n
    return loss, _mlp_backprop(wflat, sizes, act_id, acts, delta)


@njit(cache=True)
def mlp_gd_sq(wflat, sizes, act_id, X, y, epochs, lr, prox_mu, anchor, l2):
    w = wflat.copy()
    loss_before, _ = mlp_sq_loss_grad(w, sizes, act_id, X, y)
    if not np.isfinite(loss_before):
        return w, loss_before, loss_before, 0
    for e in range(epochs):
        loss, g = mlp_sq_loss_grad(w, sizes, act_id, X, y)
        if not np.isfinite(loss):
            return w, loss_before, loss, e
        if prox_mu != 0.0:
            for j in range(w.shape[0]):
                g[j] += prox_mu * (w[j] - anchor[j])
        if l2 != 0.0:
            for j in range(w.shape[0]):
                g[j] += l2 * w[j]
        w = w - lr * g
    loss_after, _ = mlp_sq_loss_grad(w, sizes, act_id, X, y)
    if not np.isfinite(loss_after):
        return w, loss_before, loss_after, epochs
    return w, loss_before, loss_after, -1


@njit(cache=True)
def mlp_gd_xent(wflat, sizes, act_id, X, labels, epochs, lr, prox_mu, anchor, l2):
    w = wflat.copy()
    loss_before, _ = mlp_xent_loss_grad(w, sizes, act_id, X, labels)
    if not np.isfinite(loss_before):
        return w, loss_before, loss_before, 0
    for e in range(epochs):
        loss, g = mlp_xent_loss_grad(w, sizes, act_id, X, labels)
        if not np.isfinite(loss):
            return w, loss_before, loss, e
        if prox_mu != 0.0:
            for j in range(w.shape[0]):
                g[j] += prox_mu * (w[j] - anchor[j])
        if l2 != 0.0:
            for j in range(w.shape[0]):
                g[j] += l2 * w[j]
        w = w - lr * g
    loss_after, _ = mlp_xent_loss_grad(w, sizes, act_id, X, labels)
    if not np.isfinite(loss_after):
        return w, loss_before, loss_after, epochs
    return w, loss_before, loss_after, -1
