"""Hot loops: per-sample backpropagation and SMO pair updates.

Each loop exists twice, a numba version written with explicit index loops and
a numpy version written with array operations. Both run the same algorithm
in the same order; results agree to rounding (the numpy side sums through
BLAS). ``backend=None`` picks numba unless ``MAMMO_DISABLE_NUMBA`` is set.

MLP parameters travel as one flat float64 vector. Layer ``l`` maps
``sizes[l]`` inputs to ``sizes[l+1]`` outputs; its weight block starts at
``w_off[l]`` (row-major, shape ``(sizes[l], sizes[l+1])``) and its biases at
``b_off[l]``.
"""
from __future__ import annotations

import numpy as np

from . import _accel
from ._accel import njit

SIGMOID_CLIP = 500.0


def _resolve(backend):
    if backend is None:
        return _accel.backend_name()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not _accel.NUMBA_AVAILABLE:
        raise RuntimeError("numba is not installed")
    return backend


def layout(sizes):
    """Offsets of every weight block and bias vector in the flat parameter vector."""
    sizes = np.asarray(sizes, dtype=np.int64)
    w_off = np.zeros(len(sizes) - 1, dtype=np.int64)
    b_off = np.zeros(len(sizes) - 1, dtype=np.int64)
    pos = 0
    for l in range(len(sizes) - 1):
        w_off[l] = pos
        pos += sizes[l] * sizes[l + 1]
        b_off[l] = pos
        pos += sizes[l + 1]
    return sizes, w_off, b_off, pos


# ----------------------------------------------------------------- MLP, numba

@njit
def _sigmoid_nb(z):
    if z > SIGMOID_CLIP:
        z = SIGMOID_CLIP
    elif z < -SIGMOID_CLIP:
        z = -SIGMOID_CLIP
    return 1.0 / (1.0 + np.exp(-z))


@njit
def _sgd_epoch_nb(params, velocity, sizes, w_off, b_off, X, t, order, lr, momentum):
    n_layers = len(sizes) - 1
    width = 0
    for l in range(n_layers + 1):
        if sizes[l] > width:
            width = sizes[l]
    acts = np.zeros((n_layers + 1, width))
    deltas = np.zeros((n_layers + 1, width))
    grad = np.zeros(len(params))
    total = 0.0
    for s in order:
        for i in range(sizes[0]):
            acts[0, i] = X[s, i]
        for l in range(n_layers):
            nin = sizes[l]
            nout = sizes[l + 1]
            wo = w_off[l]
            bo = b_off[l]
            for j in range(nout):
                z = params[bo + j]
                for i in range(nin):
                    z += acts[l, i] * params[wo + i * nout + j]
                acts[l + 1, j] = _sigmoid_nb(z)
        out = acts[n_layers, 0]
        err = out - t[s]
        total += 0.5 * err * err
        deltas[n_layers, 0] = err * out * (1.0 - out)
        for l in range(n_layers - 1, -1, -1):
            nin = sizes[l]
            nout = sizes[l + 1]
            wo = w_off[l]
            bo = b_off[l]
            for i in range(nin):
                a = acts[l, i]
                back = 0.0
                for j in range(nout):
                    grad[wo + i * nout + j] = a * deltas[l + 1, j]
                    back += params[wo + i * nout + j] * deltas[l + 1, j]
                if l > 0:
                    deltas[l, i] = back * a * (1.0 - a)
            for j in range(nout):
                grad[bo + j] = deltas[l + 1, j]
        for k in range(len(params)):
            velocity[k] = momentum * velocity[k] - lr * grad[k]
            params[k] += velocity[k]
    return total


# ----------------------------------------------------------------- MLP, numpy

def _sigmoid_np(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -SIGMOID_CLIP, SIGMOID_CLIP)))


def _views(vec, sizes, w_off, b_off):
    Ws, bs = [], []
    for l in range(len(sizes) - 1):
        nin, nout = int(sizes[l]), int(sizes[l + 1])
        Ws.append(vec[w_off[l]:w_off[l] + nin * nout].reshape(nin, nout))
        bs.append(vec[b_off[l]:b_off[l] + nout])
    return Ws, bs


def _sgd_epoch_np(params, velocity, sizes, w_off, b_off, X, t, order, lr, momentum):
    Ws, bs = _views(params, sizes, w_off, b_off)
    vWs, vbs = _views(velocity, sizes, w_off, b_off)
    n_layers = len(Ws)
    total = 0.0
    for s in order:
        acts = [X[s]]
        for W, b in zip(Ws, bs):
            acts.append(_sigmoid_np(acts[-1] @ W + b))
        out = acts[-1][0]
        err = out - t[s]
        total += 0.5 * err * err
        delta = np.array([err * out * (1.0 - out)])
        grads = [None] * n_layers
        for l in range(n_layers - 1, -1, -1):
            grads[l] = (np.outer(acts[l], delta), delta)
            if l > 0:
                delta = (Ws[l] @ delta) * acts[l] * (1.0 - acts[l])
        for l in range(n_layers):
            gW, gb = grads[l]
            vWs[l] *= momentum
            vWs[l] -= lr * gW
            Ws[l] += vWs[l]
            vbs[l] *= momentum
            vbs[l] -= lr * gb
            bs[l] += vbs[l]
    return total


def sgd_epoch(params, velocity, sizes, X, t, order, lr, momentum, backend=None):
    """One pass of per-sample gradient descent with momentum on ``0.5 * (out - t)**2``.

    ``params`` and ``velocity`` are updated in place. Returns the summed
    squared error of the epoch, each term measured before its own update.
    """
    sizes, w_off, b_off, n_params = layout(sizes)
    if len(params) != n_params or len(velocity) != n_params:
        raise ValueError("parameter vector does not match the layer sizes")
    X = np.ascontiguousarray(X, dtype=np.float64)
    t = np.ascontiguousarray(t, dtype=np.float64)
    order = np.ascontiguousarray(order, dtype=np.int64)
    fn = _sgd_epoch_nb if _resolve(backend) == "numba" else _sgd_epoch_np
    return float(fn(params, velocity, sizes, w_off, b_off, X, t, order, float(lr), float(momentum)))


# ------------------------------------------------------------------ SMO, numba

@njit
def _delta_w_nb(d1, d2, y1, y2, u1, u2, k11, k12, k22):
    # change of the dual objective when alpha_1, alpha_2 move by d1, d2
    return (d1 * (1.0 - y1 * u1) + d2 * (1.0 - y2 * u2)
            - 0.5 * (d1 * d1 * k11 + d2 * d2 * k22 + 2.0 * y1 * y2 * d1 * d2 * k12))


@njit
def _take_step_nb(i1, i2, K, y, alpha, u, st, C, eps):
    if i1 == i2:
        return 0
    a1o = alpha[i1]
    a2o = alpha[i2]
    y1 = y[i1]
    y2 = y[i2]
    b = st[0]
    e1 = u[i1] + b - y1
    e2 = u[i2] + b - y2
    s = y1 * y2
    if y1 != y2:
        lo = max(0.0, a2o - a1o)
        hi = min(C, C + a2o - a1o)
    else:
        lo = max(0.0, a1o + a2o - C)
        hi = min(C, a1o + a2o)
    if hi - lo <= 0.0:
        return 0
    k11 = K[i1, i1]
    k12 = K[i1, i2]
    k22 = K[i2, i2]
    eta = k11 + k22 - 2.0 * k12
    if eta > 0.0:
        a2 = a2o + y2 * (e1 - e2) / eta
        if a2 < lo:
            a2 = lo
        elif a2 > hi:
            a2 = hi
    else:
        w_lo = _delta_w_nb(s * (a2o - lo), lo - a2o, y1, y2, u[i1], u[i2], k11, k12, k22)
        w_hi = _delta_w_nb(s * (a2o - hi), hi - a2o, y1, y2, u[i1], u[i2], k11, k12, k22)
        if w_lo > w_hi + eps:
            a2 = lo
        elif w_hi > w_lo + eps:
            a2 = hi
        else:
            a2 = a2o
    snap = 1e-8 * C
    if a2 < snap:
        a2 = 0.0
    elif a2 > C - snap:
        a2 = C
    if abs(a2 - a2o) < eps * (a2 + a2o + eps):
        return 0
    a1 = a1o + s * (a2o - a2)
    if a1 < snap:
        a1 = 0.0
    elif a1 > C - snap:
        a1 = C
    d1 = a1 - a1o
    d2 = a2 - a2o
    b1 = b - e1 - y1 * d1 * k11 - y2 * d2 * k12
    b2 = b - e2 - y1 * d1 * k12 - y2 * d2 * k22
    if 0.0 < a1 < C:
        b_new = b1
    elif 0.0 < a2 < C:
        b_new = b2
    else:
        b_new = 0.5 * (b1 + b2)
    st[1] += _delta_w_nb(d1, d2, y1, y2, u[i1], u[i2], k11, k12, k22)
    for k in range(len(u)):
        u[k] += y1 * d1 * K[k, i1] + y2 * d2 * K[k, i2]
    alpha[i1] = a1
    alpha[i2] = a2
    st[0] = b_new
    return 1


@njit
def _examine_nb(i2, K, y, alpha, u, st, C, tol, eps):
    y2 = y[i2]
    a2 = alpha[i2]
    e2 = u[i2] + st[0] - y2
    r2 = e2 * y2
    if not ((r2 < -tol and a2 < C) or (r2 > tol and a2 > 0.0)):
        return 0
    n = len(y)
    best = -1
    best_gap = -1.0
    n_free = 0
    for i in range(n):
        if 0.0 < alpha[i] < C:
            n_free += 1
            gap = abs(u[i] + st[0] - y[i] - e2)
            if gap > best_gap:
                best_gap = gap
                best = i
    if n_free > 1 and best >= 0:
        if _take_step_nb(best, i2, K, y, alpha, u, st, C, eps):
            return 1
    for i1 in range(n):
        if 0.0 < alpha[i1] < C:
            if _take_step_nb(i1, i2, K, y, alpha, u, st, C, eps):
                return 1
    for i1 in range(n):
        if _take_step_nb(i1, i2, K, y, alpha, u, st, C, eps):
            return 1
    return 0


@njit
def _smo_nb(K, y, C, tol, eps, max_passes, max_updates):
    n = len(y)
    alpha = np.zeros(n)
    u = np.zeros(n)
    st = np.zeros(2)  # bias, dual objective
    trace = np.zeros(1024)
    trace[0] = 0.0
    n_trace = 1
    passes = 0
    updates = 0
    examine_all = True
    changed = 0
    converged = False
    while True:
        if examine_all:
            if passes >= max_passes:
                break
            passes += 1
        changed = 0
        for i in range(n):
            if examine_all or (0.0 < alpha[i] < C):
                if _examine_nb(i, K, y, alpha, u, st, C, tol, eps):
                    changed += 1
                    updates += 1
                    if n_trace == len(trace):
                        grown = np.zeros(2 * len(trace))
                        grown[:n_trace] = trace
                        trace = grown
                    trace[n_trace] = st[1]
                    n_trace += 1
                    if updates >= max_updates:
                        break
        if updates >= max_updates:
            break
        if examine_all:
            if changed == 0:
                converged = True
                break
            examine_all = False
        elif changed == 0:
            examine_all = True
    return alpha, st[0], trace[:n_trace].copy(), converged, passes, updates


# ------------------------------------------------------------------ SMO, numpy

class _NumpySmo:
    def __init__(self, K, y, C, tol, eps):
        self.K, self.y, self.C, self.tol, self.eps = K, y, C, tol, eps
        n = len(y)
        self.alpha = np.zeros(n)
        self.u = np.zeros(n)
        self.b = 0.0
        self.w = 0.0

    def delta_w(self, d1, d2, i1, i2):
        K, y, u = self.K, self.y, self.u
        y1, y2 = y[i1], y[i2]
        return (d1 * (1.0 - y1 * u[i1]) + d2 * (1.0 - y2 * u[i2])
                - 0.5 * (d1 * d1 * K[i1, i1] + d2 * d2 * K[i2, i2] + 2.0 * y1 * y2 * d1 * d2 * K[i1, i2]))

    def take_step(self, i1, i2):
        if i1 == i2:
            return False
        K, y, alpha, C, eps = self.K, self.y, self.alpha, self.C, self.eps
        a1o, a2o = alpha[i1], alpha[i2]
        y1, y2 = y[i1], y[i2]
        e1 = self.u[i1] + self.b - y1
        e2 = self.u[i2] + self.b - y2
        s = y1 * y2
        if y1 != y2:
            lo, hi = max(0.0, a2o - a1o), min(C, C + a2o - a1o)
        else:
            lo, hi = max(0.0, a1o + a2o - C), min(C, a1o + a2o)
        if hi - lo <= 0.0:
            return False
        k11, k12, k22 = K[i1, i1], K[i1, i2], K[i2, i2]
        eta = k11 + k22 - 2.0 * k12
        if eta > 0.0:
            a2 = min(max(a2o + y2 * (e1 - e2) / eta, lo), hi)
        else:
            w_lo = self.delta_w(s * (a2o - lo), lo - a2o, i1, i2)
            w_hi = self.delta_w(s * (a2o - hi), hi - a2o, i1, i2)
            if w_lo > w_hi + eps:
                a2 = lo
            elif w_hi > w_lo + eps:
                a2 = hi
            else:
                a2 = a2o
        snap = 1e-8 * C
        if a2 < snap:
            a2 = 0.0
        elif a2 > C - snap:
            a2 = C
        if abs(a2 - a2o) < eps * (a2 + a2o + eps):
            return False
        a1 = a1o + s * (a2o - a2)
        if a1 < snap:
            a1 = 0.0
        elif a1 > C - snap:
            a1 = C
        d1, d2 = a1 - a1o, a2 - a2o
        b1 = self.b - e1 - y1 * d1 * k11 - y2 * d2 * k12
        b2 = self.b - e2 - y1 * d1 * k12 - y2 * d2 * k22
        if 0.0 < a1 < C:
            b_new = b1
        elif 0.0 < a2 < C:
            b_new = b2
        else:
            b_new = 0.5 * (b1 + b2)
        self.w += self.delta_w(d1, d2, i1, i2)
        self.u += y1 * d1 * K[:, i1] + y2 * d2 * K[:, i2]
        alpha[i1], alpha[i2] = a1, a2
        self.b = b_new
        return True

    def examine(self, i2):
        y, alpha, C, tol = self.y, self.alpha, self.C, self.tol
        e2 = self.u[i2] + self.b - y[i2]
        r2 = e2 * y[i2]
        if not ((r2 < -tol and alpha[i2] < C) or (r2 > tol and alpha[i2] > 0.0)):
            return False
        free = np.flatnonzero((alpha > 0.0) & (alpha < C))
        if len(free) > 1:
            gaps = np.abs(self.u[free] + self.b - y[free] - e2)
            if self.take_step(int(free[np.argmax(gaps)]), i2):
                return True
        for i1 in free:
            if self.take_step(int(i1), i2):
                return True
        for i1 in range(len(y)):
            if self.take_step(i1, i2):
                return True
        return False


def _smo_np(K, y, C, tol, eps, max_passes, max_updates):
    smo = _NumpySmo(K, y, C, tol, eps)
    trace = [0.0]
    passes = updates = 0
    examine_all = True
    converged = False
    while True:
        if examine_all:
            if passes >= max_passes:
                break
            passes += 1
        changed = 0
        for i in range(len(y)):
            if examine_all or 0.0 < smo.alpha[i] < C:
                if smo.examine(i):
                    changed += 1
                    updates += 1
                    trace.append(smo.w)
                    if updates >= max_updates:
                        break
        if updates >= max_updates:
            break
        if examine_all:
            if changed == 0:
                converged = True
                break
            examine_all = False
        elif changed == 0:
            examine_all = True
    return smo.alpha, smo.b, np.asarray(trace), converged, passes, updates


def smo(K, y, C, tol, eps=1e-8, max_passes=10, max_updates=100_000_000, backend=None):
    """Solve the soft-margin SVM dual for a precomputed Gram matrix ``K``.

    Returns ``(alpha, b, objective trace, converged, full passes, updates)``.
    The decision function is ``sum_j alpha_j y_j K(x_j, x) + b``.
    """
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    fn = _smo_nb if _resolve(backend) == "numba" else _smo_np
    alpha, b, trace, converged, passes, updates = fn(K, y, float(C), float(tol), float(eps),
                                                     int(max_passes), int(max_updates))
    return np.asarray(alpha), float(b), np.asarray(trace), bool(converged), int(passes), int(updates)
