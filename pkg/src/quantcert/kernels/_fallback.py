"""Pure numpy kernels. Reference semantics for the compiled core."""

from __future__ import annotations

import numpy as np

EPS = np.finfo(np.float64).eps
ULP_WIDEN = 4.0  # libm tanh/exp are not correctly rounded

LINEAR, RELU, TANH, SIGMOID = 0, 1, 2, 3


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _act(code, x):
    if code == RELU:
        return np.maximum(x, 0.0)
    if code == TANH:
        return np.tanh(x)
    if code == SIGMOID:
        return _sigmoid(x)
    return x


def _act_interval(code, lo, hi):
    if code == LINEAR:
        return lo, hi
    if code == RELU:
        return np.maximum(lo, 0.0), np.maximum(hi, 0.0)
    flo, fhi = _act(code, lo), _act(code, hi)
    flo = flo - ULP_WIDEN * EPS * np.abs(flo)
    fhi = fhi + ULP_WIDEN * EPS * np.abs(fhi)
    floor = -1.0 if code == TANH else 0.0
    return np.maximum(flo, floor), np.minimum(fhi, 1.0)


def point_forward(prep, u):
    x = np.asarray(u, dtype=np.float64)
    for layer in prep.layers:
        x = _act(layer.act, layer.w @ x + layer.b)
    return x


def point_forward_batch(prep, U):
    # row by row: a gemm could round differently from point_forward
    U = np.asarray(U, dtype=np.float64)
    out = np.empty((U.shape[0], prep.output_dim))
    for i in range(U.shape[0]):
        out[i] = point_forward(prep, U[i])
    return out


def interval_forward(prep, lo, hi, tau):
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    for layer in prep.layers:
        mag = layer.abs_w @ np.maximum(np.abs(lo), np.abs(hi)) + layer.abs_b
        slack = tau * (1.0 + mag)
        nlo = layer.w_plus @ lo + layer.w_minus @ hi + layer.b - slack
        nhi = layer.w_plus @ hi + layer.w_minus @ lo + layer.b + slack
        lo, hi = _act_interval(layer.act, nlo, nhi)
    return lo, hi


def interval_forward_batch(prep, LO, HI, tau):
    LO = np.asarray(LO, dtype=np.float64)
    HI = np.asarray(HI, dtype=np.float64)
    for layer in prep.layers:
        mag = np.maximum(np.abs(LO), np.abs(HI)) @ layer.abs_w.T + layer.abs_b
        slack = tau * (1.0 + mag)
        nlo = LO @ layer.w_plus.T + HI @ layer.w_minus.T + layer.b - slack
        nhi = HI @ layer.w_plus.T + LO @ layer.w_minus.T + layer.b + slack
        LO, HI = _act_interval(layer.act, nlo, nhi)
    return LO, HI
