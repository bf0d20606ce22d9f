"""Numpy recurrent kernels (reference implementation and import fallback).

All arrays are time-major: ``(T, B, ...)``. ``mask`` is ``(T, B)`` uint8; a
row whose mask is 0 at step ``t`` carries its previous state through
unchanged, which is how source padding stays neutral in both directions.
``zx`` holds the input projections (bias included) for every step.
"""
import numpy as np


def _sigmoid(x):
    return 0.5 * np.tanh(0.5 * x) + 0.5


def _order(T, reverse):
    return range(T - 1, -1, -1) if reverse else range(T)


def lstm_forward(zx, w_h, h0, c0, mask, reverse=False):
    T, B, G = zx.shape
    H = G // 4
    acts = np.empty_like(zx)
    cs = np.empty((T, B, H), dtype=zx.dtype)
    hs = np.empty((T, B, H), dtype=zx.dtype)
    h, c = h0, c0
    for t in _order(T, reverse):
        z = zx[t] + h @ w_h
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        m = mask[t].astype(bool)[:, None]
        c = np.where(m, c_new, c)
        h = np.where(m, h_new, h)
        acts[t, :, :H] = i
        acts[t, :, H:2 * H] = f
        acts[t, :, 2 * H:3 * H] = g
        acts[t, :, 3 * H:] = o
        cs[t] = c
        hs[t] = h
    return acts, cs, hs


def lstm_backward(acts, cs, hs, w_h, h0, c0, mask, dhs, reverse=False):
    """Gradients for :func:`lstm_forward` given ``dhs = dL/dhs``.

    Returns ``(dzx, dw_h, dh0, dc0)``.
    """
    T, B, G = acts.shape
    H = G // 4
    dzx = np.zeros_like(acts)
    h_prev_all = np.empty_like(hs)
    dh = np.zeros_like(h0)
    dc = np.zeros_like(c0)
    steps = list(_order(T, reverse))
    for k in range(T - 1, -1, -1):
        t = steps[k]
        if k > 0:
            h_prev, c_prev = hs[steps[k - 1]], cs[steps[k - 1]]
        else:
            h_prev, c_prev = h0, c0
        h_prev_all[t] = h_prev
        m = mask[t].astype(acts.dtype)[:, None]
        dh = dh + dhs[t]
        i = acts[t, :, :H]
        f = acts[t, :, H:2 * H]
        g = acts[t, :, 2 * H:3 * H]
        o = acts[t, :, 3 * H:]
        tc = np.tanh(cs[t])
        dct = (dc + dh * o * (1.0 - tc * tc)) * m
        dz = dzx[t]
        dz[:, :H] = dct * g * i * (1.0 - i)
        dz[:, H:2 * H] = dct * c_prev * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dct * i * (1.0 - g * g)
        dz[:, 3 * H:] = dh * tc * o * (1.0 - o) * m
        dc = dct * f + dc * (1.0 - m)
        dh = dz @ w_h.T + dh * (1.0 - m)
    dw_h = np.tensordot(h_prev_all, dzx, axes=([0, 1], [0, 1]))
    return dzx, dw_h, dh, dc


def gru_forward(zx, w_h, h0, mask, reverse=False):
    T, B, G = zx.shape
    H = G // 3
    acts = np.empty_like(zx)
    zh_all = np.empty_like(zx)
    hs = np.empty((T, B, H), dtype=zx.dtype)
    h = h0
    for t in _order(T, reverse):
        zh = h @ w_h
        r = _sigmoid(zx[t, :, :H] + zh[:, :H])
        u = _sigmoid(zx[t, :, H:2 * H] + zh[:, H:2 * H])
        n = np.tanh(zx[t, :, 2 * H:] + r * zh[:, 2 * H:])
        h_new = (1.0 - u) * n + u * h
        m = mask[t].astype(bool)[:, None]
        h = np.where(m, h_new, h)
        acts[t, :, :H] = r
        acts[t, :, H:2 * H] = u
        acts[t, :, 2 * H:] = n
        zh_all[t] = zh
        hs[t] = h
    return acts, zh_all, hs


def gru_backward(acts, zh, hs, w_h, h0, mask, dhs, reverse=False):
    """Gradients for :func:`gru_forward`. Returns ``(dzx, dw_h, dh0)``."""
    T, B, G = acts.shape
    H = G // 3
    dzx = np.zeros_like(acts)
    dzh = np.zeros_like(acts)
    h_prev_all = np.empty_like(hs)
    dh = np.zeros_like(h0)
    steps = list(_order(T, reverse))
    for k in range(T - 1, -1, -1):
        t = steps[k]
        h_prev = hs[steps[k - 1]] if k > 0 else h0
        h_prev_all[t] = h_prev
        m = mask[t].astype(acts.dtype)[:, None]
        dh = dh + dhs[t]
        r = acts[t, :, :H]
        u = acts[t, :, H:2 * H]
        n = acts[t, :, 2 * H:]
        dhm = dh * m
        dan = dhm * (1.0 - u) * (1.0 - n * n)
        dar = dan * zh[t, :, 2 * H:] * r * (1.0 - r)
        dau = dhm * (h_prev - n) * u * (1.0 - u)
        dzx[t, :, :H] = dar
        dzx[t, :, H:2 * H] = dau
        dzx[t, :, 2 * H:] = dan
        dzh[t, :, :H] = dar
        dzh[t, :, H:2 * H] = dau
        dzh[t, :, 2 * H:] = dan * r
        dh = dzh[t] @ w_h.T + dhm * u + dh * (1.0 - m)
    dw_h = np.tensordot(h_prev_all, dzh, axes=([0, 1], [0, 1]))
    return dzx, dw_h, dh
