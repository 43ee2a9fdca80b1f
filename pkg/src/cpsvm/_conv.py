"""Compiled 1D convolution / ReLU / max-pool kernels (channel-last)."""

import numba as nb
import numpy as np


@nb.njit(cache=True)
def conv_forward(x, w, b, stride):
    """``z[n, l, o] = b[o] + sum_{t, c} x[n, l*stride + t, c] * w[t, c, o]``."""
    n, length, cin = x.shape
    k, _, cout = w.shape
    lout = (length - k) // stride + 1
    z = np.empty((n, lout, cout))
    for s in range(n):
        for l in range(lout):
            for o in range(cout):
                z[s, l, o] = b[o]
            base = l * stride
            for t in range(k):
                for c in range(cin):
                    v = x[s, base + t, c]
                    for o in range(cout):
                        z[s, l, o] += v * w[t, c, o]
    return z


@nb.njit(cache=True)
def relu_pool_forward(z, size):
    """Max-pool of ``relu(z)``; ``arg`` records the winning offset (first on ties)."""
    n, length, ch = z.shape
    p = length // size
    out = np.empty((n, p, ch))
    arg = np.zeros((n, p, ch), dtype=np.int8)
    for s in range(n):
        for i in range(p):
            for c in range(ch):
                best = z[s, i * size, c]
                if best < 0.0:
                    best = 0.0
                a = 0
                for j in range(1, size):
                    v = z[s, i * size + j, c]
                    if v < 0.0:
                        v = 0.0
                    if v > best:
                        best = v
                        a = j
                out[s, i, c] = best
                arg[s, i, c] = a
    return out, arg


@nb.njit(cache=True)
def relu_pool_backward(dout, arg, z, size):
    """Gradient with respect to the pre-activation ``z``."""
    n, length, ch = z.shape
    p = dout.shape[1]
    dz = np.zeros((n, length, ch))
    for s in range(n):
        for i in range(p):
            for c in range(ch):
                pos = i * size + arg[s, i, c]
                if z[s, pos, c] > 0.0:
                    dz[s, pos, c] = dout[s, i, c]
    return dz


@nb.njit(cache=True)
def conv_backward(dz, x, w, stride, need_dx):
    """Return ``(dw, db, dx)``; ``dx`` is empty unless ``need_dx``."""
    n, lout, cout = dz.shape
    k, cin, _ = w.shape
    length = x.shape[1]
    dw = np.zeros((k, cin, cout))
    db = np.zeros(cout)
    dx = np.zeros((n, length, cin)) if need_dx else np.zeros((0, 0, 0))
    for s in range(n):
        for l in range(lout):
            base = l * stride
            g = dz[s, l]
            for o in range(cout):
                db[o] += g[o]
            for t in range(k):
                for c in range(cin):
                    v = x[s, base + t, c]
                    for o in range(cout):
                        dw[t, c, o] += v * g[o]
            if need_dx:
                for t in range(k):
                    for c in range(cin):
                        acc = 0.0
                        for o in range(cout):
                            acc += w[t, c, o] * g[o]
                        dx[s, base + t, c] += acc
    return dw, db, dx
