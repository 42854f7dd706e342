"""Pure-Python local-SGD inner loops.

These are the reference kernels: scalar loops over floats, no numpy inside
the hot path.  The compiled backend mirrors every expression and its
evaluation order exactly (same accumulation sequence, same libm calls,
division folded at the same point), so both backends produce bit-identical
iterates for the same inputs.  Keep the two files in lockstep when editing.

All kernels return ``(w_out, bad_step)`` where ``bad_step`` is the 0-based
step index at which a non-finite parameter first appeared, or -1 for a
clean run.  Batch indices are pre-drawn by the caller (flattened, one row
of ``batch`` indices per step) so backends consume identical randomness.
"""

from __future__ import annotations

import math

import numpy as np


def _finite(w) -> bool:
    for v in w:
        if not math.isfinite(v):
            return False
    return True


def _sigmoid(m: float) -> float:
    if m >= 0.0:
        return 1.0 / (1.0 + math.exp(-m))
    e = math.exp(m)
    return e / (1.0 + e)


def sgd_quadratic_diag(w, a, b, gamma, steps):
    wl = np.asarray(w, dtype=np.float64).tolist()
    al = np.asarray(a, dtype=np.float64).tolist()
    bl = np.asarray(b, dtype=np.float64).tolist()
    d = len(wl)
    gamma = float(gamma)
    for step in range(steps):
        for j in range(d):
            wl[j] -= gamma * (al[j] * wl[j] - bl[j])
        if not _finite(wl):
            return np.array(wl), step
    return np.array(wl), -1


def sgd_quadratic_dense(w, a, b, gamma, steps):
    wl = np.asarray(w, dtype=np.float64).tolist()
    al = np.asarray(a, dtype=np.float64).tolist()
    bl = np.asarray(b, dtype=np.float64).tolist()
    d = len(wl)
    gamma = float(gamma)
    g = [0.0] * d
    for step in range(steps):
        for j in range(d):
            acc = 0.0
            row = al[j]
            for m in range(d):
                acc += row[m] * wl[m]
            g[j] = acc - bl[j]
        for j in range(d):
            wl[j] -= gamma * g[j]
        if not _finite(wl):
            return np.array(wl), step
    return np.array(wl), -1


def sgd_least_squares(w, x, y, idx, gamma, steps, batch):
    wl = np.asarray(w, dtype=np.float64).tolist()
    xl = np.asarray(x, dtype=np.float64).tolist()
    yl = np.asarray(y, dtype=np.float64).tolist()
    il = np.asarray(idx, dtype=np.int64).tolist()
    d = len(wl)
    gamma = float(gamma)
    bf = float(batch)
    g = [0.0] * d
    for step in range(steps):
        for j in range(d):
            g[j] = 0.0
        for p in range(step * batch, (step + 1) * batch):
            row = xl[il[p]]
            z = 0.0
            for j in range(d):
                z += row[j] * wl[j]
            r = z - yl[il[p]]
            for j in range(d):
                g[j] += r * row[j]
        for j in range(d):
            wl[j] -= gamma * (g[j] / bf)
        if not _finite(wl):
            return np.array(wl), step
    return np.array(wl), -1


def sgd_logistic(w, x, y, idx, gamma, steps, batch):
    wl = np.asarray(w, dtype=np.float64).tolist()
    xl = np.asarray(x, dtype=np.float64).tolist()
    yl = np.asarray(y, dtype=np.float64).tolist()
    il = np.asarray(idx, dtype=np.int64).tolist()
    d = len(wl)
    gamma = float(gamma)
    bf = float(batch)
    g = [0.0] * d
    for step in range(steps):
        for j in range(d):
            g[j] = 0.0
        for p in range(step * batch, (step + 1) * batch):
            row = xl[il[p]]
            z = 0.0
            for j in range(d):
                z += row[j] * wl[j]
            c = -yl[il[p]] * _sigmoid(-yl[il[p]] * z)
            for j in range(d):
                g[j] += c * row[j]
        for j in range(d):
            wl[j] -= gamma * (g[j] / bf)
        if not _finite(wl):
            return np.array(wl), step
    return np.array(wl), -1


def sgd_mlp1(w, x, y, idx, gamma, steps, batch, n_in, n_hidden):
    wl = np.asarray(w, dtype=np.float64).tolist()
    xl = np.asarray(x, dtype=np.float64).tolist()
    yl = np.asarray(y, dtype=np.float64).tolist()
    il = np.asarray(idx, dtype=np.int64).tolist()
    dim = len(wl)
    gamma = float(gamma)
    bf = float(batch)
    off_b1 = n_hidden * n_in
    off_w2 = off_b1 + n_hidden
    off_b2 = off_w2 + n_hidden
    g = [0.0] * dim
    t = [0.0] * n_hidden
    for step in range(steps):
        for j in range(dim):
            g[j] = 0.0
        for p in range(step * batch, (step + 1) * batch):
            row = xl[il[p]]
            for u in range(n_hidden):
                acc = wl[off_b1 + u]
                base = u * n_in
                for j in range(n_in):
                    acc += wl[base + j] * row[j]
                t[u] = math.tanh(acc)
            pred = wl[off_b2]
            for u in range(n_hidden):
                pred += wl[off_w2 + u] * t[u]
            e = pred - yl[il[p]]
            for u in range(n_hidden):
                dl = e * wl[off_w2 + u] * (1.0 - t[u] * t[u])
                base = u * n_in
                for j in range(n_in):
                    g[base + j] += dl * row[j]
                g[off_b1 + u] += dl
                g[off_w2 + u] += e * t[u]
            g[off_b2] += e
        for j in range(dim):
            wl[j] -= gamma * (g[j] / bf)
        if not _finite(wl):
            return np.array(wl), step
    return np.array(wl), -1
