"""Hot loops with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``QNPE_NO_NUMBA`` is unset
(or ``0``).  Both paths are always importable as ``*_numba`` / ``*_numpy`` so
the benchmark and the equivalence tests can exercise them side by side.
"""

from __future__ import annotations

import os

import numpy as np

_flag = os.environ.get("QNPE_NO_NUMBA", "").strip().lower()
_DISABLED = _flag not in ("", "0", "false", "no")

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

USE_NUMBA = NUMBA_AVAILABLE and not _DISABLED


# --------------------------------------------------------------------------
# gate application
# --------------------------------------------------------------------------

@njit(cache=True)
def _apply_gate_nb(amps, U, targets, controls, ctrl_vals, nq):
    k = targets.shape[0]
    dim = 1 << k
    out = amps.copy()
    tshift = np.empty(k, np.int64)
    mask_t = 0
    for b in range(k):
        tshift[b] = nq - 1 - targets[b]
        mask_t |= 1 << tshift[b]
    nc = controls.shape[0]
    cshift = np.empty(nc, np.int64)
    for c in range(nc):
        cshift[c] = nq - 1 - controls[c]
    offs = np.zeros(dim, np.int64)
    for a in range(dim):
        off = 0
        for b in range(k):
            if (a >> (k - 1 - b)) & 1:
                off |= 1 << tshift[b]
        offs[a] = off
    buf = np.empty(dim, np.complex128)
    total = 1 << nq
    for base in range(total):
        if base & mask_t:
            continue
        ok = True
        for c in range(nc):
            if ((base >> cshift[c]) & 1) != ctrl_vals[c]:
                ok = False
                break
        if not ok:
            continue
        for a in range(dim):
            buf[a] = amps[base | offs[a]]
        for a in range(dim):
            s = 0j
            for b in range(dim):
                s += U[a, b] * buf[b]
            out[base | offs[a]] = s
    return out


def apply_gate_numba(amps, U, targets, controls, ctrl_vals, nq):
    return _apply_gate_nb(
        np.ascontiguousarray(amps, dtype=np.complex128),
        np.ascontiguousarray(U, dtype=np.complex128),
        np.asarray(targets, dtype=np.int64),
        np.asarray(controls, dtype=np.int64),
        np.asarray(ctrl_vals, dtype=np.int64),
        int(nq),
    )


def apply_gate_numpy(amps, U, targets, controls, ctrl_vals, nq):
    targets = [int(t) for t in targets]
    controls = [int(c) for c in controls]
    psi = np.asarray(amps, dtype=np.complex128).reshape((2,) * nq)
    out = psi.copy()
    index = [slice(None)] * nq
    for c, v in zip(controls, ctrl_vals):
        index[c] = int(v)
    index = tuple(index)
    sub = psi[index]
    remaining = [q for q in range(nq) if q not in controls]
    axes = [remaining.index(t) for t in targets]
    k = len(targets)
    moved = np.moveaxis(sub, axes, list(range(k)))
    shape = moved.shape
    res = (np.asarray(U, dtype=np.complex128) @ moved.reshape(1 << k, -1)).reshape(shape)
    out[index] = np.moveaxis(res, list(range(k)), axes)
    return out.reshape(-1)


# --------------------------------------------------------------------------
# pairwise squared distances
# --------------------------------------------------------------------------

@njit(cache=True)
def _pair_sq_dists_nb(X, Y):
    m = X.shape[0]
    p = Y.shape[0]
    n = X.shape[1]
    out = np.empty((m, p))
    for i in range(m):
        for j in range(p):
            s = 0.0
            for c in range(n):
                diff = X[i, c] - Y[j, c]
                s += diff * diff
            out[i, j] = s
    return out


def pair_sq_dists_numba(X, Y):
    return _pair_sq_dists_nb(np.ascontiguousarray(X, dtype=np.float64), np.ascontiguousarray(Y, dtype=np.float64))


def pair_sq_dists_numpy(X, Y):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


# --------------------------------------------------------------------------
# sum trees (heap layout: node k has children 2k+1, 2k+2; leaves at the end)
# --------------------------------------------------------------------------

@njit(cache=True)
def _sum_trees_nb(leaves):
    rows, L = leaves.shape
    size = 2 * L - 1
    out = np.zeros((rows, size))
    for r in range(rows):
        for j in range(L):
            out[r, L - 1 + j] = leaves[r, j]
        for node in range(L - 2, -1, -1):
            out[r, node] = out[r, 2 * node + 1] + out[r, 2 * node + 2]
    return out


def sum_trees_numba(leaves):
    return _sum_trees_nb(np.ascontiguousarray(leaves, dtype=np.float64))


def sum_trees_numpy(leaves):
    leaves = np.asarray(leaves, dtype=np.float64)
    rows, L = leaves.shape
    out = np.zeros((rows, 2 * L - 1))
    out[:, L - 1:] = leaves
    # levels are contiguous in heap layout: level l spans [2^l - 1, 2^(l+1) - 1)
    width = L // 2
    while width >= 1:
        start = width - 1
        child = out[:, 2 * width - 1: 4 * width - 1]
        out[:, start:start + width] = child[:, 0::2] + child[:, 1::2]
        width //= 2
    return out


@njit(cache=True)
def _tree_amplitudes_nb(tree, signs):
    L = signs.shape[0]
    size = 2 * L - 1
    amp = np.zeros(size)
    amp[0] = 1.0 if tree[0] > 0.0 else 0.0
    for node in range(L - 1):
        v = tree[node]
        if v <= 0.0 or amp[node] == 0.0:
            continue
        amp[2 * node + 1] = amp[node] * np.sqrt(tree[2 * node + 1] / v)
        amp[2 * node + 2] = amp[node] * np.sqrt(tree[2 * node + 2] / v)
    out = np.empty(L)
    for j in range(L):
        out[j] = signs[j] * amp[L - 1 + j]
    return out


def tree_amplitudes_numba(tree, signs):
    return _tree_amplitudes_nb(np.ascontiguousarray(tree, dtype=np.float64), np.ascontiguousarray(signs, dtype=np.float64))


def tree_amplitudes_numpy(tree, signs):
    """Descend the rotation tree level by level: child amp = parent amp * sqrt(child/parent)."""
    tree = np.asarray(tree, dtype=np.float64)
    signs = np.asarray(signs, dtype=np.float64)
    L = signs.shape[0]
    level = np.array([1.0 if tree[0] > 0 else 0.0])
    width = 1
    while width < L:
        parents = tree[width - 1: 2 * width - 1]
        children = tree[2 * width - 1: 4 * width - 1]
        safe = np.where(parents > 0, parents, 1.0)
        ratio = np.where(np.repeat(parents, 2) > 0, children / np.repeat(safe, 2), 0.0)
        level = np.repeat(level, 2) * np.sqrt(ratio)
        width *= 2
    return signs * level


if USE_NUMBA:
    apply_gate = apply_gate_numba
    pair_sq_dists = pair_sq_dists_numba
    sum_trees = sum_trees_numba
    tree_amplitudes = tree_amplitudes_numba
else:
    apply_gate = apply_gate_numpy
    pair_sq_dists = pair_sq_dists_numpy
    sum_trees = sum_trees_numpy
    tree_amplitudes = tree_amplitudes_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
