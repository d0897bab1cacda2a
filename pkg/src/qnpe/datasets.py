"""Synthetic datasets: plane, swiss roll, S-curve and planted clusters."""

from __future__ import annotations

import itertools
import math

import numpy as np

from .errors import ParameterError

DATASETS = ("swiss-roll", "plane", "clusters", "s-curve")

# regular tetrahedron, side 2√2
_TETRA = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64)


def _check(m: int, n: int, noise: float, min_n: int) -> None:
    if m < 1:
        raise ParameterError(f"m must be positive, got {m}")
    if n < min_n:
        raise ParameterError(f"this dataset needs n >= {min_n}, got {n}")
    if noise < 0:
        raise ParameterError(f"noise must be non-negative, got {noise}")


def _frame(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Random ``k × n`` matrix with orthonormal rows."""
    Q, _ = np.linalg.qr(rng.normal(size=(n, k)))
    return Q.T


def plane(m: int, n: int, noise: float = 0.0, seed: int = 0) -> np.ndarray:
    """Points on a random affine 2-plane in ``R^n``."""
    _check(m, n, noise, 2)
    rng = np.random.default_rng(seed)
    coords = rng.uniform(-1.0, 1.0, size=(m, 2))
    offset = rng.normal(size=n) * 0.5
    X = coords @ _frame(n, 2, rng) + offset
    return X + noise * rng.normal(size=X.shape)


def swiss_roll(m: int, n: int, noise: float = 0.0, seed: int = 0) -> np.ndarray:
    _check(m, n, noise, 3)
    rng = np.random.default_rng(seed)
    t = 1.5 * math.pi * (1.0 + 2.0 * rng.uniform(size=m))
    height = 10.0 * rng.uniform(size=m)
    P = np.column_stack([t * np.cos(t), height, t * np.sin(t)]) / 10.0
    X = P @ _frame(n, 3, rng)
    return X + noise * rng.normal(size=X.shape)


def s_curve(m: int, n: int, noise: float = 0.0, seed: int = 0) -> np.ndarray:
    _check(m, n, noise, 3)
    rng = np.random.default_rng(seed)
    t = 3.0 * math.pi * (rng.uniform(size=m) - 0.5)
    P = np.column_stack([np.sin(t), 2.0 * rng.uniform(size=m), np.sign(t) * (np.cos(t) - 1.0)])
    X = P @ _frame(n, 3, rng)
    return X + noise * rng.normal(size=X.shape)


def cluster_centers(count: int, spacing: float = 2.0) -> np.ndarray:
    """Centered hypercube vertices ``±spacing/2`` in the first four coordinates."""
    if not 1 <= count <= 16:
        raise ParameterError(f"clusters supports 1..16 groups, got {count}")
    verts = np.array(list(itertools.product((-1.0, 1.0), repeat=4)))[:count]
    return verts * (spacing / 2.0)


def clusters(m: int, n: int, noise: float = 0.0, seed: int = 0, spacing: float = 2.0,
             side: float = 0.32) -> np.ndarray:
    """Groups of four points forming regular tetrahedra of edge ``side``.

    Each tetrahedron is reflected to match its center's sign pattern, so
    all clusters are congruent and share one multiset of point norms when
    ``noise = 0``.  Intra-cluster distances equal ``side``; the closest
    points of different clusters are at least ``spacing − side·√(3/2)``
    apart (about 1.6 at the defaults).
    """
    _check(m, n, noise, 4)
    if m % 4:
        raise ParameterError(f"clusters needs m divisible by 4, got {m}")
    rng = np.random.default_rng(seed)
    centers = cluster_centers(m // 4, spacing)
    scale = side / (2.0 * math.sqrt(2.0))
    X = np.zeros((m, n))
    for c, ctr in enumerate(centers):
        flip = np.sign(ctr[:3])
        X[4 * c:4 * c + 4, :4] = ctr
        X[4 * c:4 * c + 4, :3] += _TETRA * flip * scale
    return X + noise * rng.normal(size=X.shape)


def generate(name: str, m: int, n: int, noise: float = 0.0, seed: int = 0) -> np.ndarray:
    makers = {"plane": plane, "swiss-roll": swiss_roll, "s-curve": s_curve, "clusters": clusters}
    if name not in makers:
        raise ParameterError(f"unknown dataset {name!r}; choose from {DATASETS}")
    return makers[name](m, n, noise, seed)
