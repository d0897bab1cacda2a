"""Agreement metrics between classical and quantum runs."""

from __future__ import annotations

import numpy as np
from scipy.linalg import subspace_angles

from .errors import ComparisonError
from .store import NeighborSets


def principal_angles_deg(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Principal angles between column spans, in degrees, largest first."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[0] != B.shape[0]:
        raise ComparisonError(f"subspaces live in R^{A.shape[0]} and R^{B.shape[0]}")
    return np.degrees(subspace_angles(A, B))


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def neighbor_jaccard(P: NeighborSets, Q: NeighborSets) -> list[float]:
    if P.m != Q.m:
        raise ComparisonError(f"neighbor sets cover {P.m} and {Q.m} points")
    return [jaccard(p, q) for p, q in zip(P.sets, Q.sets)]


def weight_delta(W1: np.ndarray, W2: np.ndarray) -> float:
    W1 = np.asarray(W1, dtype=np.float64)
    W2 = np.asarray(W2, dtype=np.float64)
    if W1.shape != W2.shape:
        raise ComparisonError(f"weight matrices have shapes {W1.shape} and {W2.shape}")
    return float(np.linalg.norm(W1 - W2))


def max_row_error(W1: np.ndarray, W2: np.ndarray) -> float:
    return float(np.max(np.linalg.norm(np.asarray(W1) - np.asarray(W2), axis=1)))


def sigma_deviation(s1, s2) -> list[float]:
    s1 = np.asarray(s1, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    k = min(s1.size, s2.size)
    return np.abs(s1[:k] - s2[:k]).tolist()
