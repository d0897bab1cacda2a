"""Classical NPE: neighbors, reconstruction weights, spectral problem, ridge embedding.

This is the exact reference that every quantum stage is compared against.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DegenerateRowError, IsolatedPointError, ParameterError
from .store import DataMatrix, NeighborSets

RANK_RTOL = 1e-10
TIE_RTOL = 1e-9


class IsolatedPointWarning(UserWarning):
    pass


def _as_array(X) -> np.ndarray:
    return X.entries if isinstance(X, DataMatrix) else np.asarray(X, dtype=np.float64)


# ---------------------------------------------------------------------------
# step 1: neighbors
# ---------------------------------------------------------------------------

def radius_neighbors(X, r: float) -> NeighborSets:
    """``Q_i = {j != i : ‖x_i − x_j‖² <= r²}`` by exhaustive search."""
    if not r > 0:
        raise ParameterError(f"radius must be positive, got {r}")
    A = _as_array(X)
    d2 = _kernels.pair_sq_dists(A, A)
    mask = d2 <= r * r
    np.fill_diagonal(mask, False)
    sets = tuple(tuple(np.flatnonzero(mask[i]).tolist()) for i in range(A.shape[0]))
    out = NeighborSets(sets, radius=float(r))
    if out.isolated:
        warnings.warn(f"isolated points (empty Q_i): {out.isolated}", IsolatedPointWarning, stacklevel=2)
    return out


def knn_neighbors(X, k: int) -> NeighborSets:
    """The ``k`` nearest points of every row; ties go to the smaller index."""
    A = _as_array(X)
    m = A.shape[0]
    if not 1 <= k < m:
        raise ParameterError(f"k must satisfy 1 <= k < m = {m}, got {k}")
    d2 = _kernels.pair_sq_dists(A, A)
    idx = np.arange(m)
    sets = []
    for i in range(m):
        others = idx[idx != i]
        order = np.lexsort((others, d2[i, others]))
        sets.append(tuple(others[order[:k]].tolist()))
    return NeighborSets(tuple(sets), k=int(k))


# ---------------------------------------------------------------------------
# step 2: weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    index: int
    neighbors: tuple
    dense: np.ndarray
    eigenvalues: np.ndarray
    cond: float
    trace_norm: float

    @property
    def size(self) -> int:
        return len(self.neighbors)


def neighborhood_correlation(X, Q: NeighborSets, i: int) -> CorrelationMatrix:
    A = _as_array(X)
    nbrs = Q.sets[i]
    if not nbrs:
        raise IsolatedPointError(f"point {i} has no neighbors", index=int(i))
    diffs = A[i][None, :] - A[list(nbrs)]
    C = diffs @ diffs.T
    C = 0.5 * (C + C.T)
    lam = np.linalg.eigvalsh(C)
    top = lam[-1]
    nonzero = lam[lam > RANK_RTOL * top] if top > 0 else lam[:0]
    cond = float(nonzero[-1] / nonzero[0]) if nonzero.size else float("inf")
    return CorrelationMatrix(int(i), tuple(nbrs), C, lam, cond, float(np.trace(C)))


def pinv_psd(C: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Eigen-thresholded pseudo-inverse of a symmetric PSD matrix."""
    lam, V = np.linalg.eigh(C)
    top = lam[-1] if lam.size else 0.0
    keep = lam > rtol * top if top > 0 else np.zeros_like(lam, dtype=bool)
    inv = np.zeros_like(lam)
    inv[keep] = 1.0 / lam[keep]
    return (V * inv) @ V.T


def solve_weights_row(C: CorrelationMatrix, mode: str = "exact") -> np.ndarray:
    """Reconstruction weights for one row under ``Σ w = 1``.

    ``mode="pinv"`` returns ``C⁺1 / (1ᵀC⁺1)``.  ``mode="exact"`` returns the
    minimizer of ``wᵀCw``: when ``1`` has a component in ``ker C`` the minimum is
    zero and the minimum-norm zero-residual weights are returned, otherwise it
    coincides with the ``pinv`` formula.
    """
    if mode not in ("exact", "pinv"):
        raise ParameterError(f"unknown weight mode {mode!r}")
    dense = C.dense
    k = dense.shape[0]
    ones = np.ones(k)
    lam, V = np.linalg.eigh(dense)
    top = lam[-1]
    if top <= 0:
        # all neighbors coincide with x_i: every feasible w has zero residual
        return ones / k
    keep = lam > RANK_RTOL * top
    if mode == "exact" and not np.all(keep):
        Vk = V[:, ~keep]
        proj = Vk @ (Vk.T @ ones)
        mass = float(ones @ proj)
        if mass > 1e-8 * k:
            return proj / mass
    inv = np.zeros_like(lam)
    inv[keep] = 1.0 / lam[keep]
    u = (V * inv) @ (V.T @ ones)
    denom = float(ones @ u)
    scale = float(np.abs(u).sum())
    if scale == 0.0 or abs(denom) <= RANK_RTOL * scale:
        raise DegenerateRowError(f"row {C.index}: 1ᵀC⁺1 vanishes", index=C.index)
    return u / denom


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    entries: np.ndarray
    support: NeighborSets
    residual: float = float("nan")
    row_residuals: np.ndarray = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    def row(self, i: int) -> np.ndarray:
        return self.entries[i, list(self.support.sets[i])]

    def check(self, atol: float = 1e-9) -> None:
        W = self.entries
        if np.any(np.diag(W) != 0):
            raise DegenerateRowError("weight matrix has a nonzero diagonal")
        off = (W != 0) & (self.support.indicator() == 0)
        if np.any(off):
            raise DegenerateRowError("weight matrix has entries outside the neighbor support")
        sums = W.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > atol)
        if bad.size:
            raise DegenerateRowError(f"row {int(bad[0])} sums to {sums[bad[0]]}", index=int(bad[0]))


def reconstruction_residuals(X, W: np.ndarray) -> np.ndarray:
    A = _as_array(X)
    R = A - W @ A
    return np.einsum("ij,ij->i", R, R)


def weights_from_rows(X, Q: NeighborSets, rows: dict | list) -> WeightMatrix:
    m = Q.m
    W = np.zeros((m, m))
    for i in range(m):
        W[i, list(Q.sets[i])] = rows[i]
    res = reconstruction_residuals(X, W)
    return WeightMatrix(W, Q, float(res.sum()), res)


def assemble_weight_matrix(X, Q: NeighborSets, mode: str = "exact") -> WeightMatrix:
    if Q.isolated:
        raise IsolatedPointError(f"isolated points {Q.isolated} have no neighbors", indices=Q.isolated)
    rows = [solve_weights_row(neighborhood_correlation(X, Q, i), mode=mode) for i in range(Q.m)]
    return weights_from_rows(X, Q, rows)


def row_objective(C: np.ndarray, w: np.ndarray) -> float:
    """``‖x_i − Σ_j w_j x_j‖²`` written through the correlation matrix."""
    return float(w @ C @ w)


# ---------------------------------------------------------------------------
# steps 3-4: spectral problem
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralResult:
    M: np.ndarray
    eigenvalues: np.ndarray
    vectors: np.ndarray
    d: int
    sigma: np.ndarray
    rank: int

    @property
    def selected_eigenvalues(self) -> np.ndarray:
        first = self.M.shape[0] - self.rank
        return self.eigenvalues[first: first + self.d]


def _orient(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def _canonical_basis(V: np.ndarray) -> np.ndarray:
    """Rotation-independent orthonormal basis of span(V)."""
    P = V @ V.T
    basis = []
    for col in range(P.shape[1]):
        v = P[:, col].copy()
        for b in basis:
            v -= (b @ v) * b
        nrm = np.linalg.norm(v)
        if nrm > 1e-8:
            basis.append(v / nrm)
        if len(basis) == V.shape[1]:
            break
    return np.column_stack([_orient(b) for b in basis])


def spectral_problem(W, d: int) -> SpectralResult:
    """Bottom ``d`` nonzero eigenvectors of ``M = (I − W)ᵀ(I − W)``."""
    entries = W.entries if isinstance(W, WeightMatrix) else np.asarray(W, dtype=np.float64)
    m = entries.shape[0]
    D = np.eye(m) - entries
    M = D.T @ D
    M = 0.5 * (M + M.T)
    lam, V = np.linalg.eigh(M)
    top = lam[-1]
    nonzero = lam > RANK_RTOL * top if top > 0 else np.zeros(m, dtype=bool)
    rank = int(nonzero.sum())
    if not 1 <= d < rank:
        raise ParameterError(f"d = {d} must be below the number of nonzero eigenvalues ({rank})", rank=rank, d=d)
    first = m - rank
    # widen the selection to whole tie groups, then canonicalize each group
    cols = []
    pos = first
    while len(cols) < d:
        group = [pos]
        while group[-1] + 1 < m and abs(lam[group[-1] + 1] - lam[pos]) <= TIE_RTOL * max(top, 1.0):
            group.append(group[-1] + 1)
        block = V[:, group] if len(group) == 1 else _canonical_basis(V[:, group])
        if len(group) == 1:
            block = _orient(block[:, 0])[:, None]
        for c in range(block.shape[1]):
            cols.append(block[:, c])
        pos = group[-1] + 1
    vectors = np.column_stack(cols[:d])
    ones = np.ones(m) / np.sqrt(m)
    if np.linalg.norm(M @ ones) <= 1e-9 * np.linalg.norm(M):
        # 1 is an exact kernel vector; eigh leaks it into small-gap eigenvectors
        vectors = vectors - np.outer(ones, ones @ vectors)
        Qv, R = np.linalg.qr(vectors)
        vectors = Qv * np.sign(np.diag(R))
    sigma = np.sort(np.linalg.svd(D, compute_uv=False))
    return SpectralResult(M, lam, vectors, int(d), sigma, rank)


# ---------------------------------------------------------------------------
# step 5: ridge regression
# ---------------------------------------------------------------------------

def default_alpha(X) -> float:
    A = _as_array(X)
    return 0.01 * float(np.mean(np.einsum("ij,ij->j", A, A)))


def ridge_regress(X, z: np.ndarray, alpha: float) -> np.ndarray:
    """``a = (XᵀX + αI)⁻¹ Xᵀ z``; the α = 0 case uses the pseudo-inverse limit."""
    if alpha < 0:
        raise ParameterError(f"alpha must be non-negative, got {alpha}")
    A = _as_array(X)
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] != A.shape[0]:
        raise ParameterError(f"z has length {z.shape[0]}, expected {A.shape[0]}")
    G = A.T @ A
    rhs = A.T @ z
    if alpha == 0.0:
        return np.linalg.pinv(A) @ z
    return np.linalg.solve(G + alpha * np.eye(G.shape[0]), rhs)


@dataclass(frozen=True, eq=False)
class EmbeddingResult:
    A: np.ndarray
    alpha: float
    kappa_X: float


def condition_number(A: np.ndarray) -> float:
    s = np.linalg.svd(A, compute_uv=False)
    nz = s[s > RANK_RTOL * s[0]] if s.size and s[0] > 0 else s[:0]
    return float(nz[0] / nz[-1]) if nz.size else float("inf")


@dataclass
class ClassicalRun:
    """Everything produced by :func:`run_classical_npe`."""

    embedding: EmbeddingResult
    neighbors: NeighborSets
    weights: WeightMatrix
    spectral: SpectralResult
    timings: dict
    cost_model: dict
    params: dict

    @property
    def A(self) -> np.ndarray:
        return self.embedding.A


def run_classical_npe(X, r: float | None = None, k: int | None = None, d: int = 2,
                      alpha: float | None = None, weight_mode: str = "exact") -> ClassicalRun:
    """Neighbors, weights, spectral problem and ridge regression in order."""
    if (r is None) == (k is None):
        raise ParameterError("exactly one of r or k must be given")
    A = _as_array(X)
    m, n = A.shape
    timings = {}
    t0 = time.perf_counter()
    Q = radius_neighbors(A, r) if r is not None else knn_neighbors(A, k)
    timings["neighbors"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    W = assemble_weight_matrix(A, Q, mode=weight_mode)
    timings["weights"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    spectral = spectral_problem(W, d)
    timings["spectral"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    a = default_alpha(A) if alpha is None else float(alpha)
    cols = [ridge_regress(A, spectral.vectors[:, c], a) for c in range(d)]
    emb = EmbeddingResult(np.column_stack(cols), a, condition_number(A))
    timings["ridge"] = time.perf_counter() - t0

    kk = Q.k_max
    cost = {
        "predicted": float(m * n * kk ** 3 + d * m * m),
        "measured_flops": float(m * m * n + Q.K * n * kk + sum(c ** 3 for c in Q.counts) + m ** 3 + d * n ** 3),
    }
    params = {"r": r, "k": k, "d": d, "alpha": a, "weight_mode": weight_mode}
    return ClassicalRun(emb, Q, W, spectral, timings, cost, params)
