"""Dataset ingestion and the binary-tree amplitude store.

A :class:`TreeStore` keeps, for every row of a matrix, a heap-ordered tree of
partial squared norms plus the sign of each leaf, and one more tree over the
squared row norms.  From these it answers three mappings:

``element``     exact entry ``M[i, j]``
``row-state``   amplitudes of row ``i`` divided by its norm
``norm-state``  amplitudes ``‖row_i‖ / ‖M‖_F`` over ``i``

Index registers are padded to the next power of two; padded positions carry
zero amplitude.  Every mapping call is metered.
"""

from __future__ import annotations

import csv
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import (
    BoundsError,
    EmptyInputError,
    FormatError,
    InvariantError,
    NonFiniteError,
    ZeroNormError,
)

MAPPINGS = ("element", "row-state", "norm-state")
STORE_KINDS = ("X-store", "B-store", "D-store")


def next_pow2(n: int) -> int:
    n = max(int(n), 1)
    return 1 << (n - 1).bit_length()


@dataclass(frozen=True)
class PadSpec:
    orig_rows: int
    orig_cols: int
    added_rows: int = 0
    added_cols: int = 0


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """Immutable data matrix with cached norms."""

    entries: np.ndarray
    pad_spec: PadSpec | None = None
    source: str = ""
    row_norms: np.ndarray = field(init=False, repr=False)
    frobenius_norm: float = field(init=False)

    def __post_init__(self):
        arr = np.array(self.entries, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise FormatError(f"data matrix must be 2-D, got shape {arr.shape}")
        if arr.size == 0:
            raise EmptyInputError("data matrix has no entries")
        bad = np.argwhere(~np.isfinite(arr))
        if bad.size:
            r, c = (int(v) for v in bad[0])
            raise NonFiniteError(f"non-finite entry at row {r}, col {c}", row=r, col=c)
        arr.setflags(write=False)
        norms = np.sqrt(np.einsum("ij,ij->i", arr, arr))
        norms.setflags(write=False)
        object.__setattr__(self, "entries", arr)
        object.__setattr__(self, "row_norms", norms)
        object.__setattr__(self, "frobenius_norm", float(np.sqrt(np.sum(arr * arr))))

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    @property
    def h(self) -> float:
        return float(self.row_norms.max())

    def fingerprint(self) -> str:
        import hashlib

        digest = hashlib.sha256()
        digest.update(np.asarray(self.entries.shape, dtype=np.int64).tobytes())
        digest.update(np.ascontiguousarray(self.entries).tobytes())
        return digest.hexdigest()


def ingest_csv(path, normalize: str = "none", header: bool = False) -> DataMatrix:
    """Read a comma-separated numeric file into a :class:`DataMatrix`."""
    if normalize not in ("none", "unit-rows"):
        raise FormatError(f"unknown normalize mode {normalize!r}")
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if header and rows:
        rows = rows[1:]
    if not rows:
        raise EmptyInputError(f"{path} contains no data rows", path=str(path))
    width = len(rows[0])
    values = np.empty((len(rows), width))
    for r, row in enumerate(rows):
        if len(row) != width:
            raise FormatError(f"row {r} has {len(row)} columns, expected {width}", row=r)
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise FormatError(f"unparseable entry {cell!r} at row {r}, col {c}", row=r, col=c) from None
            if not np.isfinite(v):
                raise NonFiniteError(f"non-finite entry at row {r}, col {c}", row=r, col=c)
            values[r, c] = v
    if normalize == "unit-rows":
        norms = np.sqrt(np.einsum("ij,ij->i", values, values))
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise ZeroNormError(f"row {int(zero[0])} has zero norm and cannot be normalized", row=int(zero[0]))
        values = values / norms[:, None]
    return DataMatrix(values, source=str(path))


def format_float(v: float) -> str:
    return repr(float(v))


def emit_csv(matrix, path, header: list[str] | None = None) -> Path:
    """Write a matrix with shortest round-trip float formatting."""
    arr = np.asarray(matrix.entries if isinstance(matrix, DataMatrix) else matrix, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow(header)
        for row in arr:
            writer.writerow([format_float(v) for v in row])
    return path


def pad_square(X: DataMatrix) -> DataMatrix:
    """Append zero rows or columns so that ``X`` becomes square."""
    m, n = X.rows, X.cols
    if m == n:
        return X
    size = max(m, n)
    out = np.zeros((size, size))
    out[:m, :n] = X.entries
    spec = PadSpec(orig_rows=m, orig_cols=n, added_rows=size - m, added_cols=size - n)
    return DataMatrix(out, pad_spec=spec, source=X.source)


@dataclass(frozen=True)
class NeighborSets:
    """Neighbor index lists ``Q_i`` with the radius (or k) that produced them."""

    sets: tuple
    radius: float | None = None
    k: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "sets", tuple(tuple(sorted(int(j) for j in q)) for q in self.sets))

    @property
    def m(self) -> int:
        return len(self.sets)

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(q) for q in self.sets], dtype=np.int64)

    @property
    def K(self) -> int:
        return int(self.counts.sum())

    @property
    def k_max(self) -> int:
        return int(self.counts.max()) if self.sets else 0

    @property
    def isolated(self) -> list[int]:
        return [i for i, q in enumerate(self.sets) if not q]

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, j) for i, q in enumerate(self.sets) for j in q]

    def indicator(self) -> np.ndarray:
        B = np.zeros((self.m, self.m))
        for i, j in self.pairs():
            B[i, j] = 1.0
        return B

    def permuted(self, perm) -> "NeighborSets":
        """Relabel so that new index ``a`` is old index ``perm[a]``."""
        perm = np.asarray(perm)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(perm.size)
        return NeighborSets(tuple(tuple(int(inverse[j]) for j in self.sets[old]) for old in perm),
                            radius=self.radius, k=self.k)

    def to_dict(self) -> dict:
        return {
            "radius": self.radius,
            "k": self.k,
            "K": self.K,
            "k_max": self.k_max,
            "sets": [list(q) for q in self.sets],
        }


class TreeStore:
    """Emulated tree-structured QRAM over a real matrix."""

    def __init__(self, matrix, kind: str):
        if kind not in STORE_KINDS:
            raise InvariantError(f"unknown store kind {kind!r}")
        M = np.array(matrix, dtype=np.float64, copy=True)
        if M.ndim != 2 or M.size == 0:
            raise EmptyInputError("store matrix must be a non-empty 2-D array")
        bad = np.argwhere(~np.isfinite(M))
        if bad.size:
            r, c = (int(v) for v in bad[0])
            raise NonFiniteError(f"non-finite entry at row {r}, col {c}", row=r, col=c)
        M.setflags(write=False)
        self.kind = kind
        self.matrix = M
        self.m, self.n = M.shape
        self.leaf_count = next_pow2(self.n)
        self.row_count = next_pow2(self.m)

        leaves = np.zeros((self.m, self.leaf_count))
        leaves[:, : self.n] = M * M
        self.node_values = _kernels.sum_trees(leaves)
        signs = np.zeros((self.m, self.leaf_count))
        signs[:, : self.n] = np.sign(M)
        self.sign_leaves = signs
        norm_leaves = np.zeros((1, self.row_count))
        norm_leaves[0, : self.m] = self.node_values[:, 0]
        self.norm_tree = _kernels.sum_trees(norm_leaves)[0]
        self.row_norms = np.sqrt(self.node_values[:, 0])
        self.frobenius_norm = float(np.sqrt(self.norm_tree[0]))
        # O(nnz * log^2(mn)) build-size model, metered separately from queries
        depth = max(1, int(np.ceil(np.log2(max(2, self.m * self.n)))))
        self.build_cost = int(np.count_nonzero(M)) * depth * depth
        self._lock = threading.Lock()
        self._counts = {name: 0 for name in MAPPINGS}

    # -- metering -----------------------------------------------------------
    def charge(self, mapping: str, count: int = 1) -> None:
        if mapping not in self._counts:
            raise InvariantError(f"unknown mapping {mapping!r}")
        if count < 0:
            raise InvariantError("query charge must be non-negative")
        with self._lock:
            self._counts[mapping] += int(count)

    @property
    def query_counts(self) -> dict:
        with self._lock:
            return dict(self._counts)

    def total_queries(self) -> int:
        return sum(self.query_counts.values())

    def reset_counts(self) -> None:
        with self._lock:
            for k in self._counts:
                self._counts[k] = 0

    # -- mappings -----------------------------------------------------------
    def _check_row(self, i):
        if not 0 <= int(i) < self.m:
            raise BoundsError(f"row index {i} outside [0, {self.m})", index=int(i))

    def _check_col(self, j):
        if not 0 <= int(j) < self.n:
            raise BoundsError(f"column index {j} outside [0, {self.n})", index=int(j))

    def element(self, i: int, j: int) -> float:
        self._check_row(i)
        self._check_col(j)
        self.charge("element")
        return float(self.matrix[i, j])

    def row_state(self, i: int, meter: bool = True) -> np.ndarray:
        self._check_row(i)
        if self.node_values[i, 0] <= 0.0:
            raise ZeroNormError(f"row {i} of the {self.kind} is identically zero", row=int(i))
        if meter:
            self.charge("row-state")
        return _kernels.tree_amplitudes(self.node_values[i], self.sign_leaves[i])

    def norm_state(self, meter: bool = True) -> np.ndarray:
        if self.norm_tree[0] <= 0.0:
            raise ZeroNormError(f"the {self.kind} holds an all-zero matrix")
        if meter:
            self.charge("norm-state")
        return _kernels.tree_amplitudes(self.norm_tree, np.ones(self.row_count))

    def access(self, mapping: str, i: int | None = None, j: int | None = None):
        if mapping == "element":
            if i is None or j is None:
                raise BoundsError("element access needs both i and j")
            return self.element(i, j)
        if mapping == "row-state":
            if i is None:
                raise BoundsError("row-state access needs i")
            return self.row_state(i)
        if mapping == "norm-state":
            return self.norm_state()
        raise InvariantError(f"unknown mapping {mapping!r}")

    # -- checks -------------------------------------------------------------
    def check_invariants(self, rtol: float = 1e-12) -> None:
        """Exhaustive tree-sum check over every internal node."""
        for name, trees in (("row", self.node_values), ("norm", self.norm_tree[None, :])):
            L = (trees.shape[1] + 1) // 2
            if L > 1:
                parent = trees[:, : L - 1]
                kids = trees[:, 1::2][:, : L - 1] + trees[:, 2::2][:, : L - 1]
                if not np.array_equal(parent, kids):
                    raise InvariantError(f"{name} tree node differs from the sum of its children")
        expected = np.einsum("ij,ij->i", self.matrix, self.matrix)
        if not np.allclose(self.node_values[:, 0], expected, rtol=rtol, atol=0.0):
            raise InvariantError("row tree root differs from the squared row norm")

    def dump(self) -> dict:
        return {
            "kind": self.kind,
            "m": int(self.m),
            "n": int(self.n),
            "frobenius_norm": self.frobenius_norm,
            "query_counts": self.query_counts,
            "build_cost": self.build_cost,
        }


def build_store(M, kind: str, neighbors: NeighborSets | None = None) -> TreeStore:
    """Build and validate a store of the given kind."""
    arr = np.asarray(M.entries if isinstance(M, DataMatrix) else M, dtype=np.float64)
    if arr.ndim == 2 and arr.size:
        bad = np.argwhere(~np.isfinite(arr))
        if bad.size:
            r, c = (int(v) for v in bad[0])
            raise NonFiniteError(f"non-finite entry at row {r}, col {c}", row=r, col=c)
    if kind == "B-store":
        if arr.shape[0] != arr.shape[1]:
            raise InvariantError("B-store matrix must be square")
        if not np.all((arr == 0.0) | (arr == 1.0)):
            raise InvariantError("B-store entries must be 0 or 1")
        if np.any(np.diag(arr) != 0.0):
            raise InvariantError("B-store diagonal must be zero", rows=np.flatnonzero(np.diag(arr)).tolist())
    elif kind == "D-store":
        if arr.shape[0] != arr.shape[1]:
            raise InvariantError("D-store matrix must be square")
        if not np.allclose(np.diag(arr), 1.0, rtol=0.0, atol=1e-12):
            raise InvariantError("D-store diagonal must be 1 (W has zero diagonal)")
        if neighbors is not None:
            off = arr - np.eye(arr.shape[0])
            support = neighbors.indicator() != 0
            stray = (off != 0) & ~support
            if np.any(stray):
                i, j = (int(v) for v in np.argwhere(stray)[0])
                raise InvariantError(f"W entry ({i},{j}) lies outside Q_{i}", row=i, col=j)
    store = TreeStore(arr, kind)
    store.check_invariants()
    return store
