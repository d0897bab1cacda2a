"""Query-count sweeps and log-log exponent fits."""

from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import classical
from .datasets import clusters
from .errors import FitError, ParameterError
from .pipeline import QnpeConfig, find_neighbors_quantum, transformation_quantum, weight_matrix_quantum
from .store import build_store

STAGES = ("neighbors", "weights", "embedding")
SWEEP_M = (8, 16, 32, 64)
SWEEP_D = (1, 2, 3, 4)
# cluster datasets have intra-cluster edge 0.32 and inter-cluster gaps above 1.6
SWEEP_RADIUS = 1.0
# congruent clusters tie their singular values; the d-sweep jitters points to split the ties
SWEEP_D_NOISE = 0.02


@dataclass
class ScalingPoint:
    stage: str
    m: int
    n: int
    k: int
    d: int
    queries: int
    seconds: float

    def to_dict(self) -> dict:
        # wall time stays out of emitted files so reruns are byte-identical
        out = asdict(self)
        del out["seconds"]
        return out


@dataclass
class Fit:
    stage: str
    variable: str
    exponent: float
    intercept: float
    points: int

    def to_dict(self) -> dict:
        return asdict(self)


def fit_exponent(xs, ys, stage: str = "", variable: str = "m") -> Fit:
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.size < 2 or np.unique(x).size < 2:
        raise FitError(f"need at least two distinct {variable} values to fit", points=int(x.size))
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise FitError("log-log fit needs positive finite values")
    slope, intercept = np.polyfit(np.log(x), np.log(y), 1)
    return Fit(stage, variable, float(slope), float(intercept), int(x.size))


def stage_queries(X: np.ndarray, r: float, d: int = 2, seed: int = 0, eps: float = 0.01,
                  stages=STAGES) -> dict:
    """Run the requested stages once; returns ``{stage: (queries, seconds)}``."""
    cfg = QnpeConfig(r=r, d=d, seed=seed, eps=eps)
    storeX = build_store(X, "X-store")
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        Q = classical.radius_neighbors(X, r)
    if "neighbors" in stages:
        t0 = time.perf_counter()
        rep = find_neighbors_quantum(storeX, r, cfg)
        out["neighbors"] = (sum(rep.queries.values()), time.perf_counter() - t0)
        Q = rep.neighbors
    storeB = build_store(Q.indicator(), "B-store")
    W = None
    if "weights" in stages:
        t0 = time.perf_counter()
        W, rows = weight_matrix_quantum(storeX, storeB, cfg, Q)
        out["weights"] = (sum(row.queries for row in rows), time.perf_counter() - t0)
    if "embedding" in stages:
        if W is None:
            W = classical.assemble_weight_matrix(X, Q)
        storeD = build_store(np.eye(X.shape[0]) - W.entries, "D-store", neighbors=Q)
        t0 = time.perf_counter()
        tr = transformation_quantum(storeD, storeX, cfg)
        out["embedding"] = (sum(tr.queries.values()), time.perf_counter() - t0)
    return out


def ring(m: int, n: int, seed: int = 0) -> np.ndarray:
    """``m`` equally spaced unit-norm points on a circle in a random 2-plane of ``R^n``."""
    if m < 3 or n < 2:
        raise ParameterError("ring needs m >= 3 and n >= 2")
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.normal(size=(n, 2)))
    t = 2.0 * math.pi * np.arange(m) / m
    return np.column_stack([np.cos(t), np.sin(t)]) @ Q.T


def ring_radius(m: int, k: int) -> float:
    """Radius admitting exactly the ``k/2`` nearest ring points on each side."""
    if k % 2 or not 2 <= k < m:
        raise ParameterError(f"ring neighbor count must be even and in [2, m), got {k}")
    chord = lambda steps: 2.0 * math.sin(math.pi * steps / m)
    return 0.5 * (chord(k // 2) + chord(k // 2 + 1))


def _points(stage_costs: dict, m: int, n: int, k: int, d: int) -> list:
    return [ScalingPoint(stage, m, n, k, d, int(q), sec) for stage, (q, sec) in stage_costs.items()]


def sweep_m(ms=SWEEP_M, n: int = 4, d: int = 2, seed: int = 0, eps: float = 0.01, stages=STAGES) -> list:
    points = []
    for m in ms:
        X = clusters(m, n, seed=seed)
        points += _points(stage_queries(X, SWEEP_RADIUS, d, seed, eps, stages), m, n, 3, d)
    return points


def sweep_n(ns, m: int = 16, d: int = 2, seed: int = 0, eps: float = 0.01, stages=("weights",)) -> list:
    points = []
    for n in ns:
        X = clusters(m, n, seed=seed)
        points += _points(stage_queries(X, SWEEP_RADIUS, d, seed, eps, stages), m, n, 3, d)
    return points


def sweep_k(ks, m: int = 32, n: int = 4, d: int = 2, seed: int = 0, eps: float = 0.01, stages=STAGES) -> list:
    X = ring(m, n, seed)
    points = []
    for k in ks:
        points += _points(stage_queries(X, ring_radius(m, k), d, seed, eps, stages), m, n, k, d)
    return points


def sweep_d(ds=SWEEP_D, m: int = 16, n: int = 4, seed: int = 0, eps: float = 0.01,
            noise: float = SWEEP_D_NOISE) -> list:
    X = clusters(m, n, noise=noise, seed=seed)
    points = []
    for d in ds:
        points += _points(stage_queries(X, SWEEP_RADIUS, d, seed, eps, ("embedding",)), m, n, 3, d)
    return points


def fit_points(points, variable: str = "m") -> dict:
    """One exponent per stage present in ``points``."""
    fits = {}
    for stage in STAGES:
        rows = [p for p in points if p.stage == stage]
        if rows:
            fits[stage] = fit_exponent([getattr(p, variable) for p in rows], [p.queries for p in rows],
                                       stage, variable)
    return fits


# leading exponents of the published per-stage complexities
REFERENCE_EXPONENTS = {
    "m": {"neighbors": 1.5, "weights": 1.0, "embedding": 1.0},
    "n": {"neighbors": 0.0, "weights": 0.0, "embedding": 0.0},
    "k": {"neighbors": 0.5, "weights": 2.0, "embedding": 0.5},
    "d": {"embedding": 1.0},
}
AXES = tuple(REFERENCE_EXPONENTS)
MIN_FIT_POINTS = 4


@dataclass
class ScalingRecord:
    axis: str
    points: list
    fitted_exponent: dict
    reference_exponent: dict

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "points": [p.to_dict() for p in self.points],
            "fitted_exponent": {s: f.exponent for s, f in self.fitted_exponent.items()},
            "reference_exponent": dict(self.reference_exponent),
        }


def scaling_study(axis: str, sizes, m: int = 16, n: int = 4, k: int = 4, d: int = 2, seed: int = 0,
                  eps: float = 0.01) -> ScalingRecord:
    """Sweep one axis with the others fixed and fit each stage's exponent."""
    if axis not in AXES:
        raise ParameterError(f"axis must be one of {AXES}, got {axis!r}")
    sizes = [int(v) for v in sizes]
    if len(sizes) < MIN_FIT_POINTS:
        raise ParameterError(f"scaling needs at least {MIN_FIT_POINTS} sizes, got {len(sizes)}")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ParameterError("sizes must be strictly increasing")
    if axis == "m":
        points = sweep_m(sizes, n=n, d=d, seed=seed, eps=eps)
    elif axis == "n":
        points = sweep_n(sizes, m=m, d=d, seed=seed, eps=eps, stages=STAGES)
    elif axis == "k":
        points = sweep_k(sizes, m=m, n=n, d=d, seed=seed, eps=eps)
    else:
        points = sweep_d(sizes, m=m, n=n, seed=seed, eps=eps)
    return ScalingRecord(axis, points, fit_points(points, axis), REFERENCE_EXPONENTS[axis])


def write_csv(points, path) -> Path:
    path = Path(path)
    if not points:
        raise ParameterError("no scaling points to write")
    fields = list(points[0].to_dict())
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for p in points:
            writer.writerow(p.to_dict())
    return path


def growth(points, stage: str, variable: str = "n") -> float:
    """Relative change of the query count between the smallest and largest ``variable``."""
    rows = sorted((p for p in points if p.stage == stage), key=lambda p: getattr(p, variable))
    if len(rows) < 2:
        raise FitError(f"need two {stage} points to measure growth")
    return rows[-1].queries / rows[0].queries - 1.0


def predicted_neighbor_exponent(ms) -> float:
    """Slope of ``m·√K·log K`` with ``K = 3m`` over ``ms``, the leading neighbor-stage term."""
    ys = [m * math.sqrt(3 * m) * math.log(3 * m) for m in ms]
    return fit_exponent(ms, ys).exponent
