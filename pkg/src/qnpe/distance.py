"""Distance estimation, difference-state preparation and purification of ρ_C.

Distances come from an overlap test: preparing ``(|0⟩|x̂⟩ + |1⟩|ŷ⟩)/√2`` and
applying a Hadamard to the flag gives flag value 0 with probability
``(1 + ⟨x̂|ŷ⟩)/2``; amplitude estimation of that probability, boosted by a
median, yields ``‖x − y‖²`` from the stored norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, PostSelectionError, ZeroDifferenceError
from .estimation import (
    amplitude_estimation,
    boost_repetitions,
    branch_rng,
    check_tier,
    estimate_probability,
    fixed_point_queries,
    fixed_point_search,
    parallel_amplitude_handling,
    required_iterations,
    schedule_for,
)
from .sim import SimState, BitOracle
from .store import TreeStore

CIRCUIT_MAX_QAE_BITS = 14
MAX_POSTSELECT_ATTEMPTS = 64


def _row(store: TreeStore, i: int) -> tuple[np.ndarray, float]:
    """Unit row state (zero vector for a zero row) and the row norm, unmetered."""
    nrm = float(store.row_norms[i])
    if nrm == 0.0:
        return np.zeros(store.leaf_count), 0.0
    return store.row_state(i, meter=False), nrm


def _pad(v: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros(size)
    out[: v.size] = v
    return out


class DistanceOracle:
    """Writes ``‖x_i − y_j‖²`` within ``eps1`` with failure probability at most ``2δ``.

    Estimates are sampled once per pair from a per-pair random stream and then
    cached, so repeated invocations on a branch are consistent.
    """

    def __init__(self, storeX: TreeStore, storeY: TreeStore, eps1: float, delta: float,
                 seed=None, tier: str = "spectral", stream_key: tuple = ()):
        if not eps1 > 0:
            raise ParameterError(f"eps1 must be positive, got {eps1}")
        if not 0 < delta < 0.5:
            raise ParameterError(f"delta must lie in (0, 1/2), got {delta}")
        if storeX.n != storeY.n:
            raise ParameterError("stores hold vectors of different dimension")
        self.storeX = storeX
        self.storeY = storeY
        self.eps1 = float(eps1)
        self.delta = float(delta)
        self.seed = seed
        self.tier = check_tier(tier)
        self.stream_key = tuple(stream_key)
        self.repetitions = boost_repetitions(delta)
        self.width = max(storeX.leaf_count, storeY.leaf_count)
        self._cache: dict = {}

    def bits(self, i: int, j: int) -> int:
        prod = float(self.storeX.row_norms[i] * self.storeY.row_norms[j])
        if prod == 0.0:
            return 0
        return max(1, math.ceil(math.log2(8 * math.pi * prod / self.eps1)))

    def queries(self, i: int, j: int) -> int:
        """Calls to the overlap-test preparation (or its inverse) for one estimate."""
        t = self.bits(i, j)
        if t == 0:
            return 0
        return self.repetitions * (2 * ((1 << t) - 1) + 1)

    def overlap_state(self, i: int, j: int) -> np.ndarray:
        x, _ = _row(self.storeX, i)
        y, _ = _row(self.storeY, j)
        x = _pad(x, self.width)
        y = _pad(y, self.width)
        return np.concatenate([(x + y) / 2.0, (x - y) / 2.0])

    def estimate(self, i: int, j: int) -> float:
        key = (int(i), int(j))
        if key in self._cache:
            return self._cache[key]
        nx = float(self.storeX.row_norms[i])
        ny = float(self.storeY.row_norms[j])
        if nx == 0.0 or ny == 0.0:
            value = nx * nx + ny * ny
        else:
            t = self.bits(i, j)
            rng = branch_rng(self.seed, 0xD157, *self.stream_key, i, j)
            local = self.overlap_state(i, j)
            good = np.zeros(local.size, dtype=bool)
            good[: self.width] = True
            if self.tier == "circuit":
                if t > CIRCUIT_MAX_QAE_BITS:
                    raise ParameterError(
                        f"circuit tier supports at most {CIRCUIT_MAX_QAE_BITS} estimation bits, pair needs {t}",
                        required_bits=t)
                q = int(math.log2(local.size))
                prep = SimState.from_amplitudes((("q", q),), local)
                vals = sorted(amplitude_estimation(prep, good, t, tier="circuit", rng=rng).point_estimate
                              for _ in range(self.repetitions))
            else:
                a = float(np.sum(np.abs(local[: self.width]) ** 2))
                vals = sorted(estimate_probability(a, t, rng)[0] for _ in range(self.repetitions))
            a_hat = vals[self.repetitions // 2]
            value = max(0.0, nx * nx + ny * ny - 2.0 * nx * ny * (2.0 * a_hat - 1.0))
        self._cache[key] = value
        return value

    def charge(self, pairs, invocations: int = 1) -> int:
        """Meter ``invocations`` superposed calls over ``pairs``; returns the query count."""
        cost = max((self.queries(i, j) for i, j in pairs), default=0) * int(invocations)
        if cost:
            self.storeX.charge("row-state", cost)
            if self.storeY is not self.storeX:
                self.storeY.charge("row-state", cost)
            else:
                self.storeX.charge("row-state", cost)
        return cost

    def value_bits(self, pairs) -> tuple[int, int]:
        """(total, fractional) widths of a register holding these estimates to ``eps1``."""
        frac = max(1, math.ceil(math.log2(1.0 / self.eps1)) + 1)
        top = max((self.estimate(i, j) for i, j in pairs), default=0.0)
        whole = max(1, math.ceil(math.log2(top + 1.0)) + 1)
        return whole + frac, frac

    def as_bit_oracle(self, pairs, index_registers=("i", "j"), value_register="dist") -> BitOracle:
        total, frac = self.value_bits(pairs)
        allowed = set((int(i), int(j)) for i, j in pairs)

        def f(i, j):
            return self.estimate(i, j) if (i, j) in allowed else 0.0

        return BitOracle(f, index_registers, value_register, total, frac)

    def report(self, pairs) -> dict:
        pairs = list(pairs)
        errs = []
        consts = []
        for i, j in pairs:
            x = self.storeX.matrix[i]
            y = self.storeY.matrix[j]
            true = float(np.sum((x - y) ** 2))
            errs.append(abs(self.estimate(i, j) - true))
            scale = float(self.storeX.row_norms[i] * self.storeY.row_norms[j]) * math.log(1 / self.delta) / self.eps1
            if scale > 0:
                consts.append(self.queries(i, j) / scale)
        return {
            "name": "distance_oracle",
            "params": {"eps1": self.eps1, "delta": self.delta, "repetitions": self.repetitions},
            "queries": int(max((self.queries(i, j) for i, j in pairs), default=0)),
            "error_bound": self.eps1,
            "measured_error": max(errs, default=0.0),
            "query_constant": max(consts, default=0.0),
        }


def distance_oracle(storeX: TreeStore, storeY: TreeStore, eps1: float, delta: float,
                    seed=None, tier: str = "spectral", stream_key: tuple = ()) -> DistanceOracle:
    return DistanceOracle(storeX, storeY, eps1, delta, seed=seed, tier=tier, stream_key=stream_key)


# ---------------------------------------------------------------------------
# difference states
# ---------------------------------------------------------------------------

def difference_local_state(x: np.ndarray, nx: float, y: np.ndarray, ny: float) -> np.ndarray:
    """Flag ⊗ data state after the norm rotation and the flag Hadamard.

    Flag value 1 carries ``(x − y)/√(2(‖x‖² + ‖y‖²))``.
    """
    s = math.hypot(nx, ny)
    c, sn = nx / s, ny / s
    return np.concatenate([(c * x + sn * y) / math.sqrt(2), (c * x - sn * y) / math.sqrt(2)])


@dataclass
class DifferenceReport:
    branches: list
    qae_bits: int
    queries: int
    distance_queries: int
    delta_prime: float
    eps1: float
    min_overlap: float

    def to_dict(self) -> dict:
        fids = [b.fidelity for b in self.branches]
        return {
            "name": "difference_state_prep",
            "params": {"delta_prime": self.delta_prime, "eps1": self.eps1, "min_overlap": self.min_overlap},
            "queries": int(self.queries),
            "error_bound": self.delta_prime ** 2,
            "measured_error": max((1 - f for f in fids), default=0.0),
            "budgets": {f"{b.index}": b.budget for b in self.branches},
        }


def _difference_layer(index_layout, weights: dict, storeX: TreeStore, storeY: TreeStore,
                      delta_prime: float, min_overlap: float, oracle: DistanceOracle | None,
                      seed, tier: str, stream_key=()):
    width = max(storeX.leaf_count, storeY.leaf_count)
    q = int(math.log2(width))
    local_layout = (("flag", 1), ("data", q))
    branches = {}
    hints = {} if oracle is not None else None
    for key, p in weights.items():
        if p <= 0:
            continue
        i, j = key[-2], key[-1]
        x, nx = _row(storeX, i)
        y, ny = _row(storeY, j)
        if np.array_equal(storeX.matrix[i], storeY.matrix[j]):
            raise ZeroDifferenceError(f"branch ({i},{j}) has x_i = y_j", branch=[int(i), int(j)])
        local = difference_local_state(_pad(x, width), nx, _pad(y, width), ny)
        branches[tuple(key)] = (float(p), local)
        if hints is not None:
            hints[tuple(key)] = min(1.0, oracle.estimate(i, j) / (2.0 * (nx * nx + ny * ny)))
    good = np.zeros(2 * width, dtype=bool)
    good[width:] = True
    state, rep = parallel_amplitude_handling(index_layout, branches, local_layout, good, delta_prime,
                                             min_overlap, seed=seed, tier=tier, phase_hints=hints,
                                             stream_key=(0xD1FF, *stream_key))
    return state, rep


def min_branch_overlap(storeX: TreeStore, storeY: TreeStore, eps0: float) -> float:
    """Lower bound ``ε₀ / (2h)`` on every branch's good amplitude."""
    h = max(float(storeX.row_norms.max()), float(storeY.row_norms.max()))
    return min(1.0, eps0 / (2.0 * h))


def difference_state_prep(storeX: TreeStore, storeY: TreeStore, weights: dict, eps: float,
                          delta_prime: float | None = None, eps0: float | None = None, seed=None,
                          tier: str = "spectral", phase_correct: bool = True) -> tuple[SimState, DifferenceReport]:
    """Prepare ``Σ √p_ij |i⟩|j⟩|x_i − y_j⟩`` (flag register ends near |1⟩).

    ``weights`` maps ``(i, j)`` to ``p_ij``.  The local budget split follows
    ``δ′ = ε``, ``ε₁ = ε²ε₀²`` and QAE failure ``δ = ε₀ε``.
    """
    check_tier(tier)
    if not eps > 0:
        raise ParameterError("eps must be positive")
    pairs = [k for k, p in weights.items() if p > 0]
    for i, j in pairs:
        if np.array_equal(storeX.matrix[i], storeY.matrix[j]):
            raise ZeroDifferenceError(f"branch ({i},{j}) has x_i = y_j", branch=[int(i), int(j)])
    if eps0 is None:
        eps0 = min(float(np.linalg.norm(storeX.matrix[i] - storeY.matrix[j])) for i, j in pairs)
    dp = min(eps, 0.5) if delta_prime is None else delta_prime
    eps1 = eps * eps * eps0 * eps0
    delta = min(0.25, max(eps0 * eps, 1e-12))
    oracle = distance_oracle(storeX, storeY, eps1, delta, seed=seed, tier="spectral") if phase_correct else None
    layout = (("i", int(math.log2(storeX.row_count))), ("j", int(math.log2(storeY.row_count))))
    total = sum(weights[k] for k in pairs)
    w = {k: weights[k] / total for k in pairs}
    min_ov = min_branch_overlap(storeX, storeY, eps0)
    state, rep = _difference_layer(layout, w, storeX, storeY, dp, min_ov, oracle, seed, tier)
    # phase hints need one distance computation and its uncomputation
    dq = oracle.charge(pairs, 2) if oracle is not None else 0
    prep_calls = rep.queries
    storeX.charge("row-state", prep_calls)
    storeY.charge("row-state", prep_calls)
    return state, DifferenceReport(rep.branches, rep.qae_bits, prep_calls + dq, dq, dp, eps1, min_ov)


def ideal_difference_state(storeX: TreeStore, storeY: TreeStore, weights: dict) -> np.ndarray:
    """Dense target ``Σ √p |i⟩|j⟩|1⟩|x_i − y_j⟩`` in the layout of :func:`difference_state_prep`."""
    width = max(storeX.leaf_count, storeY.leaf_count)
    out = np.zeros((storeX.row_count, storeY.row_count, 2, width), dtype=np.complex128)
    total = sum(p for p in weights.values() if p > 0)
    for (i, j), p in weights.items():
        if p <= 0:
            continue
        diff = _pad(storeX.matrix[i] - storeY.matrix[j], width)
        out[i, j, 1] = math.sqrt(p / total) * diff / np.linalg.norm(diff)
    return out.reshape(-1)


# ---------------------------------------------------------------------------
# purification of the neighborhood correlation operator
# ---------------------------------------------------------------------------

@dataclass
class PurificationReport:
    index: int
    neighbors: tuple
    attempts: int
    success_probability: float
    rotation_budget: int
    queries: int
    breakdown: dict = field(default_factory=dict)
    difference: DifferenceReport | None = None

    def to_dict(self) -> dict:
        return {
            "name": "purification_prep",
            "params": {"index": self.index, "rotation_budget": self.rotation_budget},
            "queries": int(self.queries),
            "error_bound": self.difference.delta_prime ** 2 if self.difference else 0.0,
            "measured_error": self.difference.to_dict()["measured_error"] if self.difference else None,
            "attempts": self.attempts,
            "breakdown": dict(self.breakdown),
        }


def purification_prep(storeX: TreeStore, storeB: TreeStore, i: int, eps: float, r: float | None = None,
                      eps0: float | None = None, seed=None, tier: str = "spectral",
                      oracle: DistanceOracle | None = None,
                      stream_key: tuple = ()) -> tuple[SimState, PurificationReport]:
    """Purification of ``ρ_C = C / tr C`` over registers ``[i, j, rflag, flag, data]``.

    Register ``j`` is the purified system; tracing the others leaves ``ρ_C``
    indexed by neighbor.
    """
    check_tier(tier)
    if not eps > 0:
        raise ParameterError("eps must be positive")
    nbrs = tuple(int(j) for j in np.flatnonzero(storeB.matrix[i]))
    if not nbrs:
        from .errors import IsolatedPointError

        raise IsolatedPointError(f"point {i} has no neighbors", index=int(i))
    pairs = [(int(i), j) for j in nbrs]
    true_d = {j: float(np.linalg.norm(storeX.matrix[i] - storeX.matrix[j])) for j in nbrs}
    for j, d in true_d.items():
        if d == 0.0:
            raise ZeroDifferenceError(f"neighbor {j} of point {i} coincides with it", branch=[int(i), j])
    if eps0 is None:
        eps0 = min(true_d.values())
    if r is None:
        r = max(true_d.values())
    eps1 = eps * eps * eps0 * eps0
    delta = min(0.25, max(eps0 * eps, 1e-12))
    if oracle is None:
        oracle = distance_oracle(storeX, storeX, eps1, delta, seed=seed, tier=tier, stream_key=(i, *stream_key))
    rng = branch_rng(seed, 0x9E21, i, *stream_key)

    # |i⟩|B_i⟩ then the j-controlled rotation to amplitude d̂_ij / r on the rotation flag
    b_amp = storeB.row_state(i)
    qm = int(math.log2(storeB.leaf_count))
    rot = np.zeros((storeB.leaf_count, 2))
    for j in nbrs:
        rho = min(1.0, math.sqrt(oracle.estimate(i, j)) / r)
        rot[j, 0] = b_amp[j] * math.sqrt(1.0 - rho * rho)
        rot[j, 1] = b_amp[j] * rho
    layout = (("i", qm), ("j", qm), ("rflag", 1))
    full = np.zeros((1 << qm, 1 << qm, 2), dtype=np.complex128)
    full[i] = rot
    prep = SimState.from_amplitudes(layout, full.reshape(-1), seed)
    good = np.zeros(full.shape, dtype=bool)
    good[:, :, 1] = True
    good = good.reshape(-1)
    p_good = float(np.sum(np.abs(prep.amplitudes[good]) ** 2))
    if tier == "circuit" and p_good < 1e-6:
        raise PostSelectionError(f"rotation flag success probability {p_good:.2e} is below 1e-6", index=int(i))

    budget = required_iterations(min(1.0, eps0 / r), min(eps, 0.5))
    sched = schedule_for(budget, min(eps, 0.5))
    attempts = 0
    while True:
        attempts += 1
        amplified = fixed_point_search(prep, good, sched, tier=tier)
        p_succ = float(np.sum(np.abs(amplified.amplitudes[good]) ** 2))
        if rng.random() < p_succ:
            break
        if attempts >= MAX_POSTSELECT_ATTEMPTS:
            raise PostSelectionError(f"rotation flag never post-selected after {attempts} attempts", index=int(i))
    selected, _ = amplified.project("rflag", 1)
    j_amp = selected.tensor()[i, :, 1]
    weights = {(int(i), int(j)): float(abs(j_amp[j]) ** 2) for j in nbrs}

    min_ov = min_branch_overlap(storeX, storeX, eps0)
    diff_state, rep = _difference_layer((("i", qm), ("j", qm)), weights, storeX, storeX, min(eps, 0.5),
                                        min_ov, oracle, seed, tier, stream_key=(i, *stream_key))
    t = diff_state.tensor()  # (i, j, flag, data)
    out = np.zeros((1 << qm, 1 << qm, 2) + t.shape[2:], dtype=np.complex128)
    out[:, :, 1] = t
    state = SimState.from_amplitudes(layout + diff_state.layout[2:], out.reshape(-1), seed, normalize=True)

    # metering: each amplification round calls (U_B, distance, rotation) or its inverse
    rot_calls = attempts * fixed_point_queries(sched)
    storeB.charge("row-state", rot_calls - 1)
    dist_rot = oracle.charge(pairs, 2 * rot_calls)
    difference_queries = rep.queries
    storeX.charge("row-state", 2 * difference_queries)
    dist_hint = oracle.charge(pairs, 2)
    breakdown = {
        "row_state_B": rot_calls,
        "distance_for_rotation": dist_rot,
        "difference_prep": 2 * difference_queries,
        "distance_for_phase": dist_hint,
    }
    total = sum(breakdown.values())
    drep = DifferenceReport(rep.branches, rep.qae_bits, 2 * difference_queries + dist_hint, dist_hint,
                            min(eps, 0.5), eps1, min_ov)
    return state, PurificationReport(int(i), nbrs, attempts, p_good, budget, total, breakdown, drep)


def dense_rho_c(X: np.ndarray, i: int, nbrs, size: int) -> np.ndarray:
    """``C / tr C`` embedded at the neighbor indices of a ``size``-dimensional register."""
    X = np.asarray(X, dtype=np.float64)
    nbrs = list(nbrs)
    diffs = X[i][None, :] - X[nbrs]
    C = diffs @ diffs.T
    out = np.zeros((size, size))
    out[np.ix_(nbrs, nbrs)] = C / np.trace(C)
    return out
