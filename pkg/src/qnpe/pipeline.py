"""End-to-end quantum NPE: neighbor finding, weight rows and the embedding transformation."""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from . import classical
from .compare import max_row_error, neighbor_jaccard, principal_angles_deg, sigma_deviation
from .distance import distance_oracle, purification_prep
from .errors import (
    DegenerateRowError,
    ExhaustedError,
    NoNeighborsError,
    ParameterError,
    PrecisionError,
    QnpeError,
    StepError,
    TomographyError,
)
from .estimation import (
    TIERS,
    amplitude_amplify,
    amplitude_estimation,
    boost_repetitions,
    branch_rng,
    estimate_probability,
    grover_probability,
)
from .linalg import (
    block_encoding_from_purification,
    invert_block_encoded,
    inversion_queries,
    tomography,
)
from .sim import SimState
from .spectral import (
    StateLabels,
    find_minimum,
    paired_uniform_state,
    qsve,
    qsve_spectrum,
    ridge_regress_quantum,
)
from .store import NeighborSets, TreeStore, build_store

BALANCE_WARN_RATIO = 4.0
TOMOGRAPHY_RETRIES = 3
MIN_WEIGHT_SUM = 1e-3
CIRCUIT_MAX_POINTS = 16
# imaginary residue from approximate purification, relative to the tomography error
IMAG_FRACTION = 0.01
# purification leaves spurious eigenvalues of order eps² · λmax in ρ_C
SPECTRUM_FLOOR_FACTOR = 10.0


class ImbalanceWarning(UserWarning):
    """Neighbor counts differ by more than the balance ratio."""


def thread_count() -> int:
    raw = os.environ.get("QNPE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@contextmanager
def at_step(step: int):
    """Attach a procedure step number to errors raised inside the block."""
    try:
        yield
    except QnpeError as exc:
        if not hasattr(exc, "step"):
            exc.step = step
        raise


# ---------------------------------------------------------------------------
# configuration, ledger, result
# ---------------------------------------------------------------------------

@dataclass
class QnpeConfig:
    r: float
    d: int = 2
    alpha: float | None = None
    eps: float = 0.01
    eps0: float | None = None
    eps1: float | None = None
    delta_prime: float | None = None
    delta: float = 1e-3
    tomography_delta: float = 0.03
    t_bits: dict = field(default_factory=dict)
    shots_constant: float = 3.0
    tier: str = "spectral"
    seed: int = 0
    weights_source: str = "quantum"

    def __post_init__(self):
        for name in ("r", "eps", "delta", "tomography_delta"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        for name in ("eps0", "eps1", "delta_prime"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ParameterError(f"{name} must be positive")
        if self.alpha is not None and self.alpha < 0:
            raise ParameterError("alpha must be non-negative")
        if int(self.d) < 1:
            raise ParameterError("d must be at least 1")
        if self.tier not in TIERS:
            raise ParameterError(f"tier must be one of {TIERS}")
        if self.weights_source not in ("quantum", "classical"):
            raise ParameterError("weights_source must be 'quantum' or 'classical'")
        if not 0 < self.delta < 0.5:
            raise ParameterError("delta must lie in (0, 1/2)")
        self.d = int(self.d)

    @property
    def neighbor_eps1(self) -> float:
        """Distance-write error for neighbor finding."""
        return self.eps1 if self.eps1 is not None else 0.1 * self.r * self.r

    def to_dict(self) -> dict:
        return asdict(self)


class QueryLedger:
    """Per-stage, per-component query counts."""

    def __init__(self):
        self.stages: dict = {}

    def add(self, stage: str, component: str, count: int) -> None:
        bucket = self.stages.setdefault(stage, {})
        bucket[component] = bucket.get(component, 0) + int(count)

    def stage_total(self, stage: str) -> int:
        return int(sum(self.stages.get(stage, {}).values()))

    @property
    def total(self) -> int:
        return int(sum(self.stage_total(s) for s in self.stages))

    def to_dict(self) -> dict:
        out = {s: dict(sorted(c.items())) for s, c in self.stages.items()}
        out["total"] = self.total
        return out


@dataclass
class NeighborReport:
    neighbors: NeighborSets
    K_estimate: float
    K_marked: int
    qae_bits: int
    iterations: int
    success_probability: float
    shots: int
    queries: dict
    ambiguous_pairs: list

    def to_dict(self) -> dict:
        return {
            "name": "find_neighbors_quantum",
            "K_estimate": self.K_estimate,
            "qae_bits": self.qae_bits,
            "iterations": self.iterations,
            "success_probability": self.success_probability,
            "shots": self.shots,
            "queries": dict(self.queries),
            "ambiguous_pairs": [list(p) for p in self.ambiguous_pairs],
        }


@dataclass
class RowResult:
    index: int
    support: tuple
    weights: np.ndarray
    kappa: float
    queries: int
    breakdown: dict
    attempts: int


@dataclass
class TransformationResult:
    sigma_list: list
    a_states: np.ndarray
    z_states: np.ndarray
    labels: list
    queries: dict
    threshold: float
    delta: float


@dataclass
class QnpeResult:
    config: QnpeConfig
    neighbors: NeighborSets
    K_estimate: float
    W_quantum: classical.WeightMatrix
    sigma_list: list
    a_states: np.ndarray
    query_ledger: QueryLedger
    error_report: dict
    classical_run: classical.ClassicalRun | None = None
    fingerprint: str | None = None
    diagnostics: dict = field(default_factory=dict)

    def states(self) -> dict:
        """Intermediate classical readouts: row weights, singular directions and reports."""
        return self.diagnostics

    def to_dict(self) -> dict:
        return {
            "schema": "qnpe_result.v1",
            "mode": "quantum",
            "config": self.config.to_dict(),
            "dataset_fingerprint": self.fingerprint,
            "K_estimate": float(self.K_estimate),
            "neighbor_sets": [list(q) for q in self.neighbors.sets],
            "W": [[float(v) for v in row] for row in self.W_quantum.entries],
            "sigma_list": [float(s) for s in self.sigma_list],
            "A": [[float(v) for v in row] for row in self.a_states],
            "query_ledger": self.query_ledger.to_dict(),
            "error_report": self.error_report,
        }


# ---------------------------------------------------------------------------
# neighbor finding
# ---------------------------------------------------------------------------

def count_bits(m: int) -> int:
    """Estimation bits for the marked-pair fraction: error below ``K/2`` for any ``K >= 1``."""
    return math.ceil(math.log2(4 * math.pi * m))


def amplification_rounds(a_hat: float, m: int) -> int:
    """``⌈(π/4)√(m²/K̂)⌉``, replaced by the nearest-optimal count when it would overshoot."""
    if a_hat >= 0.5:
        return 0
    theta = math.asin(math.sqrt(a_hat))
    t = math.ceil(math.pi / 4 * math.sqrt(1.0 / a_hat))
    if math.sin((2 * t + 1) * theta) ** 2 <= 0.5:
        t = max(0, round(math.pi / (4 * theta) - 0.5))
    return t


def predicted_success(a_hat: float, iterations: int) -> float:
    return math.sin((2 * iterations + 1) * math.asin(math.sqrt(min(1.0, a_hat)))) ** 2


def sample_count(K_hat: float, c: float = 3.0, p_hat: float = 1.0, delta: float = 1e-3) -> int:
    """``⌈c·K̂ ln K̂⌉``, raised to the coupon-collector count that misses some pair with probability ≤ ``δ``."""
    K = max(2.0, K_hat)
    base = math.ceil(c * K * math.log(K))
    per_pair = max(p_hat, 1e-12) / K
    return max(base, math.ceil(math.log(K / delta) / per_pair))


def find_neighbors_quantum(storeX: TreeStore, r: float, config: QnpeConfig) -> NeighborReport:
    """Marked-pair counting, amplification and repeated sampling of neighbor pairs."""
    m = storeX.m
    eps1 = config.neighbor_eps1
    seed = config.seed
    with at_step(1):
        if not r > 0:
            raise ParameterError("radius must be positive")
        oracle = distance_oracle(storeX, storeX, eps1, config.delta, seed=seed, stream_key=(0xA,))
        est = np.full((m, m), np.inf)
        for i in range(m):
            for j in range(m):
                if i != j:
                    est[i, j] = oracle.estimate(i, j)
        good = est <= r * r
        marked = int(good.sum())
        a = marked / (m * m)
        true_d2 = np.sum((storeX.matrix[:, None, :] - storeX.matrix[None, :, :]) ** 2, axis=2)
        ambiguous = [(int(i), int(j)) for i, j in np.argwhere(np.abs(true_d2 - r * r) <= eps1) if i != j]

        t = config.t_bits.get("count", count_bits(m))
        reps = boost_repetitions(0.01)
        rng = branch_rng(seed, 0xA1)
        circuit = config.tier == "circuit" and m <= CIRCUIT_MAX_POINTS
        if circuit:
            q = max(1, math.ceil(math.log2(m)))
            amps = np.zeros((1 << q, 1 << q))
            amps[:m, :m] = 1.0 / m
            prep = SimState.from_amplitudes((("i", q), ("j", q)), amps.reshape(-1))
            mask = np.zeros((1 << q, 1 << q), dtype=bool)
            mask[:m, :m] = good
            mask = mask.reshape(-1)
            vals = sorted(amplitude_estimation(prep, mask, t, tier="circuit", rng=rng).point_estimate
                          for _ in range(reps))
        else:
            vals = sorted(estimate_probability(a, t, rng)[0] for _ in range(reps))
        a_hat = vals[reps // 2]
        K_hat = a_hat * m * m
        if K_hat <= 0:
            raise NoNeighborsError(f"estimated number of neighbor pairs is 0 at r = {r}", r=r)

    with at_step(2):
        iters = config.t_bits.get("amplify", amplification_rounds(a_hat, m))
        if circuit:
            amplified, p = amplitude_amplify(prep, mask, iters, tier="circuit")
            probs = amplified.probabilities(["i", "j"]).reshape(1 << q, 1 << q)[:m, :m].reshape(-1)
        else:
            p = grover_probability(a, iters)
            flat = good.reshape(-1)
            probs = np.where(flat, p / max(marked, 1), (1 - p) / max(m * m - marked, 1))
        # a = 1/2 is a fixed point of the Grover iteration, so exactly 1/2 is accepted
        if p < 0.5 - 1e-12:
            raise PrecisionError(f"amplified success probability {p:.3f} is below 1/2; raise the counting bits",
                                 probability=p, iterations=iters)

    with at_step(3):
        shots = sample_count(K_hat, config.shots_constant, predicted_success(a_hat, iters), config.delta)
        counts = branch_rng(seed, 0xA2).multinomial(shots, probs / probs.sum())
        hit = (counts.reshape(m, m) > 0) & good
        sets = tuple(tuple(np.flatnonzero(hit[i]).tolist()) for i in range(m))
        Q = NeighborSets(sets, radius=float(r))

    dist_cost = max(oracle.queries(i, j) for i in range(m) for j in range(m) if i != j) if m > 1 else 0
    grover = 2 * dist_cost + 1
    queries = {
        "count_estimation": reps * ((1 << t) - 1) * grover,
        "sampling": shots * (iters * grover + dist_cost),
    }
    all_pairs = [(i, j) for i in range(m) for j in range(m) if i != j]
    oracle.charge(all_pairs, 2 * (reps * ((1 << t) - 1) + shots * iters) + shots)
    return NeighborReport(Q, float(K_hat), marked, t, iters, float(p), shots, queries, ambiguous)


def balance_ratio(Q: NeighborSets) -> float:
    c = Q.counts
    c = c[c > 0]
    return float(c.max() / c.min()) if c.size else float("inf")


# ---------------------------------------------------------------------------
# weight rows
# ---------------------------------------------------------------------------

def global_min_distance(X: np.ndarray) -> float:
    d2 = np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    return float(math.sqrt(d2.min()))


def spectrum_condition(rho: np.ndarray, floor: float) -> float:
    lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    top = lam[-1]
    kept = lam[lam > floor * top]
    return float(top / kept[0])


def weight_row_quantum(storeX: TreeStore, storeB: TreeStore, i: int, config: QnpeConfig,
                       eps0: float | None = None) -> RowResult:
    """Purify ``ρ_C``, invert it on ``|B_i⟩``, read the result out and renormalize."""
    eps = config.eps
    eps0 = eps0 if eps0 is not None else (config.eps0 or global_min_distance(storeX.matrix))
    seed = config.seed
    support = tuple(int(j) for j in np.flatnonzero(storeB.matrix[i]))
    with at_step(5):
        state, prep = purification_prep(storeX, storeB, i, eps, r=config.r, eps0=eps0, seed=seed,
                                        tier="spectral" if config.tier == "spectral" else "circuit")
    with at_step(6):
        be = block_encoding_from_purification(state, "j", support=support)
        rho = be.block()[: len(support), : len(support)]
        k = len(support)
        kappa_i = spectrum_condition(rho, SPECTRUM_FLOOR_FACTOR * eps * eps)
        kappa = max(2.0, k * kappa_i)
        b = np.zeros(be.dim)
        b[:k] = 1.0 / math.sqrt(k)
        inv_tier = "circuit" if config.tier == "circuit" and be.dim <= 4 else "spectral"
        w_state, inv = invert_block_encoded(be, b, kappa, eps, tier=inv_tier, pseudo=True,
                                            cost_U=2 * prep.queries, cost_b=1)
        # 1 orthogonal to the range of C means C⁺1 = 0: what survives inversion is purification noise
        if 1.0 - inv.dropped_weight ** 2 <= eps * eps:
            raise DegenerateRowError(f"row {i}: neighbor-count vector lies outside the correlation range",
                                     index=int(i), dropped_weight=inv.dropped_weight)
    with at_step(7):
        est = None
        for attempt in range(TOMOGRAPHY_RETRIES):
            rng = branch_rng(seed, 0x70, i, attempt)
            x, tom = tomography(w_state, be.dim, config.tomography_delta, tier=config.tier, rng=rng,
                                imag_tol=IMAG_FRACTION * config.tomography_delta)
            total = float(x[:k].sum())
            if abs(total) >= MIN_WEIGHT_SUM:
                est = x[:k] / total
                break
        if est is None:
            raise TomographyError(f"row {i}: tomography weights sum to ~0 after {TOMOGRAPHY_RETRIES} attempts",
                                  index=int(i))
    row_inv = inversion_queries(kappa, eps, 1.0, 2 * prep.queries, be.ancilla_qubits, 1)
    queries = (attempt + 1) * tom.samples * row_inv
    storeB.charge("row-state", (attempt + 1) * tom.samples)
    breakdown = {
        "purification": int(prep.queries),
        "inversion_per_copy": int(row_inv),
        "tomography_copies": int((attempt + 1) * tom.samples),
    }
    return RowResult(int(i), support, est, float(kappa), int(queries), breakdown, attempt + 1)


def weight_matrix_quantum(storeX: TreeStore, storeB: TreeStore, config: QnpeConfig,
                          neighbors: NeighborSets | None = None) -> tuple[classical.WeightMatrix, list]:
    """All weight rows, assembled with the classical invariants checked."""
    m = storeX.m
    if neighbors is None:
        neighbors = NeighborSets(tuple(tuple(np.flatnonzero(storeB.matrix[i]).tolist()) for i in range(m)),
                                 radius=config.r)
    eps0 = config.eps0 or global_min_distance(storeX.matrix)

    def row(i):
        try:
            return weight_row_quantum(storeX, storeB, i, config, eps0)
        except QnpeError as exc:
            exc.details.setdefault("row", int(i))
            raise

    workers = thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(row, range(m)))
    else:
        rows = [row(i) for i in range(m)]
    W = classical.weights_from_rows(storeX.matrix, neighbors, [r.weights for r in rows])
    W.check()
    return W, rows


# ---------------------------------------------------------------------------
# transformation
# ---------------------------------------------------------------------------

def transformation_quantum(storeD: TreeStore, storeX: TreeStore, config: QnpeConfig,
                           alpha: float | None = None) -> TransformationResult:
    """Smallest nonzero singular directions of ``D = I − W`` and their ridge images."""
    m = storeD.m
    F = storeD.frobenius_norm
    sigma_eps = config.eps / 2
    eps2 = config.eps / 2
    delta = sigma_eps / F
    if "qsve" in config.t_bits:
        delta = 2.0 ** -(config.t_bits["qsve"] - 2)
    alpha = classical.default_alpha(storeX.matrix) if alpha is None else alpha
    with at_step(8):
        if config.tier == "circuit":
            paired = paired_uniform_state(storeD.row_count, m)
            out, rep = qsve(storeD, paired, delta, tier="circuit")
            labeled = StateLabels(out, "sv", "vec", rep.t_bits, F, cost=rep.queries)
        else:
            labeled = qsve_spectrum(storeD, delta, count=m)
    v = 3.0 * delta * F
    sigmas, dirs, labels = [], [], []
    min_queries = 0
    with at_step(9):
        while len(dirs) < config.d:
            try:
                res = find_minimum(labeled, v, labels, seed=config.seed, stream_key=(0xC,))
            except ExhaustedError as exc:
                raise ParameterError(f"only {len(dirs)} nonzero singular values above v = {v:.3e}; d = {config.d}",
                                     found=len(dirs)) from exc
            labels.append(res.label)
            min_queries += res.queries
            for direction in res.directions:
                sigmas.append(res.sigma)
                dirs.append(np.real_if_close(direction)[:m])
    a_cols = []
    ridge_queries = 0
    with at_step(10):
        for z in dirs:
            a, rr = ridge_regress_quantum(storeX, z, alpha, eps2=eps2, t_bits=config.t_bits.get("epe"),
                                          tier="circuit" if config.tier == "circuit" and storeX.row_count * 2 <= 16
                                          else "spectral")
            ridge_queries += rr.queries
            a_cols.append(a)
    storeD.charge("row-state", min_queries // 2)
    storeD.charge("norm-state", min_queries - min_queries // 2)
    queries = {"qsve_min_finding": int(min_queries), "ridge": int(ridge_queries)}
    return TransformationResult(sigmas, np.column_stack(a_cols), np.column_stack(dirs), labels, queries, v, delta)


# ---------------------------------------------------------------------------
# full run
# ---------------------------------------------------------------------------

def run_quantum_npe(X, config: QnpeConfig, compare: bool = True, neighbors: NeighborSets | None = None
                    ) -> QnpeResult:
    """Steps 1–10 in order; failures surface as :class:`StepError` with the step number."""
    from .store import DataMatrix

    fingerprint = X.fingerprint() if isinstance(X, DataMatrix) else None
    A = np.asarray(X.entries if isinstance(X, DataMatrix) else X, dtype=np.float64)
    ledger = QueryLedger()
    errors: dict = {}
    diag: dict = {}
    try:
        storeX = build_store(A, "X-store")
        if neighbors is None:
            nrep = find_neighbors_quantum(storeX, config.r, config)
            Q = nrep.neighbors
            K_hat = nrep.K_estimate
            for k, v in nrep.queries.items():
                ledger.add("neighbors", k, v)
            errors["neighbors"] = {"ambiguous_pairs": len(nrep.ambiguous_pairs),
                                   "success_probability": nrep.success_probability}
            diag["neighbor_search"] = nrep.to_dict()
        else:
            Q = neighbors
            K_hat = float(Q.K)
        if Q.isolated:
            with at_step(3):
                raise NoNeighborsError(f"points without neighbors: {Q.isolated}", isolated=Q.isolated)
        ratio = balance_ratio(Q)
        if ratio > BALANCE_WARN_RATIO:
            warnings.warn(f"neighbor counts are unbalanced (max/min = {ratio:.2f})", ImbalanceWarning, stacklevel=2)
        errors.setdefault("neighbors", {})["balance_ratio"] = ratio

        with at_step(4):
            storeB = build_store(Q.indicator(), "B-store")

        if config.weights_source == "classical":
            W = classical.assemble_weight_matrix(A, Q, mode="pinv")
            rows = []
        else:
            W, rows = weight_matrix_quantum(storeX, storeB, config, Q)
            for r in rows:
                ledger.add("weights", "rows", r.queries)
            diag["weight_rows"] = [
                {"index": r.index, "support": list(r.support), "weights": [float(v) for v in r.weights],
                 "kappa": r.kappa, "attempts": r.attempts, "queries": dict(r.breakdown)} for r in rows]

        with at_step(8):
            storeD = build_store(np.eye(A.shape[0]) - W.entries, "D-store", neighbors=Q)
        alpha = classical.default_alpha(A) if config.alpha is None else config.alpha
        tr = transformation_quantum(storeD, storeX, config, alpha)
        for k, v in tr.queries.items():
            ledger.add("embedding", k, v)
        diag["singular_directions"] = {"labels": [int(y) for y in tr.labels],
                                       "sigma": [float(v) for v in tr.sigma_list],
                                       "z": [[float(v) for v in col] for col in tr.z_states.T]}
    except QnpeError as exc:
        if isinstance(exc, StepError):
            raise
        raise StepError(getattr(exc, "step", 0), exc) from exc

    run = None
    if compare:
        run = _compare(A, config, Q, W, tr, errors, alpha, rows)
    errors["embedding"] = dict(errors.get("embedding", {}), threshold=tr.threshold, qsve_delta=tr.delta)
    return QnpeResult(config, Q, K_hat, W, tr.sigma_list, tr.a_states, ledger, errors, run, fingerprint, diag)


def _compare(A, config, Q, W, tr, errors, alpha, rows):
    from .classical import radius_neighbors

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        Qc = radius_neighbors(A, config.r)
    errors["neighbors"]["K_true"] = Qc.K
    errors["neighbors"]["jaccard_min"] = min(neighbor_jaccard(Qc, Q))
    Wc = classical.assemble_weight_matrix(A, Q, mode="pinv")
    errors["weights"] = {"bound": config.tomography_delta, "max_row_error": max_row_error(W.entries, Wc.entries)}
    try:
        spectral = classical.spectral_problem(W, config.d)
        cols = [classical.ridge_regress(A, spectral.vectors[:, c], alpha) for c in range(config.d)]
        Ac = np.column_stack(cols)
        sig = spectral.sigma[spectral.sigma > classical.RANK_RTOL * max(spectral.sigma[-1], 1e-300)]
        errors["embedding"] = {
            "principal_angles_deg": principal_angles_deg(Ac, tr.a_states).tolist(),
            "sigma_deviation": sigma_deviation(sig[: len(tr.sigma_list)], tr.sigma_list),
            "sigma_bound": tr.delta * float(np.linalg.norm(np.eye(A.shape[0]) - W.entries)),
        }
        return classical.ClassicalRun(classical.EmbeddingResult(Ac, alpha, classical.condition_number(A)), Q, Wc,
                                      spectral, {}, {}, {"r": config.r, "d": config.d, "alpha": alpha})
    except QnpeError as exc:
        errors["embedding"] = {"comparison_error": exc.code}
        return None
