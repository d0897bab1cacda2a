"""Amplitude estimation, amplitude amplification and fixed-point search.

All routines take a prepared state ``|s⟩ = prep|0⟩`` together with a *good*
predicate, given either as a :class:`~qnpe.sim.PhaseOracle` or as a boolean
mask over the computational basis.  Two tiers are available:

``circuit``   explicit statevector iteration of the Grover-type operators.
``spectral``  closed-form evolution inside the two-dimensional invariant
              subspace spanned by the good and bad components of ``|s⟩``, and the
              analytic outcome law of phase estimation.

Both tiers draw measurement outcomes through :func:`draw_index`, so with the
same seed and equal outcome laws they return the same sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BranchError, NoOverlapError, ParameterError
from .sim import PhaseOracle, SimState

TIERS = ("circuit", "spectral")
QAE_WINDOW = 64
FULL_LAW_MAX_BITS = 16


def check_tier(tier: str) -> str:
    if tier not in TIERS:
        raise ParameterError(f"tier must be one of {TIERS}, got {tier!r}")
    return tier


def branch_rng(seed, *keys) -> np.random.Generator:
    """Independent generator for one branch, derived from the master seed."""
    base = 0 if seed is None else int(seed)
    return np.random.default_rng([base, *[int(k) & 0xFFFFFFFF for k in keys]])


def draw_index(cdf: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), cdf.size - 1))


def good_mask_of(state: SimState, good) -> np.ndarray:
    if isinstance(good, PhaseOracle):
        return good.signs(state) < 0
    mask = np.asarray(good, dtype=bool).reshape(-1)
    if mask.size != state.amplitudes.size:
        raise ParameterError("good mask does not match the state dimension")
    return mask


def _as_state(prep) -> SimState:
    if isinstance(prep, SimState):
        return prep
    return SimState.from_amplitudes((("q", int(np.log2(len(prep)))),), prep)


def good_probability(prep, good) -> float:
    state = _as_state(prep)
    mask = good_mask_of(state, good)
    amps = state.amplitudes
    return float(np.vdot(amps[mask], amps[mask]).real)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class EstimateReport:
    name: str
    point_estimate: float
    grid_bits: int
    confidence: float
    queries: int
    error_bound: float
    y: int | None = None
    params: dict = field(default_factory=dict)
    measured_error: float | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "params": dict(self.params),
            "queries": int(self.queries),
            "error_bound": float(self.error_bound),
            "measured_error": None if self.measured_error is None else float(self.measured_error),
            "point_estimate": float(self.point_estimate),
            "grid_bits": int(self.grid_bits),
            "confidence": float(self.confidence),
        }


def qae_error_bound(a: float, t_bits: int) -> float:
    N = float(1 << t_bits)
    a = min(max(a, 0.0), 1.0)
    return 2 * math.pi * math.sqrt(a * (1 - a)) / N + math.pi ** 2 / N ** 2


def boost_repetitions(delta: float) -> int:
    """Odd repetition count whose median estimate fails with probability <= delta."""
    if not 0 < delta < 1:
        raise ParameterError(f"failure probability must lie in (0, 1), got {delta}")
    return 2 * math.ceil(math.log(1.0 / delta)) + 1


# ---------------------------------------------------------------------------
# phase-estimation outcome law
# ---------------------------------------------------------------------------

def fejer(offset: np.ndarray, N: int) -> np.ndarray:
    """Outcome weight of phase estimation at ``offset`` grid cells from the true phase."""
    offset = np.asarray(offset, dtype=np.float64)
    num = np.sin(np.pi * offset)
    den = N * np.sin(np.pi * offset / N)
    out = np.empty_like(offset)
    tiny = np.abs(den) < 1e-300
    frac = np.abs(offset - N * np.round(offset / N))
    exact = frac < 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        out[:] = (num / den) ** 2
    out[exact | tiny] = np.where(frac[exact | tiny] < 1e-12, 1.0, 0.0)
    return out


def qae_outcome_law(a: float, t_bits: int) -> np.ndarray:
    """Exact probabilities of every register value ``y`` for amplitude ``a``."""
    N = 1 << t_bits
    theta = math.asin(math.sqrt(min(max(a, 0.0), 1.0)))
    y = np.arange(N, dtype=np.float64)
    c = N * theta / math.pi
    p = 0.5 * (fejer(y - c, N) + fejer(y + c, N))
    return p / p.sum()


@dataclass
class OutcomeLaw:
    """Outcome law of a t-bit register, exact near its peaks."""

    N: int
    support: np.ndarray
    probs: np.ndarray
    tail: float

    def sample(self, rng: np.random.Generator) -> int:
        cdf = np.cumsum(self.probs)
        if self.tail <= 0 or self.support.size == self.N:
            return int(self.support[draw_index(cdf, rng)])
        u = rng.random()
        if u < cdf[-1]:
            return int(self.support[min(np.searchsorted(cdf, u, side="right"), cdf.size - 1)])
        # tail mass: spread uniformly over the values outside the windows
        excluded = np.sort(self.support)
        k = int(rng.integers(0, self.N - excluded.size))
        for v in excluded:
            if k >= v:
                k += 1
            else:
                break
        return k


def qae_law(a: float, t_bits: int, window: int = QAE_WINDOW) -> OutcomeLaw:
    N = 1 << t_bits
    if t_bits <= FULL_LAW_MAX_BITS:
        p = qae_outcome_law(a, t_bits)
        return OutcomeLaw(N, np.arange(N), p, 0.0)
    theta = math.asin(math.sqrt(min(max(a, 0.0), 1.0)))
    c = N * theta / math.pi
    centers = [int(math.floor(c)), int(math.floor(N - c))]
    pts = set()
    for ctr in centers:
        for off in range(-window, window + 1):
            pts.add((ctr + off) % N)
    support = np.array(sorted(pts), dtype=np.int64)
    y = support.astype(np.float64)
    p = 0.5 * (fejer(y - c, N) + fejer(y + c, N))
    p = np.minimum(p, 1.0)
    mass = float(p.sum())
    if mass > 1.0:
        p = p / mass
        mass = 1.0
    return OutcomeLaw(N, support, p, max(0.0, 1.0 - mass))


# ---------------------------------------------------------------------------
# Grover operator
# ---------------------------------------------------------------------------

def grover_step(vec: np.ndarray, s: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """``(2|s⟩⟨s| − I) O`` with ``O`` flipping the good components."""
    w = np.where(mask, -vec, vec)
    return 2.0 * s * np.vdot(s, w) - w


def _qae_circuit_law(state: SimState, mask: np.ndarray, t_bits: int) -> np.ndarray:
    N = 1 << t_bits
    s = state.amplitudes
    powers = np.empty((N, s.size), dtype=np.complex128)
    v = s.copy()
    for y in range(N):
        powers[y] = v
        v = grover_step(v, s, mask)
    # inverse QFT on the control register of (1/√N) Σ_y |y⟩ G^y|s⟩
    out = np.fft.fft(powers, axis=0) / N
    p = np.einsum("ij,ij->i", out.conj(), out).real
    return p / p.sum()


def amplitude_estimation(prep, good, t_bits: int, seed=None, tier: str = "spectral",
                         rng: np.random.Generator | None = None) -> EstimateReport:
    """One run of amplitude estimation: returns ``sin²(π y / 2^t)``."""
    check_tier(tier)
    if t_bits < 1:
        raise ParameterError(f"t_bits must be at least 1, got {t_bits}")
    state = _as_state(prep)
    mask = good_mask_of(state, good)
    rng = rng if rng is not None else np.random.default_rng(seed)
    a = good_probability(state, mask)
    N = 1 << t_bits
    if tier == "circuit":
        law = OutcomeLaw(N, np.arange(N), _qae_circuit_law(state, mask, t_bits), 0.0)
    else:
        law = qae_law(a, t_bits)
    y = law.sample(rng)
    est = math.sin(math.pi * y / N) ** 2
    return EstimateReport(
        name="amplitude_estimation",
        point_estimate=est,
        grid_bits=t_bits,
        confidence=8 / math.pi ** 2,
        queries=N - 1,
        error_bound=qae_error_bound(est, t_bits),
        y=int(y),
        params={"t_bits": t_bits, "tier": tier},
        measured_error=abs(est - a),
    )


def estimate_probability(a: float, t_bits: int, rng: np.random.Generator) -> tuple[float, int]:
    """Sample one amplitude-estimation outcome for a known good probability ``a``."""
    N = 1 << t_bits
    y = qae_law(a, t_bits).sample(rng)
    return math.sin(math.pi * y / N) ** 2, int(y)


def boosted_estimate(a: float, t_bits: int, delta: float, rng: np.random.Generator) -> tuple[float, int]:
    """Median of ``2⌈ln(1/δ)⌉ + 1`` estimates; returns (estimate, Grover applications)."""
    reps = boost_repetitions(delta)
    vals = sorted(estimate_probability(a, t_bits, rng)[0] for _ in range(reps))
    return vals[reps // 2], reps * ((1 << t_bits) - 1)


def boosted_amplitude_estimation(prep, good, t_bits: int, delta: float, seed=None,
                                 tier: str = "spectral") -> EstimateReport:
    rng = np.random.default_rng(seed)
    reps = boost_repetitions(delta)
    runs = [amplitude_estimation(prep, good, t_bits, tier=tier, rng=rng) for _ in range(reps)]
    runs.sort(key=lambda r: r.point_estimate)
    med = runs[reps // 2]
    a = good_probability(_as_state(prep), good_mask_of(_as_state(prep), good))
    return EstimateReport(
        name="boosted_amplitude_estimation",
        point_estimate=med.point_estimate,
        grid_bits=t_bits,
        confidence=1 - delta,
        queries=sum(r.queries for r in runs),
        error_bound=med.error_bound,
        y=med.y,
        params={"t_bits": t_bits, "delta": delta, "repetitions": reps, "tier": tier},
        measured_error=abs(med.point_estimate - a),
    )


# ---------------------------------------------------------------------------
# amplitude amplification
# ---------------------------------------------------------------------------

def _split(state: SimState, mask: np.ndarray):
    s = state.amplitudes
    g = np.where(mask, s, 0)
    b = np.where(mask, 0, s)
    ng, nb = np.linalg.norm(g), np.linalg.norm(b)
    return g, b, float(ng), float(nb)


def amplitude_amplify(prep, good, iterations: int, tier: str = "spectral") -> tuple[SimState, float]:
    """``G^t |s⟩`` and its good-subspace probability."""
    check_tier(tier)
    if iterations < 0:
        raise ParameterError("iterations must be non-negative")
    state = _as_state(prep)
    mask = good_mask_of(state, good)
    if tier == "circuit":
        v = state.amplitudes.copy()
        for _ in range(iterations):
            v = grover_step(v, state.amplitudes, mask)
        v = v / np.linalg.norm(v)
    else:
        g, b, ng, nb = _split(state, mask)
        theta = math.asin(min(1.0, ng))
        ang = (2 * iterations + 1) * theta
        v = np.zeros_like(state.amplitudes)
        if ng > 0:
            v = v + math.sin(ang) * g / ng
        if nb > 0:
            v = v + math.cos(ang) * b / nb
        v = v / np.linalg.norm(v)
    out = SimState(state.layout, v, state.seed)
    p = float(np.vdot(v[mask], v[mask]).real)
    return out, p


def grover_probability(a: float, iterations: int) -> float:
    theta = math.asin(math.sqrt(min(max(a, 0.0), 1.0)))
    return math.sin((2 * iterations + 1) * theta) ** 2


# ---------------------------------------------------------------------------
# fixed-point search
# ---------------------------------------------------------------------------

def chebyshev_t(L: float, x):
    """First-kind Chebyshev ``T_L(x)`` for real order, valid on all of ℝ."""
    x = np.asarray(x, dtype=np.complex128)
    return np.real(np.cosh(L * np.arccosh(x)))


@dataclass(frozen=True)
class FixedPointSchedule:
    """Phase schedule for fixed-point search.

    ``L`` is the odd effective length ``2l + 1`` actually realized by the ``l``
    phase pairs; ``requested_L`` keeps the budget that was asked for.
    """

    requested_L: int
    L: int
    delta_prime: float
    gamma_inv: float
    alphas: tuple
    betas: tuple

    @property
    def l(self) -> int:
        return len(self.alphas)

    @property
    def gamma(self) -> float:
        return 1.0 / self.gamma_inv

    def design_overlap(self) -> float:
        """Smallest ``|sin ψ|`` for which the ``1 − δ′²`` bound is guaranteed."""
        return math.sqrt(max(0.0, 1.0 - self.gamma ** 2))


def schedule_for(L: int, delta_prime: float) -> FixedPointSchedule:
    if L < 1:
        raise ParameterError(f"iteration budget must be positive, got {L}")
    if not 0 < delta_prime < 1:
        raise ParameterError(f"delta_prime must lie in (0, 1), got {delta_prime}")
    l = math.ceil((L - 1) / 2)
    L_eff = 2 * l + 1
    gamma_inv = math.cosh(math.acosh(1.0 / delta_prime) / L_eff)
    gamma = 1.0 / gamma_inv
    root = math.sqrt(max(0.0, 1.0 - gamma * gamma))
    alphas = tuple(2.0 * math.atan2(1.0, math.tan(2 * math.pi * k / L_eff) * root) for k in range(1, l + 1))
    betas = tuple(-alphas[l - k] for k in range(1, l + 1))
    return FixedPointSchedule(int(L), L_eff, float(delta_prime), gamma_inv, alphas, betas)


def required_iterations(sin_psi: float, delta_prime: float) -> int:
    """Even budget ``2⌈log₂(2/δ′)/|sin ψ|⌉`` used for a branch with overlap ``sin ψ``."""
    if sin_psi <= 0:
        raise ParameterError("overlap must be positive")
    return 2 * math.ceil(math.log2(2.0 / delta_prime) / abs(sin_psi))


def fixed_point_coefficients(lam: float, schedule: FixedPointSchedule) -> tuple[complex, complex]:
    """Target and non-target coefficients after the schedule, for ``|⟨T|s⟩|² = lam``."""
    st = math.sqrt(min(max(lam, 0.0), 1.0))
    sb = math.sqrt(max(0.0, 1.0 - lam))
    s = np.array([st, sb], dtype=np.complex128)
    v = s.copy()
    for a, b in zip(schedule.alphas, schedule.betas):
        v = np.array([np.exp(1j * b) * v[0], v[1]])
        v = v - (1 - np.exp(-1j * a)) * s * np.vdot(s, v)
        v = -v
    return complex(v[0]), complex(v[1])


def fixed_point_phase(lam: float, schedule: FixedPointSchedule) -> float:
    return float(np.angle(fixed_point_coefficients(lam, schedule)[0]))


def fixed_point_search(prep, good, schedule: FixedPointSchedule, tier: str = "spectral") -> SimState:
    """Apply ``G(α_l, β_l) ⋯ G(α_1, β_1)`` to ``|s⟩``."""
    check_tier(tier)
    state = _as_state(prep)
    mask = good_mask_of(state, good)
    g, b, ng, nb = _split(state, mask)
    if ng <= 0.0:
        raise NoOverlapError("prepared state has no overlap with the good subspace")
    if tier == "circuit":
        s = state.amplitudes
        v = s.copy()
        for a, bb in zip(schedule.alphas, schedule.betas):
            v = np.where(mask, np.exp(1j * bb) * v, v)
            v = v - (1 - np.exp(-1j * a)) * s * np.vdot(s, v)
            v = -v
    else:
        ct, cb = fixed_point_coefficients(ng * ng, schedule)
        v = ct * g / ng
        if nb > 0:
            v = v + cb * b / nb
    v = v / np.linalg.norm(v)
    return SimState(state.layout, v, state.seed)


def good_fidelity(out: SimState, prep, good) -> float:
    """``|⟨good|out⟩|²`` with ``|good⟩`` the normalized good part of ``prep``."""
    state = _as_state(prep)
    mask = good_mask_of(state, good)
    g, _, ng, _ = _split(state, mask)
    return float(abs(np.vdot(g / ng, out.amplitudes)) ** 2)


def fixed_point_queries(schedule: FixedPointSchedule) -> int:
    """Calls to prep or its inverse: one to start plus two per phase pair."""
    return 1 + 2 * schedule.l


# ---------------------------------------------------------------------------
# branch-parallel amplification
# ---------------------------------------------------------------------------

@dataclass
class BranchPlan:
    index: tuple
    weight: float
    overlap: float
    overlap_estimate: float
    budget: int
    schedule: FixedPointSchedule
    phase_hint: float | None = None
    correction: float = 0.0
    fidelity: float = float("nan")


@dataclass
class ParallelReport:
    branches: list
    qae_bits: int
    qae_queries: int
    search_queries: int
    delta_prime: float

    @property
    def queries(self) -> int:
        return self.qae_queries + self.search_queries

    def to_dict(self) -> dict:
        return {
            "name": "parallel_amplitude_handling",
            "params": {"delta_prime": self.delta_prime, "qae_bits": self.qae_bits},
            "queries": int(self.queries),
            "error_bound": self.delta_prime ** 2,
            "measured_error": max((1 - b.fidelity for b in self.branches), default=0.0),
        }


def overlap_qae_bits(min_overlap: float) -> int:
    """Bits that keep the overlap estimate within half of a true overlap >= ``min_overlap``."""
    return max(2, math.ceil(math.log2(4 * math.pi / min_overlap)))


def branch_budget(overlap_estimate: float, delta_prime: float, index=()) -> int:
    if overlap_estimate <= 0:
        raise BranchError(f"branch {tuple(index)} has a zero overlap estimate", branch=list(index))
    return required_iterations(overlap_estimate, delta_prime)


def parallel_amplitude_handling(index_layout, branches, local_layout, good_local, delta_prime: float,
                                min_overlap: float, seed=None, tier: str = "spectral",
                                qae_delta: float = 0.01, phase_hints=None,
                                stream_key: tuple = ()) -> tuple[SimState, ParallelReport]:
    """Amplify every branch's local state toward its good subspace in superposition.

    ``branches`` maps index tuples (values of the index registers) to pairs
    ``(weight, local_state)`` where ``weight`` is ``p_b`` and ``local_state`` is
    the normalized local preparation.  Per branch the overlap is estimated by
    boosted amplitude estimation, the budget ``L_b`` is derived from the
    estimate and the fixed-point schedule for ``L_b`` is applied.

    When ``phase_hints`` supplies an overlap value per branch, the phase that
    the schedule is predicted to leave on the good component is undone, so the
    branches stay mutually coherent.
    """
    check_tier(tier)
    good_local = np.asarray(good_local, dtype=bool)
    t_bits = overlap_qae_bits(min_overlap)
    plans = []
    local_outs = {}
    qae_cost = 0
    search_cost = 0
    for key in sorted(branches):
        weight, local = branches[key]
        local = np.asarray(local, dtype=np.complex128)
        lam = float(np.vdot(local[good_local], local[good_local]).real)
        rng = branch_rng(seed, *stream_key, *key)
        est, cost = boosted_estimate(lam, t_bits, qae_delta, rng)
        qae_cost = max(qae_cost, cost)
        s_hat = math.sqrt(est)
        budget = branch_budget(s_hat, delta_prime, key)
        sched = schedule_for(budget, delta_prime)
        search_cost = max(search_cost, fixed_point_queries(sched))
        prep_state = SimState(local_layout, local)
        out = fixed_point_search(prep_state, good_local, sched, tier=tier)
        vec = out.amplitudes
        hint = None if phase_hints is None else phase_hints.get(key)
        corr = 0.0
        if hint is not None:
            corr = fixed_point_phase(hint, sched)
            vec = vec * np.exp(-1j * corr)
        g = np.where(good_local, local, 0)
        fid = float(abs(np.vdot(g / np.linalg.norm(g), vec)) ** 2) if lam > 0 else 0.0
        plans.append(BranchPlan(tuple(key), float(weight), math.sqrt(lam), s_hat, budget, sched, hint, corr, fid))
        local_outs[key] = vec

    dims = [1 << q for _, q in index_layout]
    dl = 1 << sum(q for _, q in local_layout)
    full = np.zeros(dims + [dl], dtype=np.complex128)
    for key, vec in local_outs.items():
        w = branches[key][0]
        full[tuple(key)] = math.sqrt(w) * vec
    layout = tuple(index_layout) + tuple(local_layout)
    state = SimState.from_amplitudes(layout, full.reshape(-1), seed, normalize=True)
    return state, ParallelReport(plans, t_bits, qae_cost, search_cost, delta_prime)
