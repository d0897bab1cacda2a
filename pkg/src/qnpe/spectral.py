"""Singular value estimation, minimum finding and ridge regression via the extended matrix."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import EmbeddingError, ExhaustedError, ParameterError, PrecisionError
from .estimation import branch_rng, check_tier, draw_index, grover_probability
from .linalg import qpe_forward, qpe_inverse
from .sim import SimState
from .store import TreeStore, next_pow2

DH_LAMBDA = 6 / 5
MIN_FIND_REPEATS = 7
CIRCUIT_MAX_AMPS = 1 << 22
EMBED_TOL = 1e-8


def _matrix_of(store) -> np.ndarray:
    return store.matrix if isinstance(store, TreeStore) else np.asarray(store, dtype=np.float64)


# ---------------------------------------------------------------------------
# QSVE
# ---------------------------------------------------------------------------

def qsve_bits(delta: float) -> int:
    if not delta > 0:
        raise ParameterError(f"delta must be positive, got {delta}")
    return max(1, math.ceil(math.log2(1.0 / delta))) + 2


def qsve_labels(sigma: np.ndarray, fro: float, t_bits: int) -> np.ndarray:
    """Nearest ``y`` with ``fro·cos(πy/2^t)`` closest in angle to ``sigma``; ``y ∈ [0, 2^{t-1}]``."""
    T = 1 << t_bits
    if fro == 0:
        return np.full(np.shape(sigma), T // 2, dtype=np.int64)
    theta = 2.0 * np.arccos(np.clip(np.asarray(sigma) / fro, 0.0, 1.0))
    return np.rint(theta * T / (2 * math.pi)).astype(np.int64)


def qsve_decode(y, fro: float, t_bits: int):
    T = 1 << t_bits
    val = fro * np.abs(np.cos(np.pi * np.asarray(y, dtype=np.float64) / T))
    return np.where(np.asarray(y) == T // 2, 0.0, val)


def qsve_queries(t_bits: int) -> int:
    """Controlled walk steps forward and back, two store calls each."""
    return 4 * ((1 << t_bits) - 1)


def _padded(D: np.ndarray) -> np.ndarray:
    M, N = next_pow2(D.shape[0]), next_pow2(D.shape[1])
    out = np.zeros((M, N))
    out[: D.shape[0], : D.shape[1]] = D
    return out


def _walk_operator(D: np.ndarray):
    """``W = (2PP†−I)(2QQ†−I)`` with ``P``, ``Q`` the row-state and norm-state isometries."""
    M, N = D.shape
    fro = float(np.linalg.norm(D))
    norms = np.linalg.norm(D, axis=1)
    P = np.zeros((M * N, M))
    Qm = np.zeros((M * N, N))
    for i in range(M):
        row = D[i] / norms[i] if norms[i] > 0 else np.eye(N)[0]
        P[i * N:(i + 1) * N, i] = row
        Qm[i * N + np.arange(N), np.arange(N)] = norms[i] / fro
    I = np.eye(M * N)
    return (2 * P @ P.T - I) @ (2 * Qm @ Qm.T - I), Qm


@dataclass
class QsveReport:
    t_bits: int
    delta: float
    frobenius: float
    queries: int
    leakage: float
    tier: str

    def to_dict(self) -> dict:
        return {
            "name": "qsve",
            "params": {"delta": self.delta, "t_bits": self.t_bits, "tier": self.tier},
            "queries": int(self.queries),
            "error_bound": self.delta * self.frobenius,
            "measured_error": self.leakage,
        }


def qsve(storeD, state: SimState, delta: float, tier: str = "spectral", register: str = "vec",
         out_register: str = "sv") -> tuple[SimState, QsveReport]:
    """Append a singular-value label register to ``register`` of ``state``.

    Labels ``y`` encode ``σ̄ = ‖D‖_F |cos(πy/2^t)|``.
    """
    check_tier(tier)
    D = _padded(_matrix_of(storeD))
    t = qsve_bits(delta)
    T = 1 << t
    fro = float(np.linalg.norm(D))
    N = D.shape[1]
    if 1 << state.register_size(register) != N:
        raise ParameterError(f"register {register!r} has dimension {1 << state.register_size(register)}, expected {N}")
    tens = state.tensor()
    ax = state.names.index(register)
    moved = np.moveaxis(tens, ax, -1)
    rest_shape = moved.shape[:-1]
    amps = moved.reshape(-1, N)
    leakage = 0.0
    if tier == "spectral" or fro == 0:
        _, s, Vt = np.linalg.svd(D)
        sig = np.zeros(N)
        sig[: s.size] = s
        V = Vt.T
        labels = qsve_labels(sig, fro, t)
        coeff = amps @ V
        out = np.zeros(amps.shape + (T,), dtype=np.complex128)
        for j in range(N):
            out[:, :, labels[j]] += coeff[:, j][:, None] * V[:, j][None, :]
    else:
        M = D.shape[0]
        if T * T * M * N * amps.shape[0] > CIRCUIT_MAX_AMPS:
            raise ParameterError("instance too large for the circuit tier")
        Wop, Qm = _walk_operator(D)
        emb = amps @ Qm.T  # (R, MN)
        psi = qpe_forward(Wop, emb, t)  # (T, R, MN)
        y = np.arange(T)
        canon = np.minimum(y, T - y)
        out = np.zeros(amps.shape + (T,), dtype=np.complex128)
        for label in np.unique(canon):
            branch = np.where((canon == label)[:, None, None], psi, 0.0)
            back = qpe_inverse(branch, Wop, t)  # (R, MN)
            out[:, :, label] = back @ Qm
        total = float(np.sum(np.abs(out) ** 2))
        leakage = max(0.0, float(np.sum(np.abs(amps) ** 2)) - total)
        out /= math.sqrt(total / float(np.sum(np.abs(amps) ** 2)))
    out = out.reshape(rest_shape + (N, T))
    out = np.moveaxis(out, len(rest_shape), ax)
    layout = tuple(state.layout) + ((out_register, t),)
    if isinstance(storeD, TreeStore):
        storeD.charge("row-state", qsve_queries(t) // 2)
        storeD.charge("norm-state", qsve_queries(t) // 2)
    return (SimState.from_amplitudes(layout, out.reshape(-1), state.seed, normalize=True),
            QsveReport(t, float(delta), fro, qsve_queries(t), leakage, tier))


def paired_uniform_state(dim: int, count: int | None = None) -> SimState:
    """``(1/√m) Σ_j |j⟩|j⟩`` over registers ``copy`` and ``vec``."""
    count = dim if count is None else count
    q = max(1, int(math.log2(dim)))
    amps = np.zeros((dim, dim))
    amps[np.arange(count), np.arange(count)] = 1.0 / math.sqrt(count)
    return SimState.from_amplitudes((("copy", q), ("vec", q)), amps.reshape(-1))


# ---------------------------------------------------------------------------
# labeled states for minimum finding
# ---------------------------------------------------------------------------

class LabeledSpectrum:
    """Label law and post-selected states of a QSVE output, kept in eigen-form.

    ``coherent=False`` describes the paired input ``(1/√m)Σ|v_j⟩|v_j⟩``,
    whose label-conditioned reduced states are mixtures.
    """

    def __init__(self, labels, weights, vectors, t_bits: int, scale: float, coherent: bool = False,
                 amplitudes=None, cost: int = 0):
        self.labels = np.asarray(labels, dtype=np.int64)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.vectors = np.asarray(vectors)
        self.t_bits = int(t_bits)
        self.scale = float(scale)
        self.coherent = coherent
        self.amplitudes = None if amplitudes is None else np.asarray(amplitudes)
        self.cost = int(cost)

    @property
    def size(self) -> int:
        return int(np.count_nonzero(self.weights > 0))

    def decode(self, y):
        return qsve_decode(y, self.scale, self.t_bits)

    def label_probs(self) -> np.ndarray:
        p = np.zeros(1 << self.t_bits)
        np.add.at(p, self.labels, self.weights)
        return p / p.sum()

    def conditional(self, ys) -> np.ndarray:
        sel = np.isin(self.labels, list(ys)) & (self.weights > 0)
        if self.coherent:
            psi = self.vectors[:, sel] @ self.amplitudes[sel]
            return np.outer(psi, psi.conj()) / np.vdot(psi, psi).real
        V = self.vectors[:, sel]
        rho = (V * self.weights[sel]) @ V.conj().T
        return rho / np.trace(rho).real


def qsve_spectrum(storeD, delta: float, count: int | None = None) -> LabeledSpectrum:
    """QSVE of the paired uniform input in eigen-form (spectral tier)."""
    D = _padded(_matrix_of(storeD))
    t = qsve_bits(delta)
    fro = float(np.linalg.norm(D))
    _, s, Vt = np.linalg.svd(D)
    N = D.shape[1]
    m = _matrix_of(storeD).shape[1] if count is None else count
    sig = np.zeros(N)
    sig[: s.size] = s
    V = Vt.T
    # weight of |v_j⟩|v_j⟩ in the uniform pairing over the first m indices
    w = np.sum(V[:m, :] ** 2, axis=0) / m
    w = np.where(w > 1e-14, w, 0.0)
    return LabeledSpectrum(qsve_labels(sig, fro, t), w, V, t, fro, coherent=False, cost=qsve_queries(t))


class StateLabels:
    """Label law and post-selection on an explicit :class:`SimState`."""

    def __init__(self, state: SimState, label_register: str, keep: str, t_bits: int, scale: float,
                 cost: int = 0):
        self.state = state
        self.label_register = label_register
        self.keep = keep
        self.t_bits = t_bits
        self.scale = scale
        self.cost = cost

    @property
    def size(self) -> int:
        return 1 << self.state.register_size(self.keep)

    def decode(self, y):
        return qsve_decode(y, self.scale, self.t_bits)

    def label_probs(self) -> np.ndarray:
        return self.state.probabilities(self.label_register)

    def conditional(self, ys) -> np.ndarray:
        sel, _ = self.state.project_onto(self.label_register, ys)
        return sel.partial_trace(self.keep).matrix


# ---------------------------------------------------------------------------
# minimum finding
# ---------------------------------------------------------------------------

@dataclass
class MinimumResult:
    sigma: float
    label: int
    directions: list
    density: np.ndarray
    queries: int
    runs: list = field(default_factory=list)

    @property
    def multiplicity(self) -> int:
        return len(self.directions)

    @property
    def state(self) -> SimState:
        v = self.directions[0]
        q = max(1, math.ceil(math.log2(v.size)))
        padded = np.zeros(1 << q, dtype=v.dtype)
        padded[: v.size] = v
        return SimState.from_amplitudes((("vec", q),), padded)

    def to_dict(self) -> dict:
        return {
            "name": "find_minimum",
            "params": {"label": self.label, "multiplicity": self.multiplicity},
            "queries": int(self.queries),
            "error_bound": None,
            "measured_error": None,
            "sigma": self.sigma,
        }


def dh_budget(N: int) -> int:
    N = max(int(N), 2)
    return math.ceil(22.5 * math.sqrt(N) + 1.4 * math.log2(N) ** 2)


def _amplified_law(probs: np.ndarray, good: np.ndarray, iterations: int) -> np.ndarray:
    pg = float(probs[good].sum())
    if pg <= 0.0 or pg >= 1.0 or iterations == 0:
        return probs
    pa = grover_probability(pg, iterations)
    out = np.where(good, probs * (pa / pg), probs * ((1 - pa) / (1 - pg)))
    return out / out.sum()


def _dh_run(probs, qualifies, values, N, rng):
    """One Dürr–Høyer pass; returns (label or None, Grover iterations)."""
    cdf = np.cumsum(probs)
    y = draw_index(cdf, rng)
    best = y if qualifies[y] else None
    budget = dh_budget(N)
    used = 0
    mcap = math.sqrt(N)
    mm = 1.0
    while used < budget:
        thresh = values[best] if best is not None else np.inf
        good = qualifies & (values < thresh)
        j = int(rng.integers(0, max(1, math.ceil(mm))))
        used += j
        law = _amplified_law(probs, good, j)
        y = draw_index(np.cumsum(law), rng)
        if good[y]:
            best = y
            mm = 1.0
        else:
            mm = min(DH_LAMBDA * mm, mcap)
    return best, used


def _directions(rho: np.ndarray, tol: float = 1e-9) -> list:
    lam, V = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    keep = lam > tol * max(lam[-1], 1e-300)
    out = []
    for k in np.flatnonzero(keep)[::-1]:
        v = V[:, k]
        v = v * np.exp(-1j * np.angle(v[np.argmax(np.abs(v))]))
        out.append(v.real.copy() if np.max(np.abs(v.imag)) < 1e-10 else v)
    return out


def find_minimum(labeled, v: float, already_found=(), seed=None, repeats: int = MIN_FIND_REPEATS,
                 stream_key: tuple = ()) -> MinimumResult:
    """Smallest decoded label value above ``v`` whose grid cell is not in ``already_found``.

    ``already_found`` holds values or labels from earlier calls; a value
    excludes its whole estimation-grid cell.
    """
    probs = labeled.label_probs()
    T = probs.size
    labels = np.arange(T)
    values = np.asarray(labeled.decode(labels), dtype=np.float64)
    excluded = set()
    for f in already_found:
        if isinstance(f, (int, np.integer)):
            excluded.add(int(f))
        else:
            excluded.add(int(np.argmin(np.where(probs > 0, np.abs(values - f), np.inf))))
    qualifies = (values > v) & (probs > 0)
    if excluded:
        qualifies[list(excluded)] = False
    if not qualifies.any():
        raise ExhaustedError(f"no label above v = {v:.3e} remains", v=v, found=len(excluded))
    N = max(2, getattr(labeled, "size", T))
    found = []
    total = 0
    for rep in range(repeats):
        rng = branch_rng(seed, 0x3117, *stream_key, len(excluded), rep)
        best, used = _dh_run(probs, qualifies, values, N, rng)
        total += used
        if best is not None:
            found.append(int(best))
    if not found:
        raise PrecisionError("minimum finding never sampled a qualifying label")
    label = min(found, key=lambda y: (values[y], y))
    rho = labeled.conditional([label])
    cost = getattr(labeled, "cost", 0)
    queries = total * (2 * cost + 1) + repeats * cost
    return MinimumResult(float(values[label]), label, _directions(rho), rho, queries, found)


# ---------------------------------------------------------------------------
# extended matrix and ridge regression
# ---------------------------------------------------------------------------

def extended_matrix(X: np.ndarray) -> np.ndarray:
    """``[[0, X], [Xᵀ, 0]]`` after padding ``X`` to a ``2^q × 2^q`` square."""
    X = np.asarray(X, dtype=np.float64)
    N = next_pow2(max(X.shape))
    Xs = np.zeros((N, N))
    Xs[: X.shape[0], : X.shape[1]] = X
    return np.block([[np.zeros((N, N)), Xs], [Xs.T, np.zeros((N, N))]])


def extended_scale(X: np.ndarray) -> float:
    s = float(np.linalg.norm(np.asarray(X, dtype=np.float64), 2))
    return s if s > 0 else 1.0


def epe_bits(kappa: float, eps2: float) -> int:
    return max(2, math.ceil(math.log2(2.0 * kappa / eps2)))


def epe_decode(y, scale: float, t_bits: int):
    T = 1 << t_bits
    y = np.asarray(y)
    signed = np.where(y < T // 2, y, y - T)
    return 4.0 * scale * signed / T


@dataclass
class EpeReport:
    t_bits: int
    scale: float
    queries: int
    tier: str

    def to_dict(self) -> dict:
        return {
            "name": "extended_matrix_phase_estimation",
            "params": {"t_bits": self.t_bits, "scale": self.scale, "tier": self.tier},
            "queries": int(self.queries),
            "error_bound": 2.0 * self.scale / (1 << self.t_bits),
            "measured_error": None,
        }


def epe_queries(X: np.ndarray, t_bits: int, eps2: float, scale: float) -> int:
    """Block-encoding calls to simulate ``e^{iX̄τ}`` over all controlled powers."""
    fro = float(np.linalg.norm(X))
    tau = 2 * math.pi * ((1 << t_bits) - 1) / (4 * scale)
    return math.ceil(fro * tau) + t_bits * max(1, math.ceil(math.log2(1.0 / eps2)))


def _embedding_input(Xbar: np.ndarray, state) -> np.ndarray:
    vec = state.amplitudes if isinstance(state, SimState) else np.asarray(state, dtype=np.complex128)
    n2 = Xbar.shape[0]
    N = n2 // 2
    if vec.size == N:
        vec = np.concatenate([vec, np.zeros(N)])
    elif vec.size < N:
        vec = np.concatenate([vec, np.zeros(n2 - vec.size)])
    if vec.size != n2:
        raise ParameterError(f"input has dimension {vec.size}, expected {N} or {n2}")
    stray = float(np.linalg.norm(vec[N:]))
    if stray > EMBED_TOL:
        raise EmbeddingError(f"input has weight {stray:.3e} in the column-space block", measured=stray)
    return vec / np.linalg.norm(vec)


def _epe_labels(Xbar, scale, t_bits):
    lam, V = np.linalg.eigh(Xbar)
    T = 1 << t_bits
    y = np.mod(np.rint(lam * T / (4 * scale)).astype(np.int64), T)
    return lam, V, y


def extended_matrix_phase_estimation(storeX, state, t_bits: int | None = None, eps2: float = 0.01,
                                     tier: str = "spectral", scale: float | None = None
                                     ) -> tuple[SimState, EpeReport]:
    """Phase estimation of ``e^{2πi X̄/(4s)}`` on ``|0, z⟩``.

    Output registers ``[label, blk, vec]``; labels decode to ``±γ̄`` through
    :func:`epe_decode`.
    """
    check_tier(tier)
    X = _matrix_of(storeX)
    Xbar = extended_matrix(X)
    s = extended_scale(X) if scale is None else float(scale)
    if t_bits is None:
        sv = np.linalg.svd(X, compute_uv=False)
        nz = sv[sv > 1e-12 * max(sv[0], 1e-300)]
        kappa = float(nz[0] / nz[-1]) if nz.size else 1.0
        t_bits = epe_bits(kappa, eps2)
    vec = _embedding_input(Xbar, state)
    T = 1 << t_bits
    if tier == "spectral":
        lam, V, y = _epe_labels(Xbar, s, t_bits)
        coeff = V.conj().T @ vec
        out = np.zeros((T, Xbar.shape[0]), dtype=np.complex128)
        for k in range(lam.size):
            out[y[k]] += coeff[k] * V[:, k]
    else:
        if Xbar.shape[0] > 16:
            raise ParameterError("circuit-tier phase estimation supports extended dimension <= 16")
        U = expm(2j * math.pi * Xbar / (4 * s))
        out = qpe_forward(U, vec, t_bits)
    q = int(math.log2(Xbar.shape[0] // 2))
    layout = (("label", t_bits), ("blk", 1), ("vec", q))
    st = SimState.from_amplitudes(layout, out.reshape(-1), normalize=True)
    return st, EpeReport(t_bits, s, epe_queries(X, t_bits, eps2, s), tier)


@dataclass
class RidgeReport:
    t_bits: int
    C1: float
    success_probability: float
    repetitions: int
    queries: int
    tier: str

    def to_dict(self) -> dict:
        return {
            "name": "ridge_regress_quantum",
            "params": {"t_bits": self.t_bits, "C1": self.C1, "tier": self.tier},
            "queries": int(self.queries),
            "error_bound": None,
            "measured_error": None,
            "success_probability": self.success_probability,
        }


def ridge_constant(gammas: np.ndarray, alpha: float) -> float:
    """``min (γ² + α)/γ`` over the nonzero estimated values."""
    g = np.abs(np.asarray(gammas, dtype=np.float64))
    g = g[g > 0]
    if g.size == 0:
        raise PrecisionError("no nonzero singular value estimate for the ridge rotation")
    return float(np.min((g * g + alpha) / g))


def sign_fix(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0 else v


def ridge_regress_quantum(storeX, z, alpha: float, eps2: float = 0.01, t_bits: int | None = None,
                          C1: float | None = None, tier: str = "spectral", success_floor: float = 1e-12
                          ) -> tuple[np.ndarray, RidgeReport]:
    """Direction of ``(XᵀX + αI)⁻¹ Xᵀ z`` as a unit vector (largest entry positive)."""
    check_tier(tier)
    if alpha < 0:
        raise ParameterError(f"alpha must be non-negative, got {alpha}")
    X = _matrix_of(storeX)
    m, n = X.shape
    Xbar = extended_matrix(X)
    s = extended_scale(X)
    N = Xbar.shape[0] // 2
    z = np.asarray(z, dtype=np.complex128).reshape(-1)
    if z.size > m and np.linalg.norm(z[m:]) > EMBED_TOL:
        raise EmbeddingError("input has weight beyond the data rows")
    zz = np.zeros(N, dtype=np.complex128)
    zz[: min(m, z.size)] = z[: min(m, z.size)]
    st, rep = extended_matrix_phase_estimation(X, zz, t_bits, eps2, tier, s)
    t = rep.t_bits
    T = 1 << t
    gam = epe_decode(np.arange(T), s, t)
    lam, V, ylab = _epe_labels(Xbar, s, t)
    if C1 is None:
        C1 = ridge_constant(epe_decode(ylab, s, t), alpha)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(gam != 0, C1 * gam / (gam * gam + alpha), 0.0)
    f = np.clip(f, -1.0, 1.0)
    psi = st.tensor().reshape(T, 2 * N)
    rotated = f[:, None] * psi
    if tier == "spectral":
        # labels are a deterministic function of the eigencomponent, so uncomputation is exact
        back = np.zeros(2 * N, dtype=np.complex128)
        for y in np.unique(ylab):
            sel = ylab == y
            P = V[:, sel] @ V[:, sel].conj().T
            back += f[y] * (P @ _embedding_input(Xbar, zz))
    else:
        U = expm(2j * math.pi * Xbar / (4 * s))
        back = qpe_inverse(rotated, U, t)
    out = back[N:]
    p = float(np.vdot(out, out).real)
    if p < success_floor:
        raise PrecisionError(f"ridge post-selection probability {p:.3e} is below the floor", probability=p)
    a = out[:n] / math.sqrt(p)
    if np.max(np.abs(a.imag)) > 1e-8:
        a = a * np.exp(-1j * np.angle(a[np.argmax(np.abs(a))]))
    a = sign_fix(a.real)
    a = a / np.linalg.norm(a)
    reps = max(1, math.ceil(1.0 / math.sqrt(p)))
    queries = reps * 2 * rep.queries
    if isinstance(storeX, TreeStore):
        storeX.charge("row-state", queries)
    return a, RidgeReport(t, float(C1), p, reps, queries, tier)
