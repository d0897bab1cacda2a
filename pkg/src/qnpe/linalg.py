"""Block encodings of density operators, eigenvalue inversion and real-state tomography."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import (
    ConstructionError,
    ParameterError,
    RealAmplitudeError,
    SpanError,
)
from .estimation import branch_rng, check_tier
from .sim import H, SimState, check_unitary, complete_unitary

BLOCK_TOL = 1e-8
SPAN_TOL = 1e-8
IMAG_TOL = 1e-8
HHL_MAX_DIM = 4


class KappaWarning(UserWarning):
    """The supplied condition bound is exceeded by the operator's spectrum."""


# ---------------------------------------------------------------------------
# block encodings
# ---------------------------------------------------------------------------

@dataclass
class BlockEncoding:
    """``U`` on ``ancilla ⊗ system`` with ``(⟨0|⊗I) U (|0⟩⊗I) = A / alpha`` up to ``slack``."""

    U: np.ndarray
    system_qubits: int
    ancilla_qubits: int
    target: np.ndarray
    alpha: float = 1.0
    slack: float = 0.0
    support: tuple | None = None
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return 1 << self.system_qubits

    def block(self) -> np.ndarray:
        return self.U[: self.dim, : self.dim]

    def verify(self, tol: float = BLOCK_TOL) -> float:
        """Spectral-norm gap between ``A`` and ``alpha`` times the top-left block."""
        gap = float(np.linalg.norm(self.target - self.alpha * self.block(), 2))
        self.slack = gap
        if gap > tol:
            raise ConstructionError(f"block-encoding gap {gap:.3e} exceeds {tol:.1e}", measured_norm=gap)
        return gap

    def to_dict(self) -> dict:
        return {
            "name": "block_encoding",
            "params": {"system_qubits": self.system_qubits, "ancilla_qubits": self.ancilla_qubits,
                       "alpha": self.alpha},
            "queries": 2,
            "error_bound": BLOCK_TOL,
            "measured_error": self.slack,
        }


def _swap_system_copy(sq: int, eq: int) -> np.ndarray:
    """Permutation matrix on ``[sys, env, copy]`` exchanging ``sys`` and ``copy``."""
    d, e = 1 << sq, 1 << eq
    idx = np.arange(d * e * d).reshape(d, e, d)
    perm = np.transpose(idx, (2, 1, 0)).reshape(-1)
    S = np.zeros((perm.size, perm.size))
    S[perm, np.arange(perm.size)] = 1.0
    return S


def block_encoding_from_unitary(G: np.ndarray, system_qubits: int, tol: float = BLOCK_TOL,
                                target: np.ndarray | None = None) -> BlockEncoding:
    """Encode the reduced state of ``G|0⟩`` on its leading ``system_qubits``.

    ``U = (G† ⊗ I)(S)(G ⊗ I)`` on ``[sys, env, copy]``, where ``S`` swaps
    ``sys`` with the fresh copy register.  The ancilla is ``[sys, env]``.
    """
    G = check_unitary(np.asarray(G, dtype=np.complex128))
    total = int(round(math.log2(G.shape[0])))
    if 1 << total != G.shape[0] or not 0 < system_qubits <= total:
        raise ParameterError("G must act on a power-of-two space containing the system register")
    sq, eq = system_qubits, total - system_qubits
    d = 1 << sq
    Gx = np.kron(G, np.eye(d))
    U = Gx.conj().T @ _swap_system_copy(sq, eq) @ Gx
    psi = G[:, 0].reshape(d, 1 << eq)
    rho = psi @ psi.conj().T
    be = BlockEncoding(U, sq, total, rho if target is None else np.asarray(target), meta={"G_dim": G.shape[0]})
    be.verify(tol)
    return be


def compact_purification(state: SimState, system: str, support=None, tol: float = 1e-12):
    """Drop registers fixed in a basis state and restrict ``system`` to ``support``.

    Returns ``(psi, support)`` with ``psi`` of shape ``(2^q, env_dim)``,
    ``q = ⌈log₂ |support|⌉``.
    """
    t = state.tensor()
    names = state.names
    ax = names.index(system)
    for k, name in enumerate(names):
        if name == system:
            continue
        p = state.probabilities(name)
        top = int(np.argmax(p))
        if p[top] >= 1.0 - tol:
            sl = [slice(None)] * t.ndim
            sl[k] = slice(top, top + 1)
            t = t[tuple(sl)]
    t = np.moveaxis(t, ax, 0)
    t = t.reshape(t.shape[0], -1)
    if support is None:
        weight = np.sum(np.abs(t) ** 2, axis=1)
        support = tuple(int(j) for j in np.flatnonzero(weight > tol))
    support = tuple(support)
    rest = np.ones(t.shape[0], dtype=bool)
    rest[list(support)] = False
    leaked = float(np.sum(np.abs(t[rest]) ** 2))
    if leaked > tol:
        raise ConstructionError(f"system register carries weight {leaked:.3e} outside the support")
    q = max(1, math.ceil(math.log2(max(len(support), 1))))
    psi = np.zeros((1 << q, t.shape[1]), dtype=np.complex128)
    psi[: len(support)] = t[list(support)]
    return psi, support


def block_encoding_from_purification(state: SimState, system: str = "j", support=None,
                                     tol: float = BLOCK_TOL, target: np.ndarray | None = None) -> BlockEncoding:
    """Block-encode the reduced state of ``system`` from a prepared purification.

    ``target`` defaults to the partial trace itself; pass a dense operator
    to verify against an independent value.
    """
    psi, support = compact_purification(state, system, support)
    d, e = psi.shape
    eq = max(0, math.ceil(math.log2(e)))
    vec = np.zeros(d << eq, dtype=np.complex128)
    vec.reshape(d, 1 << eq)[:, :e] = psi
    G = complete_unitary(vec)
    sq = int(math.log2(d))
    if target is not None:
        target = np.asarray(target, dtype=np.complex128)
        full = np.zeros((d, d), dtype=np.complex128)
        if target.shape[0] != len(support):
            target = target[np.ix_(support, support)]
        full[: len(support), : len(support)] = target
        target = full
    be = block_encoding_from_unitary(G, sq, tol, target)
    be.support = support
    return be


# ---------------------------------------------------------------------------
# inversion
# ---------------------------------------------------------------------------

@dataclass
class InversionReport:
    t_bits: int
    kappa: float
    eps: float
    queries: int
    kept: int
    dropped_weight: float
    success_probability: float
    tier: str

    def to_dict(self) -> dict:
        return {
            "name": "invert_block_encoded",
            "params": {"kappa": self.kappa, "eps": self.eps, "t_bits": self.t_bits, "tier": self.tier},
            "queries": int(self.queries),
            "error_bound": self.eps,
            "measured_error": None,
            "dropped_weight": self.dropped_weight,
            "success_probability": self.success_probability,
        }


def inversion_bits(kappa: float, eps: float) -> int:
    return math.ceil(math.log2(kappa / eps)) + 3


def inversion_queries(kappa: float, eps: float, alpha: float = 1.0, cost_U: int = 1,
                      ancillas: int = 0, cost_b: int = 1) -> int:
    """``κ (α (T_U + a) log²(κ/ε) + T_b) log κ`` with ``κ`` floored at 2."""
    k = max(2.0, float(kappa))
    return math.ceil(k * (alpha * (cost_U + ancillas) * math.log2(k / eps) ** 2 + cost_b) * math.log2(k))


def quantize_eigenvalues(lam: np.ndarray, t_bits: int) -> np.ndarray:
    """Round to the phase-estimation grid of ``λ/2`` with ``t`` bits."""
    scale = float(1 << (t_bits - 1))
    return np.round(np.asarray(lam) * scale) / scale


def _split_spectrum(A, b, kappa, pseudo):
    lam, V = np.linalg.eigh(0.5 * (A + A.conj().T))
    coeff = V.conj().T @ b
    floor = 1.0 / (2.0 * kappa)
    keep = lam >= floor
    outside = float(np.linalg.norm(coeff[~keep]))
    if outside > SPAN_TOL and not pseudo:
        raise SpanError(f"input has weight {outside:.3e} outside the well-conditioned span",
                        measured_norm=outside)
    if np.any(keep & (lam < (1.0 - 1e-9) / kappa)):
        warnings.warn(f"eigenvalue {lam[keep].min():.3e} lies below 1/kappa = {1 / kappa:.3e}",
                      KappaWarning, stacklevel=3)
    if not np.any(keep & (np.abs(coeff) > 0)):
        raise SpanError("input has no component in the well-conditioned span", measured_norm=outside)
    return lam, V, coeff, keep, outside


def controlled_powers(psi: np.ndarray, U: np.ndarray, t_bits: int, inverse: bool = False) -> np.ndarray:
    """Apply ``U^y`` to the last axis of slice ``y`` along axis 0, one controlled ``U^{2^k}`` per clock bit."""
    y = np.arange(psi.shape[0])
    P = U.conj().T if inverse else U
    out = psi.copy()
    for k in range(t_bits):
        on = ((y >> k) & 1).astype(bool)
        out[on] = out[on] @ P.T
        P = P @ P
    return out


def qpe_forward(U: np.ndarray, vec: np.ndarray, t_bits: int) -> np.ndarray:
    """Phase estimation of ``U`` on ``vec``; returns the ``(clock, ..., system)`` array."""
    N = 1 << t_bits
    psi = np.broadcast_to(np.asarray(vec, dtype=np.complex128) / math.sqrt(N), (N,) + np.shape(vec)).copy()
    psi = controlled_powers(psi, U, t_bits)
    return np.fft.fft(psi, axis=0) / math.sqrt(N)


def qpe_inverse(psi: np.ndarray, U: np.ndarray, t_bits: int) -> np.ndarray:
    """Undo :func:`qpe_forward` and project the clock onto its initial state."""
    N = 1 << t_bits
    back = np.fft.ifft(psi, axis=0) * math.sqrt(N)
    back = controlled_powers(back, U, t_bits, inverse=True)
    return back.sum(axis=0) / math.sqrt(N)


def _hhl_circuit(A, b, kappa, t_bits):
    """Phase estimation of ``e^{iπA}``, conditional rotation and uncomputation.

    Returns the system vector on the rotated ancilla branch and its probability.
    """
    N = 1 << t_bits
    U = expm(1j * math.pi * 0.5 * (A + A.conj().T))
    psi = qpe_forward(U, b, t_bits)
    lam_t = 2.0 * np.arange(N) / N
    C = 1.0 / (2.0 * kappa)
    ratio = np.zeros(N)
    active = lam_t >= C
    ratio[active] = C / lam_t[active]
    out = qpe_inverse(ratio[:, None] * psi, U, t_bits)
    p = float(np.vdot(out, out).real)
    return out, p


def invert_block_encoded(be: BlockEncoding | np.ndarray, b, kappa: float, eps: float,
                         tier: str = "spectral", pseudo: bool = False, cost_U: int = 1,
                         cost_b: int = 1) -> tuple[SimState, InversionReport]:
    """Prepare ``A⁻¹|b⟩ / ‖A⁻¹|b⟩‖`` for the encoded ``A``.

    Eigenvalues below ``1/(2κ)`` are treated as outside the invertible span;
    ``pseudo=True`` projects them away instead of raising.
    """
    check_tier(tier)
    if not kappa >= 1 or not 0 < eps < 1:
        raise ParameterError("need kappa >= 1 and 0 < eps < 1")
    A = be.block() * be.alpha if isinstance(be, BlockEncoding) else np.asarray(be, dtype=np.complex128)
    vec = b.amplitudes if isinstance(b, SimState) else np.asarray(b, dtype=np.complex128)
    d = A.shape[0]
    if vec.size < d:
        vec = np.concatenate([vec, np.zeros(d - vec.size)])
    vec = vec / np.linalg.norm(vec)
    lam, V, coeff, keep, outside = _split_spectrum(A, vec, kappa, pseudo)
    t = inversion_bits(kappa, eps)
    if tier == "circuit":
        if d > HHL_MAX_DIM:
            raise ParameterError(f"circuit-tier inversion supports dim <= {HHL_MAX_DIM}, got {d}")
        kept_in = V[:, keep] @ coeff[keep]
        out, p = _hhl_circuit(A, kept_in, kappa, t)
    else:
        lam_t = quantize_eigenvalues(lam[keep], t)
        out = V[:, keep] @ (coeff[keep] / lam_t)
        p = float(np.sum(np.abs(coeff[keep] / lam_t) ** 2)) / (4.0 * kappa * kappa)
    nrm = np.linalg.norm(out)
    if nrm == 0:
        raise SpanError("inversion produced the zero vector")
    q = max(1, math.ceil(math.log2(d)))
    amps = np.zeros(1 << q, dtype=np.complex128)
    amps[:d] = out / nrm
    anc = be.ancilla_qubits if isinstance(be, BlockEncoding) else 0
    queries = inversion_queries(kappa, eps, 1.0, cost_U, anc, cost_b)
    report = InversionReport(t, float(kappa), float(eps), queries, int(keep.sum()), outside, p, tier)
    return SimState.from_amplitudes((("sys", q),), amps), report


# ---------------------------------------------------------------------------
# tomography
# ---------------------------------------------------------------------------

@dataclass
class TomographyReport:
    samples: int
    delta: float
    dim: int
    tier: str

    def to_dict(self) -> dict:
        return {
            "name": "tomography",
            "params": {"delta": self.delta, "dim": self.dim, "tier": self.tier},
            "queries": int(self.samples),
            "error_bound": self.delta,
            "measured_error": None,
        }


def tomography_samples(d: int, delta: float) -> int:
    d = max(2, int(d))
    return math.ceil(36 * d * math.log(d) / (delta * delta))


def real_amplitudes(state, imag_tol: float = IMAG_TOL) -> np.ndarray:
    """Align the global phase on the largest amplitude; reject genuinely complex states."""
    v = state.amplitudes if isinstance(state, SimState) else np.asarray(state, dtype=np.complex128)
    k = int(np.argmax(np.abs(v)))
    v = v * np.exp(-1j * np.angle(v[k]))
    imag = float(np.max(np.abs(v.imag)))
    if imag > imag_tol:
        raise RealAmplitudeError(f"state has imaginary part {imag:.3e}", measured=imag)
    return v.real.copy()


def _interference_probs(x: np.ndarray, ref: np.ndarray, tier: str) -> np.ndarray:
    """Outcome law of ``H_ctrl (|0⟩|x⟩ + |1⟩|ref⟩)/√2`` over ``(ctrl, index)``."""
    if tier == "spectral":
        return np.concatenate([(x + ref) ** 2, (x - ref) ** 2]) / 4.0
    q = int(math.log2(x.size))
    amps = np.concatenate([x, ref]) / math.sqrt(2.0)
    st = SimState.from_amplitudes((("ctrl", 1), ("idx", q)), amps, normalize=True).apply(H, "ctrl")
    return st.probabilities(["ctrl", "idx"])


def tomography(prep, d_t: int | None = None, delta: float = 0.05, seed=None, tier: str = "spectral",
               rng: np.random.Generator | None = None, imag_tol: float = IMAG_TOL
               ) -> tuple[np.ndarray, TomographyReport]:
    """Estimate a real state vector to ``ℓ₂`` error ``δ`` from measurement counts.

    Magnitudes come from computational-basis counts; signs from interfering
    the state with the nonnegative reference ``√p̂`` and reading the
    constructive arm.  ``imag_tol`` bounds the imaginary residue accepted
    from approximate upstream preparation; it is dropped before sampling.
    """
    check_tier(tier)
    if not 0 < delta < 1:
        raise ParameterError("delta must lie in (0, 1)")
    x = real_amplitudes(prep, imag_tol)
    if d_t is not None and d_t != x.size:
        raise ParameterError(f"state has dimension {x.size}, expected {d_t}")
    x = x / np.linalg.norm(x)
    d = x.size
    N = tomography_samples(d, delta)
    rng = rng if rng is not None else branch_rng(seed, 0x7037)
    if tier == "circuit":
        probs = SimState.from_amplitudes((("idx", int(math.log2(d))),), x).probabilities("idx")
    else:
        probs = x * x
    probs = probs / probs.sum()
    counts = rng.multinomial(N, probs)
    p_hat = counts / N
    ref = np.sqrt(p_hat)
    law = _interference_probs(x, ref, tier)
    law = np.clip(law, 0.0, None)
    inter = rng.multinomial(N, law / law.sum())
    plus = inter[:d] > 0.4 * p_hat * N
    est = np.where(plus, ref, -ref)
    return est, TomographyReport(2 * N, float(delta), d, tier)
