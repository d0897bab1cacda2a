"""Seeded statevector simulator.

Qubits are numbered globally in layout order, and the first register holds the
most significant bits.  A register value is read big-endian over its own
qubits.  Every operation returns a new :class:`SimState`.

Comparisons between states go through :func:`fidelity`, ``|⟨a|b⟩|²``, so
global phase never matters.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import ImpossibleOutcomeError, InvariantError, RepresentationError, UnitarityError

UNITARY_TOL = 1e-10
NORM_TOL = 1e-10

H = np.array([[1, 1], [1, -1]], dtype=np.complex128) / np.sqrt(2)
X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
I2 = np.eye(2, dtype=np.complex128)


def ry(theta: float) -> np.ndarray:
    """Rotation taking |0⟩ to cos(θ/2)|0⟩ + sin(θ/2)|1⟩."""
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=np.complex128)


def phase(phi: float) -> np.ndarray:
    return np.array([[1, 0], [0, np.exp(1j * phi)]], dtype=np.complex128)


def unitarity_deviation(U: np.ndarray) -> float:
    U = np.asarray(U)
    return float(np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0]))))


def check_unitary(U: np.ndarray, tol: float = UNITARY_TOL) -> np.ndarray:
    U = np.asarray(U, dtype=np.complex128)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise UnitarityError(f"gate must be square, got shape {U.shape}")
    dev = unitarity_deviation(U)
    if dev > tol:
        raise UnitarityError(f"gate deviates from unitarity by {dev:.3e}", deviation=dev)
    return U


def complete_unitary(v: np.ndarray) -> np.ndarray:
    """A unitary whose first column is the unit vector ``v`` (Householder)."""
    v = np.asarray(v, dtype=np.complex128)
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise InvariantError("cannot complete a unitary from the zero vector")
    v = v / nrm
    d = v.size
    e0 = np.zeros(d, dtype=np.complex128)
    e0[0] = 1.0
    # rotate the phase of v[0] onto the real axis, reflect, then restore
    ph = v[0] / abs(v[0]) if abs(v[0]) > 0 else 1.0
    w = v / ph
    u = e0 - w
    un = np.linalg.norm(u)
    if un < 1e-15:
        Hh = np.eye(d, dtype=np.complex128)
    else:
        u = u / un
        Hh = np.eye(d, dtype=np.complex128) - 2.0 * np.outer(u, u.conj())
    return ph * Hh


def _bits_of(value: int, width: int) -> list[int]:
    return [(value >> (width - 1 - b)) & 1 for b in range(width)]


@dataclass(frozen=True, eq=False)
class DensityOp:
    matrix: np.ndarray

    def __post_init__(self):
        M = np.array(self.matrix, dtype=np.complex128, copy=True)
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    def check(self, herm_tol: float = 1e-12, psd_tol: float = 1e-10) -> None:
        M = self.matrix
        if np.max(np.abs(M - M.conj().T)) > herm_tol:
            raise InvariantError("density operator is not Hermitian")
        lam = np.linalg.eigvalsh(0.5 * (M + M.conj().T))
        if lam.size and lam[0] < -psd_tol:
            raise InvariantError(f"density operator has eigenvalue {lam[0]:.3e}")


@dataclass(frozen=True, eq=False)
class SimState:
    layout: tuple
    amplitudes: np.ndarray
    seed: int | None = None
    norm_slack: float = NORM_TOL

    def __post_init__(self):
        layout = tuple((str(n), int(q)) for n, q in self.layout)
        names = [n for n, _ in layout]
        if len(set(names)) != len(names):
            raise InvariantError(f"duplicate register names in {names}")
        amps = np.array(self.amplitudes, dtype=np.complex128, copy=True).reshape(-1)
        total = sum(q for _, q in layout)
        if amps.size != 1 << total:
            raise InvariantError(f"layout needs {1 << total} amplitudes, got {amps.size}")
        nrm = float(np.vdot(amps, amps).real)
        if abs(nrm - 1.0) > self.norm_slack:
            raise InvariantError(f"state norm² {nrm!r} differs from 1", norm=nrm)
        amps.setflags(write=False)
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "amplitudes", amps)

    # -- construction ------------------------------------------------------
    @classmethod
    def init(cls, layout: Sequence, seed: int | None = None) -> "SimState":
        total = sum(int(q) for _, q in layout)
        amps = np.zeros(1 << total, dtype=np.complex128)
        amps[0] = 1.0
        return cls(tuple(layout), amps, seed)

    @classmethod
    def from_amplitudes(cls, layout: Sequence, amps, seed: int | None = None, normalize: bool = False) -> "SimState":
        amps = np.asarray(amps, dtype=np.complex128).reshape(-1)
        if normalize:
            nrm = np.linalg.norm(amps)
            if nrm == 0:
                raise InvariantError("cannot normalize the zero vector")
            amps = amps / nrm
        return cls(tuple(layout), amps, seed)

    @classmethod
    def basis(cls, layout: Sequence, values: dict, seed: int | None = None) -> "SimState":
        state = cls.init(layout, seed)
        index = state._index_of(values)
        amps = np.zeros_like(state.amplitudes)
        amps[index] = 1.0
        return cls(state.layout, amps, seed)

    def _index_of(self, values: dict) -> int:
        index = 0
        for name, q in self.layout:
            v = int(values.get(name, 0))
            if not 0 <= v < (1 << q):
                raise RepresentationError(f"value {v} does not fit register {name!r} of {q} qubits")
            index = (index << q) | v
        return index

    # -- layout helpers ------------------------------------------------------
    @property
    def num_qubits(self) -> int:
        return sum(q for _, q in self.layout)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.layout]

    def register_size(self, name: str) -> int:
        for n, q in self.layout:
            if n == name:
                return q
        raise InvariantError(f"no register named {name!r}")

    def qubits(self, name: str) -> list[int]:
        start = 0
        for n, q in self.layout:
            if n == name:
                return list(range(start, start + q))
            start += q
        raise InvariantError(f"no register named {name!r}")

    def _resolve(self, targets) -> list[int]:
        if isinstance(targets, str):
            return self.qubits(targets)
        out = []
        for t in targets:
            if isinstance(t, str):
                out.extend(self.qubits(t))
            else:
                out.append(int(t))
        return out

    def tensor(self) -> np.ndarray:
        """Amplitudes with one axis per register."""
        return self.amplitudes.reshape([1 << q for _, q in self.layout])

    def _replace(self, amps) -> "SimState":
        return SimState(self.layout, amps, self.seed, self.norm_slack)

    def with_register(self, name: str, nq: int, value: int = 0) -> "SimState":
        """Append a fresh register holding a basis value."""
        fresh = np.zeros(1 << nq, dtype=np.complex128)
        fresh[value] = 1.0
        return SimState(self.layout + ((name, nq),), np.kron(self.amplitudes, fresh), self.seed, self.norm_slack)

    # -- unitary evolution ---------------------------------------------------
    def apply(self, U, targets=None) -> "SimState":
        if hasattr(U, "apply_to"):
            return U.apply_to(self)
        U = check_unitary(U)
        qs = self._resolve(targets) if targets is not None else list(range(self.num_qubits))
        if U.shape[0] != 1 << len(qs):
            raise InvariantError(f"gate of dimension {U.shape[0]} acts on {len(qs)} qubits")
        out = _kernels.apply_gate(self.amplitudes, U, qs, [], [], self.num_qubits)
        return self._replace(out)

    def apply_controlled(self, U, controls, targets, control_values=None) -> "SimState":
        """Apply ``U`` on ``targets`` when the controls hold the given values.

        ``controls`` is either a list of qubits (values default to 1) or a mapping
        ``{register: value}``.
        """
        U = check_unitary(U)
        if isinstance(controls, dict):
            cq, cv = [], []
            for name, value in controls.items():
                qs = self.qubits(name)
                cq.extend(qs)
                cv.extend(_bits_of(int(value), len(qs)))
        else:
            cq = self._resolve(controls)
            cv = [1] * len(cq) if control_values is None else [int(v) for v in control_values]
        tq = self._resolve(targets)
        if set(cq) & set(tq):
            raise InvariantError("targets and controls overlap")
        if U.shape[0] != 1 << len(tq):
            raise InvariantError(f"gate of dimension {U.shape[0]} acts on {len(tq)} qubits")
        out = _kernels.apply_gate(self.amplitudes, U, tq, cq, cv, self.num_qubits)
        return self._replace(out)

    def apply_diagonal(self, diag: np.ndarray) -> "SimState":
        diag = np.asarray(diag, dtype=np.complex128)
        if np.max(np.abs(np.abs(diag) - 1.0)) > UNITARY_TOL:
            raise UnitarityError("diagonal operator has entries off the unit circle")
        return self._replace(self.amplitudes * diag)

    # -- measurement ---------------------------------------------------------
    def probabilities(self, register) -> np.ndarray:
        names = [register] if isinstance(register, str) else list(register)
        t = np.abs(self.tensor()) ** 2
        axes = tuple(a for a, n in enumerate(self.names) if n not in names)
        marg = t.sum(axis=axes)
        order = [n for n in self.names if n in names]
        if order != names:
            marg = np.transpose(marg, [order.index(n) for n in names])
        return marg.reshape(-1)

    def sample(self, register, shots: int, seed: int | None = None) -> np.ndarray:
        if shots < 1:
            raise InvariantError("shots must be at least 1")
        probs = self.probabilities(register)
        probs = probs / probs.sum()
        rng = np.random.default_rng(self.seed if seed is None else seed)
        return rng.choice(probs.size, size=int(shots), p=probs)

    def measure(self, register, shots: int, seed: int | None = None) -> Counter:
        return Counter(int(v) for v in self.sample(register, shots, seed))

    def project(self, register: str, outcome: int) -> tuple["SimState", float]:
        t = self.tensor()
        axis = self.names.index(register)
        if not 0 <= outcome < t.shape[axis]:
            raise ImpossibleOutcomeError(f"outcome {outcome} outside register {register!r}")
        mask = np.zeros(t.shape[axis], dtype=bool)
        mask[outcome] = True
        shape = [1] * t.ndim
        shape[axis] = t.shape[axis]
        kept = np.where(mask.reshape(shape), t, 0.0).reshape(-1)
        p = float(np.vdot(kept, kept).real)
        if p <= 1e-300:
            raise ImpossibleOutcomeError(f"outcome {outcome} on {register!r} has zero probability")
        return self._replace(kept / np.sqrt(p)), p

    def project_onto(self, register: str, values: Iterable[int]) -> tuple["SimState", float]:
        """Project onto a set of register values."""
        t = self.tensor()
        axis = self.names.index(register)
        mask = np.zeros(t.shape[axis], dtype=bool)
        mask[list(values)] = True
        shape = [1] * t.ndim
        shape[axis] = t.shape[axis]
        kept = np.where(mask.reshape(shape), t, 0.0).reshape(-1)
        p = float(np.vdot(kept, kept).real)
        if p <= 1e-300:
            raise ImpossibleOutcomeError(f"values {sorted(values)} on {register!r} have zero probability")
        return self._replace(kept / np.sqrt(p)), p

    # -- reduced states ------------------------------------------------------
    def partial_trace(self, keep) -> DensityOp:
        keep = [keep] if isinstance(keep, str) else list(keep)
        for k in keep:
            self.register_size(k)
        t = self.tensor()
        keep_axes = [self.names.index(k) for k in keep]
        rest = [a for a in range(t.ndim) if a not in keep_axes]
        moved = np.transpose(t, keep_axes + rest)
        dk = int(np.prod([t.shape[a] for a in keep_axes]))
        mat = moved.reshape(dk, -1)
        return DensityOp(mat @ mat.conj().T)

    def to_dict(self) -> dict:
        return {
            "layout": [[n, q] for n, q in self.layout],
            "amplitudes": [[float(a.real), float(a.imag)] for a in self.amplitudes],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def fidelity(a, b) -> float:
    """``|⟨a|b⟩|²`` for states or plain vectors (normalized internally)."""
    va = a.amplitudes if isinstance(a, SimState) else np.asarray(a, dtype=np.complex128)
    vb = b.amplitudes if isinstance(b, SimState) else np.asarray(b, dtype=np.complex128)
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0 or nb == 0:
        return 0.0
    return float(abs(np.vdot(va, vb)) ** 2 / (na * na * nb * nb))


def purify(rho: np.ndarray, seed: int | None = None) -> SimState:
    """Purification over (system, env) registers whose partial trace is ``rho``."""
    rho = np.asarray(rho, dtype=np.complex128)
    d = rho.shape[0]
    q = max(1, int(np.ceil(np.log2(d))))
    lam, V = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    lam = np.clip(lam, 0.0, None)
    lam = lam / lam.sum()
    D = 1 << q
    amps = np.zeros((D, D), dtype=np.complex128)
    for k in range(d):
        amps[:d, k] = np.sqrt(lam[k]) * V[:, k]
    return SimState((("system", q), ("env", q)), amps.reshape(-1), seed)


# ---------------------------------------------------------------------------
# function-defined oracles
# ---------------------------------------------------------------------------

class PhaseOracle:
    """Multiplies by −1 every basis state whose register values satisfy the predicate."""

    def __init__(self, predicate: Callable, registers: Sequence[str]):
        self.predicate = predicate
        self.registers = tuple(registers)

    def signs(self, state: SimState) -> np.ndarray:
        dims = [1 << state.register_size(r) for r in self.registers]
        table = np.ones(dims)
        for idx in np.ndindex(*dims):
            if self.predicate(*idx):
                table[idx] = -1.0
        # broadcast the table across the full layout
        shape = []
        for n, q in state.layout:
            shape.append((1 << q) if n in self.registers else 1)
        order = [n for n in state.names if n in self.registers]
        table = np.transpose(table, [list(self.registers).index(n) for n in order])
        return np.broadcast_to(table.reshape(shape), [1 << q for _, q in state.layout]).reshape(-1)

    def apply_to(self, state: SimState) -> SimState:
        return state.apply_diagonal(self.signs(state))


class BitOracle:
    """XORs a fixed-point encoding of ``f(index values)`` into a value register."""

    def __init__(self, f: Callable, index_registers: Sequence[str], value_register: str,
                 value_qubits: int = 16, frac_bits: int = 12):
        if frac_bits > value_qubits:
            raise RepresentationError("fractional bits exceed the value register width")
        self.f = f
        self.index_registers = tuple(index_registers)
        self.value_register = value_register
        self.value_qubits = int(value_qubits)
        self.frac_bits = int(frac_bits)

    def encode(self, value: float) -> int:
        code = int(np.round(value * (1 << self.frac_bits)))
        if code < 0 or code >= (1 << self.value_qubits):
            need = max(code.bit_length(), 1) + (1 if code < 0 else 0)
            raise RepresentationError(
                f"value {value} needs {need} bits, register has {self.value_qubits}",
                required_bits=need, value=value)
        return code

    def decode(self, code: int) -> float:
        return code / float(1 << self.frac_bits)

    def apply_to(self, state: SimState) -> SimState:
        if state.register_size(self.value_register) != self.value_qubits:
            raise InvariantError("value register width does not match the oracle")
        t = state.tensor()
        names = state.names
        idx_axes = [names.index(r) for r in self.index_registers]
        v_axis = names.index(self.value_register)
        dims = [t.shape[a] for a in idx_axes]
        codes = np.zeros(dims, dtype=np.int64)
        for idx in np.ndindex(*dims):
            codes[idx] = self.encode(self.f(*idx))
        out = np.empty_like(t)
        nv = t.shape[v_axis]
        vals = np.arange(nv)
        # permutation |idx, v⟩ -> |idx, v XOR code(idx)⟩
        moved = np.moveaxis(t, idx_axes + [v_axis], list(range(len(idx_axes) + 1)))
        res = np.empty_like(moved)
        for idx in np.ndindex(*dims):
            res[idx][vals ^ codes[idx]] = moved[idx][vals]
        out = np.moveaxis(res, list(range(len(idx_axes) + 1)), idx_axes + [v_axis])
        return state._replace(out.reshape(-1))


def oracle_from_function(f: Callable, index_registers: Sequence[str], value_register: str,
                         value_qubits: int = 16, frac_bits: int = 12) -> BitOracle:
    return BitOracle(f, index_registers, value_register, value_qubits, frac_bits)


def phase_oracle(predicate: Callable, registers: Sequence[str]) -> PhaseOracle:
    return PhaseOracle(predicate, registers)
