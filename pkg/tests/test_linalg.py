import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qnpe.distance import purification_prep
from qnpe.errors import ConstructionError, ParameterError, RealAmplitudeError, SpanError
from qnpe.linalg import (KappaWarning, block_encoding_from_purification, block_encoding_from_unitary,
                         invert_block_encoded, inversion_queries, tomography, tomography_samples)
from qnpe.sim import complete_unitary, fidelity
from qnpe.store import build_store

TOY = np.array([[0.0, 0.0, 0.0], [1.0, 0.2, 0.0], [0.3, 1.1, 0.0], [-0.4, 0.5, 0.3]])


def toy_purification(eps=1e-5, seed=5):
    B = np.zeros((4, 4))
    B[0, [1, 2, 3]] = 1.0
    st, _ = purification_prep(build_store(TOY, "X-store"), build_store(B, "B-store"), 0, eps, seed=seed)
    diffs = TOY[0] - TOY[[1, 2, 3]]
    C = diffs @ diffs.T
    return st, C / np.trace(C)


def random_psd(rng, d):
    M = rng.normal(size=(d, d))
    A = M @ M.T + 0.1 * np.eye(d)
    return A / np.linalg.eigvalsh(A).max()


class TestBlockEncoding:
    def test_bell_prep_encodes_maximally_mixed(self):
        G = complete_unitary(np.array([1, 0, 0, 1]) / math.sqrt(2))
        be = block_encoding_from_unitary(G, 1)
        assert np.allclose(be.block(), np.eye(2) / 2, atol=1e-12)
        assert be.slack <= 1e-12

    def test_product_prep_encodes_projector(self):
        be = block_encoding_from_unitary(np.eye(4), 1)
        assert np.allclose(be.block(), np.diag([1.0, 0.0]), atol=1e-15)

    def test_three_neighbor_block_matches_dense(self):
        st, rho = toy_purification()
        be = block_encoding_from_purification(st, "j", target=np.pad(rho, ((1, 0), (1, 0))))
        assert be.slack <= 1e-8
        assert np.allclose(be.block()[:3, :3], rho, atol=1e-8)
        assert be.support == (1, 2, 3)

    def test_definition_inequality_on_random_purifications(self, rng):
        for _ in range(10):
            v = rng.normal(size=16) + 1j * rng.normal(size=16)
            v /= np.linalg.norm(v)
            be = block_encoding_from_unitary(complete_unitary(v), 2)
            psi = v.reshape(4, 4)
            assert np.linalg.norm(psi @ psi.conj().T - be.alpha * be.block(), 2) <= 1e-8
            assert np.allclose(be.U.conj().T @ be.U, np.eye(be.U.shape[0]), atol=1e-10)

    def test_mismatched_target_is_rejected(self):
        with pytest.raises(ConstructionError) as info:
            block_encoding_from_unitary(np.eye(4), 1, target=np.eye(2) / 2)
        assert info.value.details["measured_norm"] == pytest.approx(0.5)


class TestInversion:
    def test_identity_returns_input(self):
        b = np.array([0.6, 0.8])
        out, _ = invert_block_encoded(np.eye(2), b, 1.0, 0.01)
        assert fidelity(out, b) == pytest.approx(1.0, abs=1e-15)

    def test_hand_inversion(self):
        out, _ = invert_block_encoded(np.diag([2 / 3, 1 / 3]), np.ones(2) / math.sqrt(2), 3, 0.01)
        # eigenvalues pass through a t-bit grid, so the contract is fidelity >= 1 - eps
        assert fidelity(out, np.array([1.0, 2.0]) / math.sqrt(5)) >= 1 - 0.01

    @pytest.mark.parametrize("tier", ["spectral", "circuit"])
    def test_three_neighbor_toy(self, tier):
        st, rho = toy_purification()
        be = block_encoding_from_purification(st, "j")
        b = np.ones(3) / math.sqrt(3)
        lam = np.linalg.eigvalsh(rho)
        out, rep = invert_block_encoded(be, b, 1 / lam.min(), 0.01, tier=tier)
        assert fidelity(out.amplitudes[:3], np.linalg.pinv(rho) @ b) >= 1 - 0.01
        assert rep.queries == inversion_queries(1 / lam.min(), 0.01, 1.0, 1, be.ancilla_qubits, 1)

    def test_tiers_agree_on_grid(self, rng):
        R = np.linalg.qr(rng.normal(size=(2, 2)))[0]
        A = R @ np.diag([0.5, 0.25]) @ R.T
        a, _ = invert_block_encoded(A, [0.6, 0.8], 4, 0.05)
        b, _ = invert_block_encoded(A, [0.6, 0.8], 4, 0.05, tier="circuit")
        assert fidelity(a, b) >= 1 - 1e-6

    def test_random_psd_against_pinv(self, rng):
        for _ in range(50):
            d = int(rng.integers(2, 9))
            A = random_psd(rng, d)
            b = rng.normal(size=d)
            out, _ = invert_block_encoded(A, b, 1 / np.linalg.eigvalsh(A).min(), 0.01)
            assert fidelity(out.amplitudes[:d], np.linalg.pinv(A) @ b) >= 1 - 0.01

    def test_span_violation(self):
        with pytest.raises(SpanError):
            invert_block_encoded(np.diag([1.0, 0.0]), [1.0, 1.0], 4, 0.01)

    def test_pseudo_projects_kernel(self):
        out, rep = invert_block_encoded(np.diag([1.0, 0.0]), [1.0, 1.0], 4, 0.01, pseudo=True)
        assert fidelity(out, [1.0, 0.0]) == pytest.approx(1.0, abs=1e-15)
        assert rep.dropped_weight == pytest.approx(1 / math.sqrt(2))

    def test_kappa_underestimate_warns(self):
        with pytest.warns(KappaWarning):
            invert_block_encoded(np.diag([1.0, 0.3]), [1.0, 1.0], 2.0, 0.01)

    def test_bad_parameters(self):
        with pytest.raises(ParameterError):
            invert_block_encoded(np.eye(2), [1.0, 0.0], 0.5, 0.01)


class TestTomography:
    def test_basis_state(self):
        est, _ = tomography(np.array([1.0, 0, 0, 0]), 4, 0.05, seed=1)
        assert np.linalg.norm(est - [1, 0, 0, 0]) <= 0.05

    def test_uniform_state(self):
        est, _ = tomography(np.ones(4) / 2, 4, 0.05, seed=1)
        assert np.linalg.norm(est - 0.5) <= 0.05

    def test_coverage_with_signs(self, rng):
        x = rng.normal(size=8)
        x /= np.linalg.norm(x)
        # the estimate is defined up to a global sign
        hits = sum(min(np.linalg.norm(e - x), np.linalg.norm(e + x)) <= 0.05
                   for e in (tomography(x, 8, 0.05, seed=s)[0] for s in range(100)))
        assert hits >= 95

    def test_sample_count(self):
        _, rep = tomography(np.ones(8) / math.sqrt(8), 8, 0.05, seed=0)
        assert tomography_samples(8, 0.05) == math.ceil(36 * 8 * math.log(8) / 0.05 ** 2)
        # magnitude and sign passes each use N samples
        assert rep.samples == 2 * tomography_samples(8, 0.05)

    def test_tiers_agree(self, rng):
        x = rng.normal(size=8)
        x /= np.linalg.norm(x)
        a, _ = tomography(x, 8, 0.05, seed=3)
        b, _ = tomography(x, 8, 0.05, seed=3, tier="circuit")
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_complex_state_rejected(self):
        with pytest.raises(RealAmplitudeError):
            tomography(np.array([1, 1j]) / math.sqrt(2), 2, 0.05)

    def test_global_phase_is_removed(self):
        x = np.array([0.6, -0.8])
        est, _ = tomography(np.exp(0.4j) * x, 2, 0.05, seed=2)
        assert min(np.linalg.norm(est - x), np.linalg.norm(est + x)) <= 0.05

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_output_is_near_unit(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=4)
        x /= np.linalg.norm(x)
        est, _ = tomography(x, 4, 0.1, seed=seed)
        assert abs(np.linalg.norm(est) - 1) <= 1e-12
