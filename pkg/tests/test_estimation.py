import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qnpe.errors import BranchError, NoOverlapError, ParameterError
from qnpe.estimation import (TIERS, _qae_circuit_law, amplitude_amplify, amplitude_estimation,
                             boosted_amplitude_estimation, branch_budget, chebyshev_t, fixed_point_search,
                             good_fidelity, grover_probability, parallel_amplitude_handling, qae_error_bound,
                             qae_law, qae_outcome_law, required_iterations, schedule_for)
from qnpe.sim import H, SimState


def qubit(a):
    return SimState.from_amplitudes([("q", 1)], [math.sqrt(1 - a), math.sqrt(a)])


GOOD = np.array([False, True])


def analytic_qae_law(a, t):
    # independent textbook law: P(y) = |(1/N) Σ_k e^{2πik(θ/π - y/N)}|² averaged over the ±θ branches
    N = 1 << t
    theta = math.asin(math.sqrt(a))
    probs = np.zeros(N)
    for y in range(N):
        for phase in (theta / math.pi, 1 - theta / math.pi):
            s = sum(np.exp(2j * math.pi * k * (phase - y / N)) for k in range(N)) / N
            probs[y] += 0.5 * abs(s) ** 2
    return probs


class TestAmplitudeEstimation:
    def test_hadamard_on_grid(self):
        r = amplitude_estimation(SimState.init([("q", 1)]).apply(H, "q"), GOOD, 3, seed=1)
        assert r.point_estimate == pytest.approx(0.5, abs=1e-15)
        assert r.queries == 7

    def test_no_marked_items(self):
        for tier in TIERS:
            assert amplitude_estimation(qubit(0.0), GOOD, 5, seed=2, tier=tier).point_estimate == 0.0

    def test_bad_bits(self):
        with pytest.raises(ParameterError):
            amplitude_estimation(qubit(0.3), GOOD, 0)

    def test_outcome_law_matches_textbook(self):
        a = math.sin(math.pi / 5) ** 2
        assert np.allclose(qae_outcome_law(a, 6), analytic_qae_law(a, 6), atol=1e-12)
        assert np.allclose(_qae_circuit_law(qubit(a), GOOD, 6), analytic_qae_law(a, 6), atol=1e-10)

    def test_coverage_monte_carlo(self):
        a = math.sin(math.pi / 5) ** 2
        hits = sum(abs(amplitude_estimation(qubit(a), GOOD, 6, seed=s).point_estimate - a) <= qae_error_bound(a, 6)
                   for s in range(200))
        assert hits >= 0.81 * 200

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.0, 1.0), st.integers(1, 8), st.integers(0, 10_000))
    def test_estimates_lie_on_grid(self, a, t, seed):
        r = amplitude_estimation(qubit(a), GOOD, t, seed=seed)
        assert r.point_estimate == math.sin(math.pi * r.y / (1 << t)) ** 2

    def test_tiers_draw_identical_outcomes(self):
        a = math.sin(math.pi / 5) ** 2
        ys = {tier: [amplitude_estimation(qubit(a), GOOD, 5, seed=s, tier=tier).y for s in range(50)]
              for tier in TIERS}
        assert ys["circuit"] == ys["spectral"]

    def test_windowed_law_keeps_mass(self):
        law = qae_law(0.3, 30)
        assert law.probs.sum() + law.tail == pytest.approx(1.0, abs=1e-12)
        assert law.tail < 1e-2

    def test_boosting_concentrates(self):
        a = 0.37
        fails = sum(abs(boosted_amplitude_estimation(qubit(a), GOOD, 6, 0.01, seed=s).point_estimate - a)
                    > qae_error_bound(a, 6) for s in range(100))
        assert fails <= 3


class TestAmplify:
    def test_one_of_four(self):
        s = SimState.from_amplitudes([("q", 2)], [0.5] * 4)
        for tier in TIERS:
            assert amplitude_amplify(s, [False, False, False, True], 1, tier)[1] == pytest.approx(1.0, abs=1e-12)

    def test_zero_iterations(self):
        for tier in TIERS:
            assert amplitude_amplify(qubit(0.2), GOOD, 0, tier)[1] == pytest.approx(0.2, abs=1e-15)

    def test_pair_register_closed_form(self):
        mask = np.zeros(64, dtype=bool)
        mask[[1, 5, 9, 12, 20, 22, 33, 40, 41, 50, 58, 63]] = True
        s = SimState.from_amplitudes([("ij", 6)], np.ones(64) / 8)
        t = math.ceil(math.pi / 4 * math.sqrt(64 / 12))
        theta = math.asin(math.sqrt(12 / 64))
        for tier in TIERS:
            out, p = amplitude_amplify(s, mask, t, tier)
            assert abs(p - math.sin((2 * t + 1) * theta) ** 2) <= 1e-10
            assert abs(float(np.sum(np.abs(out.amplitudes[mask]) ** 2)) - p) <= 1e-10
        assert p > 0.5

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 0.99), st.integers(0, 12))
    def test_circuit_matches_closed_form(self, a, t):
        p = amplitude_amplify(qubit(a), GOOD, t, "circuit")[1]
        assert abs(p - grover_probability(a, t)) <= 1e-9


def arccot(x):
    # principal branch with range (0, π)
    return math.pi / 2 - math.atan(x)


class TestFixedPoint:
    def test_schedule_angles_closed_form(self):
        sch = schedule_for(31, 0.1)
        L = sch.L
        gamma = 1 / math.cosh(math.acosh(1 / 0.1) / L)
        assert sch.l == math.ceil((31 - 1) / 2)
        for k, a in enumerate(sch.alphas, start=1):
            assert abs(a - 2 * arccot(math.tan(2 * math.pi * k / L) * math.sqrt(1 - gamma ** 2))) <= 1e-12
        for k in range(1, sch.l + 1):
            assert sch.betas[sch.l - k] == -sch.alphas[k - 1]

    def test_chebyshev_identity(self, rng):
        for theta in rng.uniform(0, math.pi, 20):
            for L in (3, 7, 31):
                assert abs(chebyshev_t(L, math.cos(theta)) - math.cos(L * theta)) <= 1e-10

    def test_already_good(self):
        for tier in TIERS:
            out = fixed_point_search(qubit(1.0), GOOD, schedule_for(9, 0.1), tier)
            assert good_fidelity(out, qubit(1.0), GOOD) == pytest.approx(1.0, abs=1e-12)

    def test_design_point(self):
        L = 2 * math.ceil(math.log2(20) / 0.3)
        sch = schedule_for(L, 0.1)
        for tier in TIERS:
            out = fixed_point_search(qubit(0.09), GOOD, sch, tier)
            assert good_fidelity(out, qubit(0.09), GOOD) >= 0.99

    @pytest.mark.parametrize("delta_prime", [0.1, 0.03, 1e-3])
    def test_sweep_above_design_overlap(self, delta_prime):
        sch = schedule_for(required_iterations(0.3, delta_prime), delta_prime)
        lo = sch.design_overlap() ** 2
        for lam in np.linspace(lo, 1.0, 20):
            for tier in TIERS:
                out = fixed_point_search(qubit(lam), GOOD, sch, tier)
                assert 1 - good_fidelity(out, qubit(lam), GOOD) <= delta_prime ** 2 + 1e-12

    def test_tiers_agree(self):
        sch = schedule_for(21, 0.05)
        for lam in (0.2, 0.5, 0.8):
            a = fixed_point_search(qubit(lam), GOOD, sch, "circuit").amplitudes
            b = fixed_point_search(qubit(lam), GOOD, sch, "spectral").amplitudes
            assert abs(np.vdot(a, b)) ** 2 >= 1 - 1e-6

    def test_zero_overlap(self):
        with pytest.raises(NoOverlapError):
            fixed_point_search(qubit(0.0), GOOD, schedule_for(5, 0.1))


def local_state(rng, lam):
    g = rng.normal(size=2)
    b = rng.normal(size=2)
    return np.concatenate([math.sqrt(lam) * g / np.linalg.norm(g), math.sqrt(1 - lam) * b / np.linalg.norm(b)])


LOCAL_GOOD = np.array([True, True, False, False])


class TestParallel:
    def test_equal_overlaps_get_equal_budgets(self, rng):
        v = local_state(rng, 0.3)
        branches = {(0,): (0.5, v), (1,): (0.5, v)}
        _, rep = parallel_amplitude_handling([("i", 1)], branches, [("loc", 2)], LOCAL_GOOD, 0.05, 0.3, seed=4)
        a, b = rep.branches
        assert a.budget == b.budget
        assert a.fidelity == pytest.approx(b.fidelity, abs=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.05, 1.0), st.floats(0.5, 1.5), st.floats(1e-4, 0.5))
    def test_half_accurate_estimate_meets_bound(self, sin_psi, factor, delta_prime):
        estimate = factor * sin_psi
        need = math.log2(2 / delta_prime) / sin_psi
        assert branch_budget(estimate, delta_prime) >= need

    def test_zero_estimate_names_branch(self):
        with pytest.raises(BranchError) as info:
            branch_budget(0.0, 0.1, (2, 3))
        assert info.value.details["branch"] == [2, 3]

    def test_four_branch_joint_fidelity(self, rng):
        delta_prime = 0.05
        lams = {(0, 0): 0.3, (0, 1): 0.5, (1, 0): 0.15, (1, 1): 0.8}
        weights = dict(zip(lams, rng.dirichlet(np.ones(4))))
        locs = {k: local_state(rng, lam) for k, lam in lams.items()}
        branches = {k: (weights[k], locs[k]) for k in lams}
        state, rep = parallel_amplitude_handling([("i", 1), ("j", 1)], branches, [("loc", 2)], LOCAL_GOOD,
                                                 delta_prime, 0.3, seed=9, phase_hints=lams)
        ideal = np.zeros((2, 2, 4), dtype=np.complex128)
        for k, v in locs.items():
            g = np.where(LOCAL_GOOD, v, 0)
            ideal[k] = math.sqrt(weights[k]) * g / np.linalg.norm(g)
        fid = abs(np.vdot(ideal.reshape(-1), state.amplitudes)) ** 2
        assert fid >= 1 - 4 * delta_prime ** 2
        assert all(b.fidelity >= 1 - delta_prime ** 2 for b in rep.branches)
