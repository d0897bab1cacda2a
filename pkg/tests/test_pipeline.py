import json
import math
import warnings

import numpy as np
import pytest
from scipy.stats import spearmanr

from qnpe import classical
from qnpe.datasets import clusters
from qnpe.errors import DegenerateRowError, NoNeighborsError, ParameterError, StepError
from qnpe.pipeline import (
    ImbalanceWarning,
    QnpeConfig,
    amplification_rounds,
    find_neighbors_quantum,
    run_quantum_npe,
    sample_count,
    transformation_quantum,
    weight_matrix_quantum,
    weight_row_quantum,
)
from qnpe.store import DataMatrix, NeighborSets, build_store


def stores(X, Q):
    return build_store(X, "X-store"), build_store(Q.indicator(), "B-store")


def knn_sets_of_sizes(X, sizes):
    sets = []
    for i, k in enumerate(sizes):
        d = np.linalg.norm(X - X[i], axis=1)
        d[i] = np.inf
        sets.append(tuple(sorted(np.argsort(d)[:k].tolist())))
    return NeighborSets(tuple(sets))


class TestConfig:
    @pytest.mark.parametrize("field,value", [("r", 0.0), ("eps", -1.0), ("d", 0), ("tier", "analog"),
                                             ("alpha", -0.1), ("delta", 0.7), ("weights_source", "oracle")])
    def test_rejects(self, field, value):
        kwargs = {"r": 1.0, field: value}
        with pytest.raises(ParameterError):
            QnpeConfig(**kwargs)


class TestNeighbors:
    cfg = QnpeConfig(r=1.0, seed=0)

    def test_two_points(self):
        rep = find_neighbors_quantum(build_store(np.array([[0.0, 0.0], [0.5, 0.0]]), "X-store"), 1.0, self.cfg)
        assert rep.neighbors.sets == ((1,), (0,))
        assert abs(rep.K_estimate - 2) <= 1

    def test_all_within_radius(self):
        X = np.array([[0.0, 0.0], [0.3, 0.0], [0.0, 0.3], [0.3, 0.3]])
        rep = find_neighbors_quantum(build_store(X, "X-store"), 1.0, self.cfg)
        assert rep.K_marked == 12
        assert abs(rep.K_estimate - 12) <= 6
        # a = 12/16 exceeds 1/2, so no Grover round is needed
        assert rep.iterations == 0
        assert all(len(q) == 3 for q in rep.neighbors.sets)

    def test_soundness_on_random_data(self, rng):
        X = rng.uniform(size=(12, 3))
        r = 0.5
        cfg = QnpeConfig(r=r, seed=3)
        rep = find_neighbors_quantum(build_store(X, "X-store"), r, cfg)
        for i, j in rep.neighbors.pairs():
            assert np.sum((X[i] - X[j]) ** 2) <= r * r + cfg.neighbor_eps1

    def test_no_neighbors(self):
        X = np.array([[0.0, 0.0], [5.0, 0.0]])
        with pytest.raises(NoNeighborsError):
            find_neighbors_quantum(build_store(X, "X-store"), 1.0, self.cfg)

    def test_amplification_rounds_closed_form(self):
        a = 1 / 64
        t = amplification_rounds(a, 8)
        assert t == math.ceil(math.pi / 4 * 8)
        assert math.sin((2 * t + 1) * math.asin(math.sqrt(a))) ** 2 > 0.5

    def test_sample_count_at_least_coupon_base(self):
        for K in (2, 10, 100):
            assert sample_count(K) >= math.ceil(3 * K * math.log(K))


class TestWeightRows:
    cfg = QnpeConfig(r=3.0, eps=0.01, seed=0)

    def test_symmetric_pair(self):
        # neighbors mirror each other across the line through x_0, so C = 2I
        X = np.array([[0.0, 1.0], [1.0, 0.0], [-1.0, 0.0]])
        Q = NeighborSets(((1, 2), (0,), (0,)))
        row = weight_row_quantum(*stores(X, Q), 0, self.cfg)
        assert np.allclose(row.weights, [0.5, 0.5], atol=0.01)
        assert row.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_collinear_rank_one_matches_pinv(self):
        # x_0 = 0 with neighbors at 1 and 2 on a line: C = [[1,2],[2,4]]
        X = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        Q = NeighborSets(((1, 2), (0, 2), (0, 1)))
        row = weight_row_quantum(*stores(X, Q), 0, self.cfg)
        C = classical.neighborhood_correlation(X, Q, 0)
        assert np.allclose(C.dense, [[1.0, 2.0], [2.0, 4.0]], atol=1e-12)
        oracle = classical.solve_weights_row(C, mode="pinv")
        assert np.allclose(oracle, [1 / 3, 2 / 3], atol=1e-12)
        assert np.linalg.norm(row.weights - oracle) <= 0.05

    def test_orthogonal_range_is_degenerate(self):
        # C = [[1,-1],[-1,1]] annihilates 1, so C⁺1 = 0
        X = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
        Q = NeighborSets(((1, 2), (0,), (0,)))
        with pytest.raises(DegenerateRowError):
            weight_row_quantum(*stores(X, Q), 0, self.cfg)

    def test_square_corners(self):
        X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        Q = classical.radius_neighbors(X, 1.1)
        W, _ = weight_matrix_quantum(*stores(X, Q), QnpeConfig(r=1.1, seed=0), Q)
        Wc = classical.assemble_weight_matrix(X, Q, mode="pinv")
        assert np.max(np.linalg.norm(W.entries - Wc.entries, axis=1)) <= 0.05

    def test_support_and_simplex(self, rng):
        X = rng.normal(size=(8, 4))
        Q = classical.knn_neighbors(X, 3)
        W, rows = weight_matrix_quantum(*stores(X, Q), QnpeConfig(r=5.0, seed=1), Q)
        for i, row in enumerate(rows):
            assert row.support == Q.sets[i]
            assert set(np.flatnonzero(W.entries[i])) <= set(Q.sets[i])
        assert np.allclose(W.entries.sum(axis=1), 1.0, atol=1e-12)

    def test_rows_close_to_classical(self, rng):
        X = rng.normal(size=(8, 4))
        Q = classical.knn_neighbors(X, 3)
        W, _ = weight_matrix_quantum(*stores(X, Q), QnpeConfig(r=5.0, seed=2), Q)
        Wc = classical.assemble_weight_matrix(X, Q, mode="pinv")
        assert np.max(np.linalg.norm(W.entries - Wc.entries, axis=1)) <= 0.05

    def test_permutation_moves_rows(self, rng):
        # branch seeds follow the row index, so rows agree to the tomography budget, not bitwise
        X = rng.normal(size=(6, 4))
        perm = rng.permutation(6)
        Q = classical.knn_neighbors(X, 3)
        cfg = QnpeConfig(r=5.0, seed=0, tomography_delta=0.01)
        W, _ = weight_matrix_quantum(*stores(X, Q), cfg, Q)
        Qp = Q.permuted(perm)
        Wp, _ = weight_matrix_quantum(*stores(X[perm], Qp), cfg, Qp)
        assert np.max(np.abs(Wp.entries - W.entries[np.ix_(perm, perm)])) <= 2 * 0.01

    def test_ledger_tracks_k_times_kappa(self, rng):
        X = rng.normal(size=(10, 8))
        Q = knn_sets_of_sizes(X, [1 + i % 5 for i in range(10)])
        _, rows = weight_matrix_quantum(*stores(X, Q), QnpeConfig(r=10.0, seed=0), Q)
        cost = [len(r.support) * r.kappa for r in rows]
        rho = spearmanr(cost, [float(r.queries) for r in rows]).statistic
        assert rho > 0.8

    def test_tighter_tomography_never_worse(self, rng):
        X = rng.normal(size=(10, 8))
        Q = knn_sets_of_sizes(X, [1 + i % 5 for i in range(10)])
        Wc = classical.assemble_weight_matrix(X, Q, mode="pinv").entries
        errs = []
        for td in (0.08, 0.04, 0.02, 0.01):
            W, _ = weight_matrix_quantum(*stores(X, Q), QnpeConfig(r=10.0, seed=0, tomography_delta=td), Q)
            errs.append(np.linalg.norm(W.entries - Wc))
        assert all(b <= a for a, b in zip(errs, errs[1:]))


class TestTransformation:
    def _d_store(self, X, k=3):
        Q = classical.knn_neighbors(X, k)
        W = classical.assemble_weight_matrix(X, Q)
        return build_store(np.eye(X.shape[0]) - W.entries, "D-store", neighbors=Q)

    @pytest.mark.parametrize("alpha", [0.0, 1.0])
    def test_identity_design(self, rng, alpha):
        base = rng.normal(size=(8, 3))
        tr = transformation_quantum(self._d_store(base), build_store(np.eye(8), "X-store"),
                                    QnpeConfig(r=1.0, d=2), alpha=alpha)
        for j in range(2):
            z = tr.z_states[:, j]
            assert abs(tr.a_states[:, j] @ z) / np.linalg.norm(z) == pytest.approx(1.0, abs=1e-9)

    def test_random_square_matches_ridge(self, rng):
        X = rng.normal(size=(8, 8))
        alpha = classical.default_alpha(X)
        tr = transformation_quantum(self._d_store(X), build_store(X, "X-store"), QnpeConfig(r=1.0, d=2), alpha)
        for j in range(tr.a_states.shape[1]):
            ac = classical.ridge_regress(X, tr.z_states[:, j], alpha)
            assert abs(tr.a_states[:, j] @ ac) / np.linalg.norm(ac) >= 0.98

    def test_sigma_ascending_above_threshold(self, rng):
        X = rng.normal(size=(8, 4))
        tr = transformation_quantum(self._d_store(X), build_store(X, "X-store"), QnpeConfig(r=1.0, d=3))
        s = tr.sigma_list
        assert all(a <= b for a, b in zip(s, s[1:]))
        assert min(s) > tr.threshold
        assert np.allclose(np.linalg.norm(tr.a_states, axis=0), 1.0, atol=1e-9)

    def test_exhausted_spectrum(self, rng):
        X = rng.normal(size=(4, 3))
        with pytest.raises(ParameterError):
            transformation_quantum(self._d_store(X, 2), build_store(X, "X-store"), QnpeConfig(r=1.0, d=4))


class TestRun:
    X = clusters(8, 4)

    def test_end_to_end_small(self):
        res = run_quantum_npe(DataMatrix(self.X), QnpeConfig(r=1.0, d=2, seed=0))
        assert res.neighbors == classical.radius_neighbors(self.X, 1.0)
        assert res.error_report["weights"]["max_row_error"] <= 0.05
        assert np.allclose(np.linalg.norm(res.a_states, axis=0), 1.0, atol=1e-9)
        assert list(res.sigma_list) == sorted(res.sigma_list)

    def test_ledger_complete(self):
        res = run_quantum_npe(self.X, QnpeConfig(r=1.0, d=2, seed=0))
        led = res.query_ledger
        assert set(led.stages) == {"neighbors", "weights", "embedding"}
        assert all(led.stage_total(s) > 0 for s in led.stages)
        assert led.total == sum(led.stage_total(s) for s in led.stages)
        assert led.to_dict()["total"] == led.total

    def test_deterministic(self):
        a = run_quantum_npe(DataMatrix(self.X), QnpeConfig(r=1.0, seed=5)).to_dict()
        b = run_quantum_npe(DataMatrix(self.X), QnpeConfig(r=1.0, seed=5)).to_dict()
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_no_neighbors_tagged_step_one(self):
        with pytest.raises(StepError) as info:
            run_quantum_npe(self.X, QnpeConfig(r=0.01, seed=0))
        assert info.value.step == 1
        assert info.value.cause.code == "no-neighbors"

    def test_degenerate_row_tagged_step_six(self):
        X = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
        Q = NeighborSets(((1, 2), (0,), (0,)))
        with pytest.raises(StepError) as info:
            run_quantum_npe(X, QnpeConfig(r=1.5, seed=0), neighbors=Q)
        assert info.value.step == 6
        assert info.value.details["row"] == 0

    def test_imbalance_warning(self, rng):
        X = rng.normal(size=(8, 6))
        Q = knn_sets_of_sizes(X, [5, 1, 1, 1, 1, 1, 1, 1])
        with pytest.warns(ImbalanceWarning):
            run_quantum_npe(X, QnpeConfig(r=5.0, d=1, weights_source="classical"), neighbors=Q)

    def test_balanced_is_quiet(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error", ImbalanceWarning)
            run_quantum_npe(self.X, QnpeConfig(r=1.0, weights_source="classical"))
