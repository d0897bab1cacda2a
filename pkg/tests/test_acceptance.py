"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL`` line that the terminal summary prints
under "acceptance criteria".  Run alone with::

    pytest tests/test_acceptance.py -v
"""

import hashlib
import json
import math
import sys
import time
import warnings

import numpy as np
import pytest

from qnpe import classical
from qnpe.cli import main as cli_main
from qnpe.datasets import clusters, generate
from qnpe.estimation import amplitude_estimation, fixed_point_search, good_fidelity, required_iterations, schedule_for
from qnpe.linalg import block_encoding_from_unitary, invert_block_encoded
from qnpe.pipeline import ImbalanceWarning, QnpeConfig, find_neighbors_quantum, run_quantum_npe, weight_matrix_quantum
from qnpe.scaling import SWEEP_M, fit_points, growth, sweep_d, sweep_m, sweep_n
from qnpe.sim import SimState, complete_unitary, fidelity
from qnpe.store import DataMatrix, build_store

pytestmark = pytest.mark.slow

RUNS = 100


def report(record_property, number, title, checks, seconds, limit):
    """Record one line per criterion; ``checks`` maps a description to ``(ok, measured)``."""
    ok = all(c for c, _ in checks.values()) and seconds < limit
    detail = "; ".join(f"{name}: {measured}" for name, (_, measured) in checks.items())
    line = f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail}; runtime {seconds:.1f}s < {limit}s"
    record_property("acceptance", line)
    print(line)
    return ok


def test_criterion_1_classical_oracle(record_property):
    t0 = time.perf_counter()
    X = DataMatrix(generate("plane", 16, 5, 0.0, seed=0))
    run = classical.run_classical_npe(X, k=5, d=2)
    seconds = time.perf_counter() - t0
    W = run.weights.entries
    M = run.spectral.M
    # residual recomputed from W directly rather than read from the run
    residual = float(np.sum((X.entries - W @ X.entries) ** 2))
    row_sum = float(np.max(np.abs(W.sum(axis=1) - 1.0)))
    leak = float(np.linalg.norm(M @ np.ones(16)))
    fro = float(np.linalg.norm(M))
    assert report(record_property, 1, "classical oracle", {
        "residual <= 1e-8": (residual <= 1e-8, f"{residual:.2e}"),
        "row sums within 1e-9": (row_sum <= 1e-9, f"{row_sum:.2e}"),
        "|M1| <= 1e-9 |M|_F": (leak <= 1e-9 * fro, f"{leak:.2e} vs {1e-9 * fro:.2e}"),
    }, seconds, 1)


def test_criterion_2_neighbor_finding(record_property):
    X = clusters(8, 4)
    r = 1.0
    d = np.linalg.norm(X[:, None] - X[None], axis=-1)[~np.eye(8, dtype=bool)]
    # the dataset must leave a 20% margin on both sides of r
    assert not np.any((d > 0.8 * r) & (d < 1.2 * r))
    truth = classical.radius_neighbors(X, r)
    t0 = time.perf_counter()
    exact = within = 0
    store = build_store(X, "X-store")
    for seed in range(RUNS):
        rep = find_neighbors_quantum(store, r, QnpeConfig(r=r, seed=seed))
        exact += rep.neighbors.sets == truth.sets
        within += abs(rep.K_estimate - truth.K) <= truth.K / 2
    seconds = time.perf_counter() - t0
    assert report(record_property, 2, "quantum neighbor finding", {
        "sets exact >= 90/100": (exact >= 90, f"{exact}/{RUNS}"),
        "K within K/2 >= 95/100": (within >= 95, f"{within}/{RUNS}"),
    }, seconds, 120)


def test_criterion_3_weight_matrix(record_property):
    X = clusters(8, 4)
    Q = classical.radius_neighbors(X, 1.0)
    Wc = classical.assemble_weight_matrix(X, Q, mode="pinv").entries
    t0 = time.perf_counter()
    good = 0
    worst = 0.0
    for seed in range(RUNS):
        W, _ = weight_matrix_quantum(build_store(X, "X-store"), build_store(Q.indicator(), "B-store"),
                                     QnpeConfig(r=1.0, seed=seed, tomography_delta=0.03), Q)
        err = float(np.max(np.linalg.norm(W.entries - Wc, axis=1)))
        worst = max(worst, err)
        good += err <= 0.05
    seconds = time.perf_counter() - t0
    assert report(record_property, 3, "quantum weight matrix", {
        "max row error <= 0.05 in >= 90/100": (good >= 90, f"{good}/{RUNS}, worst {worst:.3e}"),
    }, seconds, 300)


def test_criterion_4_embedding(record_property):
    X = DataMatrix(generate("swiss-roll", 8, 8, 0.0, seed=0))
    r = 1.3
    t0 = time.perf_counter()
    angles_ok = sigma_ok = 0
    worst_angle = 0.0
    for seed in range(RUNS):
        # the swiss-roll sample is unbalanced at this radius; the warning is expected
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ImbalanceWarning)
            res = run_quantum_npe(X, QnpeConfig(r=r, d=2, seed=seed, weights_source="classical"))
        emb = res.error_report["embedding"]
        angle = max(emb["principal_angles_deg"])
        worst_angle = max(worst_angle, angle)
        angles_ok += angle <= 5.0
        s = res.sigma_list
        threshold = res.error_report["embedding"]["threshold"]
        sigma_ok += (len(s) == 2 and s[0] <= s[1] and min(s) > threshold
                     and max(emb["sigma_deviation"]) <= emb["sigma_bound"])
    seconds = time.perf_counter() - t0
    assert report(record_property, 4, "quantum embedding", {
        "angles <= 5 deg in >= 90/100": (angles_ok >= 90, f"{angles_ok}/{RUNS}, worst {worst_angle:.3f} deg"),
        "sigma ordered, above v, within delta|D|_F": (sigma_ok == RUNS, f"{sigma_ok}/{RUNS}"),
    }, seconds, 300)


def _qubit(a):
    return SimState.from_amplitudes([("q", 1)], [math.sqrt(1 - a), math.sqrt(a)])


def test_criterion_5_subroutines(record_property):
    rng = np.random.default_rng(5)
    good_mask = np.array([False, True])
    t0 = time.perf_counter()

    trials, t = 200, 6
    M = 1 << t
    hits = 0
    for s in range(trials):
        a = float(rng.uniform(0.05, 0.95))
        bound = 2 * math.pi * math.sqrt(a * (1 - a)) / M + math.pi ** 2 / M ** 2
        hits += abs(amplitude_estimation(_qubit(a), good_mask, t, seed=s).point_estimate - a) <= bound
    qae_ok = hits >= math.ceil(8 / math.pi ** 2 * trials)

    dp = 0.05
    sch = schedule_for(required_iterations(0.3, dp), dp)
    lo = sch.design_overlap() ** 2
    worst_fp = max(1 - good_fidelity(fixed_point_search(_qubit(lam), good_mask, sch), _qubit(lam), good_mask)
                   for lam in np.linspace(lo, 1.0, 20))

    worst_slack = 0.0
    for _ in range(50):
        v = rng.normal(size=16) + 1j * rng.normal(size=16)
        v /= np.linalg.norm(v)
        be = block_encoding_from_unitary(complete_unitary(v), 2)
        psi = v.reshape(4, 4)
        worst_slack = max(worst_slack, float(np.linalg.norm(psi @ psi.conj().T - be.alpha * be.block(), 2)))

    eps = 0.01
    worst_inv = 1.0
    for _ in range(50):
        d = int(rng.integers(2, 9))
        G = rng.normal(size=(d, d))
        A = G @ G.T + 0.1 * np.eye(d)
        A /= np.linalg.eigvalsh(A).max()
        b = rng.normal(size=d)
        out, _ = invert_block_encoded(A, b, 1 / np.linalg.eigvalsh(A).min(), eps)
        worst_inv = min(worst_inv, fidelity(out.amplitudes[:d], np.linalg.pinv(A) @ b))
    seconds = time.perf_counter() - t0
    assert report(record_property, 5, "subroutine bounds", {
        "QAE coverage >= 8/pi^2": (qae_ok, f"{hits}/{trials}"),
        "fixed-point infidelity <= delta'^2": (worst_fp <= dp ** 2, f"{worst_fp:.2e} vs {dp ** 2:.2e}"),
        "block-encoding slack <= 1e-8": (worst_slack <= 1e-8, f"{worst_slack:.2e}"),
        "inversion fidelity >= 1 - eps": (worst_inv >= 1 - eps, f"{worst_inv:.6f}"),
    }, seconds, 180)


def test_criterion_6_scaling(record_property):
    t0 = time.perf_counter()
    fits = fit_points(sweep_m(SWEEP_M))
    n_growth = growth(sweep_n([4, 8]), "weights")
    d_fit = fit_points(sweep_d(), "d")["embedding"].exponent
    seconds = time.perf_counter() - t0
    e = {s: f.exponent for s, f in fits.items()}
    assert report(record_property, 6, "scaling", {
        "stage-1 m-exponent 1.5 +- 0.3": (abs(e["neighbors"] - 1.5) <= 0.3, f"{e['neighbors']:.3f}"),
        "stage-2 m-exponent 1.0 +- 0.3": (abs(e["weights"] - 1.0) <= 0.3, f"{e['weights']:.3f}"),
        "stage-3 m-exponent 1.0 +- 0.3": (abs(e["embedding"] - 1.0) <= 0.3, f"{e['embedding']:.3f}"),
        "stage-2 n-doubling growth < 25%": (n_growth < 0.25, f"{100 * n_growth:.1f}%"),
        "stage-3 d-exponent 1 +- 0.2": (abs(d_fit - 1.0) <= 0.2, f"{d_fit:.3f}"),
    }, seconds, 900)


def _digests(out_dir):
    manifest = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
    return {name: hashlib.sha256((out_dir / name).read_bytes()).hexdigest() for name in manifest["outputs"]}


def test_criterion_7_determinism(record_property, tmp_path):
    t0 = time.perf_counter()
    commands = {
        "gen": lambda out: ["gen", "--dataset", "clusters", "--m", "8", "--n", "4", "--noise", "0.01",
                            "--seed", "4", "--out-dir", out],
        "run-classical": lambda out: ["run", "--dataset", tmp_path / "gen-a" / "data.csv", "--k", "3",
                                      "--out-dir", out],
        "run-quantum": lambda out: ["run", "--dataset", tmp_path / "gen-a" / "data.csv", "--mode", "quantum",
                                    "--r", "1.0", "--seed", "9", "--dump-states", "--out-dir", out],
        "compare": lambda out: ["compare", tmp_path / "run-classical-a" / "result.json",
                                tmp_path / "run-quantum-a" / "result.json", "--out-dir", out],
        "scaling": lambda out: ["scaling", "--axis", "n", "--sizes", "4,5,6,8", "--m", "8", "--out-dir", out],
    }
    mismatched = []
    for name, argv in commands.items():
        digests = []
        for rep in ("a", "b"):
            out = tmp_path / f"{name}-{rep}"
            assert cli_main([str(a) for a in argv(out)]) == 0
            digests.append(_digests(out))
        if digests[0] != digests[1]:
            mismatched.append(name)
    seconds = time.perf_counter() - t0
    assert report(record_property, 7, "determinism", {
        "byte-identical outputs": (not mismatched, f"{len(commands) - len(mismatched)}/{len(commands)} commands"),
    }, seconds, 60)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
