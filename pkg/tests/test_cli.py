import json
import subprocess

import numpy as np
import pytest

from qnpe.cli import compare_results, main
from qnpe.errors import ComparisonError
from qnpe.schemas import validate


def run_cli(*argv):
    return main([str(a) for a in argv])


def read_json(path):
    return json.loads(path.read_text(encoding="utf-8"))


@pytest.fixture
def plane_csv(tmp_path):
    assert run_cli("gen", "--dataset", "plane", "--m", 16, "--n", 5, "--out-dir", tmp_path / "gen") == 0
    return tmp_path / "gen" / "data.csv"


@pytest.fixture
def clusters_csv(tmp_path):
    assert run_cli("gen", "--dataset", "clusters", "--m", 8, "--n", 4, "--out-dir", tmp_path / "gen") == 0
    return tmp_path / "gen" / "data.csv"


class TestGen:
    def test_manifest_and_rank(self, plane_csv):
        X = np.loadtxt(plane_csv, delimiter=",")
        assert X.shape == (16, 5)
        assert np.linalg.matrix_rank(X - X.mean(axis=0), tol=1e-10) == 2
        man = read_json(plane_csv.parent / "manifest.json")
        validate(man)
        assert man["command"] == "gen" and man["outputs"] == ["data.csv"]

    def test_header_row(self, tmp_path):
        assert run_cli("gen", "--dataset", "plane", "--m", 4, "--n", 2, "--header", "--out-dir", tmp_path) == 0
        assert (tmp_path / "data.csv").read_text().splitlines()[0] == "x0,x1"


class TestRun:
    def test_classical_plane(self, plane_csv, tmp_path):
        out = tmp_path / "c"
        assert run_cli("run", "--dataset", plane_csv, "--k", 4, "--out-dir", out) == 0
        A = np.loadtxt(out / "A.csv", delimiter=",")
        assert A.shape == (5, 2)
        man = read_json(out / "manifest.json")
        assert sorted(man["outputs"]) == ["A.csv", "W.csv", "result.json"]
        validate(read_json(out / "result.json"))

    def test_quantum_result_validates(self, clusters_csv, tmp_path):
        out = tmp_path / "q"
        assert run_cli("run", "--dataset", clusters_csv, "--mode", "quantum", "--r", 1.0, "--out-dir", out,
                       "--dump-states") == 0
        doc = read_json(out / "result.json")
        validate(doc)
        assert doc["schema"] == "qnpe_result.v1"
        assert "states.json" in read_json(out / "manifest.json")["outputs"]

    def test_no_neighbors_exit_two(self, clusters_csv, tmp_path, capsys):
        code = run_cli("run", "--dataset", clusters_csv, "--mode", "quantum", "--r", 0.01, "--out-dir", tmp_path)
        assert code == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "pipeline-step-failure"
        assert err["details"]["cause"] == "no-neighbors"

    @pytest.mark.parametrize("argv", [
        ["run", "--dataset", "x.csv"],
        ["run", "--dataset", "x.csv", "--r", "1", "--k", "2"],
        ["run", "--dataset", "x.csv", "--mode", "quantum", "--k", "2"],
        ["run", "--dataset", "x.csv", "--mode", "quantum", "--r", "1", "--eps", "-1"],
        ["gen", "--dataset", "plane"],
        ["frobnicate"],
        [],
    ])
    def test_usage_errors_exit_one(self, argv, capsys):
        assert main(argv) == 1
        assert json.loads(capsys.readouterr().err)["error"] == "usage"

    def test_missing_file_is_io_error(self, tmp_path, capsys):
        assert run_cli("run", "--dataset", tmp_path / "absent.csv", "--k", 2, "--out-dir", tmp_path) == 2
        assert json.loads(capsys.readouterr().err)["error"] == "io-error"

    def test_reruns_byte_identical(self, clusters_csv, tmp_path):
        for name in ("a", "b"):
            assert run_cli("run", "--dataset", clusters_csv, "--mode", "quantum", "--r", 1.0, "--seed", 3,
                           "--out-dir", tmp_path / name) == 0
        for f in ("A.csv", "W.csv", "result.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


class TestCompare:
    def test_identical(self, plane_csv, tmp_path):
        assert run_cli("run", "--dataset", plane_csv, "--k", 4, "--out-dir", tmp_path / "c") == 0
        res = tmp_path / "c" / "result.json"
        assert run_cli("compare", res, res, "--out-dir", tmp_path / "cmp") == 0
        rep = read_json(tmp_path / "cmp" / "comparison.json")
        assert rep["neighbor_jaccard"] == [1.0] * 16
        assert np.allclose(rep["principal_angles_deg"], 0.0, atol=1e-6)
        assert rep["weight_delta_fro"] == 0.0

    def test_planted_weight_change(self, plane_csv, tmp_path):
        assert run_cli("run", "--dataset", plane_csv, "--k", 4, "--out-dir", tmp_path / "c") == 0
        first = read_json(tmp_path / "c" / "result.json")
        second = json.loads(json.dumps(first))
        second["W"][3][first["neighbor_sets"][3][0]] += 1e-3
        rep = compare_results(first, second)
        assert abs(rep["weight_delta_fro"] - 1e-3) <= 1e-12
        assert abs(rep["max_row_error"] - 1e-3) <= 1e-12

    def test_fingerprint_mismatch(self, plane_csv, tmp_path, capsys):
        assert run_cli("run", "--dataset", plane_csv, "--k", 4, "--out-dir", tmp_path / "c") == 0
        doc = read_json(tmp_path / "c" / "result.json")
        other = dict(doc, dataset_fingerprint="0" * len(doc["dataset_fingerprint"]))
        with pytest.raises(ComparisonError):
            compare_results(doc, other)
        (tmp_path / "o.json").write_text(json.dumps(other))
        assert run_cli("compare", tmp_path / "c" / "result.json", tmp_path / "o.json", "--out-dir", tmp_path) == 2
        assert json.loads(capsys.readouterr().err)["error"] == "comparison-mismatch"


class TestScaling:
    def test_n_axis_files(self, tmp_path):
        assert run_cli("scaling", "--axis", "n", "--sizes", "4,5,6,8", "--m", 8, "--out-dir", tmp_path) == 0
        doc = read_json(tmp_path / "scaling.json")
        validate(doc)
        assert set(doc["fitted_exponent"]) == {"neighbors", "weights", "embedding"}
        assert (tmp_path / "scaling.csv").read_text().splitlines()[0] == "stage,m,n,k,d,queries"

    def test_bad_sizes(self, capsys):
        assert run_cli("scaling", "--sizes", "8,x") == 1


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(["qnpe", "gen", "--dataset", "plane", "--m", "4", "--n", "2", "--out-dir", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "data.csv").exists()
