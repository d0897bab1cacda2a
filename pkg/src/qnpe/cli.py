"""``qnpe`` command line: gen, run, compare and scaling.

Exit codes: 0 success, 1 usage error, 2 structured pipeline error.  Errors
are printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import classical
from .compare import max_row_error, neighbor_jaccard, principal_angles_deg, sigma_deviation, weight_delta
from .datasets import DATASETS, generate
from .errors import ComparisonError, ParameterError, QnpeError
from .estimation import TIERS
from .schemas import validate
from .store import DataMatrix, NeighborSets, emit_csv, ingest_csv

EXIT_OK, EXIT_USAGE, EXIT_PIPELINE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for pipeline failures here
    def error(self, message):
        raise UsageError(message)


def _dump_json(doc: dict, path: Path) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


def _write_manifest(out_dir: Path, command: str, config: dict, fingerprint, outputs, t0: float) -> Path:
    for p in outputs:
        if not p.exists() or p.stat().st_size == 0:
            raise QnpeError(f"output {p} is missing or empty")
    doc = {
        "schema": "manifest.v1",
        "command": command,
        "config": config,
        "dataset_fingerprint": fingerprint,
        "outputs": [p.name for p in outputs],
        "wall_time": time.perf_counter() - t0,
    }
    validate(doc)
    return _dump_json(doc, out_dir / "manifest.json")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    return out


def _columns(prefix: str, count: int) -> list[str]:
    return [f"{prefix}{j}" for j in range(count)]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    t0 = time.perf_counter()
    X = DataMatrix(generate(args.dataset, args.m, args.n, args.noise, args.seed))
    out = _out_dir(args)
    path = emit_csv(X, out / "data.csv", header=_columns("x", X.cols) if args.header else None)
    config = {"dataset": args.dataset, "m": args.m, "n": args.n, "noise": args.noise, "seed": args.seed}
    _write_manifest(out, "gen", config, X.fingerprint(), [path], t0)
    return EXIT_OK


def _classical_doc(run: classical.ClassicalRun, X: DataMatrix, r, k, d) -> dict:
    s = run.spectral.sigma
    nonzero = s[s > classical.RANK_RTOL * max(s[-1], 1e-300)]
    return {
        "schema": "classical_result.v1",
        "mode": "classical",
        "params": {"r": r, "k": k, "d": d, "alpha": run.embedding.alpha},
        "dataset_fingerprint": X.fingerprint(),
        "neighbor_sets": [list(q) for q in run.neighbors.sets],
        "W": run.weights.entries.tolist(),
        "sigma_list": nonzero[:d].tolist(),
        "A": run.A.tolist(),
        "residual": run.weights.residual,
        "kappa_X": run.embedding.kappa_X,
    }


def cmd_run(args) -> int:
    from .pipeline import QnpeConfig, run_quantum_npe

    t0 = time.perf_counter()
    if (args.r is None) == (args.k is None):
        raise UsageError("give exactly one of --r or --k")
    if args.mode == "quantum" and args.r is None:
        raise UsageError("quantum mode finds neighbors by radius; pass --r")
    if args.dataset is None:
        raise UsageError("--dataset is required")
    try:
        config = None
        if args.mode == "quantum":
            config = QnpeConfig(r=args.r, d=args.d, alpha=args.alpha, eps=args.eps, tier=args.tier,
                                seed=args.seed, tomography_delta=args.tomography_delta,
                                weights_source=args.weights)
    except ParameterError as exc:
        raise UsageError(exc.message) from exc
    X = ingest_csv(args.dataset, header=args.header)
    out = _out_dir(args)
    header = args.header
    outputs = []
    if args.mode == "classical":
        run = classical.run_classical_npe(X, r=args.r, k=args.k, d=args.d, alpha=args.alpha)
        doc = _classical_doc(run, X, args.r, args.k, args.d)
        params = dict(doc["params"], mode="classical")
        if args.dump_states:
            states = {"correlation": [
                {"index": i, "neighbors": list(run.neighbors.sets[i]),
                 "eigenvalues": classical.neighborhood_correlation(X, run.neighbors, i).eigenvalues.tolist()}
                for i in range(X.rows)],
                "bottom_eigenvectors": run.spectral.vectors.T.tolist()}
        A, W = run.A, run.weights.entries
    else:
        result = run_quantum_npe(X, config)
        doc = result.to_dict()
        params = dict(doc["config"], mode="quantum")
        if args.dump_states:
            states = result.states()
        A, W = result.a_states, result.W_quantum.entries
    validate(doc)
    outputs.append(emit_csv(A, out / "A.csv", header=_columns("a", A.shape[1]) if header else None))
    outputs.append(emit_csv(W, out / "W.csv", header=_columns("w", W.shape[1]) if header else None))
    outputs.append(_dump_json(doc, out / "result.json"))
    if args.dump_states:
        outputs.append(_dump_json(states, out / "states.json"))
    _write_manifest(out, "run", params, X.fingerprint(), outputs, t0)
    return EXIT_OK


def _load_result(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ComparisonError(f"{path} is not JSON: {exc.msg}") from None
    validate(doc)
    return doc


def compare_results(first: dict, second: dict) -> dict:
    """Agreement metrics between two result documents on the same dataset."""
    if first["dataset_fingerprint"] != second["dataset_fingerprint"]:
        raise ComparisonError("results were computed on different datasets",
                              first=first["dataset_fingerprint"], second=second["dataset_fingerprint"])
    P = NeighborSets(tuple(tuple(q) for q in first["neighbor_sets"]))
    Q = NeighborSets(tuple(tuple(q) for q in second["neighbor_sets"]))
    W1 = np.array(first["W"], dtype=np.float64)
    W2 = np.array(second["W"], dtype=np.float64)
    return {
        "schema": "comparison.v1",
        "dataset_fingerprint": first["dataset_fingerprint"],
        "neighbor_jaccard": neighbor_jaccard(P, Q),
        "weight_delta_fro": weight_delta(W1, W2),
        "max_row_error": max_row_error(W1, W2),
        "sigma_deviation": sigma_deviation(first["sigma_list"], second["sigma_list"]),
        "principal_angles_deg": principal_angles_deg(np.array(first["A"]), np.array(second["A"])).tolist(),
    }


def cmd_compare(args) -> int:
    t0 = time.perf_counter()
    first = _load_result(args.first)
    second = _load_result(args.second)
    report = compare_results(first, second)
    validate(report)
    out = _out_dir(args)
    path = _dump_json(report, out / "comparison.json")
    _write_manifest(out, "compare", {"first": str(args.first), "second": str(args.second)},
                    report["dataset_fingerprint"], [path], t0)
    return EXIT_OK


def cmd_scaling(args) -> int:
    from .scaling import AXES, scaling_study, write_csv

    t0 = time.perf_counter()
    try:
        sizes = [int(v) for v in args.sizes.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--sizes must be comma-separated integers, got {args.sizes!r}") from None
    if args.axis not in AXES:
        raise UsageError(f"--axis must be one of {AXES}")
    try:
        record = scaling_study(args.axis, sizes, m=args.m, n=args.n, k=args.k or 4, d=args.d, seed=args.seed,
                               eps=args.eps)
    except ParameterError as exc:
        raise UsageError(exc.message) from exc
    doc = dict(record.to_dict(), schema="scaling.v1")
    validate(doc)
    out = _out_dir(args)
    outputs = [write_csv(record.points, out / "scaling.csv"), _dump_json(doc, out / "scaling.json")]
    config = {"axis": args.axis, "sizes": sizes, "m": args.m, "n": args.n, "d": args.d, "seed": args.seed,
              "eps": args.eps}
    _write_manifest(out, "scaling", config, None, outputs, t0)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--header", action="store_true", help="CSV files carry a header row")

    parser = _Parser(prog="qnpe", description="Classical and simulated quantum NPE workbench.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    gen = sub.add_parser("gen", parents=[common], help="write a synthetic dataset")
    gen.add_argument("--dataset", choices=DATASETS, required=True)
    gen.add_argument("--m", type=int, required=True)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--noise", type=float, default=0.0)
    gen.set_defaults(func=cmd_gen)

    run = sub.add_parser("run", parents=[common], help="classical or quantum NPE on a CSV dataset")
    run.add_argument("--dataset", help="CSV data file, one point per row")
    run.add_argument("--mode", choices=("classical", "quantum"), default="classical")
    run.add_argument("--tier", choices=TIERS, default="spectral")
    run.add_argument("--r", type=float)
    run.add_argument("--k", type=int)
    run.add_argument("--d", type=int, default=2)
    run.add_argument("--alpha", type=float)
    run.add_argument("--eps", type=float, default=0.01)
    run.add_argument("--tomography-delta", type=float, default=0.03)
    run.add_argument("--weights", choices=("quantum", "classical"), default="quantum",
                     help="source of W for the embedding stage in quantum mode")
    run.add_argument("--dump-states", action="store_true", help="also write intermediate readouts")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", parents=[common], help="compare two result.json files")
    cmp_.add_argument("first")
    cmp_.add_argument("second")
    cmp_.set_defaults(func=cmd_compare)

    sc = sub.add_parser("scaling", parents=[common], help="query-count sweep with log-log fits")
    sc.add_argument("--axis", default="m")
    sc.add_argument("--sizes", default="8,16,32,64")
    sc.add_argument("--m", type=int, default=16)
    sc.add_argument("--n", type=int, default=4)
    sc.add_argument("--k", type=int)
    sc.add_argument("--d", type=int, default=2)
    sc.add_argument("--eps", type=float, default=0.01)
    sc.set_defaults(func=cmd_scaling)
    return parser


def _report(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("choose a command: gen, run, compare or scaling")
        return args.func(args)
    except UsageError as exc:
        _report({"error": "usage", "message": str(exc)})
        return EXIT_USAGE
    except QnpeError as exc:
        _report(exc.to_dict())
        return EXIT_PIPELINE
    except OSError as exc:
        _report({"error": "io-error", "message": str(exc)})
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
