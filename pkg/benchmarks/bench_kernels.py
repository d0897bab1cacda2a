"""Time the numba kernels against their numpy fallbacks.

Usage:
    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --repeats 20 --output bench.json

Each kernel is run once untimed so JIT compilation stays out of the
numbers.  Results are checked for agreement before timing.
"""

import argparse
import json
import time

import numpy as np

from qnpe import _kernels as K


def _gate_case(nq, rng):
    amps = rng.normal(size=1 << nq) + 1j * rng.normal(size=1 << nq)
    amps /= np.linalg.norm(amps)
    U, _ = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    return (amps, U, [1, nq - 1], [0], [1], nq)


def cases(rng):
    yield "apply_gate q=12", K.apply_gate_numba, K.apply_gate_numpy, _gate_case(12, rng)
    yield "apply_gate q=16", K.apply_gate_numba, K.apply_gate_numpy, _gate_case(16, rng)
    X = rng.normal(size=(256, 32))
    yield "pair_sq_dists 256x32", K.pair_sq_dists_numba, K.pair_sq_dists_numpy, (X, X)
    leaves = rng.random((512, 256))
    yield "sum_trees 512x256", K.sum_trees_numba, K.sum_trees_numpy, (leaves,)
    tree = K.sum_trees_numpy(rng.random((1, 4096)))[0]
    signs = np.sign(rng.normal(size=4096))
    yield "tree_amplitudes 4096", K.tree_amplitudes_numba, K.tree_amplitudes_numpy, (tree, signs)


def best_of(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--output", help="write results as JSON")
    args = parser.parse_args()

    if not K.NUMBA_AVAILABLE:
        print("numba is not importable; only the numpy path exists")
        return

    rng = np.random.default_rng(args.seed)
    rows = []
    print(f"{'kernel':<24}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for name, fast, slow, call_args in cases(rng):
        a = fast(*call_args)
        b = slow(*call_args)
        if not np.allclose(a, b, rtol=1e-12, atol=1e-12):
            raise SystemExit(f"{name}: numba and numpy results disagree")
        t_nb = best_of(fast, call_args, args.repeats)
        t_np = best_of(slow, call_args, args.repeats)
        rows.append({"kernel": name, "numba_s": t_nb, "numpy_s": t_np, "speedup": t_np / t_nb})
        print(f"{name:<24}{t_nb * 1e3:>12.3f}{t_np * 1e3:>12.3f}{t_np / t_nb:>10.2f}")

    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump({"use_numba": K.USE_NUMBA, "repeats": args.repeats, "results": rows}, fh, indent=2)


if __name__ == "__main__":
    main()
