"""Time the compiled message-passing kernel against the numpy fallback.

    python benchmarks/bench_kernels.py [--sizes 10x10,30x30,100x100] [--repeat 5]

Both backends run the same factor graphs for the same number of sweeps;
the script also checks that their beliefs agree.
"""
import argparse
import time

import numpy as np

from prsl import kernels
from prsl.loopy import BPOptions, build_factor_graph, max_product, sum_product
from prsl.simulation import SimConfig, generate_model, generate_observations, parse_size


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="10x10,30x30,100x100", help="comma list of <labels>x<rules>")
    ap.add_argument("--iters", type=int, default=50, help="BP sweeps per run (default 50)")
    ap.add_argument("--repeat", type=int, default=5, help="runs per measurement; the best is kept (default 5)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if "cython" not in kernels.BACKENDS:
        print("compiled kernel not available; build it with 'pip install -e . --no-build-isolation'")
        return 1
    opts = BPOptions(tol=0.0, max_iters=args.iters)
    print(f"{'size':>9} {'mode':>6} {'python ms':>10} {'cython ms':>10} {'speed-up':>9} {'max |diff|':>11}")
    for text in args.sizes.split(","):
        n_labels, n_rules = parse_size(text)
        model = generate_model(SimConfig(n_labels, n_rules, seed=args.seed))
        obs = generate_observations(model, 1, args.seed)[0]
        graph = build_factor_graph(model, obs)
        for mode, run in (("sum", sum_product), ("max", max_product)):
            t_py, r_py = _time(lambda: run(graph, opts, "python"), args.repeat)
            t_cy, r_cy = _time(lambda: run(graph, opts, "cython"), args.repeat)
            b_py = r_py.beliefs if mode == "sum" else r_py.max_beliefs
            b_cy = r_cy.beliefs if mode == "sum" else r_cy.max_beliefs
            diff = max(float(np.max(np.abs(b_py[k] - b_cy[k]))) for k in b_py)
            print(f"{text:>9} {mode:>6} {t_py * 1e3:10.2f} {t_cy * 1e3:10.2f} {t_py / t_cy:8.1f}x {diff:11.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
