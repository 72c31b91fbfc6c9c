"""Compare the compiled and pure-Python VM backends on the same workloads.

    python3 benchmarks/bench_vm.py [--programs 300] [--repeat 3]
"""

import argparse
import time

import numpy as np

from tagreg import reference
from tagreg.genome import Limits, random_program
from tagreg.problems import CONTEXTUAL, eval_contextual_all, eval_repeated, make_problem
from tagreg.vm import CompiledHardware, PyHardware


def random_population(n: int, seed: int, cfg):
    rng = np.random.default_rng(seed)
    return [random_program(rng, Limits(), cfg.instruction_set) for _ in range(n)]


def workloads(n: int):
    rep_cfg = reference.repeated_config(4)
    ctx_cfg = make_problem(CONTEXTUAL, np.random.default_rng(1))
    rep_pop = random_population(n, 2, rep_cfg)
    ctx_pop = random_population(n // 4, 3, ctx_cfg)
    repress = reference.load("self_repression_k4")
    return {
        "repeated K=4, random programs": lambda hw: [eval_repeated(p, rep_cfg, backend=hw)
                                                     for p in rep_pop],
        "contextual, 16 cases each": lambda hw: [eval_contextual_all(p, ctx_cfg, backend=hw)
                                                 for p in ctx_pop],
        "self-repression reference x200": lambda hw: [eval_repeated(repress, rep_cfg, backend=hw)
                                                      for _ in range(200)],
    }


def best_time(fn, backend, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(backend)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--programs", type=int, default=300)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if CompiledHardware is None:
        raise SystemExit("compiled backend not built; run pip install -e . --no-build-isolation")
    print(f"{'workload':34s} {'python s':>10s} {'compiled s':>11s} {'speedup':>8s}")
    for name, fn in workloads(args.programs).items():
        # results must agree before timings mean anything
        same = [r.fitness if hasattr(r, "fitness") else r for r in fn(PyHardware)]
        assert same == [r.fitness if hasattr(r, "fitness") else r for r in fn(CompiledHardware)]
        py = best_time(fn, PyHardware, args.repeat)
        c = best_time(fn, CompiledHardware, args.repeat)
        print(f"{name:34s} {py:10.3f} {c:11.3f} {py / c:7.1f}x")


if __name__ == "__main__":
    main()
