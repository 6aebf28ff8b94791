"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each case is timed on every available backend (best of N) and the outputs
are checked for bit-identity.
"""

import argparse
import time
from importlib.resources import files

import numpy as np

from igame import kernel
from igame.engine import simulate
from igame.epsilon import recover_epsilon
from igame.exprlang import parse
from igame.invariants import QuantityCandidate, evaluate_quantity
from igame.model import load_game_file
from igame.oracle import LoopConfig, run_prediction_loop

DATA = files("igame") / "data"


def game(name):
    return load_game_file(str(DATA / f"{name}.json"))


def case_simulate():
    g = game("lin1")
    return lambda: simulate(g).phi


def case_simulate_coalitions():
    g = game("coalitions")
    return lambda: simulate(g).phi


def case_eval_rows():
    e = parse("sin(phi[0])*exp(-t) + max(phi[0], t)^2 - log(1 + abs(phi[0]))")
    rows = np.random.default_rng(0).normal(size=(200_000, 2))
    block = {}

    def run():
        b = block.setdefault(kernel.backend_name(),
                             kernel.Block([e], [-1], {"t": 0, "phi[0]": 1}))
        return b.eval_rows(rows, 0)
    return run


def case_quantity_scan():
    tr = simulate(game("harmonic"))
    q = QuantityCandidate.of("E", "phi[0]^2 + phi[1]^2")
    return lambda: evaluate_quantity(q, tr)


def case_epsilon():
    g = game("lin1")
    tr = simulate(g)
    return lambda: recover_epsilon(g, tr).players[1].eps


def case_prediction_loop():
    g = game("lin1")
    tr = simulate(g)
    cfg = LoopConfig(cap=1.0, depth=0.5, window=200)
    return lambda: np.array([run_prediction_loop(g, tr, cfg).summary["corrected"]["state_rmse"]])


CASES = [("simulate lin1 (1000 steps)", case_simulate),
         ("simulate coalitions (200 steps)", case_simulate_coalitions),
         ("eval_rows 200k rows", case_eval_rows),
         ("quantity over 1001 samples", case_quantity_scan),
         ("recover eps lin1", case_epsilon),
         ("prediction loop lin1", case_prediction_loop)]


def best_of(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = kernel.available_backends()
    print(f"backends: {', '.join(backends)}")
    print(f"{'case':34s}" + "".join(f"{b:>12s}" for b in backends) + f"{'speedup':>10s}  same")
    for title, make in CASES:
        times, outs = {}, {}
        for b in backends:
            with kernel.using(b):
                fn = make()
                times[b], outs[b] = best_of(fn, args.repeat)
        ref = outs[backends[0]]
        same = all(np.array_equal(np.asarray(o), np.asarray(ref), equal_nan=True)
                   for o in outs.values())
        speed = (f"{times['python'] / times['cython']:9.1f}x" if "cython" in times
                 else f"{'-':>10s}")
        print(f"{title:34s}" + "".join(f"{times[b] * 1e3:10.2f}ms" for b in backends)
              + f"{speed}  {same}")


if __name__ == "__main__":
    main()
