"""Compare the compiled and pure-Python flow kernels on the desk-scale closed loop.

Usage: python3 benchmarks/bench_kernels.py [--grid-hz 20] [--repeat 3]
"""
import argparse
import time

import numpy as np

from stsreach import kernels
from stsreach.lqr import design
from stsreach.planning import build_reference
from stsreach.scenario import desk_scenario


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid-hz", type=float, default=20.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    sc = desk_scenario(grid_hz=args.grid_hz)
    ref = build_reference(sc)
    _, _, _, cl = design(ref, np.array(sc.p_nominal), sc.weights)
    p = np.array(sc.p_upper)
    print(f"grid {args.grid_hz:g} Hz, {len(cl.t)} points, {int(cl.steps.sum())} RK4 steps")

    rows = {}
    for name in kernels.available_backends():
        sens = best_of(lambda: cl.flow(p, sc.x0, backend=name), args.repeat)
        state = best_of(lambda: cl.flow(p, sc.x0, sensitivities=False, backend=name), args.repeat)
        rows[name] = (sens, state)
        print(f"{name:>7s}  state+sensitivity {sens * 1e3:9.2f} ms   state only {state * 1e3:9.2f} ms")

    if len(rows) == 2:
        (cs, cx), (ps, px) = rows["cython"], rows["python"]
        Xc, Sc = cl.flow(p, sc.x0, backend="cython")
        Xp, Sp = cl.flow(p, sc.x0, backend="python")
        print(f"speedup  state+sensitivity {ps / cs:6.1f}x   state only {px / cx:6.1f}x")
        print(f"max |dX| {np.abs(Xc - Xp).max():.1e}   max |dS| / max |S| {np.abs(Sc - Sp).max() / np.abs(Sp).max():.1e}")
    else:
        print("compiled extension not available; only the Python backend was timed")


if __name__ == "__main__":
    main()
