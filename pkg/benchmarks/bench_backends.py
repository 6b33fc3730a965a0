"""Time the pure NumPy loop against the compiled kernel on one experiment.

Runs the same trajectories through both backends and reports per-run wall
time plus the speedup. Usage:

    python3 benchmarks/bench_backends.py [--runs 30] [--steps 100] [--model 1]
"""

import argparse
import time

import numpy as np

from gmkf import ScenarioConfig, available_backends, build_system, generate_trajectory
from gmkf._backend import simulate_run


def bench(backend: str, model, trajs, cfg) -> float:
    x0 = np.zeros(2)
    P0 = np.eye(2)
    t0 = time.perf_counter()
    for traj in trajs:
        simulate_run(
            model,
            x0,
            P0,
            traj.states,
            traj.measurements,
            traj.active_process_labels,
            traj.active_measurement_labels,
            cfg.window_start,
            "shared-bank",
            backend,
        )
    return (time.perf_counter() - t0) / len(trajs)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=30)
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--model", type=int, default=1, choices=(1, 2, 3))
    ap.add_argument("--c", type=float, default=1.0)
    args = ap.parse_args()

    cfg = ScenarioConfig(model_id=args.model, steps=args.steps, runs=args.runs)
    model = build_system(cfg, args.c)
    rng = np.random.default_rng(123)
    trajs = [generate_trajectory(model, cfg.steps, rng, np.zeros(2)) for _ in range(args.runs)]

    backends = available_backends()
    print(f"model {args.model}, c={args.c}, {args.runs} runs x {args.steps} steps")
    times = {}
    for backend in backends:
        # warm once so import/JIT-free first-call costs stay out of the clock
        bench(backend, model, trajs[:1], cfg)
        times[backend] = bench(backend, model, trajs, cfg)
        print(f"  {backend:8s} {times[backend] * 1e3:8.2f} ms/run")
    if len(times) == 2:
        print(f"  speedup  {times['pure'] / times['compiled']:8.1f}x")
    else:
        print("  (compiled backend not built; only the pure path was timed)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
