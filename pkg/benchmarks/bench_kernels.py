"""Compare the compiled and pure-Python event kernels on the default designs.

Each model runs the event-triggered loop at gamma = 0.9 gamma_max from its
built-in initial state, once per backend, and reports the best wall time of
``--repeat`` runs along with the largest event-time disagreement.

    python3 benchmarks/bench_kernels.py [--models transport wave kdv] [--repeat 3]
"""
import argparse
import timeit

import numpy as np

from etcstab import (KERNEL_BACKEND, KdVSpec, TransportSpec, TriggerConfig, WaveSpec, build_model,
                     builtin_initial_state, certify_system, simulate, trigger_bound)

MODELS = {"transport": TransportSpec(nx=31), "wave": WaveSpec(nx=15), "kdv": KdVSpec(n_modes=3)}


def bench(name: str, repeat: int):
    spec = MODELS[name]
    sys = build_model(spec)
    cert = certify_system(sys)
    design = trigger_bound(sys, cert)
    gamma = 0.9 * design.gamma_max
    delta = 0.9 * design.delta_max(gamma)
    cfg = TriggerConfig(gamma=gamma, horizon=10.0 / delta)
    z0 = builtin_initial_state(spec)
    row, events = {"model": name}, {}
    for backend in ("compiled", "python"):
        events[backend] = simulate(sys, z0, cfg, backend=backend).event_times
        row[backend] = min(timeit.repeat(lambda: simulate(sys, z0, cfg, backend=backend),
                                         number=1, repeat=repeat))
    a, b = events["compiled"], events["python"]
    row["events"] = len(a) - 1
    row["max_dt_diff"] = float(np.max(np.abs(a - b))) if len(a) == len(b) else float("nan")
    return row


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--models", nargs="+", choices=sorted(MODELS), default=list(MODELS))
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    if KERNEL_BACKEND != "compiled":
        raise SystemExit("compiled kernels unavailable; build with pip install -e .")
    print(f"{'model':<10}{'events':>8}{'compiled s':>12}{'python s':>10}{'speedup':>9}"
          f"{'max |dt|':>10}")
    for name in args.models:
        r = bench(name, args.repeat)
        print(f"{r['model']:<10}{r['events']:>8}{r['compiled']:>12.3f}{r['python']:>10.3f}"
              f"{r['python'] / r['compiled']:>9.1f}{r['max_dt_diff']:>10.1e}")


if __name__ == "__main__":
    main()
