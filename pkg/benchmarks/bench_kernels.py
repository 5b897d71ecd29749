#!/usr/bin/env python3
"""Benchmark the compiled kernel extension against the pure-Python mirror.

Times the two hot propagation kernels on workloads representative of the
pipeline: a dense state integration (tracking simulations) and a joint
state-plus-sensitivities pass with nine columns (one robustness-cost
evaluation of a three-needle control). Also reports one composite number,
the time for a full robustness-cost objective evaluation through the
public API, per backend.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from bangtrack import _kernels
from bangtrack.control import BangBangControl, ChannelBounds, GapPolicy, SwitchingEvent
from bangtrack.dynamics import RigidBodyModel
from bangtrack.robustness import RobustnessGrid, place_needles, robustness_cost

ALPHA = np.array([1.0, -1.0, 1.0])
PERIODS = np.array([0.7, 1.1, 1.3])
PHASES = np.array([0.0, np.pi / 3, 2 * np.pi / 3])
AMPS = np.ones(3)


def _workload():
    rng = np.random.default_rng(0)
    inner = np.sort(rng.uniform(0.1, 1.4, size=9))
    bounds = np.concatenate([[0.0], inner, [1.5]])
    bu = rng.normal(size=(len(bounds) - 1, 3))
    x0 = np.array([0.05, -0.1, 0.2])
    seed_idx = np.arange(1, 10, dtype=np.int64)
    seeds = rng.normal(size=(9, 3))
    return bounds, bu, x0, seed_idx, seeds


def bench(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()

    bounds, bu, x0, seed_idx, seeds = _workload()
    backends = _kernels.backends()
    print(f"active backend: {_kernels.BACKEND}")
    print(f"{'kernel':<28}" + "".join(f"{name:>14}" for name in backends))

    rows = []
    rows.append((
        "dense state (1.5 s span)",
        {
            name: bench(
                lambda b=be: b.propagate_dense(
                    ALPHA, 0.3, PERIODS, PHASES, AMPS, x0, bounds, bu,
                    1e-3, 1.0, 0.0,
                ),
                args.repeat,
            )
            for name, be in backends.items()
        },
    ))
    rows.append((
        "state + 9 sens columns",
        {
            name: bench(
                lambda b=be: b.propagate_sens(
                    ALPHA, 0.3, PERIODS, PHASES, AMPS, x0, bounds, bu,
                    1e-3, 1.0, 0.0, seed_idx, seeds,
                ),
                args.repeat,
            )
            for name, be in backends.items()
        },
    ))

    # composite: one robustness-cost evaluation through the public API
    model = RigidBodyModel()
    ctrl = BangBangControl(
        bounds=ChannelBounds(lower=(0.0,) * 4, upper=(1.0,) * 4),
        initial_values=(1.0, 0.0, 1.0, 0.0),
        events=(
            SwitchingEvent(0.14, 3), SwitchingEvent(0.44, 1), SwitchingEvent(1.2, 2),
        ),
        final_time=1.5,
    )
    template, _ = place_needles(ctrl, (1, 4, 2), GapPolicy(0.05))
    x_f = np.array([0.4, -0.3, 0.4])
    grid = RobustnessGrid(samples=50)

    saved = (_kernels.propagate_dense, _kernels.propagate_sens)
    composite = {}
    for name, be in backends.items():
        _kernels.propagate_dense = be.propagate_dense
        _kernels.propagate_sens = be.propagate_sens
        composite[name] = bench(
            lambda: robustness_cost(model, template, x_f, grid), args.repeat
        )
    _kernels.propagate_dense, _kernels.propagate_sens = saved
    rows.append(("robustness cost (M=50)", composite))

    for label, times in rows:
        cells = "".join(f"{times[name] * 1e3:>12.3f}ms" for name in backends)
        print(f"{label:<28}{cells}")
    if "compiled" in backends and "python" in backends:
        speedups = {
            label: times["python"] / times["compiled"] for label, times in rows
        }
        print("\nspeedup (python / compiled):")
        for label, s in speedups.items():
            print(f"  {label:<28}{s:>8.1f}x")


if __name__ == "__main__":
    main()
