"""Pure-Python mirror of the compiled rigid-body kernels.

Same call signatures, same segmentation and RK4 stage structure as
_core.pyx, written with numpy row operations. Selected at import time
when the compiled extension is unavailable; also used as the reference
side of the kernel parity tests and the benchmark.
"""

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def _alpha_at(tau, alpha, eps, periods, phases, amps):
    if eps == 0.0:
        return alpha
    return alpha + eps * amps * np.sin(TWO_PI * tau / periods + phases)


def _rhs(a, x, bu, d):
    return d * np.array(
        [
            a[0] * x[1] * x[2] + bu[0],
            a[1] * x[0] * x[2] + bu[1],
            a[2] * x[0] * x[1] + bu[2],
        ]
    )


def _var_rhs(a, x, W, d):
    # rows of direction * (df/dx) @ W for the gyroscopic Jacobian
    out = np.empty_like(W)
    out[0] = d * a[0] * (x[2] * W[1] + x[1] * W[2])
    out[1] = d * a[1] * (x[2] * W[0] + x[0] * W[2])
    out[2] = d * a[2] * (x[1] * W[0] + x[0] * W[1])
    return out


def _segment_steps(seg_len, base_step):
    if seg_len <= 0.0:
        raise ValueError("segment boundaries must be strictly increasing")
    return max(1, int(math.ceil(seg_len / base_step)))


def propagate_dense(alpha, eps, periods, phases, amps, x0, bounds, bu_segs,
                    base_step, direction, t_offset):
    """Integrate the state over all segments; returns (times, states) at
    every RK4 node, boundaries included."""
    alpha = np.asarray(alpha, dtype=float)
    periods = np.asarray(periods, dtype=float)
    phases = np.asarray(phases, dtype=float)
    amps = np.asarray(amps, dtype=float)
    d = float(direction)
    n_seg = len(bounds) - 1
    steps = [_segment_steps(bounds[s + 1] - bounds[s], base_step) for s in range(n_seg)]
    total = 1 + sum(steps)

    times = np.empty(total)
    states = np.empty((total, 3))
    x = np.array(x0, dtype=float)
    times[0] = bounds[0]
    states[0] = x
    idx = 1

    for seg in range(n_seg):
        n = steps[seg]
        h = (bounds[seg + 1] - bounds[seg]) / n
        bu = bu_segs[seg]
        for j in range(n):
            s = bounds[seg] + j * h

            a = _alpha_at(t_offset + d * s, alpha, eps, periods, phases, amps)
            k1 = _rhs(a, x, bu, d)
            a = _alpha_at(t_offset + d * (s + 0.5 * h), alpha, eps, periods,
                          phases, amps)
            k2 = _rhs(a, x + 0.5 * h * k1, bu, d)
            k3 = _rhs(a, x + 0.5 * h * k2, bu, d)
            a = _alpha_at(t_offset + d * (s + h), alpha, eps, periods, phases, amps)
            k4 = _rhs(a, x + h * k3, bu, d)

            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise ArithmeticError(
                    f"state became non-finite at integration time {s + h}"
                )
            times[idx] = bounds[seg + 1] if j == n - 1 else s + h
            states[idx] = x
            idx += 1

    return times, states


def propagate_sens(alpha, eps, periods, phases, amps, x0, bounds, bu_segs,
                   base_step, direction, t_offset, seed_idx, seeds):
    """Integrate state plus sensitivity columns; column k is seeded when
    integration reaches boundary seed_idx[k]. Returns (states, sens)
    sampled at every boundary."""
    alpha = np.asarray(alpha, dtype=float)
    periods = np.asarray(periods, dtype=float)
    phases = np.asarray(phases, dtype=float)
    amps = np.asarray(amps, dtype=float)
    d = float(direction)
    n_seg = len(bounds) - 1
    K = len(seed_idx)

    x = np.array(x0, dtype=float)
    W = np.zeros((3, K))
    states = np.empty((n_seg + 1, 3))
    sens = np.zeros((n_seg + 1, 3, K))

    for k in range(K):
        if seed_idx[k] == 0:
            W[:, k] = seeds[k]
    states[0] = x
    sens[0] = W

    for seg in range(n_seg):
        n = _segment_steps(bounds[seg + 1] - bounds[seg], base_step)
        h = (bounds[seg + 1] - bounds[seg]) / n
        bu = bu_segs[seg]
        for j in range(n):
            s = bounds[seg] + j * h

            a = _alpha_at(t_offset + d * s, alpha, eps, periods, phases, amps)
            k1 = _rhs(a, x, bu, d)
            kW1 = _var_rhs(a, x, W, d)

            xs = x + 0.5 * h * k1
            Ws = W + 0.5 * h * kW1
            a = _alpha_at(t_offset + d * (s + 0.5 * h), alpha, eps, periods,
                          phases, amps)
            k2 = _rhs(a, xs, bu, d)
            kW2 = _var_rhs(a, xs, Ws, d)

            xs = x + 0.5 * h * k2
            Ws = W + 0.5 * h * kW2
            k3 = _rhs(a, xs, bu, d)
            kW3 = _var_rhs(a, xs, Ws, d)

            xs = x + h * k3
            Ws = W + h * kW3
            a = _alpha_at(t_offset + d * (s + h), alpha, eps, periods, phases, amps)
            k4 = _rhs(a, xs, bu, d)
            kW4 = _var_rhs(a, xs, Ws, d)

            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            W = W + (h / 6.0) * (kW1 + 2.0 * kW2 + 2.0 * kW3 + kW4)
            if not np.all(np.isfinite(x)):
                raise ArithmeticError(
                    f"state became non-finite at integration time {s + h}"
                )

        for k in range(K):
            if seed_idx[k] == seg + 1:
                W[:, k] = seeds[k]
        states[seg + 1] = x
        sens[seg + 1] = W

    return states, sens
