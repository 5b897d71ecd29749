# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled RK4 kernels for the rigid-body family.

Both kernels integrate

    x'(s) = direction * f(tau(s), x(s), u_seg),   tau(s) = t_offset + direction*s,

segment by segment between the supplied boundaries, holding the torque
contribution B @ u fixed per segment, with ceil(len/base_step) equal RK4
steps per segment. direction = -1 with t_offset = t_f integrates the
time-reversed system. The sensitivity variant additionally carries
columns of the variational equation W' = direction * (df/dx) W, each
column activated with its seed vector at a given boundary.

The pure-Python mirror lives in _fallback.py and is selected at import
time when this extension is unavailable.
"""

import numpy as np

from libc.math cimport ceil, isfinite, sin


cdef double TWO_PI = 6.283185307179586476925286766559


cdef inline void _alpha_at(double tau, double* alpha, double eps,
                           double* periods, double* phases, double* amps,
                           double* out) noexcept nogil:
    if eps == 0.0:
        out[0] = alpha[0]
        out[1] = alpha[1]
        out[2] = alpha[2]
    else:
        out[0] = alpha[0] + eps * amps[0] * sin(TWO_PI * tau / periods[0] + phases[0])
        out[1] = alpha[1] + eps * amps[1] * sin(TWO_PI * tau / periods[1] + phases[1])
        out[2] = alpha[2] + eps * amps[2] * sin(TWO_PI * tau / periods[2] + phases[2])


def propagate_dense(double[:] alpha, double eps, double[:] periods,
                    double[:] phases, double[:] amps, double[:] x0,
                    double[:] bounds, double[:, :] bu_segs, double base_step,
                    double direction, double t_offset):
    """Integrate the state over all segments; returns (times, states) at
    every RK4 node, boundaries included."""
    cdef Py_ssize_t n_seg = bounds.shape[0] - 1
    cdef Py_ssize_t seg, j, total, idx
    cdef double seg_len, h, s, tau, d = direction
    cdef double a[3]
    cdef double x[3]
    cdef double xs[3]
    cdef double k1[3]
    cdef double k2[3]
    cdef double k3[3]
    cdef double k4[3]
    cdef double bu0, bu1, bu2
    cdef long[:] steps = np.empty(n_seg, dtype=np.int64)

    total = 1
    for seg in range(n_seg):
        seg_len = bounds[seg + 1] - bounds[seg]
        if seg_len <= 0.0:
            raise ValueError("segment boundaries must be strictly increasing")
        steps[seg] = <long> ceil(seg_len / base_step)
        if steps[seg] < 1:
            steps[seg] = 1
        total += steps[seg]

    times_arr = np.empty(total, dtype=np.float64)
    states_arr = np.empty((total, 3), dtype=np.float64)
    cdef double[:] times = times_arr
    cdef double[:, :] states = states_arr

    x[0] = x0[0]
    x[1] = x0[1]
    x[2] = x0[2]
    times[0] = bounds[0]
    states[0, 0] = x[0]
    states[0, 1] = x[1]
    states[0, 2] = x[2]
    idx = 1

    for seg in range(n_seg):
        seg_len = bounds[seg + 1] - bounds[seg]
        h = seg_len / steps[seg]
        bu0 = bu_segs[seg, 0]
        bu1 = bu_segs[seg, 1]
        bu2 = bu_segs[seg, 2]
        for j in range(steps[seg]):
            s = bounds[seg] + j * h

            tau = t_offset + d * s
            _alpha_at(tau, &alpha[0], eps, &periods[0], &phases[0], &amps[0], a)
            k1[0] = d * (a[0] * x[1] * x[2] + bu0)
            k1[1] = d * (a[1] * x[0] * x[2] + bu1)
            k1[2] = d * (a[2] * x[0] * x[1] + bu2)

            xs[0] = x[0] + 0.5 * h * k1[0]
            xs[1] = x[1] + 0.5 * h * k1[1]
            xs[2] = x[2] + 0.5 * h * k1[2]
            tau = t_offset + d * (s + 0.5 * h)
            _alpha_at(tau, &alpha[0], eps, &periods[0], &phases[0], &amps[0], a)
            k2[0] = d * (a[0] * xs[1] * xs[2] + bu0)
            k2[1] = d * (a[1] * xs[0] * xs[2] + bu1)
            k2[2] = d * (a[2] * xs[0] * xs[1] + bu2)

            xs[0] = x[0] + 0.5 * h * k2[0]
            xs[1] = x[1] + 0.5 * h * k2[1]
            xs[2] = x[2] + 0.5 * h * k2[2]
            k3[0] = d * (a[0] * xs[1] * xs[2] + bu0)
            k3[1] = d * (a[1] * xs[0] * xs[2] + bu1)
            k3[2] = d * (a[2] * xs[0] * xs[1] + bu2)

            xs[0] = x[0] + h * k3[0]
            xs[1] = x[1] + h * k3[1]
            xs[2] = x[2] + h * k3[2]
            tau = t_offset + d * (s + h)
            _alpha_at(tau, &alpha[0], eps, &periods[0], &phases[0], &amps[0], a)
            k4[0] = d * (a[0] * xs[1] * xs[2] + bu0)
            k4[1] = d * (a[1] * xs[0] * xs[2] + bu1)
            k4[2] = d * (a[2] * xs[0] * xs[1] + bu2)

            x[0] = x[0] + (h / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
            x[1] = x[1] + (h / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
            x[2] = x[2] + (h / 6.0) * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])

            if not (isfinite(x[0]) and isfinite(x[1]) and isfinite(x[2])):
                raise ArithmeticError(
                    f"state became non-finite at integration time {s + h}"
                )

            times[idx] = bounds[seg + 1] if j == steps[seg] - 1 else s + h
            states[idx, 0] = x[0]
            states[idx, 1] = x[1]
            states[idx, 2] = x[2]
            idx += 1

    return times_arr, states_arr


def propagate_sens(double[:] alpha, double eps, double[:] periods,
                   double[:] phases, double[:] amps, double[:] x0,
                   double[:] bounds, double[:, :] bu_segs, double base_step,
                   double direction, double t_offset,
                   long[:] seed_idx, double[:, :] seeds):
    """Integrate state plus sensitivity columns; column k is seeded with
    seeds[k] when integration reaches boundary seed_idx[k]. Returns
    (states, sens) sampled at every boundary, sens of shape (n_bounds, 3, K)
    with inactive columns zero."""
    cdef Py_ssize_t n_seg = bounds.shape[0] - 1
    cdef Py_ssize_t K = seed_idx.shape[0]
    cdef Py_ssize_t seg, j, k, n_steps
    cdef double seg_len, h, s, tau, a0, a1, a2, d = direction
    cdef double a[3]
    cdef double x[3]
    cdef double xs[3]
    cdef double k1[3]
    cdef double k2[3]
    cdef double k3[3]
    cdef double k4[3]
    cdef double bu0, bu1, bu2

    W_arr = np.zeros((3, K), dtype=np.float64)
    Ws_arr = np.zeros((3, K), dtype=np.float64)
    kW1_arr = np.zeros((3, K), dtype=np.float64)
    kW2_arr = np.zeros((3, K), dtype=np.float64)
    kW3_arr = np.zeros((3, K), dtype=np.float64)
    kW4_arr = np.zeros((3, K), dtype=np.float64)
    cdef double[:, :] W = W_arr
    cdef double[:, :] Ws = Ws_arr
    cdef double[:, :] kW1 = kW1_arr
    cdef double[:, :] kW2 = kW2_arr
    cdef double[:, :] kW3 = kW3_arr
    cdef double[:, :] kW4 = kW4_arr

    states_arr = np.empty((n_seg + 1, 3), dtype=np.float64)
    sens_arr = np.zeros((n_seg + 1, 3, K), dtype=np.float64)
    cdef double[:, :] states = states_arr
    cdef double[:, :, :] sens = sens_arr

    x[0] = x0[0]
    x[1] = x0[1]
    x[2] = x0[2]

    for k in range(K):
        if seed_idx[k] == 0:
            W[0, k] = seeds[k, 0]
            W[1, k] = seeds[k, 1]
            W[2, k] = seeds[k, 2]
    states[0, 0] = x[0]
    states[0, 1] = x[1]
    states[0, 2] = x[2]
    for k in range(K):
        sens[0, 0, k] = W[0, k]
        sens[0, 1, k] = W[1, k]
        sens[0, 2, k] = W[2, k]

    for seg in range(n_seg):
        seg_len = bounds[seg + 1] - bounds[seg]
        if seg_len <= 0.0:
            raise ValueError("segment boundaries must be strictly increasing")
        n_steps = <long> ceil(seg_len / base_step)
        if n_steps < 1:
            n_steps = 1
        h = seg_len / n_steps
        bu0 = bu_segs[seg, 0]
        bu1 = bu_segs[seg, 1]
        bu2 = bu_segs[seg, 2]

        for j in range(n_steps):
            s = bounds[seg] + j * h

            tau = t_offset + d * s
            _alpha_at(tau, &alpha[0], eps, &periods[0], &phases[0], &amps[0], a)
            a0 = a[0]
            a1 = a[1]
            a2 = a[2]
            k1[0] = d * (a0 * x[1] * x[2] + bu0)
            k1[1] = d * (a1 * x[0] * x[2] + bu1)
            k1[2] = d * (a2 * x[0] * x[1] + bu2)
            for k in range(K):
                kW1[0, k] = d * a0 * (x[2] * W[1, k] + x[1] * W[2, k])
                kW1[1, k] = d * a1 * (x[2] * W[0, k] + x[0] * W[2, k])
                kW1[2, k] = d * a2 * (x[1] * W[0, k] + x[0] * W[1, k])

            xs[0] = x[0] + 0.5 * h * k1[0]
            xs[1] = x[1] + 0.5 * h * k1[1]
            xs[2] = x[2] + 0.5 * h * k1[2]
            for k in range(K):
                Ws[0, k] = W[0, k] + 0.5 * h * kW1[0, k]
                Ws[1, k] = W[1, k] + 0.5 * h * kW1[1, k]
                Ws[2, k] = W[2, k] + 0.5 * h * kW1[2, k]
            tau = t_offset + d * (s + 0.5 * h)
            _alpha_at(tau, &alpha[0], eps, &periods[0], &phases[0], &amps[0], a)
            a0 = a[0]
            a1 = a[1]
            a2 = a[2]
            k2[0] = d * (a0 * xs[1] * xs[2] + bu0)
            k2[1] = d * (a1 * xs[0] * xs[2] + bu1)
            k2[2] = d * (a2 * xs[0] * xs[1] + bu2)
            for k in range(K):
                kW2[0, k] = d * a0 * (xs[2] * Ws[1, k] + xs[1] * Ws[2, k])
                kW2[1, k] = d * a1 * (xs[2] * Ws[0, k] + xs[0] * Ws[2, k])
                kW2[2, k] = d * a2 * (xs[1] * Ws[0, k] + xs[0] * Ws[1, k])

            xs[0] = x[0] + 0.5 * h * k2[0]
            xs[1] = x[1] + 0.5 * h * k2[1]
            xs[2] = x[2] + 0.5 * h * k2[2]
            for k in range(K):
                Ws[0, k] = W[0, k] + 0.5 * h * kW2[0, k]
                Ws[1, k] = W[1, k] + 0.5 * h * kW2[1, k]
                Ws[2, k] = W[2, k] + 0.5 * h * kW2[2, k]
            k3[0] = d * (a0 * xs[1] * xs[2] + bu0)
            k3[1] = d * (a1 * xs[0] * xs[2] + bu1)
            k3[2] = d * (a2 * xs[0] * xs[1] + bu2)
            for k in range(K):
                kW3[0, k] = d * a0 * (xs[2] * Ws[1, k] + xs[1] * Ws[2, k])
                kW3[1, k] = d * a1 * (xs[2] * Ws[0, k] + xs[0] * Ws[2, k])
                kW3[2, k] = d * a2 * (xs[1] * Ws[0, k] + xs[0] * Ws[1, k])

            xs[0] = x[0] + h * k3[0]
            xs[1] = x[1] + h * k3[1]
            xs[2] = x[2] + h * k3[2]
            for k in range(K):
                Ws[0, k] = W[0, k] + h * kW3[0, k]
                Ws[1, k] = W[1, k] + h * kW3[1, k]
                Ws[2, k] = W[2, k] + h * kW3[2, k]
            tau = t_offset + d * (s + h)
            _alpha_at(tau, &alpha[0], eps, &periods[0], &phases[0], &amps[0], a)
            a0 = a[0]
            a1 = a[1]
            a2 = a[2]
            k4[0] = d * (a0 * xs[1] * xs[2] + bu0)
            k4[1] = d * (a1 * xs[0] * xs[2] + bu1)
            k4[2] = d * (a2 * xs[0] * xs[1] + bu2)
            for k in range(K):
                kW4[0, k] = d * a0 * (xs[2] * Ws[1, k] + xs[1] * Ws[2, k])
                kW4[1, k] = d * a1 * (xs[2] * Ws[0, k] + xs[0] * Ws[2, k])
                kW4[2, k] = d * a2 * (xs[1] * Ws[0, k] + xs[0] * Ws[1, k])

            x[0] = x[0] + (h / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
            x[1] = x[1] + (h / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
            x[2] = x[2] + (h / 6.0) * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
            for k in range(K):
                W[0, k] = W[0, k] + (h / 6.0) * (
                    kW1[0, k] + 2.0 * kW2[0, k] + 2.0 * kW3[0, k] + kW4[0, k])
                W[1, k] = W[1, k] + (h / 6.0) * (
                    kW1[1, k] + 2.0 * kW2[1, k] + 2.0 * kW3[1, k] + kW4[1, k])
                W[2, k] = W[2, k] + (h / 6.0) * (
                    kW1[2, k] + 2.0 * kW2[2, k] + 2.0 * kW3[2, k] + kW4[2, k])

            if not (isfinite(x[0]) and isfinite(x[1]) and isfinite(x[2])):
                raise ArithmeticError(
                    f"state became non-finite at integration time {s + h}"
                )

        for k in range(K):
            if seed_idx[k] == seg + 1:
                W[0, k] = seeds[k, 0]
                W[1, k] = seeds[k, 1]
                W[2, k] = seeds[k, 2]
        states[seg + 1, 0] = x[0]
        states[seg + 1, 1] = x[1]
        states[seg + 1, 2] = x[2]
        for k in range(K):
            sens[seg + 1, 0, k] = W[0, k]
            sens[seg + 1, 1, k] = W[1, k]
            sens[seg + 1, 2, k] = W[2, k]

    return states_arr, sens_arr
