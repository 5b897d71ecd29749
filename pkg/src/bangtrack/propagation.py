"""Piecewise RK4 integration of bang-bang-controlled systems.

Integration always splits exactly at switching times, holding the control
constant per segment (sampled at the segment midpoint), with
ceil(len/base_step) equal fixed RK4 steps per segment. The rigid-body
family is dispatched to the compiled kernels; any other DynamicsModel
goes through the generic pure-Python path.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .control import BangBangControl, value_at
from .dynamics import DynamicsModel
from .errors import IntegrationBlowup


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step RK4 configuration."""

    base_step: float = 1e-3

    def __post_init__(self):
        if self.base_step <= 0:
            raise ValueError("base_step must be positive")


DEFAULT_CONFIG = IntegratorConfig()


@dataclass(frozen=True)
class Trajectory:
    """Sampled solution of a piecewise ODE solve; switching times are exact
    sample nodes."""

    times: np.ndarray
    states: np.ndarray

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def state_at(self, t: float) -> np.ndarray:
        """State at an exact sample node (integration never needs to
        interpolate: checkpoints and switching times are nodes)."""
        idx = int(np.searchsorted(self.times, t))
        for j in (idx, idx - 1, idx + 1):
            if 0 <= j < len(self.times) and abs(self.times[j] - t) <= 1e-12:
                return self.states[j]
        raise KeyError(f"t={t} is not a sample node")

    def to_csv(self) -> str:
        buf = io.StringIO()
        n = self.states.shape[1]
        buf.write("t," + ",".join(f"x_{i + 1}" for i in range(n)) + "\n")
        for t, row in zip(self.times, self.states):
            buf.write(f"{t!r}," + ",".join(repr(v) for v in row) + "\n")
        return buf.getvalue()


def segment_bounds(control: BangBangControl, t_a: float, t_b: float) -> np.ndarray:
    """Ascending [t_a, switching times strictly inside, t_b]."""
    inner = [ev.time for ev in control.events if t_a < ev.time < t_b]
    return np.array([t_a] + inner + [t_b], dtype=float)


def _segment_controls(control: BangBangControl, bounds: np.ndarray) -> np.ndarray:
    """Control vector per segment, sampled at segment midpoints (u is
    constant on open segments, so any interior point is equivalent)."""
    return np.array(
        [
            value_at(control, 0.5 * (bounds[k] + bounds[k + 1]))
            for k in range(len(bounds) - 1)
        ]
    )


def _run_kernel_dense(kp, x0, bounds, seg_u, base_step, direction, t_offset):
    bu = seg_u @ kp.torque_matrix.T
    try:
        return _kernels.propagate_dense(
            kp.alpha, kp.epsilon, kp.periods, kp.phases, kp.amplitudes,
            np.asarray(x0, dtype=float), bounds, np.ascontiguousarray(bu),
            base_step, direction, t_offset,
        )
    except ArithmeticError as exc:
        raise IntegrationBlowup(str(exc)) from exc


def _generic_rk4_dense(model, x0, bounds, seg_u, base_step, direction, t_offset):
    d = float(direction)
    x = np.array(x0, dtype=float)
    times = [bounds[0]]
    states = [x.copy()]
    for seg in range(len(bounds) - 1):
        seg_len = bounds[seg + 1] - bounds[seg]
        n = max(1, int(np.ceil(seg_len / base_step)))
        h = seg_len / n
        u = seg_u[seg]
        for j in range(n):
            s = bounds[seg] + j * h
            k1 = d * model.rhs(t_offset + d * s, x, u)
            k2 = d * model.rhs(t_offset + d * (s + 0.5 * h), x + 0.5 * h * k1, u)
            k3 = d * model.rhs(t_offset + d * (s + 0.5 * h), x + 0.5 * h * k2, u)
            k4 = d * model.rhs(t_offset + d * (s + h), x + h * k3, u)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise IntegrationBlowup(
                    f"state became non-finite at integration time {s + h}"
                )
            times.append(bounds[seg + 1] if j == n - 1 else s + h)
            states.append(x.copy())
    return np.array(times), np.array(states)


def _dense(model, x0, bounds, seg_u, base_step, direction, t_offset):
    kp = model.kernel_params()
    if kp is not None:
        return _run_kernel_dense(kp, x0, bounds, seg_u, base_step, direction, t_offset)
    return _generic_rk4_dense(model, x0, bounds, seg_u, base_step, direction, t_offset)


def propagate(
    model: DynamicsModel,
    x0: np.ndarray,
    control: BangBangControl,
    span: tuple[float, float] | None = None,
    config: IntegratorConfig = DEFAULT_CONFIG,
) -> Trajectory:
    """Integrate forward over `span` (default [0, t_f]), splitting at the
    switching times inside the span."""
    t_a, t_b = span if span is not None else (0.0, control.final_time)
    if not t_a < t_b <= control.final_time:
        raise ValueError(f"need t_a < t_b <= t_f, got [{t_a}, {t_b}]")
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    bounds = segment_bounds(control, t_a, t_b)
    seg_u = _segment_controls(control, bounds)
    times, states = _dense(model, x0, bounds, seg_u, config.base_step, 1.0, 0.0)
    return Trajectory(times=times, states=states)


def reflected_bounds(
    control: BangBangControl, horizon: float, extra: np.ndarray | None = None
) -> np.ndarray:
    """Ascending backward-time boundaries [0, reflected switching times
    inside (0, horizon), horizon], optionally merged with extra nodes."""
    t_f = control.final_time
    inner = [t_f - ev.time for ev in control.events if 0.0 < t_f - ev.time < horizon]
    nodes = set(inner)
    if extra is not None:
        nodes.update(float(s) for s in extra if 0.0 < s < horizon)
    return np.array([0.0] + sorted(nodes) + [horizon], dtype=float)


def propagate_backward(
    model: DynamicsModel,
    x_end: np.ndarray,
    control: BangBangControl,
    horizon: float,
    config: IntegratorConfig = DEFAULT_CONFIG,
) -> Trajectory:
    """Integrate the time-reversed system from x_end over backward time
    [0, horizon], splitting at reflected switching times t_f - t_j.

    The returned trajectory is parameterized by backward time s; the state
    at s corresponds to forward time t_f - s.
    """
    t_f = control.final_time
    if not 0.0 <= horizon <= t_f:
        raise ValueError(f"horizon {horizon} outside [0, {t_f}]")
    x_end = np.asarray(x_end, dtype=float)
    if horizon == 0.0:
        return Trajectory(times=np.array([0.0]), states=x_end[None, :].copy())
    bounds = reflected_bounds(control, horizon)
    seg_u = np.array(
        [
            value_at(control, t_f - 0.5 * (bounds[k] + bounds[k + 1]))
            for k in range(len(bounds) - 1)
        ]
    )
    times, states = _dense(model, x_end, bounds, seg_u, config.base_step, -1.0, t_f)
    return Trajectory(times=times, states=states)


def _generic_rk4_sens(model, x0, bounds, seg_u, base_step, direction, t_offset,
                      seed_idx, seeds):
    d = float(direction)
    n_seg = len(bounds) - 1
    K = len(seed_idx)
    x = np.array(x0, dtype=float)
    n = model.state_dim
    W = np.zeros((n, K))
    states = np.empty((n_seg + 1, n))
    sens = np.zeros((n_seg + 1, n, K))
    for k in range(K):
        if seed_idx[k] == 0:
            W[:, k] = seeds[k]
    states[0] = x
    sens[0] = W

    def stage(tau, xs, Ws, u):
        fx = d * model.rhs(tau, xs, u)
        fW = d * (model.jacobian_x(tau, xs, u) @ Ws)
        return fx, fW

    for seg in range(n_seg):
        seg_len = bounds[seg + 1] - bounds[seg]
        steps = max(1, int(np.ceil(seg_len / base_step)))
        h = seg_len / steps
        u = seg_u[seg]
        for j in range(steps):
            s = bounds[seg] + j * h
            k1, kW1 = stage(t_offset + d * s, x, W, u)
            k2, kW2 = stage(t_offset + d * (s + 0.5 * h), x + 0.5 * h * k1,
                            W + 0.5 * h * kW1, u)
            k3, kW3 = stage(t_offset + d * (s + 0.5 * h), x + 0.5 * h * k2,
                            W + 0.5 * h * kW2, u)
            k4, kW4 = stage(t_offset + d * (s + h), x + h * k3, W + h * kW3, u)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            W = W + (h / 6.0) * (kW1 + 2.0 * kW2 + 2.0 * kW3 + kW4)
            if not np.all(np.isfinite(x)):
                raise IntegrationBlowup(
                    f"state became non-finite at integration time {s + h}"
                )
        for k in range(K):
            if seed_idx[k] == seg + 1:
                W[:, k] = seeds[k]
        states[seg + 1] = x
        sens[seg + 1] = W
    return states, sens


def propagate_sensitivities(model, x0, bounds, seg_u, base_step, direction,
                            t_offset, seed_idx, seeds):
    """State plus variational columns sampled at every boundary; column k is
    seeded with seeds[k] at boundary index seed_idx[k]. Used by the
    end-point differentials."""
    seed_idx = np.asarray(seed_idx, dtype=np.int64)
    n = len(np.asarray(x0))
    seeds = np.ascontiguousarray(
        np.asarray(seeds, dtype=float).reshape(len(seed_idx), n)
    )
    kp = model.kernel_params()
    if kp is not None:
        bu = np.ascontiguousarray(seg_u @ kp.torque_matrix.T)
        try:
            return _kernels.propagate_sens(
                kp.alpha, kp.epsilon, kp.periods, kp.phases, kp.amplitudes,
                np.asarray(x0, dtype=float), np.asarray(bounds, dtype=float),
                bu, base_step, direction, t_offset, seed_idx, seeds,
            )
        except ArithmeticError as exc:
            raise IntegrationBlowup(str(exc)) from exc
    return _generic_rk4_sens(model, x0, bounds, seg_u, base_step, direction,
                             t_offset, seed_idx, seeds)
