"""Reduced and backward end-point mappings and their differentials.

The differential of the reduced end-point mapping has one column per
switching time: the variation vector seeded at the event by the jump of
the dynamics across the switch,

    seed_j = f(t_j, x(t_j), u_before) - f(t_j, x(t_j), u_after),

propagated to the horizon by the variational equation v' = (df/dx) v.
For control-affine systems with constant control fields the seed reduces
to (u_before,i - u_after,i) * B[:, i] and needs no trajectory value.

The backward mapping integrates the time-reversed system from the target;
its differential with respect to an original switching time t_k is the
reversed-system variation vector seeded at the reflected time t_f - t_k
with the opposite sign (validated against finite differences in the test
suite; moving a switch later in forward time moves it earlier in backward
time).
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .control import BangBangControl, first_event_index_after, value_at
from .dynamics import DynamicsModel
from .errors import NoFreedomLeft
from .propagation import (
    DEFAULT_CONFIG,
    IntegratorConfig,
    Trajectory,
    propagate,
    propagate_backward,
    propagate_sensitivities,
    reflected_bounds,
    segment_bounds,
)


@dataclass(frozen=True)
class EndpointDifferential:
    """Columns are variation vectors at the horizon, one per movable
    switching time; column_index maps columns to 0-based event positions."""

    matrix: np.ndarray
    column_index: tuple[int, ...]

    @property
    def num_columns(self) -> int:
        return self.matrix.shape[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(f"event_{j}" for j in self.column_index) + "\n")
        for row in self.matrix:
            buf.write(",".join(repr(v) for v in row) + "\n")
        return buf.getvalue()


def switch_seed(
    model: DynamicsModel,
    control: BangBangControl,
    event_index: int,
    x_at_event: np.ndarray | None = None,
) -> np.ndarray:
    """Jump of the dynamics across event `event_index`: f(before) - f(after).

    The sign follows the channel's value before/after the event as
    reconstructed by flip counting, so up- and down-switches come out with
    opposite signs automatically.
    """
    ev = control.events[event_index]
    before = control.channel_value_before(event_index)
    after = control.channel_value_after(event_index)
    B = model.control_fields()
    if B is not None:
        return (before - after) * B[:, ev.channel - 1]
    if x_at_event is None:
        raise ValueError("non-affine models need the trajectory value at the event")
    u_after = value_at(control, ev.time)
    u_before = u_after.copy()
    u_before[ev.channel - 1] = before
    return np.asarray(
        model.rhs(ev.time, x_at_event, u_before)
        - model.rhs(ev.time, x_at_event, u_after),
        dtype=float,
    )


def endpoint(
    model: DynamicsModel,
    x0: np.ndarray,
    control: BangBangControl,
    config: IntegratorConfig = DEFAULT_CONFIG,
) -> np.ndarray:
    """Final state of the control system: E(x0, t_f, switching times)."""
    return propagate(model, x0, control, config=config).final_state


def _states_at_bounds(model, x0, bounds, seg_u, base_step, direction, t_offset):
    states, _ = propagate_sensitivities(
        model, x0, bounds, seg_u, base_step, direction, t_offset,
        np.empty(0, dtype=np.int64), np.empty((0, model.state_dim)),
    )
    return states


def d_endpoint(
    model: DynamicsModel,
    x0: np.ndarray,
    control: BangBangControl,
    config: IntegratorConfig = DEFAULT_CONFIG,
) -> EndpointDifferential:
    """n x N matrix of variation vectors at t_f, one column per event, in
    event order; all columns integrate jointly with the state on one RK4
    grid."""
    N = control.num_events
    if N < 1:
        raise ValueError("control must have at least one event")
    bounds = segment_bounds(control, 0.0, control.final_time)
    seg_u = np.array(
        [value_at(control, 0.5 * (bounds[k] + bounds[k + 1])) for k in range(len(bounds) - 1)]
    )
    affine = model.control_fields() is not None
    if affine:
        seeds = np.array([switch_seed(model, control, j) for j in range(N)])
    else:
        states = _states_at_bounds(
            model, x0, bounds, seg_u, config.base_step, 1.0, 0.0
        )
        seeds = np.array(
            [switch_seed(model, control, j, states[j + 1]) for j in range(N)]
        )
    seed_idx = np.arange(1, N + 1, dtype=np.int64)
    _, sens = propagate_sensitivities(
        model, x0, bounds, seg_u, config.base_step, 1.0, 0.0, seed_idx, seeds
    )
    return EndpointDifferential(matrix=sens[-1].copy(), column_index=tuple(range(N)))


def variation_vector(
    model: DynamicsModel,
    trajectory: Trajectory,
    control: BangBangControl,
    event_index: int,
    config: IntegratorConfig = DEFAULT_CONFIG,
) -> np.ndarray:
    """Single column of the forward differential: the variational solution
    from t_j to t_f seeded by the dynamics jump at event `event_index`."""
    ev = control.events[event_index]
    x_tj = trajectory.state_at(ev.time)
    seed = switch_seed(model, control, event_index, x_tj)
    bounds = segment_bounds(control, ev.time, control.final_time)
    seg_u = np.array(
        [value_at(control, 0.5 * (bounds[k] + bounds[k + 1])) for k in range(len(bounds) - 1)]
    )
    _, sens = propagate_sensitivities(
        model, x_tj, bounds, seg_u, config.base_step, 1.0, 0.0,
        np.array([0], dtype=np.int64), seed[None, :],
    )
    return sens[-1][:, 0].copy()


def backward_endpoint(
    model: DynamicsModel,
    t: float,
    control: BangBangControl,
    x_f: np.ndarray,
    config: IntegratorConfig = DEFAULT_CONFIG,
) -> np.ndarray:
    """State reached by integrating the time-reversed system from the target
    x_f over horizon t_f - t; on the nominal pair this is the nominal state
    at time t."""
    if not 0.0 <= t <= control.final_time:
        raise ValueError(f"t={t} outside [0, {control.final_time}]")
    return propagate_backward(
        model, x_f, control, control.final_time - t, config=config
    ).final_state


def _backward_setup(control, horizon, extra=None):
    t_f = control.final_time
    bounds = reflected_bounds(control, horizon, extra=extra)
    seg_u = np.array(
        [
            value_at(control, t_f - 0.5 * (bounds[k] + bounds[k + 1]))
            for k in range(len(bounds) - 1)
        ]
    )
    return bounds, seg_u


def _backward_sens(model, control, x_f, horizon, movable, config, extra=None):
    """Backward pass carrying one column per event in `movable` (original
    event positions); returns (bounds, states, sens) sampled at bounds,
    with columns ordered like `movable`."""
    t_f = control.final_time
    bounds, seg_u = _backward_setup(control, horizon, extra=extra)
    affine = model.control_fields() is not None
    if affine:
        states = None
        fwd_seeds = {j: switch_seed(model, control, j) for j in movable}
    else:
        states = _states_at_bounds(
            model, x_f, bounds, seg_u, config.base_step, -1.0, t_f
        )
        fwd_seeds = {}
    seed_idx = np.empty(len(movable), dtype=np.int64)
    seeds = np.empty((len(movable), model.state_dim))
    for col, j in enumerate(movable):
        tau = t_f - control.events[j].time
        b = int(np.searchsorted(bounds, tau))
        if not np.isclose(bounds[b], tau, rtol=0.0, atol=1e-12):
            raise RuntimeError("reflected event time missing from boundaries")
        seed_idx[col] = b
        if affine:
            fwd = fwd_seeds[j]
        else:
            fwd = switch_seed(model, control, j, states[b])
        seeds[col] = -fwd
    states_out, sens = propagate_sensitivities(
        model, x_f, bounds, seg_u, config.base_step, -1.0, t_f, seed_idx, seeds
    )
    return bounds, states_out, sens


def d_backward_endpoint(
    model: DynamicsModel,
    t: float,
    control: BangBangControl,
    x_f: np.ndarray,
    config: IntegratorConfig = DEFAULT_CONFIG,
) -> EndpointDifferential:
    """Differential of the backward mapping with respect to the switching
    times strictly after t (the earlier ones play no role). Raises
    NoFreedomLeft when no movable event remains."""
    j_first = first_event_index_after(control, t)
    N = control.num_events
    if j_first >= N:
        raise NoFreedomLeft(f"no switching times after t={t}")
    movable = list(range(j_first, N))
    horizon = control.final_time - t
    _, _, sens = _backward_sens(model, control, x_f, horizon, movable, config)
    return EndpointDifferential(
        matrix=sens[-1].copy(), column_index=tuple(movable)
    )


def backward_sweep(
    model: DynamicsModel,
    control: BangBangControl,
    x_f: np.ndarray,
    sample_times: np.ndarray,
    config: IntegratorConfig = DEFAULT_CONFIG,
) -> list[EndpointDifferential]:
    """Backward differentials at many times from one joint backward pass.

    All columns ride the same reversed trajectory; the differential at
    sample time t collects the columns of events with time > t at horizon
    t_f - t. Equivalent to calling d_backward_endpoint per time, up to
    the O(h^4) step-subdivision difference.
    """
    sample_times = np.asarray(sample_times, dtype=float)
    if sample_times.size == 0:
        return []
    if np.any(np.diff(sample_times) <= 0.0):
        raise ValueError("sample times must be strictly increasing")
    t_f = control.final_time
    times = control.event_times()
    if times.size == 0 or sample_times[-1] >= times[-1]:
        raise NoFreedomLeft("sample times must lie strictly before the last event")
    horizons = t_f - sample_times[::-1]
    movable = [j for j in range(control.num_events) if times[j] > sample_times[0]]
    bounds, _, sens = _backward_sens(
        model, control, x_f, horizons[-1], movable, config, extra=horizons[:-1]
    )
    out = []
    for t in sample_times:
        h = t_f - t
        b = int(np.searchsorted(bounds, h))
        if not np.isclose(bounds[b], h, rtol=0.0, atol=1e-12):
            raise RuntimeError("sample horizon missing from boundaries")
        cols = [c for c, j in enumerate(movable) if times[j] > t]
        out.append(
            EndpointDifferential(
                matrix=sens[b][:, cols].copy(),
                column_index=tuple(movable[c] for c in cols),
            )
        )
    return out
