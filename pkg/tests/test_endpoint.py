import numpy as np
import pytest

from bangtrack.control import SwitchingEvent
from bangtrack.endpoint import (
    backward_endpoint,
    backward_sweep,
    d_backward_endpoint,
    d_endpoint,
    endpoint,
    switch_seed,
    variation_vector,
)
from bangtrack.errors import NoFreedomLeft
from bangtrack.propagation import propagate

from conftest import XF, scalar_control, simple_control

X0 = np.zeros(3)


def _shift_event(ctrl, j, h):
    events = list(ctrl.events)
    events[j] = SwitchingEvent(events[j].time + h, events[j].channel)
    return ctrl.with_events(sorted(events, key=lambda e: e.time))


def fd_column(fun, ctrl, j, h=1e-5):
    up = fun(_shift_event(ctrl, j, h))
    down = fun(_shift_event(ctrl, j, -h))
    return (up - down) / (2 * h)


def test_endpoint_zero_control(model):
    assert np.array_equal(endpoint(model, X0, simple_control()), np.zeros(3))


def test_endpoint_scalar_on_time(scalar_model):
    ctrl = scalar_control([0.25, 0.75], t_f=1.0)
    assert endpoint(scalar_model, np.zeros(1), ctrl)[0] == pytest.approx(0.5, abs=1e-14)


def test_scalar_columns_are_signed_units(scalar_model):
    # up-switch column is -1, down-switch +1 for dx/dt = u
    ctrl = scalar_control([0.25, 0.75], t_f=1.0)
    dE = d_endpoint(scalar_model, np.zeros(1), ctrl)
    assert np.allclose(dE.matrix, [[-1.0, 1.0]], atol=1e-12)


def test_scalar_closed_form_derivative(scalar_model):
    # x(t_f) = (t2 - t1) + (t_f - t3): exact derivatives (-1, +1, -1)
    ctrl = scalar_control([0.2, 0.5, 0.8], t_f=1.0)
    dE = d_endpoint(scalar_model, np.zeros(1), ctrl)
    assert np.allclose(dE.matrix, [[-1.0, 1.0, -1.0]], atol=1e-12)


def test_switch_seed_four_sign_cases(model, cross_control):
    B = model.params.torque_matrix()
    # event 0: channel 1 switches up -> seed = (0-1) * b1
    assert np.allclose(switch_seed(model, cross_control, 0), -B[:, 0])
    # event 2: channel 1 switches down -> seed = (1-0) * b1
    assert np.allclose(switch_seed(model, cross_control, 2), B[:, 0])
    # event 1: channel 3 up, event 3: channel 3 down
    assert np.allclose(switch_seed(model, cross_control, 1), -B[:, 2])
    assert np.allclose(switch_seed(model, cross_control, 3), B[:, 2])


def test_affine_shortcut_matches_general_difference(model, cross_control):
    traj = propagate(model, X0, cross_control)

    class NoShortcut:
        state_dim = 3
        control_dim = 4

        def rhs(self, t, x, u):
            return model.rhs(t, x, u)

        def jacobian_x(self, t, x, u):
            return model.jacobian_x(t, x, u)

        def kernel_params(self):
            return None

        def control_fields(self):
            return None

    for j in range(cross_control.num_events):
        x_ev = traj.state_at(cross_control.events[j].time)
        fast = switch_seed(model, cross_control, j)
        general = switch_seed(NoShortcut(), cross_control, j, x_ev)
        assert np.allclose(fast, general, atol=1e-12)


def test_d_endpoint_matches_finite_differences(model, cross_control):
    dE = d_endpoint(model, X0, cross_control)
    assert dE.column_index == (0, 1, 2, 3)
    fun = lambda c: endpoint(model, X0, c)
    for j in range(4):
        fd = fd_column(fun, cross_control, j)
        rel = np.linalg.norm(dE.matrix[:, j] - fd) / np.linalg.norm(fd)
        assert rel <= 1e-6


def test_variation_vector_matches_column(model, cross_control):
    traj = propagate(model, X0, cross_control)
    dE = d_endpoint(model, X0, cross_control)
    for j in range(4):
        v = variation_vector(model, traj, cross_control, j)
        assert np.allclose(v, dE.matrix[:, j], atol=1e-9)


def test_no_absolute_value_both_signs(model, cross_control):
    # E(t_j + h) - E(t_j) ~ +h * v_j for both signs of h
    dE = d_endpoint(model, X0, cross_control)
    base = endpoint(model, X0, cross_control)
    for j in range(4):
        for h in (1e-4, -1e-4):
            pred = base + h * dE.matrix[:, j]
            actual = endpoint(model, X0, _shift_event(cross_control, j, h))
            assert np.linalg.norm(actual - pred) <= 5.0 * h**2


def test_first_order_expansion_ratio_halves(model, cross_control):
    rng = np.random.default_rng(2)
    direction = rng.normal(size=4)
    direction /= np.linalg.norm(direction)
    dE = d_endpoint(model, X0, cross_control)
    base = endpoint(model, X0, cross_control)
    remainders = []
    for scale in (1e-2, 5e-3, 2.5e-3):
        delta = scale * direction
        shifted = cross_control.with_events(
            tuple(
                SwitchingEvent(ev.time + d, ev.channel)
                for ev, d in zip(cross_control.events, delta)
            )
        )
        err = np.linalg.norm(
            endpoint(model, X0, shifted) - base - dE.matrix @ delta
        )
        remainders.append(err / scale)
    assert remainders[0] > 1.9 * remainders[1] > 1.9 * 1.9 * remainders[2]


def test_backward_endpoint_at_t_f(model, cross_control):
    out = backward_endpoint(model, cross_control.final_time, cross_control, XF)
    assert np.array_equal(out, XF)


def test_backward_matches_nominal_state(model, cross_control):
    # on the nominal pair the backward map reproduces the forward state
    traj = propagate(model, X0, cross_control)
    x_f = traj.final_state
    for t in (0.1, 0.35, 0.7, 1.2):
        back = backward_endpoint(model, t, cross_control, x_f)
        fwd = propagate(model, X0, cross_control, span=(0.0, t)).final_state
        assert np.linalg.norm(back - fwd) <= 1e-8


def test_backward_forward_consistency(model, cross_control):
    for t in (0.05, 0.5, 0.9, 1.3):
        xb = backward_endpoint(model, t, cross_control, XF)
        fwd = propagate(model, xb, cross_control, span=(t, cross_control.final_time))
        assert np.linalg.norm(fwd.final_state - XF) <= 1e-7


def test_d_backward_column_count(model, cross_control):
    # events at 0.2, 0.4, 0.7, 1.1
    assert d_backward_endpoint(model, 0.3, cross_control, XF).num_columns == 3
    assert d_backward_endpoint(model, 0.05, cross_control, XF).num_columns == 4
    assert d_backward_endpoint(model, 1.0, cross_control, XF).num_columns == 1


def test_d_backward_no_freedom(model, cross_control):
    with pytest.raises(NoFreedomLeft):
        d_backward_endpoint(model, 1.2, cross_control, XF)
    with pytest.raises(NoFreedomLeft):
        d_backward_endpoint(model, 1.1, cross_control, XF)


def test_d_backward_matches_finite_differences(model, cross_control):
    t = 0.3
    dBE = d_backward_endpoint(model, t, cross_control, XF)
    assert dBE.column_index == (1, 2, 3)
    fun = lambda c: backward_endpoint(model, t, c, XF)
    for col, j in enumerate(dBE.column_index):
        fd = fd_column(fun, cross_control, j)
        rel = np.linalg.norm(dBE.matrix[:, col] - fd) / np.linalg.norm(fd)
        assert rel <= 1e-6


def test_d_backward_ignores_past_events(model, cross_control):
    # perturbing an event before t leaves the returned columns unchanged
    t = 0.5
    base = d_backward_endpoint(model, t, cross_control, XF)
    perturbed_ctrl = _shift_event(cross_control, 0, 0.03)
    pert = d_backward_endpoint(model, t, perturbed_ctrl, XF)
    assert base.column_index == pert.column_index
    assert np.max(np.abs(base.matrix - pert.matrix)) <= 1e-12


def test_d_backward_piecewise_constant_column_set(model, cross_control):
    lo = d_backward_endpoint(model, 0.01, cross_control, XF)
    hi = d_backward_endpoint(model, 0.19, cross_control, XF)
    assert lo.column_index == hi.column_index == (0, 1, 2, 3)


def test_backward_sweep_matches_direct(model, cross_control):
    ts = np.array([0.1, 0.3, 0.65, 0.9])
    sweep = backward_sweep(model, cross_control, XF, ts)
    for t, dd in zip(ts, sweep):
        direct = d_backward_endpoint(model, t, cross_control, XF)
        assert dd.column_index == direct.column_index
        assert np.max(np.abs(dd.matrix - direct.matrix)) <= 1e-8


def test_column_near_horizon_is_seed(model):
    # an event approaching t_f leaves no room to propagate: the column
    # degenerates to its seed vector
    ctrl = simple_control(events=((0.3, 1), (1.5 - 1e-9, 3)), t_f=1.5)
    dE = d_endpoint(model, X0, ctrl)
    seed = switch_seed(model, ctrl, 1)
    assert np.allclose(dE.matrix[:, 1], seed, atol=1e-8)


def test_differential_csv_export(model, cross_control):
    dE = d_endpoint(model, X0, cross_control)
    lines = dE.to_csv().strip().split("\n")
    assert lines[0] == "event_0,event_1,event_2,event_3"
    assert len(lines) == 4
