import numpy as np
import pytest

from bangtrack.control import GapPolicy, validate_gaps, value_at
from bangtrack.correction import TrackingConfig, uniform_checkpoints
from bangtrack.dynamics import PerturbationSpec
from bangtrack.endpoint import d_backward_endpoint, endpoint
from bangtrack.correction import sigma_min
from bangtrack.errors import NotConverged, OrderViolation
from bangtrack.robustness import (
    CostWeights,
    NlpSettings,
    RobustnessGrid,
    derive_nominal,
    epsilon_max,
    l1_time_cost,
    pav_nondecreasing,
    place_needles,
    project_gap_simplex,
    quadrature_nodes,
    robustness_cost,
    sigma_min_profile,
    solve_timing_nlp,
)

from conftest import ETA, XF, simple_control

X0 = np.zeros(3)
GAP = GapPolicy(ETA)


def test_pav_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(50):
        y = rng.normal(size=6)
        fit = pav_nondecreasing(y)
        assert np.all(np.diff(fit) >= -1e-12)
        # projection property: no feasible point is closer
        for _ in range(40):
            z = np.sort(rng.normal(size=6))
            assert np.linalg.norm(fit - y) <= np.linalg.norm(z - y) + 1e-9


def test_gap_projection_feasible_and_idempotent():
    rng = np.random.default_rng(1)
    for _ in range(50):
        times = np.sort(rng.uniform(0, 1.5, size=5))
        proj = project_gap_simplex(times, 0.05, 1.5)
        assert proj[0] >= 0.05
        assert proj[-1] <= 1.5 - 0.05
        assert np.all(np.diff(proj) >= 0.05)
        again = project_gap_simplex(proj, 0.05, 1.5)
        assert np.allclose(proj, again, atol=1e-12)


def test_gap_projection_is_closest_point():
    rng = np.random.default_rng(2)
    times = np.array([0.02, 0.03, 0.9, 0.91, 1.49])
    proj = project_gap_simplex(times, 0.05, 1.5)
    d0 = np.linalg.norm(proj - times)
    for _ in range(200):
        z = project_gap_simplex(rng.uniform(0, 1.5, size=5), 0.05, 1.5)
        assert d0 <= np.linalg.norm(z - times) + 1e-9


def test_gap_projection_infeasible_raises():
    with pytest.raises(OrderViolation):
        project_gap_simplex(np.linspace(0.1, 0.9, 12), 0.1, 1.0)


def test_gap_projection_floor():
    times = np.array([0.2, 0.5, 0.7, 0.9])
    proj = project_gap_simplex(times, 0.05, 1.5, floor_index=2, floor_value=1.0)
    assert proj[2] >= 1.0
    assert proj[3] >= 1.05
    assert np.allclose(proj[:2], times[:2])


def test_l1_cost_zero_control():
    assert l1_time_cost(simple_control(t_f=1.0)) == pytest.approx(1.0)


def test_l1_cost_single_pulse():
    ctrl = simple_control(events=((0.2, 1), (0.5, 1)), t_f=1.0)
    assert l1_time_cost(ctrl) == pytest.approx(1.3)


def test_l1_cost_initially_on():
    ctrl = simple_control(events=((0.25, 2),), initial=(0, 1, 0, 0), t_f=1.0)
    assert l1_time_cost(ctrl) == pytest.approx(1.25)


def test_quadrature_nodes_avoid_edges():
    nodes = quadrature_nodes(1.0, 10)
    assert nodes[0] == pytest.approx(0.05)
    assert nodes[-1] == pytest.approx(0.95)
    assert len(nodes) == 10


def test_sigma_profile_matches_direct(model, cross_control):
    nodes = quadrature_nodes(cross_control.events[-1].time, 23)
    profile = sigma_min_profile(model, cross_control, XF, nodes)
    for t, sig in zip(nodes[::5], profile[::5]):
        direct = sigma_min(d_backward_endpoint(model, t, cross_control, XF).matrix)
        assert sig == pytest.approx(direct, rel=1e-7)


def test_robustness_cost_grid_convergence(model, cross_control):
    base = robustness_cost(model, cross_control, XF, RobustnessGrid(samples=200))
    double = robustness_cost(model, cross_control, XF, RobustnessGrid(samples=400))
    assert abs(double - base) / base <= 0.02


def test_robustness_cost_integrand_continuity(model, cross_control):
    # away from events the integrand varies smoothly between adjacent nodes
    t_last = cross_control.events[-1].time
    nodes = quadrature_nodes(t_last, 200)
    sig = sigma_min_profile(model, cross_control, XF, nodes)
    integrand = 1.0 / sig**2
    event_times = cross_control.event_times()
    for i in range(len(nodes) - 1):
        crosses = np.any(
            (event_times > nodes[i]) & (event_times <= nodes[i + 1])
        )
        if not crosses:
            ratio = integrand[i + 1] / integrand[i]
            assert 0.1 < ratio < 10.0


def test_robustness_cost_upper_limit(model, cross_control):
    full = robustness_cost(model, cross_control, XF, RobustnessGrid(samples=100))
    partial = robustness_cost(
        model, cross_control, XF, RobustnessGrid(samples=100, upper_limit=0.5)
    )
    assert partial > 0
    assert partial != full


def test_place_needles_counts_and_gaps(nominal):
    template, floor = place_needles(nominal, (1, 4, 2), GAP)
    assert template.num_events == nominal.num_events + 6
    assert validate_gaps(template, GAP)
    assert floor is not None
    idx, val = floor
    for ev in template.events[idx:]:
        assert ev.time >= val - 1e-12


def test_place_needles_is_pulse(nominal):
    template, _ = place_needles(nominal, (2,), GAP)
    ch2 = [ev.time for ev in template.events if ev.channel == 2]
    ch2_nominal = sum(1 for ev in nominal.events if ev.channel == 2)
    assert len(ch2) == ch2_nominal + 2
    s_open, s_close = ch2[-2], ch2[-1]
    mid = 0.5 * (s_open + s_close)
    before = value_at(nominal, mid)[1]
    during = value_at(template, mid)[1]
    assert during != before


def test_solve_timing_nlp_pure_cost(model, nominal):
    # lambda2 = 0 from a feasible nominal: cost does not get worse
    weights = CostWeights(1.0, 0.0)
    settings = NlpSettings(max_inner=25)
    result = solve_timing_nlp(
        model, X0, nominal, weights, GAP, XF, settings=settings
    )
    assert result.converged
    assert result.cost_c <= l1_time_cost(nominal) + 1e-8
    assert np.linalg.norm(endpoint(model, X0, result.control) - XF) <= 1e-6


def test_solve_timing_nlp_pure_robustness(model, nominal):
    weights = CostWeights(0.0, 1.0)
    grid = RobustnessGrid(samples=50)
    template, floor = place_needles(nominal, (1, 4, 2), GAP)
    start_cr = robustness_cost(model, template, XF, grid)
    result = solve_timing_nlp(
        model, X0, template, weights, GAP, XF, grid=grid,
        settings=NlpSettings(max_inner=30), floor=floor,
    )
    assert result.converged
    assert result.cost_cr < start_cr


def test_solve_timing_nlp_feasibility_and_gaps(model, nominal):
    grid = RobustnessGrid(samples=50)
    template, floor = place_needles(nominal, (1, 4), GAP)
    result = solve_timing_nlp(
        model, X0, template, CostWeights(1.0, 1.0), GAP, XF, grid=grid, floor=floor
    )
    assert result.constraint_residual <= 1e-6
    assert validate_gaps(result.control, GAP)
    # sub-optimality with respect to the pure cost of the nominal
    assert l1_time_cost(nominal) <= result.cost_c + 1e-8


def test_derive_nominal_hits_target(model, nominal):
    res = np.linalg.norm(endpoint(model, X0, nominal) - XF)
    assert res <= 1e-6
    assert nominal.num_events == 3
    assert np.all(np.diff(nominal.event_times()) > 0)
    assert 0.1 <= l1_time_cost(nominal) <= 10.0


def test_derive_nominal_seed_changes_draws_not_feasibility(model):
    other = derive_nominal(model, X0, XF, seed=1, eta=ETA, n_starts=12, jobs=2)
    res = np.linalg.norm(endpoint(model, X0, other) - XF)
    assert res <= 1e-6


def test_enumerate_single_channel_reduces_to_solve(nominal):
    from bangtrack.dynamics import RigidBodyModel, RigidBodyParams
    from bangtrack.robustness import enumerate_needle_channels
    from bangtrack.control import BangBangControl, ChannelBounds, SwitchingEvent

    model1 = RigidBodyModel(RigidBodyParams(torques=((2.0, 1.0, 0.3),)))
    base = BangBangControl(
        bounds=ChannelBounds(lower=(0.0,), upper=(1.0,)),
        initial_values=(1.0,),
        events=(SwitchingEvent(0.4, 1),),
        final_time=1.5,
    )
    # target taken from a control that already contains a needle, so the
    # single-tuple problem is feasible by construction
    witness = base.with_events(
        (SwitchingEvent(0.4, 1), SwitchingEvent(0.9, 1), SwitchingEvent(1.0, 1))
    )
    x_f = np.asarray(endpoint(model1, X0, witness), dtype=float)
    best, table = enumerate_needle_channels(
        model1, X0, base, 1, CostWeights(1.0, 1.0), GAP, x_f,
        grid=RobustnessGrid(samples=50),
    )
    assert len(table) == 1
    assert best.channels == (1,)


def test_enumerate_greedy_row_count(model, nominal):
    from bangtrack.robustness import enumerate_needle_channels

    best, table = enumerate_needle_channels(
        model, X0, nominal, 2, CostWeights(1.0, 1.0), GAP, XF,
        grid=RobustnessGrid(samples=50), mode="greedy", jobs=2,
    )
    # one batch of m solves per appended needle
    assert len(table) == 4 * 2
    assert len(best.channels) == 2
    assert best.converged


def test_epsilon_max_zero_absorbed(model, nominal):
    spec = PerturbationSpec(epsilon=0.0)
    tracking = TrackingConfig(checkpoints=uniform_checkpoints(nominal))
    grid_eps = np.array([0.0, 1e-4])
    emax = epsilon_max(model, nominal, spec, grid_eps, X0, XF, tracking=tracking)
    assert emax >= 0.0


def test_epsilon_max_sentinel(model, nominal):
    # an absurdly large first epsilon fails immediately
    spec = PerturbationSpec(epsilon=0.0)
    tracking = TrackingConfig(checkpoints=uniform_checkpoints(nominal))
    grid_eps = np.array([50.0, 60.0])
    emax = epsilon_max(model, nominal, spec, grid_eps, X0, XF, tracking=tracking)
    assert emax == pytest.approx(49.0)
