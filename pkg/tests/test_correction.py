import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bangtrack.correction import (
    CorrectionReport,
    SvdSolver,
    TrackingConfig,
    compute_correction,
    min_norm_solve,
    sigma_min,
    track,
    tracking_log_csv,
    uniform_checkpoints,
)
from bangtrack.dynamics import PerturbationSpec, PerturbedRigidBodyModel
from bangtrack.endpoint import backward_endpoint, d_backward_endpoint
from bangtrack.errors import AllSingularValuesZero, NoFreedomLeft
from bangtrack.propagation import propagate

from conftest import XF, simple_control

X0 = np.zeros(3)


def test_min_norm_identity():
    z = min_norm_solve(np.eye(3), np.array([1.0, 2.0, 3.0]))
    assert np.allclose(z, [1, 2, 3], atol=1e-14)


def test_min_norm_orthonormal_rows():
    M = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    z = min_norm_solve(M, np.array([1.0, 1.0]))
    assert np.allclose(z, [1.0, 1.0, 0.0], atol=1e-14)


def test_min_norm_against_normal_equations():
    rng = np.random.default_rng(0)
    for _ in range(100):
        M = rng.normal(size=(3, 6))
        rhs = rng.normal(size=3)
        z = min_norm_solve(M, rhs)
        oracle = M.T @ np.linalg.solve(M @ M.T, rhs)
        assert np.linalg.norm(z - oracle) <= 1e-10


def test_min_norm_is_minimal_in_nullspace():
    rng = np.random.default_rng(1)
    M = rng.normal(size=(3, 6))
    rhs = rng.normal(size=3)
    z = min_norm_solve(M, rhs)
    _, _, Vt = np.linalg.svd(M)
    null = Vt[3:]
    # orthogonal to the kernel, and any kernel addition only grows the norm
    assert np.max(np.abs(null @ z)) <= 1e-9
    for v in null:
        assert np.linalg.norm(z + 0.1 * v) > np.linalg.norm(z)


def test_min_norm_rank_deficient():
    M = np.array([[1.0, 0.0], [0.0, 0.0]])
    z = min_norm_solve(M, np.array([2.0, 5.0]))
    assert np.allclose(z, [2.0, 0.0], atol=1e-12)


def test_sigma_min_diagonal():
    assert sigma_min(np.diag([3.0, 2.0, 1.0])) == pytest.approx(1.0)


def test_sigma_min_truncates_tiny_values():
    assert sigma_min(np.diag([5.0, 1e-15])) == pytest.approx(5.0)


def test_sigma_min_eigen_oracle():
    rng = np.random.default_rng(2)
    for _ in range(25):
        M = rng.normal(size=(3, 5))
        oracle = np.sqrt(np.min(np.linalg.eigvalsh(M @ M.T)))
        assert sigma_min(M) == pytest.approx(oracle, rel=1e-10)


def test_sigma_min_zero_matrix():
    with pytest.raises(AllSingularValuesZero):
        sigma_min(np.zeros((3, 4)))


@given(st.integers(min_value=0, max_value=10_000))
@settings(max_examples=50, deadline=None)
def test_pseudo_inverse_bound_random_drifts(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(3, rng.integers(3, 8)))
    drift = 1e-3 * rng.normal(size=3)
    z = min_norm_solve(M, drift)
    assert np.linalg.norm(z) <= np.linalg.norm(drift) / sigma_min(M) * (1 + 1e-12)


def test_correction_zero_drift_accepted(model, cross_control):
    observed = backward_endpoint(model, 0.3, cross_control, XF)
    report = compute_correction(model, 0.3, cross_control, observed, XF)
    assert report.accepted
    assert np.max(np.abs(report.shift)) <= 1e-12
    assert report.status == "applied"


def test_correction_no_freedom(model, cross_control):
    with pytest.raises(NoFreedomLeft):
        compute_correction(model, 1.2, cross_control, XF, XF)


def test_correction_bound_and_residual(model, cross_control):
    rng = np.random.default_rng(3)
    t = 0.3
    reference = backward_endpoint(model, t, cross_control, XF)
    for _ in range(20):
        drift = 1e-3 * rng.normal(size=3)
        report = compute_correction(model, t, cross_control, reference + drift, XF)
        assert report.bound_ok
        assert np.allclose(report.drift, drift)
        # 3 equations, 3 movable events: generically consistent
        assert report.residual <= 1e-9
        assert report.shift_norm <= np.linalg.norm(drift) / report.sigma_min * (1 + 1e-12)


def test_correction_first_order_efficacy(model, cross_control):
    # after an accepted correction, re-propagating from the observed state
    # hits the target up to a quadratic remainder
    t = 0.3
    reference = backward_endpoint(model, t, cross_control, XF)
    rng = np.random.default_rng(4)
    for scale in (1e-4, 1e-3):
        drift = scale * rng.normal(size=3)
        drift /= np.linalg.norm(drift) / scale
        report = compute_correction(model, t, cross_control, reference + drift, XF)
        assert report.accepted
        final = propagate(
            model, reference + drift, report.control,
            span=(t, cross_control.final_time),
        ).final_state
        assert np.linalg.norm(final - XF) <= 50.0 * scale**2 + 1e-9


def test_correction_threshold_skips(model, cross_control):
    observed = backward_endpoint(model, 0.3, cross_control, XF)
    report = compute_correction(
        model, 0.3, cross_control, observed + 1e-13, XF, drift_threshold=1e-9
    )
    assert report.status == "skipped"
    assert report.accepted
    assert report.control is cross_control


def test_correction_rejection_on_interchange(model, cross_control):
    # a drift large enough to interchange switching times is rejected
    t = 0.3
    reference = backward_endpoint(model, t, cross_control, XF)
    report = compute_correction(model, t, cross_control, reference + 2.0, XF)
    assert not report.accepted
    assert report.status == "rejected"
    assert report.control is None


def test_track_unperturbed_triggers_nothing(model, cross_control):
    # exact-endpoint nominal: drift stays at integration-error level
    x_f = propagate(model, X0, cross_control).final_state
    config = TrackingConfig(
        checkpoints=uniform_checkpoints(cross_control), drift_threshold=1e-7
    )
    traj, reports, rel = track(model, model, cross_control, X0, x_f, config)
    assert all(r.status == "skipped" for r in reports)
    assert rel <= 1e-7


def test_track_reduces_error(model, cross_control):
    x_f = propagate(model, X0, cross_control).final_state
    true_model = PerturbedRigidBodyModel(model.params, PerturbationSpec(epsilon=0.1))
    config = TrackingConfig(checkpoints=uniform_checkpoints(cross_control))
    traj, reports, rel_corr = track(model, true_model, cross_control, X0, x_f, config)
    rel_pert = np.linalg.norm(
        propagate(true_model, X0, cross_control).final_state - x_f
    ) / np.linalg.norm(x_f)
    assert rel_corr < rel_pert
    assert len(reports) == len(config.checkpoints)


def test_track_checkpoint_after_last_event_logged(model):
    ctrl = simple_control(events=((0.2, 1), (0.35, 3), (0.5, 1)), t_f=1.5)
    x_f = propagate(model, X0, ctrl).final_state
    config = TrackingConfig(checkpoints=(0.3, 0.7, 1.0))
    _, reports, _ = track(model, model, ctrl, X0, x_f, config)
    assert [r.status for r in reports[1:]] == ["no_freedom", "no_freedom"]
    assert len(reports) == 3


def test_track_causality(model, cross_control):
    # events at or before a checkpoint never move
    x_f = propagate(model, X0, cross_control).final_state
    true_model = PerturbedRigidBodyModel(model.params, PerturbationSpec(epsilon=0.2))
    config = TrackingConfig(checkpoints=uniform_checkpoints(cross_control))
    _, reports, _ = track(model, true_model, cross_control, X0, x_f, config)
    working = cross_control
    for report in reports:
        if report.status == "applied" and report.control is not None:
            for old, new in zip(working.events, report.control.events):
                if old.time <= report.time:
                    assert new.time == old.time
            working = report.control


def test_track_determinism(model, cross_control):
    x_f = propagate(model, X0, cross_control).final_state
    true_model = PerturbedRigidBodyModel(model.params, PerturbationSpec(epsilon=0.15))
    config = TrackingConfig(checkpoints=uniform_checkpoints(cross_control))
    out1 = track(model, true_model, cross_control, X0, x_f, config)
    out2 = track(model, true_model, cross_control, X0, x_f, config)
    assert np.array_equal(out1[0].states, out2[0].states)
    assert out1[2] == out2[2]
    assert tracking_log_csv(out1[1]) == tracking_log_csv(out2[1])


def test_tracking_log_format():
    report = CorrectionReport(
        time=0.5, drift=np.array([1e-3, 0, 0]), shift=np.array([1e-4]),
        sigma_min=0.5, residual=1e-6, accepted=True, bound_ok=True,
        status="applied",
    )
    text = tracking_log_csv([report])
    lines = text.strip().split("\n")
    assert lines[0] == "tau,drift_norm,sigma_min,shift_norm,accepted,residual,status"
    assert lines[1].endswith("applied")
