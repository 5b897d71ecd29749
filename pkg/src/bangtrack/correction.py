"""Minimal-norm switching-time corrections and the closed-loop tracker.

A drift observed at time t is converted into the smallest switching-time
shift that restores the target at the final time, via the pseudo-inverse
of the backward end-point differential. The tracking loop applies this
at each checkpoint, freezing past events and rejecting corrections that
would interchange switching times.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .control import BangBangControl, GapPolicy, apply_shift, first_event_index_after
from .dynamics import DynamicsModel
from .endpoint import _backward_sens
from .errors import AllSingularValuesZero, NoFreedomLeft, OrderViolation
from .propagation import DEFAULT_CONFIG, IntegratorConfig, Trajectory, propagate


@dataclass(frozen=True)
class SvdSolver:
    """SVD-based pseudo-inverse with relative rank truncation: singular
    values below rank_tolerance * sigma_max are treated as zero."""

    rank_tolerance: float = 1e-10

    def __post_init__(self):
        if self.rank_tolerance <= 0:
            raise ValueError("rank_tolerance must be positive")


DEFAULT_SOLVER = SvdSolver()


def min_norm_solve(
    M: np.ndarray, rhs: np.ndarray, solver: SvdSolver = DEFAULT_SOLVER
) -> np.ndarray:
    """Least-squares solution of M z = rhs of minimal Euclidean norm
    (Moore-Penrose pseudo-inverse applied to rhs)."""
    M = np.asarray(M, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(M.shape[1])
    keep = s > solver.rank_tolerance * s[0]
    coeff = (U.T[keep] @ rhs) / s[keep]
    return Vt[keep].T @ coeff


def sigma_min(M: np.ndarray, solver: SvdSolver = DEFAULT_SOLVER) -> float:
    """Smallest singular value above the rank truncation threshold."""
    M = np.asarray(M, dtype=float)
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        raise AllSingularValuesZero("matrix is numerically zero")
    keep = s[s > solver.rank_tolerance * s[0]]
    if keep.size == 0:
        raise AllSingularValuesZero("matrix is numerically zero")
    return float(keep[-1])


@dataclass(frozen=True)
class CorrectionReport:
    """Outcome of one correction attempt.

    status is one of "applied", "rejected" (shift interchanges switching
    times; the tracking loop keeps the last admissible control), "skipped"
    (drift below threshold), "no_freedom" (no movable events remain).
    """

    time: float
    drift: np.ndarray
    shift: np.ndarray
    sigma_min: float
    residual: float
    accepted: bool
    bound_ok: bool
    status: str
    control: BangBangControl | None = None

    @property
    def drift_norm(self) -> float:
        return float(np.linalg.norm(self.drift))

    @property
    def shift_norm(self) -> float:
        return float(np.linalg.norm(self.shift))


@dataclass(frozen=True)
class TrackingConfig:
    """Checkpoint schedule and correction knobs for the tracking loop."""

    checkpoints: tuple[float, ...]
    gap: GapPolicy = GapPolicy()
    drift_threshold: float = 1e-12
    damping: float = 1.0
    solver: SvdSolver = DEFAULT_SOLVER

    def __post_init__(self):
        object.__setattr__(
            self, "checkpoints", tuple(float(t) for t in self.checkpoints)
        )
        if not self.checkpoints:
            raise ValueError("need at least one checkpoint")
        arr = np.asarray(self.checkpoints)
        if np.any(np.diff(arr) <= 0) or arr[0] <= 0:
            raise ValueError("checkpoints must be strictly increasing and positive")


def uniform_checkpoints(
    control: BangBangControl, count: int = 20, upper_fraction: float = 0.95
) -> tuple[float, ...]:
    """count checkpoints uniformly on (0, upper_fraction * t_N]."""
    t_last = control.events[-1].time
    upper = upper_fraction * t_last
    return tuple(upper * (i + 1) / count for i in range(count))


def compute_correction(
    model: DynamicsModel,
    t: float,
    control: BangBangControl,
    observed_state: np.ndarray,
    x_f: np.ndarray,
    solver: SvdSolver = DEFAULT_SOLVER,
    config: IntegratorConfig = DEFAULT_CONFIG,
    drift_threshold: float = 0.0,
    damping: float = 1.0,
) -> CorrectionReport:
    """Minimal-norm switching-time correction for the drift observed at t.

    The drift is measured against the backward mapping of the current
    control (where the state must be now to still hit x_f). The reported
    shift is the raw pseudo-inverse solution; acceptance applies
    damping * shift with all events at time <= t frozen.
    """
    observed_state = np.asarray(observed_state, dtype=float)
    N = control.num_events
    j_first = first_event_index_after(control, t)
    if j_first >= N:
        raise NoFreedomLeft(f"no switching times after t={t}")
    movable = list(range(j_first, N))
    horizon = control.final_time - t
    _, states, sens = _backward_sens(
        model, control, x_f, horizon, movable, config
    )
    reference = states[-1]
    M = sens[-1]
    drift = observed_state - reference
    drift_norm = float(np.linalg.norm(drift))
    if drift_norm < drift_threshold:
        return CorrectionReport(
            time=t, drift=drift, shift=np.zeros(len(movable)),
            sigma_min=float("nan"), residual=drift_norm, accepted=True,
            bound_ok=True, status="skipped", control=control,
        )
    shift = min_norm_solve(M, drift, solver)
    smin = sigma_min(M, solver)
    residual = float(np.linalg.norm(M @ shift - drift))
    # the pseudo-inverse estimate; the tiny slack absorbs last-ulp rounding
    bound_ok = float(np.linalg.norm(shift)) <= (drift_norm / smin) * (1.0 + 1e-12)
    try:
        shifted = apply_shift(control, damping * shift, frozen_before=t)
        accepted, status = True, "applied"
    except OrderViolation:
        shifted, accepted, status = None, False, "rejected"
    return CorrectionReport(
        time=t, drift=drift, shift=shift, sigma_min=smin, residual=residual,
        accepted=accepted, bound_ok=bound_ok, status=status, control=shifted,
    )


def _merge(pieces: list[Trajectory]) -> Trajectory:
    times = [pieces[0].times]
    states = [pieces[0].states]
    for piece in pieces[1:]:
        times.append(piece.times[1:])
        states.append(piece.states[1:])
    return Trajectory(times=np.concatenate(times), states=np.vstack(states))


def track(
    model_nominal: DynamicsModel,
    model_true: DynamicsModel,
    control_nominal: BangBangControl,
    x0: np.ndarray,
    x_f: np.ndarray,
    config: TrackingConfig,
    integrator: IntegratorConfig = DEFAULT_CONFIG,
) -> tuple[Trajectory, list[CorrectionReport], float]:
    """Simulate the true (perturbed) dynamics, correcting the working
    control at each checkpoint; rejected corrections keep the last
    admissible control. Returns the corrected trajectory, one report per
    checkpoint, and the final relative error |x(t_f) - x_f| / |x_f|."""
    x_f = np.asarray(x_f, dtype=float)
    working = control_nominal
    x_cur = np.asarray(x0, dtype=float)
    t_cur = 0.0
    pieces: list[Trajectory] = []
    reports: list[CorrectionReport] = []
    for tau in config.checkpoints:
        pieces.append(
            propagate(model_true, x_cur, working, span=(t_cur, tau), config=integrator)
        )
        x_cur = pieces[-1].final_state
        t_cur = tau
        try:
            report = compute_correction(
                model_nominal, tau, working, x_cur, x_f,
                solver=config.solver, config=integrator,
                drift_threshold=config.drift_threshold, damping=config.damping,
            )
        except NoFreedomLeft:
            report = CorrectionReport(
                time=tau, drift=np.zeros_like(x_f), shift=np.zeros(0),
                sigma_min=float("nan"), residual=0.0, accepted=False,
                bound_ok=True, status="no_freedom", control=None,
            )
        reports.append(report)
        if report.accepted and report.control is not None:
            working = report.control
    pieces.append(
        propagate(
            model_true, x_cur, working,
            span=(t_cur, control_nominal.final_time), config=integrator,
        )
    )
    trajectory = _merge(pieces)
    rel_err = float(
        np.linalg.norm(trajectory.final_state - x_f) / np.linalg.norm(x_f)
    )
    return trajectory, reports, rel_err


def tracking_log_csv(reports: list[CorrectionReport]) -> str:
    buf = io.StringIO()
    buf.write("tau,drift_norm,sigma_min,shift_norm,accepted,residual,status\n")
    for r in reports:
        buf.write(
            f"{r.time!r},{r.drift_norm!r},{r.sigma_min!r},{r.shift_norm!r},"
            f"{int(r.accepted)},{r.residual!r},{r.status}\n"
        )
    return buf.getvalue()
