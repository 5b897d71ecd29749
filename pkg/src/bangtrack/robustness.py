"""Robustness cost, needle-insertion robustification, and the sweeps.

The robustness of a trajectory is the integral of 1/sigma_min(t)^2 along
it, sigma_min(t) being the smallest positive singular value of the
backward end-point differential: it bounds the switching-time shift
needed per unit drift. Robustification inserts redundant needle pairs
and re-optimizes all switching times under a minimum-gap constraint,
keeping the endpoint on target.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .control import (
    BangBangControl,
    GapPolicy,
    SwitchingEvent,
    insert_needle,
    validate_gaps,
)
from .correction import DEFAULT_SOLVER, SvdSolver, TrackingConfig, min_norm_solve, track, uniform_checkpoints
from .dynamics import DynamicsModel, PerturbationSpec, PerturbedRigidBodyModel
from .endpoint import _backward_sens, d_endpoint, endpoint
from .errors import (
    AllSingularValuesZero,
    IntegrationBlowup,
    NoFeasibleNominal,
    NotConverged,
    OrderViolation,
)
from .propagation import DEFAULT_CONFIG, IntegratorConfig


@dataclass(frozen=True)
class CostWeights:
    """Weights on the original trajectory cost and the robustness cost."""

    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda1 == self.lambda2 == 0:
            raise ValueError("weights must be >= 0 and not both zero")


@dataclass(frozen=True)
class RobustnessGrid:
    """Midpoint quadrature grid for the robustness integral; the upper limit
    defaults to the last switching time of the control at hand."""

    samples: int = 200
    upper_limit: float | None = None

    def __post_init__(self):
        if self.samples < 10:
            raise ValueError("need at least 10 quadrature samples")
        if self.upper_limit is not None and self.upper_limit <= 0:
            raise ValueError("upper_limit must be positive")


@dataclass(frozen=True)
class NeedlePlan:
    """How many needles to add, on which channels ("search" enumerates),
    and the earliest time they may occupy (defaults to the last nominal
    switching time)."""

    count: int
    channels: tuple[int, ...] | str = "search"
    after_time: float | None = None

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("needle count must be >= 0")
        if isinstance(self.channels, str):
            if self.channels != "search":
                raise ValueError("channels must be a tuple or 'search'")
        elif len(self.channels) != self.count:
            raise ValueError("one channel per needle required")


@dataclass(frozen=True)
class RobustifyResult:
    """Optimized switching times with their costs and feasibility report."""

    control: BangBangControl
    cost_c: float
    cost_cr: float
    channels: tuple[int, ...]
    constraint_residual: float
    converged: bool

    def objective(self, weights: CostWeights) -> float:
        return weights.lambda1 * self.cost_c + weights.lambda2 * self.cost_cr


@dataclass(frozen=True)
class NlpSettings:
    """Quadratic-penalty / projected quasi-Newton settings (penalty weights
    10^k for k in the closed power range, forward-difference gradients)."""

    penalty_powers: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    extra_penalty_powers: tuple[int, ...] = (7, 8, 9, 10)
    max_inner: int = 60
    fd_step: float = 1e-6
    step_tol: float = 1e-8
    feas_tol: float = 1e-6
    restore_iters: int = 40
    max_step: float = 0.1


DEFAULT_SETTINGS = NlpSettings()

# slack keeps projected gaps strictly above eta so validate_gaps holds
# after floating-point round trips
_GAP_SLACK = 1e-9


def pav_nondecreasing(y: np.ndarray) -> np.ndarray:
    """Least-squares nondecreasing fit (pool adjacent violators)."""
    y = np.asarray(y, dtype=float)
    level = []  # (mean, weight) per pooled block
    for v in y:
        mean, w = v, 1.0
        while level and level[-1][0] >= mean:
            pm, pw = level.pop()
            mean = (pm * pw + mean * w) / (pw + w)
            w += pw
        level.append((mean, w))
    out = np.empty_like(y)
    i = 0
    for mean, w in level:
        out[i : i + int(w)] = mean
        i += int(w)
    return out


def project_gap_simplex(
    times: np.ndarray,
    eta: float,
    t_f: float,
    floor_index: int | None = None,
    floor_value: float | None = None,
) -> np.ndarray:
    """Euclidean projection onto {eta <= tau_1, tau_{k+1} - tau_k >= eta,
    tau_K <= t_f - eta} via isotonic regression with clipping.

    An optional floor keeps every time from floor_index on at or above
    floor_value (a step lower bound, still isotone, so clipping the
    isotonic fit stays the exact projection).
    """
    times = np.asarray(times, dtype=float)
    K = times.size
    eta_eff = eta + _GAP_SLACK
    ub = t_f - (K + 1) * eta_eff
    if ub < 0:
        raise OrderViolation(
            f"{K} switching times cannot respect gap {eta} on [0, {t_f}]"
        )
    shift = eta_eff * np.arange(1, K + 1)
    lb = np.zeros(K)
    if floor_index is not None and 0 <= floor_index < K:
        c = floor_value - shift[floor_index]
        if c > ub:
            raise OrderViolation(
                f"floor {floor_value} at index {floor_index} leaves no room "
                f"on [0, {t_f}] with gap {eta}"
            )
        lb[floor_index:] = max(0.0, c)
    w = pav_nondecreasing(times - shift)
    return np.clip(w, lb, ub) + shift


def l1_time_cost(control: BangBangControl) -> float:
    """Integral of sum_j |u_j| over [0, t_f], plus t_f. Computed exactly
    from the switching structure (no quadrature)."""
    total = 0.0
    for i in range(control.num_channels):
        value = control.initial_values[i]
        lo = control.bounds.lower[i]
        hi = control.bounds.upper[i]
        prev = 0.0
        for ev in control.events:
            if ev.channel - 1 != i:
                continue
            total += abs(value) * (ev.time - prev)
            prev = ev.time
            value = hi if value == lo else lo
        total += abs(value) * (control.final_time - prev)
    return total + control.final_time


def quadrature_nodes(upper: float, samples: int) -> np.ndarray:
    """Composite midpoint nodes on [0, upper] (never hit partition edges,
    hence never hit switching times placed on them)."""
    h = upper / samples
    return h * (np.arange(samples) + 0.5)


def sigma_min_profile(
    model: DynamicsModel,
    control: BangBangControl,
    x_f: np.ndarray,
    sample_times: np.ndarray,
    solver: SvdSolver = DEFAULT_SOLVER,
    config: IntegratorConfig = DEFAULT_CONFIG,
) -> np.ndarray:
    """sigma_min(t) at each sample time, all from one joint backward pass
    (singular values batched over nodes sharing a column set)."""
    sample_times = np.asarray(sample_times, dtype=float)
    t_f = control.final_time
    times = control.event_times()
    if times.size == 0 or sample_times[-1] >= times[-1]:
        raise ValueError("sample times must lie strictly before the last event")
    horizons = (t_f - sample_times)[::-1]
    movable = [j for j in range(control.num_events) if times[j] > sample_times[0]]
    bounds, _, sens = _backward_sens(
        model, control, x_f, horizons[-1], movable, config, extra=horizons[:-1]
    )
    b_idx = np.searchsorted(bounds, t_f - sample_times)
    if not np.allclose(bounds[b_idx], t_f - sample_times, rtol=0.0, atol=1e-12):
        raise RuntimeError("sample horizon missing from boundaries")
    counts = np.array(
        [sum(1 for j in movable if times[j] > t) for t in sample_times]
    )
    out = np.empty(sample_times.size)
    start = 0
    while start < sample_times.size:
        stop = start
        while stop < sample_times.size and counts[stop] == counts[start]:
            stop += 1
        k = int(counts[start])
        if k == 0:
            raise AllSingularValuesZero("no active columns at a sample node")
        cols = [c for c, j in enumerate(movable) if times[j] > sample_times[start]]
        stack = np.stack([sens[b][:, cols] for b in b_idx[start:stop]])
        s = np.linalg.svd(stack, compute_uv=False)
        smax = s[:, 0]
        if np.any(smax == 0.0):
            raise AllSingularValuesZero("zero differential at a sample node")
        kept = (s > solver.rank_tolerance * smax[:, None]).sum(axis=1)
        out[start:stop] = s[np.arange(s.shape[0]), kept - 1]
        start = stop
    return out


def robustness_cost(
    model: DynamicsModel,
    control: BangBangControl,
    x_f: np.ndarray,
    grid: RobustnessGrid = RobustnessGrid(),
    solver: SvdSolver = DEFAULT_SOLVER,
    config: IntegratorConfig = DEFAULT_CONFIG,
) -> float:
    """Composite-midpoint quadrature of 1 / sigma_min(t)^2 up to the last
    switching time (or the configured upper limit)."""
    if control.num_events < 1:
        raise ValueError("control must have at least one event")
    upper = grid.upper_limit
    if upper is None:
        upper = control.events[-1].time
    nodes = quadrature_nodes(upper, grid.samples)
    sig = sigma_min_profile(model, control, x_f, nodes, solver, config)
    return float((upper / grid.samples) * np.sum(1.0 / sig**2))


def _fd_gradient(f, x, fx, h):
    g = np.empty(x.size)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += h
        g[i] = (f(xp) - fx) / h
    return g


def projected_quasi_newton(f, proj, x0, max_inner, step_tol, fd_step,
                           max_step=0.1):
    """BFGS on projected iterates with Armijo backtracking; proposed steps
    are capped at max_step so canyon-scale gradients stay line-searchable.
    Returns (x, fx, last_step_norm)."""
    x = proj(np.asarray(x0, dtype=float))
    fx = f(x)
    g = _fd_gradient(f, x, fx, fd_step)
    H = np.eye(x.size)
    last_step = np.inf
    for _ in range(max_inner):
        d = -H @ g
        if g @ d >= 0.0:
            H = np.eye(x.size)
            d = -g
        dn = np.linalg.norm(d)
        if dn > max_step:
            d = d * (max_step / dn)
        alpha, xn, fn = 1.0, None, None
        for _ in range(40):
            cand = proj(x + alpha * d)
            fc = f(cand)
            if np.isfinite(fc) and fc <= fx + 1e-4 * (g @ (cand - x)):
                xn, fn = cand, fc
                break
            alpha *= 0.5
        if xn is None:
            break
        s = xn - x
        last_step = float(np.linalg.norm(s))
        gn = _fd_gradient(f, xn, fn, fd_step)
        y = gn - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            I = np.eye(x.size)
            V = I - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)
        x, fx, g = xn, fn, gn
        if last_step <= step_tol:
            break
    return x, fx, last_step


def _glued_blocks(times, eta, t_f):
    """Maximal runs of times glued at the minimum gap, with a flag marking
    blocks pinned to the interval boundaries."""
    K = times.size
    tol = 10.0 * _GAP_SLACK
    blocks = []
    start = 0
    for i in range(K - 1):
        if times[i + 1] - times[i] > eta + tol:
            blocks.append((start, i))
            start = i + 1
    blocks.append((start, K - 1))
    out = []
    for a, b in blocks:
        pinned = times[a] <= eta + tol or times[b] >= t_f - eta - tol
        out.append((a, b, pinned))
    return out


def _block_gn_step(matrix, r, times, eta, t_f, solver):
    """Gauss-Newton step aggregated over glued blocks: coordinates glued at
    the minimum gap move together and boundary-pinned blocks stay put, so
    the step is not immediately undone by the projection."""
    K = times.size
    blocks = _glued_blocks(times, eta, t_f)
    cols = []
    for a, b, pinned in blocks:
        if pinned:
            continue
        col = np.zeros(K)
        col[a : b + 1] = 1.0
        cols.append(col)
    if not cols:
        return np.zeros(K)
    A = np.stack(cols, axis=1)
    beta = min_norm_solve(matrix @ A, r, solver)
    return A @ beta


def _rebuild(template: BangBangControl, times: np.ndarray) -> BangBangControl:
    events = tuple(
        SwitchingEvent(t, ev.channel) for t, ev in zip(times, template.events)
    )
    return template.with_events(events)


def solve_timing_nlp(
    model: DynamicsModel,
    x0: np.ndarray,
    control_template: BangBangControl,
    weights: CostWeights,
    gap: GapPolicy,
    x_f: np.ndarray,
    grid: RobustnessGrid = RobustnessGrid(),
    settings: NlpSettings = DEFAULT_SETTINGS,
    channels: tuple[int, ...] = (),
    cost_fn=l1_time_cost,
    solver: SvdSolver = DEFAULT_SOLVER,
    config: IntegratorConfig = DEFAULT_CONFIG,
    floor: tuple[int, float] | None = None,
) -> RobustifyResult:
    """Optimize all switching times of the template for
    lambda1 * C + lambda2 * C_r subject to endpoint = x_f and the minimum
    gap, by a quadratic-penalty sequence with projected quasi-Newton inner
    solves; a Gauss-Newton feasibility restoration (exact endpoint
    differential, minimal-norm steps) polishes the constraint afterwards.

    `floor` = (index, value) keeps every switching time from that event
    index on at or above the value (needle events stay late).

    Raises NotConverged (carrying the best iterate) if the feasibility
    tolerance cannot be met.
    """
    x_f = np.asarray(x_f, dtype=float)
    t_f = control_template.final_time
    eta = gap.eta
    f_idx, f_val = floor if floor is not None else (None, None)

    def proj(times):
        return project_gap_simplex(
            times, eta, t_f, floor_index=f_idx, floor_value=f_val
        )

    def costs(ctrl):
        c = cost_fn(ctrl) if weights.lambda1 != 0.0 else 0.0
        cr = (
            robustness_cost(model, ctrl, x_f, grid, solver, config)
            if weights.lambda2 != 0.0
            else 0.0
        )
        return c, cr

    def residual_vec(ctrl):
        return endpoint(model, x0, ctrl, config=config) - x_f

    def make_objective(mu):
        def obj(times):
            try:
                ctrl = _rebuild(control_template, times)
                c, cr = costs(ctrl)
                r = residual_vec(ctrl)
            except (OrderViolation, IntegrationBlowup, AllSingularValuesZero):
                return np.inf
            return weights.lambda1 * c + weights.lambda2 * cr + mu * float(r @ r)
        return obj

    def restore(times):
        # Gauss-Newton restoration: minimal-norm steps along the exact
        # endpoint differential, re-projected onto the gap simplex, with
        # backtracking on the residual norm. When the plain step stalls
        # against active gap constraints, fall back to the block-aggregated
        # step that respects them.
        ctrl = _rebuild(control_template, times)
        r = residual_vec(ctrl)
        for _ in range(settings.restore_iters):
            r_norm = np.linalg.norm(r)
            if r_norm <= 0.1 * settings.feas_tol:
                break
            dE = d_endpoint(model, x0, ctrl, config=config)
            steps = [min_norm_solve(dE.matrix, r, solver)]
            steps.append(_block_gn_step(dE.matrix, r, times, eta, t_f, solver))
            # Cauchy step on 0.5*|r|^2: can leave constraint strata the
            # Gauss-Newton directions are blind to
            grad = dE.matrix.T @ r
            denom = float(np.linalg.norm(dE.matrix @ grad) ** 2)
            if denom > 0.0:
                steps.append((float(grad @ grad) / denom) * grad)
            best = None
            for step in steps:
                alpha = 1.0
                for _ in range(12):
                    cand = proj(times - alpha * step)
                    rc = float(
                        np.linalg.norm(residual_vec(_rebuild(control_template, cand)))
                    )
                    if rc < r_norm * (1.0 - 0.1 * alpha):
                        if best is None or rc < best[0]:
                            best = (rc, cand)
                        break
                    alpha *= 0.5
            if best is None:
                break
            times = best[1]
            ctrl = _rebuild(control_template, times)
            r = residual_vec(ctrl)
        return times, ctrl, r

    # Penalty stages with interleaved restoration: the inner solve trades
    # feasibility for cost at the current penalty weight, the restoration
    # snaps the iterate back onto the endpoint manifold so later stages
    # only have to move along it.
    times = proj(control_template.event_times())
    last_step = np.inf
    for power in settings.penalty_powers:
        times, _, last_step = projected_quasi_newton(
            make_objective(10.0**power), proj, times,
            settings.max_inner, settings.step_tol, settings.fd_step,
            max_step=settings.max_step,
        )
        times, ctrl, r = restore(times)
        if np.linalg.norm(r) <= settings.feas_tol and last_step <= settings.step_tol:
            break
    # escalate beyond the nominal schedule when active gap constraints keep
    # the restored residual above tolerance
    for power in settings.extra_penalty_powers:
        if np.linalg.norm(r) <= settings.feas_tol:
            break
        times, _, _ = projected_quasi_newton(
            make_objective(10.0**power), proj, times,
            settings.max_inner, settings.step_tol, settings.fd_step,
            max_step=settings.max_step,
        )
        times, ctrl, r = restore(times)

    c, cr = costs(ctrl)
    res_norm = float(np.linalg.norm(r))
    result = RobustifyResult(
        control=ctrl, cost_c=c, cost_cr=cr, channels=tuple(channels),
        constraint_residual=res_norm,
        converged=res_norm <= settings.feas_tol and validate_gaps(ctrl, gap),
    )
    if not result.converged:
        raise NotConverged(
            f"endpoint residual {res_norm:.3e} above {settings.feas_tol:.1e}",
            result=result,
        )
    return result


def place_needles(
    control: BangBangControl,
    channels: tuple[int, ...],
    gap: GapPolicy,
    after_time: float | None = None,
) -> tuple[BangBangControl, tuple[int, float] | None]:
    """Insert one needle pair per channel after a floor time, spaced 2*eta
    apart when room allows and evenly compressed otherwise; the full event
    list is then projected onto the gap simplex so the result is a
    gap-feasible initial guess.

    The floor defaults to the last existing switching time, pulled earlier
    only when the needle comb cannot fit behind it. It is returned as a
    hard (index, value) bound for the timing optimization: redundant
    switchings stay late, where they keep correction authority the
    longest. Raises OrderViolation when the horizon cannot hold the total
    event count at the required gap."""
    t_f = control.final_time
    eta = gap.eta
    l = len(channels)
    if l == 0:
        times = project_gap_simplex(control.event_times(), eta, t_f)
        return _rebuild(control, times), None
    after = after_time
    if after is None:
        # latest floor that still fits the comb plus any nominal events
        # trailing past it (they join the floored suffix)
        last = control.events[-1].time if control.events else 0.0
        after = last
        for _ in range(control.num_events + 2):
            n_tail = sum(1 for ev in control.events if ev.time > after)
            # two extra gaps of breathing room keep the floored suffix from
            # pinning rigid (it still needs slack to meet the endpoint)
            cap = t_f - (2 * l + n_tail + 3) * eta - 1e-6
            if after <= cap:
                break
            after = cap
    if after < 0 or after >= t_f:
        raise OrderViolation(f"no room for needles after t={after}")
    span = (t_f - after) / (2 * l + 1)
    g = min(2.0 * eta, span) if eta > 0 else span
    floor_index = sum(1 for ev in control.events if ev.time <= after)
    for i, ch in enumerate(channels):
        control = insert_needle(
            control, ch, after + (2 * i + 1) * g, after + (2 * i + 2) * g
        )
    floor = (floor_index, after + min(g, eta))
    times = project_gap_simplex(
        control.event_times(), eta, t_f, floor_index=floor[0], floor_value=floor[1]
    )
    return _rebuild(control, times), floor


def _solve_tuple(args):
    (model, x0, base, channels, weights, gap, x_f, grid, settings,
     after_time, config) = args
    try:
        template, floor = place_needles(base, channels, gap, after_time)
        return solve_timing_nlp(
            model, x0, template, weights, gap, x_f, grid=grid,
            settings=settings, channels=channels, config=config, floor=floor,
        )
    except NotConverged as exc:
        if exc.result is not None:
            return exc.result
        return RobustifyResult(
            control=base, cost_c=np.inf, cost_cr=np.inf, channels=channels,
            constraint_residual=np.inf, converged=False,
        )


def enumerate_needle_channels(
    model: DynamicsModel,
    x0: np.ndarray,
    base_control: BangBangControl,
    l: int,
    weights: CostWeights,
    gap: GapPolicy,
    x_f: np.ndarray,
    grid: RobustnessGrid = RobustnessGrid(),
    settings: NlpSettings = DEFAULT_SETTINGS,
    mode: str = "exhaustive",
    after_time: float | None = None,
    jobs: int = 1,
    config: IntegratorConfig = DEFAULT_CONFIG,
) -> tuple[RobustifyResult, list[RobustifyResult]]:
    """Channel selection for l needles.

    exhaustive: solves the timing problem for every channel tuple (m^l
    solves). greedy: grows the tuple one needle at a time, keeping the
    best prefix and searching only the appended channel (m*l solves).
    Returns the best converged result and the full cost table in solve
    order; non-converged entries stay in the table but are excluded from
    the argmin.
    """
    m = base_control.num_channels
    if mode == "exhaustive":
        tuples = list(itertools.product(range(1, m + 1), repeat=l))
    elif mode == "greedy":
        tuples = None
    else:
        raise ValueError("mode must be 'exhaustive' or 'greedy'")

    def run(batch):
        tasks = [
            (model, x0, base_control, channels, weights, gap, x_f, grid,
             settings, after_time, config)
            for channels in batch
        ]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                return list(pool.map(_solve_tuple, tasks))
        return [_solve_tuple(t) for t in tasks]

    table: list[RobustifyResult] = []
    if mode == "exhaustive":
        table = run(tuples)
    else:
        prefix: tuple[int, ...] = ()
        for _ in range(l):
            batch = [prefix + (ch,) for ch in range(1, m + 1)]
            results = run(batch)
            table.extend(results)
            ok = [r for r in results if r.converged]
            if not ok:
                raise NotConverged(f"no converged extension of {prefix}")
            prefix = min(ok, key=lambda r: r.objective(weights)).channels
        table_final = [r for r in table if len(r.channels) == l]
        ok = [r for r in table_final if r.converged]
        best = min(ok, key=lambda r: r.objective(weights))
        return best, table
    ok = [r for r in table if r.converged]
    if not ok:
        raise NotConverged("no channel tuple converged")
    best = min(ok, key=lambda r: r.objective(weights))
    return best, table


@dataclass(frozen=True)
class NominalStructure:
    """Candidate switching structure: which channels start high and the
    sequence of channels that flip at (t_1, t_2, t_3)."""

    initial_on: tuple[int, ...]
    sequence: tuple[int, int, int]


# Curated candidates for the shipped rigid-body target; found by a broad
# structure search, kept small so the default derivation stays fast.
# Configurable through the CLI.
DEFAULT_STRUCTURES = (
    NominalStructure(initial_on=(1, 3), sequence=(3, 1, 2)),
    NominalStructure(initial_on=(1, 4), sequence=(4, 1, 2)),
    NominalStructure(initial_on=(1,), sequence=(2, 1, 2)),
    NominalStructure(initial_on=(1, 3), sequence=(1, 3, 4)),
    NominalStructure(initial_on=(2, 4), sequence=(4, 2, 1)),
    NominalStructure(initial_on=(2, 4), sequence=(4, 1, 2)),
)


def _structure_control(
    structure: NominalStructure,
    times: np.ndarray,
    t_f: float,
    bounds_lower=(0.0, 0.0, 0.0, 0.0),
    bounds_upper=(1.0, 1.0, 1.0, 1.0),
) -> BangBangControl:
    from .control import ChannelBounds

    m = len(bounds_lower)
    init = [
        bounds_upper[i] if (i + 1) in structure.initial_on else bounds_lower[i]
        for i in range(m)
    ]
    events = tuple(
        SwitchingEvent(t, ch) for t, ch in zip(times, structure.sequence)
    )
    return BangBangControl(
        bounds=ChannelBounds(lower=bounds_lower, upper=bounds_upper),
        initial_values=tuple(init),
        events=events,
        final_time=t_f,
    )


def _derive_for_structure(args):
    """Multi-start penalty solve of one candidate structure; returns the
    best feasible (cost, control) or None."""
    (model, x0, x_f, structure, t_f_range, n_starts, seed, eta, settings,
     config) = args
    rng = np.random.default_rng((seed, hash(structure) % 2**31))

    def make(z):
        return _structure_control(structure, z[:3] * z[3], z[3])

    def theta_gap_at(t_f):
        return max(0.01, eta / t_f)

    def proj(z):
        out = z.copy()
        out[3] = float(np.clip(z[3], t_f_range[0], t_f_range[1]))
        out[:3] = project_gap_simplex(z[:3], theta_gap_at(out[3]), 1.0)
        return out

    theta_gap = theta_gap_at(t_f_range[0])

    def make_obj(mu):
        def obj(z):
            try:
                ctrl = make(z)
                r = endpoint(model, x0, ctrl, config=config) - x_f
            except (OrderViolation, IntegrationBlowup):
                return np.inf
            return l1_time_cost(ctrl) + mu * float(r @ r)
        return obj

    # stage one: cheap screening solves from every start
    candidates = []
    for _ in range(n_starts):
        z = np.concatenate(
            [
                np.sort(rng.uniform(theta_gap, 1.0 - theta_gap, size=3)),
                [rng.uniform(*t_f_range)],
            ]
        )
        for power in (2, 4):
            z, _, _ = projected_quasi_newton(
                make_obj(10.0**power), proj, z, 25, settings.step_tol,
                settings.fd_step,
            )
        r = np.linalg.norm(endpoint(model, x0, make(z), config=config) - x_f)
        candidates.append((r, l1_time_cost(make(z)), z))
    candidates.sort(key=lambda c: (c[0] > 1e-3, c[1], c[0]))

    # stage two: refine the most promising iterates to full tolerance
    best = None
    for _, _, z in candidates[:3]:
        for power in settings.penalty_powers:
            z, _, _ = projected_quasi_newton(
                make_obj(10.0**power), proj, z, settings.max_inner,
                settings.step_tol, settings.fd_step,
            )
        ctrl = make(z)
        times = ctrl.event_times()
        r = endpoint(model, x0, ctrl, config=config) - x_f
        for _ in range(settings.restore_iters):
            if np.linalg.norm(r) <= 0.1 * settings.feas_tol:
                break
            dE = d_endpoint(model, x0, ctrl, config=config)
            times = project_gap_simplex(
                times - min_norm_solve(dE.matrix, r),
                theta_gap_at(ctrl.final_time) * ctrl.final_time, ctrl.final_time,
            )
            ctrl = _rebuild(ctrl, times)
            r = endpoint(model, x0, ctrl, config=config) - x_f
        if np.linalg.norm(r) <= settings.feas_tol:
            cost = l1_time_cost(ctrl)
            if best is None or cost < best[0]:
                best = (cost, ctrl)
    return best


def derive_nominal(
    model: DynamicsModel,
    x0: np.ndarray,
    x_f: np.ndarray,
    structures: tuple[NominalStructure, ...] = DEFAULT_STRUCTURES,
    t_f_range: tuple[float, float] = (0.8, 4.0),
    n_starts: int = 50,
    seed: int = 0,
    eta: float = 0.0,
    settings: NlpSettings = DEFAULT_SETTINGS,
    config: IntegratorConfig = DEFAULT_CONFIG,
    jobs: int = 1,
) -> BangBangControl:
    """Direct timing optimization of a 3-switch nominal reaching x_f with
    minimal L1-plus-time cost.

    For every candidate structure, multi-start penalty solves over
    (t_1, t_2, t_3, t_f) (times parameterized as fractions of t_f so the
    ordering projection stays separable; each structure draws from its own
    seeded stream); the best stage-one iterates are refined at full
    penalty weight and polished by Gauss-Newton restoration. Returns the
    cheapest control with endpoint residual within tolerance.

    eta > 0 additionally keeps the nominal switching times at least eta
    apart (and away from the interval ends), so the later robustification
    under the same gap policy starts from a compatible point.
    """
    x0 = np.asarray(x0, dtype=float)
    x_f = np.asarray(x_f, dtype=float)
    tasks = [
        (model, x0, x_f, st, t_f_range, n_starts, seed, eta, settings, config)
        for st in structures
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_derive_for_structure, tasks))
    else:
        results = [_derive_for_structure(t) for t in tasks]
    feasible = [r for r in results if r is not None]
    if not feasible:
        raise NoFeasibleNominal("no structure reached the target within tolerance")
    return min(feasible, key=lambda r: r[0])[1]


def epsilon_max(
    model_nominal: DynamicsModel,
    control: BangBangControl,
    perturbation_template: PerturbationSpec,
    eps_grid: np.ndarray,
    x0: np.ndarray,
    x_f: np.ndarray,
    tracking: TrackingConfig | None = None,
    integrator: IntegratorConfig = DEFAULT_CONFIG,
) -> float:
    """Largest grid value of epsilon the tracking loop absorbs before a
    correction is first rejected for interchanged switching times. Returns
    eps_grid[0] - 1 when even the first value fails."""
    eps_grid = np.asarray(eps_grid, dtype=float)
    if np.any(np.diff(eps_grid) <= 0):
        raise ValueError("eps_grid must be ascending")
    if tracking is None:
        tracking = TrackingConfig(checkpoints=uniform_checkpoints(control))
    params = model_nominal.params
    last_ok = eps_grid[0] - 1.0
    for eps in eps_grid:
        true_model = PerturbedRigidBodyModel(
            params, replace(perturbation_template, epsilon=float(eps))
        )
        try:
            _, reports, _ = track(
                model_nominal, true_model, control, x0, x_f, tracking,
                integrator=integrator,
            )
        except IntegrationBlowup:
            break
        if any(r.status == "rejected" for r in reports):
            break
        last_ok = float(eps)
    return last_ok
