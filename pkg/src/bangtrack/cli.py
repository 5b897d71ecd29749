"""Experiment driver: nominal -> robustify -> track -> sweep.

Every subcommand reads one JSON experiment configuration (validated
against the published schema), writes CSV/JSON artifacts into the output
directory, and is deterministic for a fixed config and seed. CSV files
carry one provenance comment line with the config hash; reruns produce
byte-identical bodies.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from scipy.stats import spearmanr

from .control import BangBangControl, GapPolicy, control_from_dict, control_to_dict
from .correction import TrackingConfig, track, tracking_log_csv, uniform_checkpoints
from .dynamics import (
    PerturbationSpec,
    PerturbedRigidBodyModel,
    RigidBodyModel,
    RigidBodyParams,
)
from .endpoint import endpoint
from .errors import BangtrackError, ConfigError
from .propagation import IntegratorConfig, propagate
from .robustness import (
    CostWeights,
    NominalStructure,
    RobustifyResult,
    RobustnessGrid,
    derive_nominal,
    enumerate_needle_channels,
    epsilon_max,
    l1_time_cost,
    place_needles,
    robustness_cost,
    solve_timing_nlp,
)


def _load_schema() -> dict:
    with resources.files("bangtrack").joinpath("config_schema.json").open() as fh:
        return json.load(fh)


def load_config(path: str | None) -> dict:
    """Parse and schema-validate an experiment config; None loads the
    packaged default."""
    if path is None:
        with resources.files("bangtrack").joinpath("default_config.json").open() as fh:
            cfg = json.load(fh)
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            cfg = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(cfg, _load_schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config failed schema validation: {exc.message}") from exc
    return cfg


def config_hash(cfg: dict, seed: int) -> str:
    canon = json.dumps(cfg, sort_keys=True) + f"|seed={seed}"
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _provenance(cfg_hash: str, command: str) -> str:
    return f"# bangtrack {command} config_hash={cfg_hash}\n"


def build_model(cfg: dict) -> RigidBodyModel:
    m = cfg["model"]
    params = RigidBodyParams(
        alpha=tuple(m["alpha"]), torques=tuple(tuple(b) for b in m["torques"])
    )
    return RigidBodyModel(params)


def build_perturbation(cfg: dict, epsilon: float | None = None) -> PerturbationSpec:
    p = cfg.get("perturbation", {})
    return PerturbationSpec(
        epsilon=p.get("epsilon", 0.0) if epsilon is None else epsilon,
        periods=tuple(p.get("periods", (0.7, 1.1, 1.3))),
        phases=tuple(p.get("phases", (0.0, np.pi / 3, 2 * np.pi / 3))),
        amplitudes=tuple(p.get("amplitudes", (1.0, 1.0, 1.0))),
    )


def build_integrator(cfg: dict) -> IntegratorConfig:
    return IntegratorConfig(
        base_step=cfg.get("integrator", {}).get("base_step", 1e-3)
    )


def build_weights(cfg: dict) -> CostWeights:
    w = cfg.get("weights", {})
    return CostWeights(w.get("lambda1", 1.0), w.get("lambda2", 1.0))


def _structures(cfg: dict):
    spec = cfg.get("nominal", {}).get("structures")
    if spec is None:
        from .robustness import DEFAULT_STRUCTURES

        return DEFAULT_STRUCTURES
    return tuple(
        NominalStructure(tuple(s["initial_on"]), tuple(s["sequence"]))
        for s in spec
    )


def _tracking_config(cfg: dict, control: BangBangControl) -> TrackingConfig:
    t = cfg.get("tracking", {})
    return TrackingConfig(
        checkpoints=uniform_checkpoints(
            control, t.get("checkpoints", 20), t.get("upper_fraction", 0.95)
        ),
        gap=GapPolicy(cfg["gap_eta"]),
        drift_threshold=t.get("drift_threshold", 1e-12),
        damping=t.get("damping", 1.0),
    )


def _read_control(out: Path, cfg_path_value: str | None, default_name: str,
                  extract=None) -> BangBangControl:
    name = cfg_path_value if cfg_path_value is not None else default_name
    path = Path(name)
    if not path.is_absolute():
        path = out / path
    if not path.exists():
        raise ConfigError(f"referenced control file not found: {path}")
    data = json.loads(path.read_text())
    if extract is not None:
        data = extract(data)
    return control_from_dict(data)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    print(f"wrote {path}")


def cmd_nominal(cfg: dict, out: Path, seed: int, jobs: int) -> int:
    model = build_model(cfg)
    x0 = np.asarray(cfg["x0"], dtype=float)
    x_f = np.asarray(cfg["x_f"], dtype=float)
    ncfg = cfg.get("nominal", {})
    eta = cfg["gap_eta"] if ncfg.get("eta_matched", True) else 0.0
    integ = build_integrator(cfg)
    control = derive_nominal(
        model, x0, x_f,
        structures=_structures(cfg),
        t_f_range=tuple(ncfg.get("t_f_range", (0.8, 4.0))),
        n_starts=ncfg.get("n_starts", 50),
        seed=seed, eta=eta, config=integ, jobs=jobs,
    )
    h = config_hash(cfg, seed)
    _write(out / "nominal_control.json", control.to_json() + "\n")
    traj = propagate(model, x0, control, config=integ)
    _write(out / "nominal_trajectory.csv", _provenance(h, "nominal") + traj.to_csv())
    residual = float(np.linalg.norm(traj.final_state - x_f))
    print(
        f"nominal: cost={l1_time_cost(control)!r} residual={residual:.3e} "
        f"t_f={control.final_time!r}"
    )
    return 0


def _result_dict(result: RobustifyResult, cfg_hash: str) -> dict:
    return {
        "channels": list(result.channels),
        "cost_c": result.cost_c,
        "cost_cr": result.cost_cr,
        "constraint_residual": result.constraint_residual,
        "converged": result.converged,
        "config_hash": cfg_hash,
        "control": control_to_dict(result.control),
    }


def _cost_table_csv(table: list[RobustifyResult], cfg_hash: str) -> str:
    lines = [_provenance(cfg_hash, "robustify") + "channels,converged,C,C_r,residual\n"]
    for r in table:
        chan = "-".join(str(c) for c in r.channels)
        lines.append(
            f"{chan},{int(r.converged)},{r.cost_c!r},{r.cost_cr!r},"
            f"{r.constraint_residual!r}\n"
        )
    return "".join(lines)


def cmd_robustify(cfg: dict, out: Path, seed: int, jobs: int) -> int:
    model = build_model(cfg)
    x0 = np.asarray(cfg["x0"], dtype=float)
    x_f = np.asarray(cfg["x_f"], dtype=float)
    rcfg = cfg.get("robustify", {})
    gap = GapPolicy(cfg["gap_eta"])
    weights = build_weights(cfg)
    integ = build_integrator(cfg)
    grid = RobustnessGrid(samples=rcfg.get("quadrature_samples", 200))
    base = _read_control(out, rcfg.get("base_control"), "nominal_control.json")
    l = rcfg.get("needles", 3)
    channels = rcfg.get("channels", "search")
    after = rcfg.get("after_time")
    if channels == "search":
        best, table = enumerate_needle_channels(
            model, x0, base, l, weights, gap, x_f, grid=grid,
            mode=rcfg.get("mode", "exhaustive"), after_time=after,
            jobs=jobs, config=integ,
        )
    else:
        template, floor = place_needles(base, tuple(channels), gap, after)
        best = solve_timing_nlp(
            model, x0, template, weights, gap, x_f, grid=grid,
            channels=tuple(channels), config=integ, floor=floor,
        )
        table = [best]
    h = config_hash(cfg, seed)
    _write(out / "robustify_result.json",
           json.dumps(_result_dict(best, h), indent=2) + "\n")
    _write(out / "cost_table.csv", _cost_table_csv(table, h))
    print(
        f"robustify: channels={best.channels} C={best.cost_c!r} "
        f"C_r={best.cost_cr!r} residual={best.constraint_residual:.3e}"
    )
    return 0


def cmd_track(cfg: dict, out: Path, seed: int, jobs: int) -> int:
    model = build_model(cfg)
    x0 = np.asarray(cfg["x0"], dtype=float)
    x_f = np.asarray(cfg["x_f"], dtype=float)
    tcfg = cfg.get("tracking", {})
    integ = build_integrator(cfg)
    control = _read_control(
        out, tcfg.get("control"), "robustify_result.json",
        extract=lambda d: d["control"] if "control" in d else d,
    )
    eps = tcfg.get("epsilon", cfg.get("perturbation", {}).get("epsilon", 0.0))
    true_model = PerturbedRigidBodyModel(model.params, build_perturbation(cfg, eps))
    tracking = _tracking_config(cfg, control)
    trajectory, reports, rel_corrected = track(
        model, true_model, control, x0, x_f, tracking, integrator=integ
    )
    perturbed = propagate(true_model, x0, control, config=integ)
    rel_perturbed = float(
        np.linalg.norm(perturbed.final_state - x_f) / np.linalg.norm(x_f)
    )
    nominal_traj = propagate(model, x0, control, config=integ)
    rel_nominal = float(
        np.linalg.norm(nominal_traj.final_state - x_f) / np.linalg.norm(x_f)
    )
    h = config_hash(cfg, seed)
    _write(out / "tracking_log.csv", _provenance(h, "track") + tracking_log_csv(reports))
    _write(out / "corrected_trajectory.csv",
           _provenance(h, "track") + trajectory.to_csv())
    summary = {
        "epsilon": eps,
        "corrected_rel_error": rel_corrected,
        "perturbed_rel_error": rel_perturbed,
        "nominal_rel_error": rel_nominal,
        "num_checkpoints": len(reports),
        "num_applied": sum(r.status == "applied" for r in reports),
        "num_rejected": sum(r.status == "rejected" for r in reports),
        "config_hash": h,
    }
    _write(out / "tracking_summary.json", json.dumps(summary, indent=2) + "\n")
    print(
        f"track: eps={eps} corrected={rel_corrected:.3e} "
        f"perturbed={rel_perturbed:.3e}"
    )
    return 0


def cmd_sweep(cfg: dict, out: Path, seed: int, jobs: int) -> int:
    model = build_model(cfg)
    x0 = np.asarray(cfg["x0"], dtype=float)
    x_f = np.asarray(cfg["x_f"], dtype=float)
    scfg = cfg.get("sweep", {})
    rcfg = cfg.get("robustify", {})
    gap = GapPolicy(cfg["gap_eta"])
    weights = build_weights(cfg)
    integ = build_integrator(cfg)
    grid = RobustnessGrid(samples=rcfg.get("quadrature_samples", 200))
    base = _read_control(out, rcfg.get("base_control"), "nominal_control.json")
    eg = scfg.get("eps_grid", {"start": 0.05, "stop": 2.0, "step": 0.05})
    n_eps = int(round((eg["stop"] - eg["start"]) / eg["step"])) + 1
    eps_grid = eg["start"] + eg["step"] * np.arange(n_eps)
    top = scfg.get("top_per_count", 2)
    template_spec = build_perturbation(cfg, 0.0)

    family: list[RobustifyResult] = []
    for l in scfg.get("needle_counts", [1, 2, 3]):
        _, table = enumerate_needle_channels(
            model, x0, base, l, weights, gap, x_f, grid=grid,
            mode=rcfg.get("mode", "exhaustive"),
            after_time=rcfg.get("after_time"), jobs=jobs, config=integ,
        )
        converged = sorted(
            [r for r in table if r.converged], key=lambda r: r.cost_cr
        )
        family.extend(converged[:top])

    rows = []
    for r in family:
        tracking = _tracking_config(cfg, r.control)
        emax = epsilon_max(
            model, r.control, template_spec, eps_grid, x0, x_f,
            tracking=tracking, integrator=integ,
        )
        rows.append((r.cost_cr, emax, r.channels))
    rows.sort(key=lambda row: row[0])

    h = config_hash(cfg, seed)
    lines = [_provenance(h, "sweep") + "C_r,eps_max,channels\n"]
    for cr, emax, chan in rows:
        lines.append(f"{cr!r},{emax!r},{'-'.join(str(c) for c in chan)}\n")
    _write(out / "sweep.csv", "".join(lines))
    crs = [r[0] for r in rows]
    emaxes = [r[1] for r in rows]
    if len(set(crs)) < 2 or len(set(emaxes)) < 2:
        rho = float("nan")
    else:
        rho = float(spearmanr([1.0 / c for c in crs], emaxes).statistic)
    summary = {
        "num_controls": len(rows),
        "spearman_inv_cr_vs_eps_max": rho,
        "config_hash": h,
    }
    _write(out / "sweep_summary.json", json.dumps(summary, indent=2) + "\n")
    print(f"sweep: {len(rows)} controls, spearman(1/C_r, eps_max)={rho:.3f}")
    return 0


COMMANDS = {
    "nominal": cmd_nominal,
    "robustify": cmd_robustify,
    "track": cmd_track,
    "sweep": cmd_sweep,
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bangtrack",
        description=(
            "Robustify bang-bang controls with redundant needle switchings "
            "and track perturbed trajectories by switching-time corrections."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("nominal", "derive the minimal-cost nominal control"),
        ("robustify", "insert needles and optimize switching times"),
        ("track", "run the closed-loop tracking experiment"),
        ("sweep", "measure absorbable perturbation vs robustness cost"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers")
        p.add_argument("--out", default=None, help="override output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        out = Path(args.out if args.out is not None else cfg.get("output_dir", "out"))
        return COMMANDS[args.command](cfg, out, seed, args.jobs)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except BangtrackError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
