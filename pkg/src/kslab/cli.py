"""Batch front door: validate configs, dispatch experiment pipelines, emit
reproducible reports.

Exit codes: 0 when every verdict passes, 2 for configuration problems, 3 for
numerical failures or failed verdicts.  Outputs are deterministic: report
JSON is sorted, CSV floats use a fixed 17-digit format, and every artifact
embeds the tool version and the configuration hash.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .errors import ConfigurationError, KslabError
from .grid import ScalarField
from .sturm import SLProblem, check_lax_milgram, solve_sl
from .verify import (
    CSV_COLUMNS,
    ExperimentReport,
    conservation_checks,
    interaction_independence_experiment,
    invert_to_order,
    make_primed_initial_state,
    oracle_compare_experiment,
    roundtrip_experiment,
    run_forward,
)
from .taylor import delta_potential_taylor
from .config import evaluate_expression


def _forward_reference(cfg: RunConfig, store_states=False):
    system = cfg.build_system()
    v = cfg.build_potential()
    return run_forward(system, v, cfg.experiment.dt, cfg.steps, store_states)


def _execute_forward(cfg: RunConfig) -> ExperimentReport:
    ref = _forward_reference(cfg, store_states=True)
    report = conservation_checks(ref.trajectory)
    report.kind = "forward"
    if cfg.experiment.options.get("refine", False):
        if cfg.potential.values is not None:
            raise ConfigurationError(
                "[experiment.refine] needs closed-form potential orders; "
                "tabulated values cannot be re-sampled on the refined grid"
            )
        omega_fine = cfg.build_omega().refined()
        from .quantum import build_system as _bs

        system2 = _bs(
            omega_fine,
            margin=2 * cfg.grid.margin,
            n_particles=cfg.system.particles,
            statistics=cfg.system.statistics,
            interaction_strength=0.0 if cfg.system.interaction == "none" else cfg.system.strength,
            interaction_eps=cfg.system.eps,
        )
        v2 = cfg.build_potential(system2.omega)
        ref2 = run_forward(system2, v2, cfg.experiment.dt / 2, 2 * cfg.steps, True)
        rep2 = conservation_checks(ref2.trajectory)
        for key in (
            "continuity_max",
            "forcebalance_max",
            "second_derivative_max",
            "forcebalance_stencil_max",
            "second_derivative_stencil_max",
        ):
            coarse, fine = report.metrics[key], rep2.metrics[key]
            ratio = coarse / fine if fine > 0 else float("inf")
            report.metrics[f"{key}_refinement_ratio"] = ratio
            report.add_verdict(
                f"{key}_refinement", 3.0 <= ratio <= 5.2, ratio, 4.0, "~",
                "residual reduction under simultaneous (h, dt) halving",
            )
    return report


def _execute_invert(cfg: RunConfig) -> ExperimentReport:
    ref = _forward_reference(cfg)
    primed = cfg.build_system(cfg.experiment.options.get("primed_strength", 0.0))
    psi0p = make_primed_initial_state(primed, ref)
    _, inv = invert_to_order(
        ref, primed, psi0p, cfg.inversion.K, cfg.inversion.solver_tol,
        seed=cfg.experiment.seed,
    )
    report = ExperimentReport(kind="invert")
    report.inversion = inv.to_json()
    worst = max(d.residual for d in inv.diagnostics)
    report.add_verdict(
        "per_order_residuals", worst <= cfg.inversion.residual_bound, worst,
        cfg.inversion.residual_bound, "<=",
    )
    if cfg.experiment.options.get("delta", False):
        res_delta = delta_potential_taylor(
            ref.system, ref.psi0, ref.v, primed, psi0p, cfg.inversion.K,
            tol=cfg.inversion.solver_tol, seed=cfg.experiment.seed,
        )
        gap = max(
            float(np.max(np.abs(a.values - b.values)))
            for a, b in zip(res_delta.v_prime.coefficients, inv.v_prime.coefficients)
        )
        report.metrics["delta_route_gap"] = gap
        report.add_verdict(
            "delta_route_consistency", gap <= 1e-6, gap, 1e-6, "<=",
            "v + v_delta against the directly inverted potential",
        )
        report.inversion["v_delta"] = [
            c.values.tolist() for c in res_delta.v_delta.coefficients
        ]
    return report


def _execute_roundtrip(cfg: RunConfig) -> ExperimentReport:
    ref = _forward_reference(cfg)
    primed = cfg.build_system(cfg.experiment.options.get("primed_strength", 0.0))
    compare = cfg.experiment.options.get("compare_orders", list(range(cfg.inversion.K + 1)))
    return roundtrip_experiment(
        ref, primed, cfg.inversion.K, cfg.experiment.dt, cfg.steps,
        compare_orders=list(compare),
        solver_tol=cfg.inversion.solver_tol,
        residual_bound=cfg.inversion.residual_bound,
        seed=cfg.experiment.seed,
        slope_margin=cfg.experiment.options.get("slope_margin", 0.5),
    )


def _execute_independence(cfg: RunConfig) -> ExperimentReport:
    ref = _forward_reference(cfg)
    strengths = cfg.experiment.options.get(
        "primed_strengths", [0.0, cfg.system.strength / 2.0]
    )
    primed = [cfg.build_system(float(g)) for g in strengths]
    compare = cfg.experiment.options.get("compare_orders", list(range(cfg.inversion.K + 1)))
    return interaction_independence_experiment(
        ref, primed, cfg.inversion.K, cfg.experiment.dt, cfg.steps,
        compare_orders=list(compare),
        solver_tol=cfg.inversion.solver_tol,
        residual_bound=cfg.inversion.residual_bound,
        seed=cfg.experiment.seed,
    )


def _execute_oracle(cfg: RunConfig) -> ExperimentReport:
    ref = _forward_reference(cfg)
    primed = cfg.build_system(cfg.experiment.options.get("primed_strength", 0.0))
    order = int(cfg.experiment.options.get("compare_order", min(cfg.inversion.K, 1)))
    return oracle_compare_experiment(
        ref, primed, order, cfg.experiment.dt, cfg.steps,
        tol_track=cfg.experiment.options.get("tol_track", 1e-5),
        solver_tol=cfg.inversion.solver_tol,
        slope_margin=cfg.experiment.options.get("slope_margin", 0.5),
        seed=cfg.experiment.seed,
    )


def _execute_diagnose(cfg: RunConfig) -> ExperimentReport:
    omega = cfg.build_omega()
    n_expr = cfg.experiment.options.get("n_expr")
    zeta_expr = cfg.experiment.options.get("zeta_expr")
    if not n_expr or not zeta_expr:
        raise ConfigurationError(
            "[experiment.n_expr] and [experiment.zeta_expr] are required for diagnose-sl"
        )
    n = ScalarField(omega, evaluate_expression(n_expr, omega.x))
    zeta = ScalarField(omega, evaluate_expression(zeta_expr, omega.x))
    trials = int(cfg.experiment.options.get("trials", 100))
    audit = check_lax_milgram(n, zeta, trials=trials, seed=cfg.experiment.seed)
    report = ExperimentReport(kind="diagnose-sl")
    report.metrics["diagnostics"] = audit.to_json()
    report.notes.append(audit.classical_note)
    report.notes.extend(audit.notes)
    report.add_verdict("coercivity_positive", audit.coercivity_c > 0, audit.coercivity_c, 0.0, ">")
    report.add_verdict(
        "coercivity_violations", audit.coercivity_violations == 0,
        audit.coercivity_violations, 0, "==",
        f"{audit.trials} random Dirichlet fields",
    )
    v, diag = solve_sl(SLProblem(n, zeta, density_floor=cfg.inversion.m_floor),
                       tol=cfg.inversion.solver_tol)
    report.metrics["solve"] = diag.to_json()
    report.add_verdict(
        "solve_residual", diag.residual <= cfg.inversion.solver_tol * 10,
        diag.residual, cfg.inversion.solver_tol * 10, "<=",
    )
    report.series = {"t": np.arange(omega.M, dtype=float), "e_L2": v.values}
    report.notes.append("series columns carry node index and solution values")
    return report


_DISPATCH = {
    "forward": _execute_forward,
    "invert": _execute_invert,
    "roundtrip": _execute_roundtrip,
    "independence": _execute_independence,
    "oracle-compare": _execute_oracle,
    "diagnose-sl": _execute_diagnose,
}


def execute(cfg: RunConfig) -> ExperimentReport:
    """Run the configured experiment and return its report."""
    report = _DISPATCH[cfg.experiment.kind](cfg)
    report.config_echo = cfg.raw
    report.config_hash = cfg.config_hash
    if report.inversion is not None:
        report.inversion["provenance"] = {
            "config_hash": cfg.config_hash,
            "seed": cfg.experiment.seed,
        }
    return report


def write_artifacts(report: ExperimentReport, out_dir: Path, formats) -> list:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    header = f"# kslab {__version__}\n# config_hash: {report.config_hash}\n# kind: {report.kind}\n"
    if "json" in formats:
        path = out_dir / "report.json"
        payload = report.to_json()
        payload["version"] = __version__
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        written.append(path)
    if "csv" in formats:
        path = out_dir / "series.csv"
        rows = report.csv_rows()
        with open(path, "w") as fh:
            fh.write(header)
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for row in rows:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        written.append(path)
    lines = [f"kslab {__version__}  experiment: {report.kind}  config: {report.config_hash}"]
    for v in report.verdicts:
        status = "PASS" if v.passed else "FAIL"
        lines.append(
            f"[{status}] {v.name}: value {v.value:.6g} {v.comparison} threshold "
            f"{v.threshold:.6g}" + (f"  ({v.note})" if v.note else "")
        )
    for note in report.notes:
        lines.append(f"note: {note}")
    lines.append("all passed" if report.all_passed else "FAILURES present")
    path = out_dir / "summary.txt"
    path.write_text("\n".join(lines) + "\n")
    written.append(path)
    return written


def _run_single(config_path: Path, out_dir: Path | None, seed: int | None) -> int:
    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg.experiment.seed = seed
            cfg.raw.setdefault("experiment", {})["seed"] = seed
        target = out_dir if out_dir is not None else Path(cfg.output.directory)
        report = execute(cfg)
        written = write_artifacts(report, target, cfg.output.formats)
        for path in written:
            print(f"wrote {path}")
        for v in report.verdicts:
            print(f"[{'PASS' if v.passed else 'FAIL'}] {v.name}: {v.value:.6g}")
        if not report.all_passed:
            print("verdicts failed", file=sys.stderr)
            return 3
        return 0
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except KslabError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def _run_entry(args_tuple):
    path, out, seed = args_tuple
    sub = out / path.stem if out is not None else None
    return _run_single(path, sub, seed)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="kslab",
        description="Effective-potential construction lab for 1D few-body densities",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment config (file or directory)")
    run_p.add_argument("config", type=Path)
    run_p.add_argument("--out", type=Path, default=None, help="output directory")
    run_p.add_argument("--jobs", type=int, default=1, help="parallel runs for a config directory")
    run_p.add_argument("--seed", type=int, default=None, help="override the experiment seed")

    val_p = sub.add_parser("validate", help="validate a config without running it")
    val_p.add_argument("config", type=Path)

    sub.add_parser("version", help="print the tool version")

    args = parser.parse_args(argv)

    if args.command == "version":
        print(f"kslab {__version__}")
        return 0

    if args.command == "validate":
        try:
            cfg = load_config(args.config)
        except ConfigurationError as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return 2
        print(f"valid: {args.config} (hash {cfg.config_hash}, kind {cfg.experiment.kind})")
        return 0

    # run
    if args.config.is_dir():
        configs = sorted(args.config.glob("*.toml"))
        if not configs:
            print(f"no .toml configs in {args.config}", file=sys.stderr)
            return 2
        out = args.out if args.out is not None else Path("out")
        jobs = [(p, out, args.seed) for p in configs]
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                codes = list(pool.map(_run_entry, jobs))
        else:
            codes = [_run_entry(j) for j in jobs]
        return max(codes)
    return _run_single(args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
