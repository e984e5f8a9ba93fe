"""Command-line entry point: solve, study, validate, sweep.

Emits versioned JSON report documents (schema in fixtures/
report_schema.json) and optional plot-ready CSV tables. Case and scenario
arguments accept file paths or the bundled fixture names (case14,
case118, paper14, paper118).

Exit codes: 0 solved/converged, 1 I/O or parse failure, 2 infeasible,
3 iteration cap reached.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict, replace
from importlib import metadata

import numpy as np

from . import caseio, validate as validate_mod
from .errors import GridflexError, InfeasibleProblem
from .netmodel import DispatchDecision, Grid
from .orchestrator import ITERATION_CAP, SolveReport, four_solution_study, solve_cced, solve_ed

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INFEASIBLE = 2
EXIT_ITERATION_CAP = 3


def _package_version() -> str:
    try:
        return metadata.version("gridflex")
    except metadata.PackageNotFoundError:
        return "unknown"


def _resolve(path: str, kind: str) -> str:
    """Resolve a CLI path argument, falling back to bundled fixtures."""
    if os.path.exists(path):
        return path
    suffix = ".m" if kind == "case" else ".scenario"
    name = path if path.endswith(suffix) else path + suffix
    bundled = caseio.bundled_path(name)
    if bundled.is_file():
        return str(bundled)
    raise FileNotFoundError(f"{kind} file {path!r} not found (and no bundled fixture of that name)")


def _load_inputs(args):
    case_path = _resolve(args.case, "case")
    scenario_path = _resolve(args.scenario, "scenario")
    raw = caseio.load_case(case_path)
    with open(scenario_path, encoding="utf-8") as fh:
        scenario_text = fh.read()
    scenario, algo = caseio.parse_scenario(scenario_text)
    digest = hashlib.sha256(scenario_text.encode()).hexdigest()[:16]
    return case_path, scenario_path, raw, scenario, algo, digest


def _strip_flexibility(grid: Grid) -> Grid:
    lines = tuple(replace(ln, flexibility=None) for ln in grid.lines)
    return Grid(
        n_buses=grid.n_buses,
        lines=lines,
        generators=grid.generators,
        base_mva=grid.base_mva,
        load=grid.load,
        renewable_forecast=grid.renewable_forecast,
        bus_numbers=grid.bus_numbers,
    )


def _mw(grid: Grid, x) -> float:
    return float(x) * grid.base_mva


def _finite(x: float):
    return float(x) if np.isfinite(x) else None


def _solution_tables(grid: Grid, report: SolveReport) -> dict:
    from .dcflow import build_operator, line_flows

    decision = report.decision
    op = build_operator(grid, decision.susceptance)
    flows = line_flows(op, decision.p_base + grid.renewable_forecast - grid.load)
    gens = []
    for i, g in enumerate(grid.generators):
        gens.append(
            {
                "bus": grid.bus_numbers[g.bus],
                "p_base_mw": _mw(grid, report.solution.p_base[i]),
                "p_base_pu": float(report.solution.p_base[i]),
                "alpha": float(report.solution.alpha[i]),
                "p_min_mw": _mw(grid, g.p_min),
                "p_max_mw": _mw(grid, g.p_max),
            }
        )
    lines = []
    for k, ln in enumerate(grid.lines):
        fr, to = grid.external_pair(k)
        lines.append(
            {
                "from": fr,
                "to": to,
                "flexible": ln.is_flexible,
                "b_pu": float(decision.susceptance[k]),
                "b_rated_pu": ln.susceptance_rated,
                "b_min_pu": ln.susceptance_min,
                "b_max_pu": ln.susceptance_max,
                "capacity_mw": _finite(_mw(grid, ln.capacity)),
                "flow_mw": _mw(grid, flows[k]),
                "flow_pu": float(flows[k]),
                "lambda_plus": float(report.solution.lambda_plus[k]),
                "lambda_minus": float(report.solution.lambda_minus[k]),
            }
        )
    return {"generators": gens, "lines": lines}


def _trajectory_table(grid: Grid, report: SolveReport) -> list[dict]:
    out = []
    for rec in report.trajectory:
        duals = {}
        for k in np.flatnonzero((rec.lambda_plus > 0) | (rec.lambda_minus > 0)):
            fr, to = grid.external_pair(int(k))
            duals[f"{fr}-{to}"] = {
                "lambda_plus": float(rec.lambda_plus[k]),
                "lambda_minus": float(rec.lambda_minus[k]),
            }
        out.append(
            {
                "index": rec.index,
                "cost": rec.cost,
                "accepted": rec.accepted,
                "shrink_count": rec.shrink_count,
                "max_abs_delta_b_pu": float(np.abs(rec.delta_b).max()),
                "trust_region_max_pu": float(rec.trust_region.max()),
                "duals": duals,
            }
        )
    return out


def _base_document(kind, case_path, scenario_path, digest, algo) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "package_version": _package_version(),
        "case": os.path.basename(case_path),
        "case_path": os.path.abspath(case_path),
        "scenario": os.path.basename(scenario_path),
        "scenario_path": os.path.abspath(scenario_path),
        "scenario_digest": digest,
        "algorithm": asdict(algo),
    }


def _solve_document(kind, grid, report, case_path, scenario_path, digest, algo, mode, flex) -> dict:
    doc = _base_document(kind, case_path, scenario_path, digest, algo)
    doc.update(
        {
            "mode": mode,
            "flexibility": flex,
            "termination": report.termination,
            "wall_time_s": report.wall_time,
            "accepted_iterations": report.accepted_iterations,
            "cost": {
                "final_dollars_per_hour": report.cost,
                "initial_dollars_per_hour": report.initial_cost,
            },
            "solution": _solution_tables(grid, report),
            "trajectory": _trajectory_table(grid, report),
        }
    )
    return doc


def _write_json(doc: dict, path: str | None):
    text = json.dumps(doc, indent=2, allow_nan=False)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _write_csvs(doc: dict, directory: str):
    os.makedirs(directory, exist_ok=True)

    def dump(name, rows, fields):
        with open(os.path.join(directory, name), "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
            w.writeheader()
            w.writerows(rows)

    if "solution" in doc:
        dump("generators.csv", doc["solution"]["generators"], ["bus", "p_base_mw", "alpha", "p_min_mw", "p_max_mw"])
        dump(
            "lines.csv",
            doc["solution"]["lines"],
            ["from", "to", "flexible", "b_pu", "b_rated_pu", "b_min_pu", "b_max_pu", "capacity_mw", "flow_mw", "lambda_plus", "lambda_minus"],
        )
    if "trajectory" in doc:
        rows = [
            {
                "index": r["index"],
                "cost": r["cost"],
                "shrink_count": r["shrink_count"],
                "max_abs_delta_b_pu": r["max_abs_delta_b_pu"],
                "max_dual": max(
                    [max(d["lambda_plus"], d["lambda_minus"]) for d in r["duals"].values()], default=0.0
                ),
            }
            for r in doc["trajectory"]
        ]
        dump("trajectory.csv", rows, ["index", "cost", "shrink_count", "max_abs_delta_b_pu", "max_dual"])
    if "costs" in doc:
        dump("costs.csv", [doc["costs"]], list(doc["costs"].keys()))
    if "sweep" in doc:
        dump("sweep.csv", doc["sweep"], ["degree", "final_cost", "initial_cost", "termination"])


def _termination_exit(report: SolveReport) -> int:
    return EXIT_ITERATION_CAP if report.termination == ITERATION_CAP else EXIT_OK


def cmd_solve(args) -> int:
    case_path, scenario_path, raw, scenario, algo, digest = _load_inputs(args)
    grid, unc = caseio.apply_scenario(raw, scenario)
    if not args.flex:
        grid = _strip_flexibility(grid)
    if args.mode == "ed":
        report = solve_ed(grid, algo)
    else:
        report = solve_cced(grid, unc, algo)
    doc = _solve_document("solve", grid, report, case_path, scenario_path, digest, algo, args.mode, args.flex)
    _write_json(doc, args.out)
    if args.csv:
        _write_csvs(doc, args.csv)
    return _termination_exit(report)


def cmd_study(args) -> int:
    case_path, scenario_path, raw, scenario, algo, digest = _load_inputs(args)
    grid, unc = caseio.apply_scenario(raw, scenario)
    study = four_solution_study(grid, unc, algo)
    doc = _base_document("study", case_path, scenario_path, digest, algo)
    doc["costs"] = {
        "s1_cced_flexible": study.s1,
        "s2_cced_rigid": study.s2,
        "s3_ed_flexible": study.s3,
        "s4_ed_rigid": study.s4,
        "cost_of_uncertainty_flexible_s1_minus_s3": study.cost_of_uncertainty_flexible,
        "cost_of_uncertainty_rigid_s2_minus_s4": study.cost_of_uncertainty_rigid,
        "cost_of_rigidity_uncertain_s2_minus_s1": study.cost_of_rigidity_uncertain,
        "cost_of_rigidity_deterministic_s4_minus_s3": study.cost_of_rigidity_deterministic,
    }
    doc["cced"] = _solve_document("solve", grid, study.cced_report, case_path, scenario_path, digest, algo, "cced", True)
    doc["ed"] = _solve_document("solve", grid, study.ed_report, case_path, scenario_path, digest, algo, "ed", True)
    _write_json(doc, args.out)
    if args.csv:
        _write_csvs(doc, args.csv)
    worst = max(_termination_exit(study.cced_report), _termination_exit(study.ed_report))
    return worst


def cmd_validate(args) -> int:
    if args.samples < 1000:
        raise ValueError("--samples must be at least 1000")
    with open(args.solution, encoding="utf-8") as fh:
        soldoc = json.load(fh)
    if "solution" not in soldoc:
        raise ValueError("solution file does not contain a solve report (missing 'solution' section)")
    raw = caseio.load_case(soldoc["case_path"])
    with open(soldoc["scenario_path"], encoding="utf-8") as fh:
        scenario, _ = caseio.parse_scenario(fh.read())
    grid, unc = caseio.apply_scenario(raw, scenario)
    p_base = grid.scatter_generation([g["p_base_pu"] for g in soldoc["solution"]["generators"]])
    alpha = grid.scatter_generation([g["alpha"] for g in soldoc["solution"]["generators"]])
    b = np.array([ln["b_pu"] for ln in soldoc["solution"]["lines"]])
    decision = DispatchDecision.validated(grid, p_base, alpha, b)
    report = validate_mod.monte_carlo_validate(grid, unc, decision, args.samples, args.seed)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "validate",
        "package_version": _package_version(),
        "solution_file": os.path.abspath(args.solution),
        "samples": report.samples,
        "seed": report.seed,
        "empirical_cost": {"mean": report.cost_mean, "ci99_half_width": report.cost_ci99},
        "all_within_band": report.all_within_band,
        "constraints": [
            {
                "kind": c.kind,
                "element": list(c.element),
                "epsilon": c.epsilon,
                "violations": c.violations,
                "rate": c.rate,
                "wilson99_low": c.wilson_99[0],
                "wilson99_high": c.wilson_99[1],
                "within_band": c.within_band,
            }
            for c in report.checks
        ],
    }
    _write_json(doc, args.out)
    return EXIT_OK if report.all_within_band else EXIT_FAILURE


def cmd_sweep(args) -> int:
    case_path, scenario_path, raw, scenario, algo, digest = _load_inputs(args)
    degrees = [float(tok) for tok in args.d_values.split(",") if tok.strip()]
    if not degrees:
        raise ValueError("--d-values must list at least one degree")
    rows = []
    for d in degrees:
        flex = tuple((fr, to, d) for fr, to, _ in scenario.flexible_lines)
        sc = replace(scenario, flexible_lines=flex)
        grid, unc = caseio.apply_scenario(raw, sc)
        if d == 0.0:
            grid = _strip_flexibility(grid)
        report = solve_cced(grid, unc, algo)
        rows.append(
            {
                "degree": d,
                "final_cost": report.cost,
                "initial_cost": report.initial_cost,
                "termination": report.termination,
            }
        )
    doc = _base_document("sweep", case_path, scenario_path, digest, algo)
    doc["sweep"] = rows
    _write_json(doc, args.out)
    if args.csv:
        _write_csvs(doc, args.csv)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridflex", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--case", required=True, help="case file path or bundled name (case14, case118)")
        p.add_argument("--scenario", required=True, help="scenario file path or bundled name (paper14, paper118)")
        p.add_argument("--out", help="write the JSON report here instead of stdout")
        p.add_argument("--csv", help="directory for CSV table emission")

    p = sub.add_parser("solve", help="run one dispatch solve")
    add_common(p)
    p.add_argument("--mode", choices=("cced", "ed"), default="cced")
    flex = p.add_mutually_exclusive_group()
    flex.add_argument("--flex", dest="flex", action="store_true", default=True)
    flex.add_argument("--no-flex", dest="flex", action="store_false")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("study", help="four-solution cost comparison")
    add_common(p)
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("validate", help="Monte Carlo check of a solve report")
    p.add_argument("--solution", required=True, help="JSON report produced by solve")
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sweep", help="final cost vs degree of flexibility")
    add_common(p)
    p.add_argument("--d-values", required=True, help="comma list of degrees, e.g. 0.1,0.2,0.3")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleProblem as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (GridflexError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
