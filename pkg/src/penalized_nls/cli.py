"""Command-line entry point: ground-state, solve, sweep, verify, report."""

from __future__ import annotations

import argparse
from concurrent.futures import ProcessPoolExecutor
import glob
import json
import logging
import math
import os
from pathlib import Path
import sys
import time

import numpy as np

from .barriers import (BarrierGeometryError, BarrierPreconditionError, ball_radius_factor,
                       barrier_W_eps, comparison_check, delta0_value, minimal_solution_w)
from .config import (ConfigError, RunConfig, dumps, read_profile_csv, write_json,
                     write_profile_csv)
from .grids import GridConfigError, RadialField
from .groundstate import (GroundStateDomainError, SolverFailure, limit_energy,
                          solve_canonical)
from .penalization import FormNotPositiveError, InconsistentRegionError, validate_params
from .problem import (DimensionUnsupportedError, InvalidRegionError, check_assumption_A,
                      check_assumption_K)
from .solver import (DegenerateSolutionError, Discretization, NoMaximumError,
                     PathInvalidError, SolveReport, mountain_pass_level_estimate,
                     nehari_project, solve_least_energy)
from .verify import (FitImpossibleError, InsufficientSweepError, WindowError,
                     check_solves_original, concentration_diagnostics, decay_envelope_fit,
                     locate_threshold, rescaled_error, tail_lower_bound)

log = logging.getLogger("penalized_nls")

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_DOMAIN = 2
EXIT_CONFIG = 3
EXIT_SOLVER = 4
EXIT_FORM = 5


def strict_determinism() -> bool:
    return os.environ.get("NLS_SEED_DETERMINISM", "").lower() == "strict"


def _eps_tag(eps: float) -> str:
    return format(eps, ".6g").replace(".", "p")


# ---------------------------------------------------------------------------
# pipelines

class Context:
    """Objects shared by every eps of one configuration."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        spec = cfg.problem
        self.spec = spec
        self.params = cfg.params()
        validate_params(self.params, spec.lambda_region, spec.N)
        self.grid = cfg.build_grid()
        self.gs = solve_canonical(spec.N, spec.p)
        self.assumption_A = check_assumption_A(spec)
        self.assumption_K = check_assumption_K(spec, np.geomspace(1e-2, self.grid.r_max, 400))
        self.limit_energy = limit_energy(spec, self.gs, self.assumption_A.argmin)
        self.minimal = minimal_solution_w(self.params, spec.lambda_region, spec.N, self.grid,
                                          cfg.far_field if spec.N >= 3 else "neumann")


def solve_one(ctx: Context, eps: float, init: RadialField | None = None,
              init_eps: float | None = None) -> SolveReport:
    ver = ctx.cfg.verification
    return solve_least_energy(ctx.spec, ctx.params, eps, ctx.grid, ctx.gs, init=init,
                              tol=ver["solver_tol"], far_field=ctx.cfg.far_field,
                              init_eps=init_eps)


def verify_solution(ctx: Context, rep: SolveReport) -> tuple[dict, object]:
    """All per-eps checks on one converged solution. Returns (record, barrier)."""
    spec, params, ver = ctx.spec, ctx.params, ctx.cfg.verification
    ff = ctx.cfg.far_field
    u = rep.solution
    eps = rep.eps
    out = {"solve": rep.summary(), "J_over_epsN": rep.J_value / eps**spec.N,
           "norm_over_epsN2": rep.norm_eps_value / eps ** (spec.N / 2.0),
           "u_min": float(np.min(u.values)),
           "limit_energy": ctx.limit_energy}
    try:
        nr = nehari_project(u, spec, params, eps, ff)
        out["nehari_t_star"] = nr.t_star
        out["nehari_unimodal"] = nr.unimodal
        out["mountain_pass_estimate"] = mountain_pass_level_estimate(rep, spec, params, ff)
    except (NoMaximumError, PathInvalidError) as exc:
        out["nehari_error"] = str(exc)
    so = check_solves_original(u, spec, params, eps, ver["solver_tol"], ff)
    out["solves_original"] = {"holds": so.holds, "margin": so.margin,
                              "original_residual_max": so.original_residual_max,
                              "residual_ok": so.residual_ok}
    nu = ver["nu"]
    d0 = delta0_value(spec, nu)
    barrier = None
    R = float("nan")
    try:
        R = ball_radius_factor(u, eps, d0, 0.0)
        barrier = barrier_W_eps(spec, params, eps, ctx.grid, R, nu=nu, w=ctx.minimal,
                                far_field=ff if spec.N >= 3 else "neumann")
        cmp = comparison_check(u, barrier, spec, params, eps, ver["solver_tol"], ff)
        out["barrier"] = barrier.summary()
        out["comparison"] = {"holds": cmp.holds, "max_violation": cmp.max_violation,
                             "max_log_ratio": cmp.max_log_ratio,
                             "violation_radii": cmp.violation_radii,
                             "hypothesis_holds": cmp.hypothesis_holds,
                             "hypothesis_max": cmp.hypothesis_max}
    except (BarrierGeometryError, BarrierPreconditionError) as exc:
        out["barrier_error"] = str(exc)
    out["ball_radius_factor"] = R
    try:
        r_min = eps * R if math.isfinite(R) else 0.0
        fit = decay_envelope_fit(u, 0.0, eps, spec.N, "fast", r_min=r_min,
                                 tail_window=tuple(ver["tail_window"]))
        out["envelope"] = fit.to_dict()
    except FitImpossibleError as exc:
        out["envelope_error"] = str(exc)
    try:
        tl = tail_lower_bound(u, spec.N, tuple(ver["tail_window"]))
        out["tail"] = {"min_scaled": tl.min_scaled, "flatness": tl.flatness, "holds": tl.holds}
    except WindowError as exc:
        out["tail_error"] = str(exc)
    try:
        out["rescaled_error"] = rescaled_error(u, 0.0, eps, ctx.gs, spec, ver["rescaled_window"])
    except WindowError as exc:
        out["rescaled_error_message"] = str(exc)
    return out, barrier


def _sweep_worker(args):
    cfg_text, eps = args
    ctx = Context(RunConfig.loads(cfg_text))
    rep = solve_one(ctx, eps)
    return rep, verify_solution(ctx, rep)[0]


def run_sweep(cfg: RunConfig, jobs: int = 1, ctx: Context | None = None):
    """Solve and verify every eps. Each eps starts from its own ansatz, so the
    result does not depend on scheduling."""
    epsilons = sorted(cfg.epsilons, reverse=True)
    if len(epsilons) < 3:
        raise InsufficientSweepError("a sweep needs at least three eps values")
    if strict_determinism():
        jobs = 1
    if jobs > 1:
        text = cfg.dumps()
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_worker, [(text, e) for e in epsilons]))
        ctx = ctx or Context(cfg)
    else:
        ctx = ctx or Context(cfg)
        results = []
        for e in epsilons:
            rep = solve_one(ctx, e)
            results.append((rep, verify_solution(ctx, rep)[0]))
    reports = [r for r, _ in results]
    records = [v for _, v in results]
    diag = concentration_diagnostics(reports, cfg.problem, ctx.params,
                                     cfg.verification["R_values"],
                                     cfg.verification["trend_rtol"], cfg.far_field)
    threshold = None
    if cfg.verification.get("threshold"):
        threshold = find_threshold(ctx, reports)
    return ctx, reports, records, diag, threshold


def find_threshold(ctx: Context, reports) -> dict:
    def solve(e, init, init_eps):
        return solve_one(ctx, e, init, init_eps)

    def holds(rep):
        return check_solves_original(rep.solution, ctx.spec, ctx.params, rep.eps,
                                     far_field=ctx.cfg.far_field).holds

    eps_lo = min(r.eps for r in reports)
    try:
        res = locate_threshold(solve, holds, eps_lo,
                               iterations=int(ctx.cfg.verification["threshold_iterations"]))
    except ValueError as exc:
        return {"located": False, "message": str(exc)}
    return {"located": True, "eps_holds": res.eps_holds, "eps_fails": res.eps_fails,
            "iterations": res.iterations, "history": res.history}


def _monotone_toward(values, target) -> bool:
    gaps = [abs(v - target) for v in values]
    return all(b <= a for a, b in zip(gaps, gaps[1:]))


def sweep_criteria(cfg: RunConfig, reports, records, diag, threshold) -> dict:
    """Pass/fail of the penalized-sweep criteria; rows ordered by decreasing eps."""
    ver = cfg.verification
    tol = ver["solver_tol"]
    E = records[0]["limit_energy"]
    J = [r["J_over_epsN"] for r in records]
    lo, hi = ver["slope_range"]
    res = [r["rescaled_error"] for r in records]
    crit = {}
    crit["converged_positive"] = all(
        rep.residual_max <= tol * rep.u_max and float(np.min(rep.solution.values)) >= 0
        and rep.u_max > 0 for rep in reports)
    crit["energy_limit"] = bool(abs(J[-1] - E) <= ver["energy_rtol"] * E
                                and _monotone_toward(J, E))
    crit["norm_bounded"] = diag.norm_ratio < ver["norm_ratio_max"]
    crit["nonvanishing"] = all(rep.u_max > diag.u_max_floor for rep in reports)
    crit["solves_original"] = bool(records[-1]["solves_original"]["holds"]
                                   and (threshold is None or threshold.get("located", False)))
    crit["far_field"] = all(
        "envelope" in r and lo <= r["envelope"]["s_tail"] <= hi and r.get("tail", {}).get("holds")
        for r in records)
    crit["rescaled_convergence"] = bool(res[-1] <= ver["rescaled_max"]
                                        and all(b < a for a, b in zip(res, res[1:])))
    crit["envelope_fit"] = all(r.get("envelope", {}).get("valid", False) for r in records)
    crit["comparison"] = bool(records[-1].get("comparison", {}).get("holds", False))
    crit["concentration_trends"] = bool(diag.A_trend_ok and diag.sup_trend_eps_ok
                                        and diag.sup_trend_R_ok)
    return crit


# ---------------------------------------------------------------------------
# commands

def cmd_ground_state(args) -> int:
    t0 = time.perf_counter()
    gs = solve_canonical(args.N, args.p)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    r = np.linspace(0.0, args.r_max, args.n_points + 1)
    w, dw = gs.evaluate(r)
    stem = f"groundstate_N{args.N}_p{format(args.p, 'g')}"
    write_profile_csv(out / f"{stem}.csv", r, {"w": w, "dw": dw})
    summary = {**gs.summary(), "S_p_plus_1": gs.sobolev, "seconds": elapsed}
    write_json(out / f"{stem}.json", summary)
    sys.stdout.write(dumps(summary))
    return EXIT_OK


def _write_solve_outputs(out: Path, cfg: RunConfig, rep: SolveReport, record: dict,
                         barrier) -> None:
    tag = _eps_tag(rep.eps)
    write_profile_csv(out / f"profile_eps{tag}.csv", rep.solution.r, {"u": rep.solution.values})
    if barrier is not None:
        barrier.to_csv(out / f"barrier_eps{tag}.csv")
    write_json(out / f"solve_eps{tag}.json", record)


def cmd_solve(args) -> int:
    cfg = RunConfig.load(args.config)
    eps = args.eps if args.eps is not None else cfg.epsilons[0]
    out = Path(args.out or cfg.output["directory"])
    ctx = Context(cfg)
    rep = solve_one(ctx, eps)
    out.mkdir(parents=True, exist_ok=True)
    record, barrier = verify_solution(ctx, rep)
    checks = _single_checks(cfg, rep, record)
    record["checks"] = checks
    _write_solve_outputs(out, cfg, rep, record, barrier)
    sys.stdout.write(dumps({"eps": eps, "checks": checks}))
    return EXIT_OK if all(checks.values()) else EXIT_VERIFY_FAILED


def _single_checks(cfg: RunConfig, rep: SolveReport, record: dict) -> dict:
    tol = cfg.verification["solver_tol"]
    return {"converged": bool(rep.residual_max <= tol * rep.u_max),
            "solves_original": bool(record["solves_original"]["holds"]),
            "comparison": bool(record.get("comparison", {}).get("holds", False)),
            "envelope_fit": bool(record.get("envelope", {}).get("valid", False)),
            "tail": bool(record.get("tail", {}).get("holds", False))}


def cmd_sweep(args) -> int:
    cfg = RunConfig.load(args.config)
    out = Path(args.out or cfg.output["directory"])
    ctx, reports, records, diag, threshold = run_sweep(cfg, jobs=args.jobs)
    out.mkdir(parents=True, exist_ok=True)
    for rep, rec in zip(reports, records):
        _write_solve_outputs(out, cfg, rep, rec, None)
    crit = sweep_criteria(cfg, reports, records, diag, threshold)
    diag.to_csv(out / "sweep.csv")
    assumptions = {"A_holds": ctx.assumption_A.holds, "argmin_A": ctx.assumption_A.argmin,
                   "K_holds": ctx.assumption_K.holds,
                   "K_worst_ratio": ctx.assumption_K.worst_ratio}
    write_json(out / "sweep.json", {"assumptions": assumptions, "diagnostics": diag.to_dict(),
                                    "per_eps": records, "threshold": threshold,
                                    "criteria": crit})
    lines = [f"{'PASS' if ok else 'FAIL'}  {name}" for name, ok in crit.items()]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK if all(crit.values()) else EXIT_VERIFY_FAILED


def cmd_verify(args) -> int:
    cfg = RunConfig.load(args.config)
    r, values = read_profile_csv(args.profile)
    ctx = Context(cfg)
    if r.size != ctx.grid.n or not np.array_equal(r, ctx.grid.nodes):
        raise ConfigError("stored profile does not live on the configured grid")
    u = RadialField(ctx.grid, values)
    disc = Discretization(ctx.spec, ctx.params, args.eps, ctx.grid, cfg.far_field)
    res = disc.residual(values)
    i = int(np.argmax(values))
    rep = SolveReport(solution=u, eps=args.eps, J_value=disc.functional(values),
                      norm_eps_value=float("nan"), x_eps=float(r[i]), u_max=float(values[i]),
                      newton_iters=0, residual_max=float(np.max(np.abs(res))))
    from .grids import norm_eps
    rep.norm_eps_value = norm_eps(u, args.eps, ctx.spec.V, cfg.far_field)
    record, _ = verify_solution(ctx, rep)
    checks = _single_checks(cfg, rep, record)
    record["checks"] = checks
    text = dumps(record)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(dumps({"eps": args.eps, "checks": checks}))
    return EXIT_OK if all(checks.values()) else EXIT_VERIFY_FAILED


def cmd_report(args) -> int:
    d = Path(args.directory)
    rows = []
    for path in sorted(glob.glob(str(d / "solve_eps*.json"))):
        rec = json.loads(Path(path).read_text())
        s = rec["solve"]
        rows.append({"eps": s["eps"], "J_over_epsN": rec["J_over_epsN"],
                     "norm_over_epsN2": rec["norm_over_epsN2"], "u_max": s["u_max"],
                     "residual_max": s["residual_max"],
                     "solves_original": rec["solves_original"]["holds"],
                     "rescaled_error": rec.get("rescaled_error")})
    if not rows:
        raise ConfigError(f"no solve reports in {d}")
    rows.sort(key=lambda row: -row["eps"])
    summary = {"rows": rows}
    sweep = d / "sweep.json"
    if sweep.exists():
        summary["criteria"] = json.loads(sweep.read_text())["criteria"]
    write_json(d / "report.json", summary)
    sys.stdout.write(dumps(summary))
    ok = all(summary.get("criteria", {}).values())
    return EXIT_OK if ok else EXIT_VERIFY_FAILED


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="penalized-nls",
                                 description="Penalized semiclassical NLS solver and checks.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("ground-state", help="canonical ground state of -Lap w + w = w^p")
    g.add_argument("--N", type=int, required=True)
    g.add_argument("--p", type=float, required=True)
    g.add_argument("--out", default="out")
    g.add_argument("--r-max", type=float, default=20.0)
    g.add_argument("--n-points", type=int, default=2000)
    g.set_defaults(func=cmd_ground_state)

    s = sub.add_parser("solve", help="penalized solve and checks for one eps")
    s.add_argument("config")
    s.add_argument("--eps", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep", help="solve and verify every eps of the config")
    w.add_argument("config")
    w.add_argument("--jobs", type=int, default=1)
    w.add_argument("--out")
    w.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="re-run checks on a stored profile")
    v.add_argument("profile")
    v.add_argument("--config", required=True)
    v.add_argument("--eps", type=float, required=True)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("report", help="aggregate the reports of an output directory")
    r.add_argument("directory")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        msg, code = f"config error: {exc}", EXIT_CONFIG
    except FormNotPositiveError as exc:
        msg, code = f"form not positive: {exc}", EXIT_FORM
    except (SolverFailure, DegenerateSolutionError) as exc:
        hist = getattr(exc, "history", None)
        tail = f" (last residuals {hist[-3:]})" if hist else ""
        msg, code = f"solver failure: {exc}{tail}", EXIT_SOLVER
    except (GroundStateDomainError, DimensionUnsupportedError, InvalidRegionError,
            InconsistentRegionError, InsufficientSweepError, GridConfigError, ValueError) as exc:
        msg, code = f"invalid input: {exc}", EXIT_DOMAIN
    sys.stderr.write(msg + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
