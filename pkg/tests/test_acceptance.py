"""End-to-end acceptance checks, one test per criterion at the stated tolerances."""

import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.integrate import quad

from conftest import record_criterion
from penalized_nls.barriers import (ball_radius_factor, barrier_W_eps, comparison_check,
                                    delta0_value, minimal_solution_w, supersolution_laplacian,
                                    supersolution_W)
from penalized_nls.cli import main, run_sweep, sweep_criteria
from penalized_nls.config import plateau_config
from penalized_nls.grids import RadialField, build_grid, hardy_rayleigh, uniform_grid
from penalized_nls.groundstate import (grid_ground_state, limit_energy_value, limit_functional,
                                       rescale_to_limit, solve_canonical)
from penalized_nls.penalization import (PenalizationParams, PenalizedNonlinearity,
                                        select_params, verify_g_properties)
from penalized_nls.problem import DomainLambda, Potential, ProblemSpec, concentration_from_values
from penalized_nls.solver import Discretization, nehari_project


def bump(r, a, b):
    t = (r - a) / (b - a)
    out = np.zeros_like(r)
    m = (t > 0) & (t < 1)
    out[m] = np.exp(-1.0 / (t[m] * (1 - t[m])))
    return out


def finish(number, checks):
    ok = all(v for v, _ in checks.values())
    detail = "; ".join(f"{k}={d}" for k, (_, d) in checks.items())
    record_criterion(number, ok, detail)
    failed = [k for k, (v, _) in checks.items() if not v]
    assert not failed, f"criterion {number} failed: {failed}"


# ---------------------------------------------------------------------------

def test_criterion_1_analytic_ground_state(tmp_path, capsys):
    t0 = time.perf_counter()
    code = main(["ground-state", "--N", "1", "--p", "3", "--out", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    summary = json.loads(capsys.readouterr().out)
    data = np.loadtxt(tmp_path / "groundstate_N1_p3.csv", delimiter=",", skiprows=1)
    r, w = data[:, 0], data[:, 1]
    gs = solve_canonical(1, 3.0)
    fine = np.linspace(0.0, 20.0, 200_001)
    sup_err = max(np.max(np.abs(w - math.sqrt(2) / np.cosh(r))),
                  np.max(np.abs(gs(fine) - math.sqrt(2) / np.cosh(fine))))
    # whole process, for information: interpreter start and scipy import included
    t1 = time.perf_counter()
    subprocess.run([sys.executable, "-m", "penalized_nls.cli", "ground-state", "--N", "1",
                    "--p", "3", "--out", str(tmp_path / "proc")], check=True,
                   capture_output=True)
    wall = time.perf_counter() - t1
    finish(1, {
        "exit": (code == 0, code),
        "r_range": (r[0] == 0.0 and r[-1] == 20.0, f"[{r[0]:g},{r[-1]:g}]"),
        "sup_err": (sup_err < 1e-6, f"{sup_err:.2e}"),
        "c": (abs(summary["energy"] - 4 / 3) < 1e-5, f"{summary['energy']:.10f}"),
        "S": (abs(summary["S"] - (16 / 3) ** 0.25) < 1e-5, f"{summary['S']:.10f}"),
        "runtime": (elapsed < 1.0, f"{elapsed:.2f}s (process wall {wall:.2f}s)"),
    })


def test_criterion_2_dual_method_ground_state():
    t0 = time.perf_counter()
    checks = {}
    for N, p in [(3, 3.0), (3, 4.0), (5, 2.0)]:
        gs = solve_canonical(N, p)
        ref = grid_ground_state(N, p)
        err = np.max(np.abs(gs(ref.r) - ref.values)) / np.max(np.abs(ref.values))
        neh = abs(gs.gradient_plus_mass - gs.power_integral) / gs.power_integral
        checks[f"agree_N{N}p{p:g}"] = (err < 1e-5, f"{err:.1e}")
        checks[f"nehari_N{N}p{p:g}"] = (neh < 1e-6, f"{neh:.1e}")
    elapsed = time.perf_counter() - t0
    checks["runtime"] = (elapsed < 10.0, f"{elapsed:.2f}s")
    finish(2, checks)


def test_criterion_3_scaling_identity(gs_cache):
    gs = gs_cache(3, 4.0)
    checks = {}
    for V0, K0 in [(1.0, 1.0), (2.0, 0.5), (0.7, 3.0)]:
        grid = uniform_grid(30.0 / math.sqrt(V0), 60000, 3)
        v = rescale_to_limit(gs, V0, K0, grid)
        quad_energy = limit_functional(v, V0, K0, 4.0)
        A = concentration_from_values(V0, K0, 3, 4.0)
        rel = abs(quad_energy / limit_energy_value(gs, A) - 1)
        checks[f"V{V0:g}K{K0:g}"] = (rel < 1e-4, f"{rel:.1e}")
    finish(3, checks)


def test_criterion_4_plateau_sweep(plateau, plateau_sweep, timings):
    ctx, reports, records, diag, threshold = plateau_sweep
    crit = sweep_criteria(plateau, reports, records, diag, threshold)
    E = ctx.limit_energy
    J = [r["J_over_epsN"] for r in records]
    tol = plateau.verification["solver_tol"]
    checks = {
        "grid": (plateau.grid["n_core"] >= 2048 and ctx.grid.r_max == 1000.0,
                 f"n_core={plateau.grid['n_core']},R_max={ctx.grid.r_max:g}"),
        "eps": ([r.eps for r in reports] == [0.2, 0.1, 0.05], "0.2,0.1,0.05"),
        "a_converged": (crit["converged_positive"] and all(r.tolerance_met for r in reports),
                        "res/umax=" + ",".join(f"{r.residual_max / r.u_max:.0e}"
                                               for r in reports)),
        "b_energy": (crit["energy_limit"],
                     "J/eps^N=" + ",".join(f"{x:.4f}" for x in J) + f"->{E:.4f}"),
        "c_norm": (crit["norm_bounded"], f"ratio={diag.norm_ratio:.4f}"),
        "d_nonvanishing": (crit["nonvanishing"],
                           "u_max=" + ",".join(f"{r.u_max:.4f}" for r in reports)),
        "e_solves_original": (crit["solves_original"],
                              f"margin={records[-1]['solves_original']['margin']:.2f},"
                              f"eps0 in [{threshold.get('eps_holds', math.nan):.4f},"
                              f"{threshold.get('eps_fails', math.nan):.4f}]"),
        "f_far_field": (crit["far_field"],
                        "slope=" + ",".join(f"{r['envelope']['s_tail']:.3f}" for r in records)
                        + ",flat=" + ",".join(f"{r['tail']['flatness']:.3f}" for r in records)),
        "g_rescaled": (crit["rescaled_convergence"],
                       "err=" + ",".join(f"{r['rescaled_error']:.4f}" for r in records)),
        "h_envelope": (crit["envelope_fit"] and all(r["envelope"]["max_log_excess"] <= 0
                                                    and r["envelope"]["lambda"] > 0
                                                    for r in records),
                       "lambda=" + ",".join(f"{r['envelope']['lambda']:.3f}" for r in records)),
        "runtime": (timings.get("sweep", 0.0) < 120.0, f"{timings.get('sweep', math.nan):.1f}s"),
    }
    assert all(r.residual_max <= tol * r.u_max for r in reports)
    finish(4, checks)


def test_criterion_5_barriers(plateau_ctx, report_by_eps):
    checks = {}
    prm = plateau_ctx.params
    r = np.geomspace(prm.rho * (1 + 1e-9), 1000.0, 10_000)
    worst = min(float(np.min(supersolution_W(prm, N, r)[1])) for N in (3, 2))
    checks["W_residual"] = (worst >= 0, f"min={worst:.2e}")

    # the acceptance run is N = 3; the plane variant is reported, not gated, because its
    # far-field -Laplacian is ~1e-8 of W and the difference quotient hits rounding there
    rs = np.geomspace(prm.rho * (1 + 1e-3), 1000.0, 10_000)
    h = 1e-3 * rs
    fd = {}
    for N in (3, 2):
        def W(x):
            return supersolution_W(prm, N, x)[0]
        d1 = (-W(rs + 2 * h) + 8 * W(rs + h) - 8 * W(rs - h) + W(rs - 2 * h)) / (12 * h)
        d2 = (-W(rs + 2 * h) + 16 * W(rs + h) - 30 * W(rs) + 16 * W(rs - h)
              - W(rs - 2 * h)) / (12 * h**2)
        exact = supersolution_laplacian(prm, N, rs)
        fd[N] = float(np.max(np.abs(-(d2 + (N - 1) / rs * d1) - exact) / np.abs(exact)))
    fd_err = fd[3]
    checks["laplacian_fd"] = (fd_err < 1e-6, f"{fd_err:.1e} (N=2 info {fd[2]:.1e})")

    zero = PenalizationParams(0.0, prm.beta, prm.rho0, prm.rho)
    w = minimal_solution_w(zero, DomainLambda(1.0), 3, plateau_ctx.grid)
    harm = float(np.max(np.abs(w.values - 1.0 / w.radii)))
    checks["kappa0_harmonic"] = (harm < 1e-8, f"{harm:.1e}")

    ctx = plateau_ctx
    u = report_by_eps[0.05].solution
    R = ball_radius_factor(u, 0.05, delta0_value(ctx.spec, 0.5))
    bar = barrier_W_eps(ctx.spec, ctx.params, 0.05, ctx.grid, R, w=ctx.minimal)
    cmp = comparison_check(u, bar, ctx.spec, ctx.params, 0.05)
    n_far = int(np.count_nonzero(u.r >= 0.05 * R))
    checks["comparison"] = (cmp.holds and cmp.max_violation == 0.0,
                            f"{n_far} nodes,max log(u/(d0 W))={cmp.max_log_ratio:.2f}")
    finish(5, checks)


def test_criterion_6_property_suites(plateau_ctx, report_by_eps):
    checks = {}
    rng = np.random.default_rng(6)
    prm = PenalizationParams(kappa=0.125, beta=1.0, rho0=0.5 / math.e, rho=0.5)
    for N in (3, 2):
        g = build_grid(4.0, 16384, 400.0, dim=N)
        worst = math.inf
        for _ in range(100):
            a = rng.uniform(prm.rho0 * 1.001, 5.0) if N == 2 else rng.uniform(0.0, 5.0)
            b = a + 10 ** rng.uniform(-1.0, 2.0)
            rep = hardy_rayleigh(RadialField(g, bump(g.nodes, a, b)), prm, N)
            worst = min(worst, rep.ratio - rep.bound)
        checks[f"hardy_N{N}"] = (worst >= -1e-3, f"min(ratio-bound)={worst:.1e}")

    n_viol = 0
    for N, p, K in [(3, 4.0, Potential.constant(1.0)), (2, 3.0, Potential.plateau([1.0], 2.0, 3.0))]:
        spec = ProblemSpec(N=N, p=p, epsilons=(0.1,), V=Potential.constant(1.0), K=K,
                           lambda_region=DomainLambda(1.0), sigma=0.0 if N == 3 else -3.0,
                           M=1.0)
        radii = np.concatenate([rng.uniform(0, 1, 5000), rng.uniform(1, 50, 5000)])
        s = 10 ** rng.uniform(-4, 2, 10_000)
        n_viol += len(verify_g_properties(spec, select_params(spec), 0.1, radii, s).violations)
    checks["g3_g4"] = (n_viol == 0, f"{n_viol} violations in 2x10^4")

    worst_G = 0.0
    for _ in range(200):
        p = rng.uniform(1.5, 5.0)
        nl = PenalizedNonlinearity(p=p, k=np.array([rng.uniform(0.1, 5)]),
                                   eps2h=np.array([10 ** rng.uniform(-6, 0)]),
                                   inside=np.array([rng.random() < 0.3]))
        s = rng.uniform(0, 10)
        sstar = math.exp(nl.log_sstar[0]) if math.isfinite(nl.log_sstar[0]) else math.inf
        ref = quad(lambda t: nl.g(np.array([t]))[0], 0, s, points=[sstar] if sstar < s else None,
                   epsabs=1e-14, epsrel=1e-13)[0]
        worst_G = max(worst_G, abs(nl.G(np.array([s]))[0] - ref) / max(abs(ref), 1e-300))
    checks["G_quadrature"] = (worst_G <= 1e-10, f"{worst_G:.1e}")

    ctx = plateau_ctx
    rep = report_by_eps[0.1]
    disc = Discretization(ctx.spec, ctx.params, 0.1, ctx.grid)
    r = ctx.grid.nodes
    u = 1.3 * rep.solution.values + 0.3 * rep.u_max * math.e**4 * bump(r, 0.5, 4.0)
    grad = disc.area * disc.mass * disc.residual(u)
    worst_grad = 0.0
    for _ in range(20):
        a = rng.uniform(0.0, 3.0)
        d = rep.u_max * sum(rng.normal() * bump(r, a + k * 0.1, a + rng.uniform(0.3, 3.0))
                            for k in range(3))
        hh = 1e-5
        fd = (disc.functional(u + hh * d) - disc.functional(u - hh * d)) / (2 * hh)
        exact = float(np.dot(grad, d))
        worst_grad = max(worst_grad, abs(fd - exact) / max(abs(exact), 1e-9 * np.abs(grad) @ np.abs(d)))
    checks["gradient"] = (worst_grad < 1e-5, f"{worst_grad:.1e}")

    t_dev = max(abs(nehari_project(rp.solution, ctx.spec, ctx.params, e).t_star - 1)
                for e, rp in report_by_eps.items())
    checks["nehari_t_star"] = (t_dev <= 1e-4, f"|t*-1|={t_dev:.1e}")
    finish(6, checks)


def _diagnostics(records, diag, threshold):
    """Reported numeric diagnostics, keyed by name."""
    out = {}
    for rec in records:
        e = rec["solve"]["eps"]
        out[f"J/eps^N@{e:g}"] = rec["J_over_epsN"]
        out[f"norm@{e:g}"] = rec["norm_over_epsN2"]
        out[f"u_max@{e:g}"] = rec["solve"]["u_max"]
        out[f"rescaled@{e:g}"] = rec["rescaled_error"]
        out[f"margin@{e:g}"] = rec["solves_original"]["margin"]
        out[f"nehari_t@{e:g}"] = rec["nehari_t_star"]
        out[f"mp_level@{e:g}"] = rec["mountain_pass_estimate"]
        for key in ("C", "lambda", "s_tail"):
            out[f"envelope.{key}@{e:g}"] = rec["envelope"][key]
        out[f"tail.min_scaled@{e:g}"] = rec["tail"]["min_scaled"]
        out[f"tail.flatness@{e:g}"] = rec["tail"]["flatness"]
        out[f"R@{e:g}"] = rec["ball_radius_factor"]
        out[f"barrier.lambda@{e:g}"] = rec["barrier"]["lambda_fit"]
        out[f"barrier.C@{e:g}"] = rec["barrier"]["C_fit"]
        out[f"comparison.log_ratio@{e:g}"] = rec["comparison"]["max_log_ratio"]
    for row in diag.rows:
        for R, s in row.sup_outside.items():
            out[f"sup_outside_{R:g}@{row.eps:g}"] = s
    out["norm_ratio"] = diag.norm_ratio
    out["eps0_holds"] = threshold["eps_holds"]
    out["eps0_fails"] = threshold["eps_fails"]
    return out


def test_criterion_7_truncation_robustness(plateau, plateau_sweep):
    _, reports, records, diag, threshold = plateau_sweep
    wide = plateau_config(grid={"R_max": 2000.0})
    ctx2, reports2, records2, diag2, threshold2 = run_sweep(wide, jobs=1)
    crit2 = sweep_criteria(wide, reports2, records2, diag2, threshold2)
    a = _diagnostics(records, diag, threshold)
    b = _diagnostics(records2, diag2, threshold2)
    rel = {k: abs(b[k] - a[k]) / abs(a[k]) if a[k] != b[k] else 0.0 for k in a}
    worst = max(rel, key=rel.get)
    finish(7, {
        "diagnostics": (rel[worst] < 0.01, f"{len(rel)} compared,max rel change {rel[worst]:.1e}"
                                           f" ({worst})"),
        "criteria_at_2000": (all(crit2.values()), f"{sum(crit2.values())}/{len(crit2)} pass"),
        "grid": (ctx2.grid.r_max == 2000.0, f"R_max={ctx2.grid.r_max:g}"),
    })


@pytest.mark.parametrize("eps", [0.05])
def test_rounding_level_quantities_stay_at_rounding(plateau_sweep, eps):
    """Quantities that vanish analytically are only compared against their floor."""
    rec = [r for r in plateau_sweep[2] if r["solve"]["eps"] == eps][0]
    assert rec["barrier"]["supersolution_min_scaled"] >= -1e-12
    assert rec["comparison"]["hypothesis_max"] <= 1e-8 * rec["solve"]["u_max"]
