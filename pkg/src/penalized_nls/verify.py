"""End-to-end checks on computed penalized solutions."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
import math

import numpy as np

from .grids import RadialField, apply_operator, sample
from .groundstate import GroundState, SolverFailure
from .penalization import PenalizationParams, hardy_potential_radial
from .problem import ProblemSpec, check_assumption_A, eval_concentration, inf_over_lambda


class FitImpossibleError(ValueError):
    pass


class InsufficientSweepError(ValueError):
    pass


class WindowError(ValueError):
    pass


# ---------------------------------------------------------------------------
# solves-original criterion

@dataclass
class SolvesOriginalReport:
    holds: bool
    margin: float
    original_residual_max: float
    residual_ok: bool


def check_solves_original(u: RadialField, spec: ProblemSpec, params: PenalizationParams,
                          eps: float, tol: float = 1e-8,
                          far_field: str = "harmonic") -> SolvesOriginalReport:
    """margin = min over exterior nodes of log(eps^2 H) - log(K u^{p-1}).

    Independently reports the residual of the unpenalized equation
    -eps^2 Lap u + V u - K u^p relative to max u.
    """
    r = u.r
    vals = u.values
    K = sample(spec.K, r)
    ext = ~spec.lambda_region.contains_radius(r)
    live = ext & (K > 0) & (vals > 0)
    if np.any(live):
        H = hardy_potential_radial(params, spec.lambda_region, spec.N, r[live])
        margin = float(np.min(np.log(eps**2 * H)
                              - np.log(K[live]) - (spec.p - 1.0) * np.log(vals[live])))
    else:
        margin = math.inf
    orig = apply_operator(u, eps, spec.V, far_field).values - K * np.maximum(vals, 0.0) ** spec.p
    res = float(np.max(np.abs(orig)))
    scale = float(np.max(np.abs(vals)))
    return SolvesOriginalReport(holds=margin >= 0, margin=margin, original_residual_max=res,
                                residual_ok=res <= tol * scale if scale > 0 else res == 0.0)


# ---------------------------------------------------------------------------
# decay envelopes

@dataclass
class EnvelopeFit:
    C: float
    lambda_: float
    max_log_excess: float
    s_tail: float
    variant: str = "fast"
    alpha: float | None = None

    @property
    def valid(self) -> bool:
        return self.max_log_excess <= 0 and self.lambda_ > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        d["valid"] = self.valid
        return d


def _shape(d, variant: str, alpha: float | None):
    if variant == "fast":
        return d / (1.0 + d)
    if variant == "slow":
        return d / (1.0 + d) ** (alpha / 2.0)
    if variant == "borderline":
        return np.log1p(d)
    raise ValueError(f"unknown envelope variant {variant!r}")


def _weight(r, N: int, variant: str):
    if variant == "fast":
        return 0.5 * (N - 2.0) * np.log1p(r * r)
    return np.zeros_like(r)


def envelope_log_excess(r, log_u, x_eps: float, eps: float, N: int, C: float, lam: float,
                        variant: str = "fast", alpha: float | None = None,
                        r_min: float = 0.0) -> float:
    """max over nodes with |r - x_eps| >= r_min of log u - log envelope."""
    r = np.asarray(r, dtype=float)
    d = np.abs(r - x_eps)
    sel = (d >= r_min) & np.isfinite(log_u)
    env = math.log(C) - (lam / eps) * _shape(d[sel], variant, alpha) - _weight(r[sel], N, variant)
    return float(np.max(log_u[sel] - env))


def tail_slope(r, log_u, window) -> float:
    r = np.asarray(r, dtype=float)
    sel = (r >= window[0]) & (r <= window[1]) & np.isfinite(log_u)
    if np.count_nonzero(sel) < 2:
        raise WindowError("tail window holds fewer than two nodes")
    return float(np.polyfit(np.log(r[sel]), log_u[sel], 1)[0])


def fit_envelope_log(r, log_u, x_eps: float, eps: float, N: int, variant: str = "fast",
                     alpha: float | None = None, r_min: float = 0.0,
                     tail_window=None) -> EnvelopeFit:
    """Fit C exp(-(lam/eps) s(d)) weight(r) over log-values.

    C is anchored by the peak (the envelope has s = 0 at the centre, so C must
    dominate the weighted profile there); lam is then the largest rate with
    log u <= log envelope at every node beyond r_min.
    """
    r = np.asarray(r, dtype=float)
    log_u = np.asarray(log_u, dtype=float)
    d = np.abs(r - x_eps)
    q = log_u + _weight(r, N, variant)
    logC = float(np.max(q[np.isfinite(q)]))
    far = (d >= r_min) & (d > 0)
    if not np.any(far):
        raise FitImpossibleError("no nodes beyond r_min")
    if not np.all(np.isfinite(log_u[far])):
        raise FitImpossibleError("nonpositive u on the far grid")
    s = _shape(d[far], variant, alpha)
    lam = float(np.min(eps * (logC - q[far]) / s))
    # one ulp-scale margin so the certified inequality holds in floating point
    lam -= 1e-12 * max(1.0, abs(lam))
    excess = envelope_log_excess(r, log_u, x_eps, eps, N, math.exp(logC), lam, variant, alpha,
                                 r_min)
    if tail_window is None:
        tail_window = (0.05 * r[-1], 0.3 * r[-1])
    try:
        s_tail = tail_slope(r, log_u, tail_window)
    except WindowError:
        s_tail = float("nan")
    return EnvelopeFit(C=math.exp(logC), lambda_=lam, max_log_excess=excess, s_tail=s_tail,
                       variant=variant, alpha=alpha)


def decay_envelope_fit(u: RadialField, x_eps: float, eps: float, N: int, variant: str = "fast",
                       alpha: float | None = None, r_min: float = 0.0,
                       tail_window=(50.0, 300.0)) -> EnvelopeFit:
    if variant == "slow" and (alpha is None or not 0 < alpha < 2):
        raise ValueError("slow envelope needs 0 < alpha < 2")
    vals = u.values
    far = np.abs(u.r - x_eps) >= r_min
    if np.any(vals[far] <= 0):
        raise FitImpossibleError("nonpositive u on the far grid")
    with np.errstate(divide="ignore"):
        log_u = np.log(vals)
    window = tail_window if tail_window[1] <= u.r[-1] else None
    return fit_envelope_log(u.r, log_u, x_eps, eps, N, variant, alpha, r_min, window)


# ---------------------------------------------------------------------------
# tail lower bound

@dataclass
class TailReport:
    min_scaled: float
    flatness: float
    holds: bool


def tail_lower_bound(u: RadialField, N: int, far_window=(50.0, 300.0)) -> TailReport:
    """min of r^{N-2} u over the window and its max/min ratio over the window's last decade."""
    lo, hi = far_window
    if not 0 < lo < hi:
        raise WindowError("window needs 0 < lo < hi")
    if hi > 0.9 * u.r[-1]:
        raise WindowError("window overlaps the last 10% of the grid")
    r = u.r
    sel = (r >= lo) & (r <= hi)
    if np.count_nonzero(sel) < 2:
        raise WindowError("window holds fewer than two nodes")
    scaled = r[sel] ** (N - 2.0) * u.values[sel]
    mn = float(np.min(scaled))
    last = r[sel] >= max(lo, hi / 10.0)
    tail = scaled[last]
    flat = float(np.max(tail) / np.min(tail)) if np.min(tail) > 0 else math.inf
    return TailReport(min_scaled=mn, flatness=flat, holds=bool(mn > 0 and flat < 3.0))


# ---------------------------------------------------------------------------
# rescaled convergence

def limit_profile(spec: ProblemSpec, gs: GroundState, x_bar: float | None = None):
    """y -> (V/K)^{1/(p-1)} w(sqrt(V) |y|) with V, K taken at x_bar = argmin A."""
    if x_bar is None:
        x_bar = check_assumption_A(spec).argmin
    v0 = float(spec.V.radial(x_bar))
    k0 = float(spec.K.radial(x_bar))
    amp = (v0 / k0) ** (1.0 / (spec.p - 1.0))
    return lambda y: amp * gs(math.sqrt(v0) * np.abs(np.asarray(y, dtype=float)))


def rescaled_error(u: RadialField, x_eps: float, eps: float, gs: GroundState,
                   spec: ProblemSpec, window: float = 10.0) -> float:
    """sup over |y| <= window of |u(x_eps + eps y) - v(y)| / v(0), at grid nodes."""
    if x_eps + eps * window > u.r[-1]:
        raise WindowError("rescaled window exceeds the grid")
    v = limit_profile(spec, gs)
    y = (u.r - x_eps) / eps
    sel = np.abs(y) <= window
    return float(np.max(np.abs(u.values[sel] - v(y[sel]))) / float(v(np.zeros(1))[0]))


# ---------------------------------------------------------------------------
# sweep diagnostics

@dataclass
class SweepRow:
    eps: float
    x_eps: float
    A_at_x_eps: float
    J_over_epsN: float
    norm_over_epsN2: float
    u_max: float
    solves_original: bool
    threshold_margin: float
    sup_outside: dict = field(default_factory=dict)


@dataclass
class SweepDiagnostics:
    rows: list
    inf_A: float
    A_trend_ok: bool
    sup_trend_eps_ok: bool
    sup_trend_R_ok: bool
    norm_ratio: float
    u_max_floor: float

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "inf_A": self.inf_A,
                "A_trend_ok": self.A_trend_ok, "sup_trend_eps_ok": self.sup_trend_eps_ok,
                "sup_trend_R_ok": self.sup_trend_R_ok, "norm_ratio": self.norm_ratio,
                "u_max_floor": self.u_max_floor}

    def to_csv(self, path) -> None:
        cols = ["eps", "x_eps", "A_at_x_eps", "J_over_epsN", "norm_over_epsN2", "u_max",
                "solves_original", "threshold_margin"]
        Rs = sorted(self.rows[0].sup_outside) if self.rows else []
        with open(path, "w") as fh:
            fh.write(",".join(cols + [f"sup_outside_R{R:g}" for R in Rs]) + "\n")
            for row in self.rows:
                vals = [getattr(row, c) for c in cols] + [row.sup_outside[R] for R in Rs]
                fh.write(",".join(_fmt(v) for v in vals) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return format(float(v), ".17g")


def sup_outside_ball(u: RadialField, spec: ProblemSpec, x_eps: float, radius: float) -> float:
    """sup of u over Lambda minus B(x_eps, radius); 0 when that set is empty."""
    r = u.r
    sel = spec.lambda_region.contains_radius(r) & (np.abs(r - x_eps) >= radius)
    return float(np.max(u.values[sel])) if np.any(sel) else 0.0


def concentration_diagnostics(sweep, spec: ProblemSpec, params: PenalizationParams,
                              R_values=(5.0, 10.0, 20.0), rtol: float = 0.05,
                              far_field: str = "harmonic") -> SweepDiagnostics:
    """Per-eps table of the concentration quantities and their trends.

    Trends are checked as finite-sweep monotonicity: A(x_eps) non-increasing
    as eps decreases, eps -> sup outside B(x_eps, eps R) non-increasing in eps
    (within rtol) and non-increasing in R.
    """
    if len(sweep) < 3:
        raise InsufficientSweepError("need at least three eps values")
    N = spec.N
    rows = []
    for rep in sorted(sweep, key=lambda s: -s.eps):
        so = check_solves_original(rep.solution, spec, params, rep.eps, far_field=far_field)
        sups = {float(R): sup_outside_ball(rep.solution, spec, rep.x_eps, rep.eps * R)
                for R in R_values}
        rows.append(SweepRow(eps=rep.eps, x_eps=rep.x_eps,
                             A_at_x_eps=float(eval_concentration(spec, rep.x_eps)),
                             J_over_epsN=rep.J_value / rep.eps**N,
                             norm_over_epsN2=rep.norm_eps_value / rep.eps ** (N / 2.0),
                             u_max=rep.u_max, solves_original=so.holds,
                             threshold_margin=so.margin, sup_outside=sups))
    inf_A = check_assumption_A(spec).inf_interior
    A = np.array([row.A_at_x_eps for row in rows])
    a_ok = bool(np.all(np.diff(A) <= rtol * np.abs(A[:-1]) + 1e-14) and A[-1] >= inf_A * (1 - 1e-9))
    eps_ok = True
    R_ok = True
    Rs = sorted(rows[0].sup_outside)
    for R in Rs:
        s = np.array([row.sup_outside[R] for row in rows])
        # rows run from large to small eps; a non-increasing function of eps
        # may not drop (beyond rtol) as eps decreases
        eps_ok &= bool(np.all(s[1:] >= (1.0 - rtol) * s[:-1]))
    for row in rows:
        s = np.array([row.sup_outside[R] for R in Rs])
        R_ok &= bool(np.all(np.diff(s) <= 0))
    norms = np.array([row.norm_over_epsN2 for row in rows])
    floor = inf_over_lambda(
        spec, lambda r: (spec.V.radial(r) / spec.K.radial(r)) ** (1.0 / (spec.p - 1.0)))
    return SweepDiagnostics(rows=rows, inf_A=inf_A, A_trend_ok=a_ok, sup_trend_eps_ok=eps_ok,
                            sup_trend_R_ok=R_ok, norm_ratio=float(norms.max() / norms.min()),
                            u_max_floor=floor)


# ---------------------------------------------------------------------------
# threshold for the solves-original criterion

@dataclass
class ThresholdResult:
    eps_holds: float
    eps_fails: float
    iterations: int
    history: list


def locate_threshold(solve, holds, eps_lo: float, eps_hi: float | None = None,
                     iterations: int = 8, growth: float = 1.5, eps_cap: float = 8.0):
    """Bisection for the largest eps where holds(solve(eps)) is true.

    solve(eps, init, init_eps) returns a SolveReport; init is the nearest
    solution so far (continuation in eps). If eps_hi is None the bracket is grown
    geometrically from eps_lo. A solver failure counts as 'fails'.
    """
    history = []
    cache = {}

    def ok(e):
        near = min(cache, key=lambda k: abs(k - e)) if cache else None
        init = cache[near].solution if near is not None else None
        try:
            rep = solve(e, init, near)
        except (SolverFailure, ArithmeticError, RuntimeError) as exc:
            history.append({"eps": e, "holds": False, "error": str(exc)})
            return False
        cache[e] = rep
        h = bool(holds(rep))
        history.append({"eps": e, "holds": h})
        return h

    if not ok(eps_lo):
        raise ValueError(f"criterion fails already at eps_lo = {eps_lo:g}")
    if eps_hi is None:
        eps_hi = eps_lo
        while True:
            eps_hi *= growth
            if eps_hi > eps_cap:
                raise ValueError(f"criterion still holds at eps = {eps_cap:g}")
            if not ok(eps_hi):
                break
            eps_lo = eps_hi
    elif ok(eps_hi):
        raise ValueError(f"criterion holds at eps_hi = {eps_hi:g}")
    for _ in range(iterations):
        mid = 0.5 * (eps_lo + eps_hi)
        if ok(mid):
            eps_lo = mid
        else:
            eps_hi = mid
    return ThresholdResult(eps_holds=eps_lo, eps_fails=eps_hi, iterations=iterations,
                           history=history)
