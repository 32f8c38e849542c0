"""Minimal exterior solution, explicit supersolution and the glued barrier family.

All barrier values are stored as logarithms: the cosh factor reaches
arguments far beyond the float range for small eps. The family is radial
about the spike centre, which on a radial grid must be the origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .grids import RadialField, RadialGrid
from .penalization import (PenalizationParams, hardy_potential_radial, log_exponent,
                           validate_params, form_margin, FormNotPositiveError, kappa_bound)
from .problem import DomainLambda, InvalidRegionError, ProblemSpec, inf_over_lambda, smoothstep5


class BarrierPreconditionError(ValueError):
    pass


class BarrierGeometryError(ValueError):
    pass


def log_cosh(z):
    z = np.abs(np.asarray(z, dtype=float))
    return z + np.log1p(np.exp(-2.0 * z)) - math.log(2.0)


@dataclass
class MinimalSolution:
    """Discrete minimal solution of -Lap w - H w = 0 outside the ball Lambda.

    Stored as log-increments log(w[k+1]/w[k]) from R_Lambda outward, with
    w(R_Lambda) = 1; values[k] lives at grid.nodes[index0 + k].
    """

    grid: RadialGrid
    index0: int
    log_ratio: np.ndarray
    c_bound: float = float("nan")
    C_bound: float = float("nan")

    @property
    def radii(self) -> np.ndarray:
        return self.grid.nodes[self.index0:]

    @property
    def log_values(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.log_ratio)])

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)

    def harmonic_extension(self, r):
        """a + b phi(r) through the first two exterior nodes, phi the radial
        fundamental solution. The discrete scheme is exact on this family,
        so it continues w across R_Lambda without a discrete Laplacian defect."""
        r = np.asarray(r, dtype=float)
        r0, r1 = self.grid.nodes[self.index0:self.index0 + 2]
        phi = _fundamental(self.grid.dim)
        b = np.expm1(self.log_ratio[0]) / (phi(r1) - phi(r0))
        return 1.0 + b * (phi(r) - phi(r0))

    def as_field(self) -> RadialField:
        """w on the exterior nodes, its harmonic extension inside (clipped at the origin)."""
        r = self.grid.nodes
        inner = self.harmonic_extension(np.maximum(r[:self.index0], r[1]))
        return RadialField(self.grid, np.concatenate([inner, self.values]))


def _fundamental(N: int):
    if N == 2:
        return np.log
    return lambda r: np.asarray(r, dtype=float) ** (2.0 - N)


def minimal_solution_w(params: PenalizationParams, lambda_region: DomainLambda, N: int,
                       grid: RadialGrid, far_field: str | None = None) -> MinimalSolution:
    """Solve -Lap w - H w = 0 on [R_Lambda, R_max] with w(R_Lambda) = 1.

    The far field is the harmonic Robin condition for N >= 3 (w ~ r^{2-N}
    matched at R_max) and the natural condition for N = 2. Elimination runs
    inward from R_max on the decrements sigma = 1 - w[i+1]/w[i], which keeps
    the ratios accurate to rounding even where the mesh is very fine.
    """
    if not lambda_region.is_ball:
        raise InvalidRegionError("minimal solution needs Lambda to be a ball")
    if form_margin(params, N) <= 0:
        raise FormNotPositiveError(
            f"kappa={params.kappa:g} exceeds the Hardy bound "
            f"{kappa_bound(N, params.beta, params.log_ratio):g}")
    if far_field is None:
        far_field = "harmonic" if N >= 3 else "neumann"
    R_lam = lambda_region.r_outer
    r = grid.nodes
    i0 = int(np.argmin(np.abs(r - R_lam)))
    if abs(r[i0] - R_lam) > 1e-12 * max(1.0, R_lam):
        raise BarrierGeometryError(f"grid has no node at R_Lambda = {R_lam:g}")
    if i0 >= grid.n - 2:
        raise BarrierGeometryError("grid ends too close to R_Lambda")
    c = grid.conductance
    mh = grid.mass * hardy_potential_radial(params, lambda_region, N, r)
    n = grid.n
    sigma = np.empty(n - 1)
    # last row: c (w_n - w_{n-1}) + ext w_n - M H w_n = 0, divided by w_{n-1}
    x = (grid.exterior_coefficient(far_field) - mh[-1]) / c[-1]
    sigma[-1] = x / (1.0 + x)
    for i in range(n - 2, i0, -1):
        # row i divided by w_i: c[i-1](1 - 1/t_{i-1}) + c[i] sigma_i - M_i H_i = 0
        x = (c[i] * sigma[i] - mh[i]) / c[i - 1]
        sigma[i - 1] = x / (1.0 + x)
    if np.any(sigma[i0:] >= 1.0):
        raise FormNotPositiveError("discrete minimal solution is not positive")
    sol = MinimalSolution(grid=grid, index0=i0, log_ratio=np.log1p(-sigma[i0:]))
    scaled = sol.values * r[i0:] ** (N - 2.0)
    sol.c_bound, sol.C_bound = float(np.min(scaled)), float(np.max(scaled))
    return sol


def supersolution_W(params: PenalizationParams, N: int, x_radius):
    """Explicit supersolution W of -Lap - H and its residual -Lap W - H W.

    H is taken in its exterior form; the residual is nonnegative wherever
    log(|x|/rho0) > 0.
    """
    r = np.asarray(x_radius, dtype=float)
    if np.any(r <= params.rho0):
        raise ValueError("supersolution needs |x| > rho0")
    k, b = params.kappa, params.beta
    L = np.log(r / params.rho0)
    if N == 2:
        W = b * (b + 1.0) - k * L**-b
        minus_lap = k * b * (b + 1.0) / (r**2 * L ** (2.0 + b))
    else:
        W = r ** (2.0 - N) * ((N - 2.0) * b - k * L**-b)
        minus_lap = (k * (N - 2.0) * b / (r**N * L ** (1.0 + b))
                     + k * b * (b + 1.0) / (r**N * L ** (2.0 + b)))
    H = k / (r**2 * L ** log_exponent(N, b))
    res = minus_lap - H * W
    if np.ndim(res) == 0:
        return float(W), float(res)
    return W, res


def supersolution_laplacian(params: PenalizationParams, N: int, r):
    """Closed-form -Lap W (exposed for finite-difference cross-checks)."""
    W, res = supersolution_W(params, N, r)
    L = np.log(np.asarray(r, dtype=float) / params.rho0)
    H = params.kappa / (np.asarray(r, dtype=float) ** 2 * L ** log_exponent(N, params.beta))
    return res + H * W


@dataclass
class BarrierFamily:
    mu: float
    nu: float
    r_bar: float
    R: float
    delta0: float
    field: RadialField
    log_values: np.ndarray = field(repr=False)
    eps: float = 0.0
    variant: str = "fast"
    lambda_fit: float = float("nan")
    C_fit: float = float("nan")
    supersolution_min: float = float("nan")
    supersolution_min_scaled: float = float("nan")

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.field.r, self.log_values]), delimiter=",",
                   header="r,log_W", comments="", fmt="%.17g")

    def summary(self) -> dict:
        return {"mu": self.mu, "nu": self.nu, "r_bar": self.r_bar, "R": self.R,
                "delta0": self.delta0, "variant": self.variant, "lambda_fit": self.lambda_fit,
                "C_fit": self.C_fit, "supersolution_min": self.supersolution_min,
                "supersolution_min_scaled": self.supersolution_min_scaled}


def delta0_value(spec: ProblemSpec, nu: float) -> float:
    """inf over Lambda of (nu V / K)^{1/(p-1)}."""
    return inf_over_lambda(
        spec, lambda r: (nu * spec.V.radial(r) / spec.K.radial(r)) ** (1.0 / (spec.p - 1.0)))


def default_mu(spec: ProblemSpec, nu: float, fraction: float = 0.9) -> float:
    return fraction * math.sqrt((1.0 - nu) * inf_over_lambda(spec, spec.V.radial))


def ball_radius_factor(u: RadialField, eps: float, delta0: float, x_eps: float = 0.0) -> float:
    """Smallest R with u <= delta0 at every node outside B(x_eps, eps R)."""
    d = np.abs(u.r - x_eps)
    order = np.argsort(d)
    tail_max = np.maximum.accumulate(u.values[order][::-1])[::-1]
    ok = np.nonzero(tail_max <= delta0)[0]
    if ok.size == 0:
        raise BarrierGeometryError("u exceeds delta0 up to the end of the grid")
    return float(d[order][ok[0]] / eps)


def _discrete_residual_log(grid: RadialGrid, dl: np.ndarray, eps: float, H: np.ndarray,
                           V: np.ndarray, nu: float, far_field: str) -> np.ndarray:
    """(-eps^2 Lap W - eps^2 H W + (1-nu) V W) / W from the log-increments dl of W."""
    c = grid.conductance
    m = grid.mass
    flux = np.zeros(grid.n)
    flux[:-1] += -c * np.expm1(dl)
    flux[1:] += -c * np.expm1(-dl)
    flux[-1] += grid.exterior_coefficient(far_field)
    return eps**2 * flux / m - eps**2 * H + (1.0 - nu) * V


def barrier_W_eps(spec: ProblemSpec, params: PenalizationParams, eps: float, grid: RadialGrid,
                  R: float, nu: float = 0.5, x_eps: float = 0.0, mu: float | None = None,
                  r_bar: float | None = None, variant: str = "fast", alpha: float | None = None,
                  lam: float | None = None, w: MinimalSolution | None = None,
                  far_field: str | None = None) -> BarrierFamily:
    """Glued barrier W_eps on the grid, normalised to 1 on |x - x_eps| = eps R.

    Inside B(x_eps, r_bar) it is cosh(mu (r_bar - |y|)/eps), which has zero
    slope at r_bar and so joins the constant 1 in C^{1,1}. Farther out it is
    the extension w~ (1 deep in Lambda, quintic blend to w near the boundary,
    w outside). variant 'slow' (needs alpha < 2, lam) and 'borderline' replace
    the outer piece by exp((lam/eps)(r_bar^{1-a/2} - d^{1-a/2})) and
    (r_bar/d)^{nu/eps}.
    """
    if x_eps != 0.0:
        raise BarrierGeometryError("a radial barrier needs the spike at the origin")
    if not 0.0 < nu < 1.0:
        raise BarrierPreconditionError("nu must lie in (0, 1)")
    validate_params(params, spec.lambda_region, spec.N)
    N = spec.N
    far_field = far_field or ("harmonic" if N >= 3 else "neumann")
    inf_v = inf_over_lambda(spec, spec.V.radial)
    mu = default_mu(spec, nu) if mu is None else float(mu)
    if not 0.0 < mu**2 < (1.0 - nu) * inf_v:
        raise BarrierPreconditionError(
            f"need 0 < mu^2 < (1-nu) inf V = {(1 - nu) * inf_v:g}, got mu = {mu:g}")
    lam_region = spec.lambda_region
    R_lam = lam_region.r_outer
    dist = lam_region.distance_to_boundary(x_eps)
    r_bar = 0.4 * dist if r_bar is None else float(r_bar)
    if not 0.0 < r_bar < 0.5 * dist:
        raise BarrierGeometryError(f"r_bar must lie in (0, {0.5 * dist:g})")
    if not eps * R < r_bar:
        raise BarrierGeometryError(f"eps R = {eps * R:g} must stay below r_bar = {r_bar:g}")

    r = grid.nodes
    ell = np.zeros(grid.n)
    inner = r < r_bar
    ell[inner] = log_cosh(mu * (r_bar - r[inner]) / eps)
    if variant == "fast":
        if w is None:
            w = minimal_solution_w(params, lam_region, N, grid, far_field)
        a = R_lam - r_bar
        blend = (r > a) & (r < R_lam)
        s = smoothstep5((r[blend] - a) / r_bar)
        ext = w.harmonic_extension(r[blend])
        if np.any(ext <= 0):
            raise BarrierGeometryError("harmonic extension of w is not positive in the blend")
        ell[blend] = np.log1p(s * (ext - 1.0))
        ell[w.index0:] = w.log_values
    elif variant == "slow":
        if alpha is None or not 0.0 < alpha < 2.0 or lam is None:
            raise BarrierPreconditionError("slow variant needs 0 < alpha < 2 and lam")
        q = 1.0 - alpha / 2.0
        out = ~inner
        ell[out] = (lam / eps) * (r_bar**q - r[out] ** q)
    elif variant == "borderline":
        out = ~inner
        ell[out] = (nu / eps) * np.log(r_bar / r[out])
    else:
        raise ValueError(f"unknown barrier variant {variant!r}")
    dl = np.diff(ell)
    if variant == "fast":
        dl[w.index0:] = w.log_ratio
    ell -= log_cosh(mu * (r_bar / eps - R))

    H = hardy_potential_radial(params, lam_region, N, r)
    V = np.asarray(spec.V.radial(r), dtype=float)
    rho = _discrete_residual_log(grid, dl, eps, H, V, nu, far_field)
    far = r > eps * R
    with np.errstate(under="ignore"):
        W = np.exp(ell)
    fam = BarrierFamily(mu=mu, nu=nu, r_bar=r_bar, R=float(R), delta0=delta0_value(spec, nu),
                        field=RadialField(grid, W), log_values=ell, eps=float(eps),
                        variant=variant, supersolution_min=float(np.min(rho[far] * W[far])),
                        supersolution_min_scaled=float(np.min(rho[far])))
    from .verify import fit_envelope_log  # local import: verify depends on this module
    fit = fit_envelope_log(r, ell, x_eps, eps, N, r_min=eps * R)
    fam.lambda_fit, fam.C_fit = fit.lambda_, fit.C
    return fam


@dataclass
class ComparisonReport:
    holds: bool
    max_violation: float
    max_log_ratio: float
    violation_radii: list
    hypothesis_holds: bool
    hypothesis_max: float


def comparison_check(u: RadialField, barrier: BarrierFamily, spec: ProblemSpec,
                     params: PenalizationParams, eps: float, tol: float = 1e-8,
                     far_field: str | None = None) -> ComparisonReport:
    """u <= delta0 W_eps beyond eps R, and the exterior inequation for u.

    The inequation -eps^2 Lap u - eps^2 H u + (1-nu) V u <= tol * max u is
    checked at nodes strictly outside B(0, eps R).
    """
    from .solver import Discretization
    far_field = far_field or ("harmonic" if spec.N >= 3 else "neumann")
    r = u.r
    vals = u.values
    outside = r >= eps * barrier.R
    pos = outside & (vals > 0)
    with np.errstate(divide="ignore"):
        logratio = np.log(vals[pos]) - math.log(barrier.delta0) - barrier.log_values[pos]
    bad = logratio > 0
    max_log = float(np.max(logratio)) if logratio.size else -np.inf
    excess = vals[pos] - barrier.delta0 * barrier.field.values[pos]
    max_violation = float(max(0.0, np.max(excess))) if excess.size else 0.0

    disc = Discretization(spec, params, eps, u.grid, far_field)
    H = hardy_potential_radial(params, spec.lambda_region, spec.N, r)
    ineq = disc.operator(vals) - eps**2 * H * vals - barrier.nu * disc.V * vals
    strict = r > eps * barrier.R
    scale = max(float(np.max(vals)), np.finfo(float).tiny)
    hyp_max = float(np.max(ineq[strict])) if np.any(strict) else 0.0
    return ComparisonReport(holds=not np.any(bad), max_violation=max_violation,
                            max_log_ratio=max_log,
                            violation_radii=[float(x) for x in r[pos][bad][:20]],
                            hypothesis_holds=hyp_max <= tol * scale, hypothesis_max=hyp_max)


def lower_subsolution_residual(V, N: int, delta: float, radii) -> np.ndarray:
    """(-Lap + V) f for f = r^{2-N}(1 + r^{-delta}), using the exact Laplacian."""
    r = np.asarray(radii, dtype=float)
    f = r ** (2.0 - N) * (1.0 + r**-delta)
    minus_lap = -delta * (N - 2.0 + delta) * r ** (-N - delta)
    v = V.radial(r) if hasattr(V, "radial") else V(r)
    return minus_lap + np.asarray(v, dtype=float) * f
