"""Penalized functional, its Euler-Lagrange residual and least-energy solves.

The discrete functional is

    J(u) = 1/2 (eps^2 <S u, u> + int V u^2) - int G_eps(x, u^+),

with S the flux stiffness of :mod:`grids` (including the exterior harmonic
term when far_field='harmonic'). Its gradient with respect to the nodal
values is exactly |S^{N-1}| * mass * residual, so the residual below is the
discrete weak Euler-Lagrange operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import minimize_scalar

from .grids import (RadialField, RadialGrid, dirichlet_energy, integrate, norm_eps,
                    sample, sphere_area, stiffness_apply, stiffness_bands)
from .groundstate import GroundState, SolverFailure
from .penalization import PenalizationParams, PenalizedNonlinearity, validate_params
from .problem import ProblemSpec, check_assumption_A

log = logging.getLogger(__name__)


class DegenerateSolutionError(RuntimeError):
    """Newton landed on the trivial critical point u = 0."""


class NoMaximumError(RuntimeError):
    pass


class PathInvalidError(RuntimeError):
    pass


class Discretization:
    """Nodal data of one penalized problem on one grid."""

    def __init__(self, spec: ProblemSpec, params: PenalizationParams, eps: float,
                 grid: RadialGrid, far_field: str = "harmonic"):
        if grid.dim != spec.N:
            raise ValueError("grid dimension differs from N")
        self.spec, self.params, self.eps, self.grid = spec, params, float(eps), grid
        self.far_field = far_field
        r = grid.nodes
        self.V = sample(spec.V, r)
        self.nl = PenalizedNonlinearity.at_radii(spec, params, eps, r)
        self.mass = grid.mass
        self.area = sphere_area(spec.N)
        diag, off = stiffness_bands(grid, far_field)
        self._diag = eps**2 * diag + self.mass * self.V
        self._off = eps**2 * off

    def operator(self, u: np.ndarray) -> np.ndarray:
        return self.eps**2 * stiffness_apply(self.grid, u, self.far_field) / self.mass + self.V * u

    def residual(self, u: np.ndarray) -> np.ndarray:
        return self.operator(u) - self.nl.g(np.maximum(u, 0.0))

    def functional(self, u: np.ndarray) -> float:
        quad = self.eps**2 * dirichlet_energy(RadialField(self.grid, u), self.far_field) \
            + integrate(self.grid, self.V * u * u)
        return 0.5 * quad - integrate(self.grid, self.nl.G(np.maximum(u, 0.0)))

    def jacobian_bands(self, u: np.ndarray) -> np.ndarray:
        """Mass-weighted (symmetric) semismooth Jacobian in banded storage."""
        ab = np.zeros((3, self.grid.n))
        ab[0, 1:] = self._off
        ab[1] = self._diag - self.mass * self.nl.dg(np.maximum(u, 0.0))
        ab[2, :-1] = self._off
        return ab

    def merit(self, res: np.ndarray) -> float:
        return float(np.sqrt(np.dot(self.mass, res * res)))

    def rounding_floor(self, u: np.ndarray) -> float:
        """Size of the residual that float64 rounding alone produces at u."""
        u = np.abs(u)
        ops = (np.abs(self._diag) * u + np.abs(np.concatenate([self._off, [0.0]])) * u
               + np.abs(np.concatenate([[0.0], self._off])) * u) / self.mass
        return float(16.0 * np.finfo(float).eps * np.max(ops + self.nl.g(u)))


def functional_J(field: RadialField, spec: ProblemSpec, params: PenalizationParams,
                 eps: float, far_field: str = "harmonic") -> float:
    return Discretization(spec, params, eps, field.grid, far_field).functional(field.values)


def residual(field: RadialField, spec: ProblemSpec, params: PenalizationParams,
             eps: float, far_field: str = "harmonic") -> RadialField:
    d = Discretization(spec, params, eps, field.grid, far_field)
    return RadialField(field.grid, d.residual(field.values))


@dataclass
class SolveReport:
    solution: RadialField
    eps: float
    J_value: float
    norm_eps_value: float
    x_eps: float
    u_max: float
    newton_iters: int
    residual_max: float
    residual_history: list = field(default_factory=list)
    continuation: list = field(default_factory=list)
    tolerance_met: bool = True
    residual_floor: float = 0.0

    def summary(self) -> dict:
        return {"eps": self.eps, "J_value": self.J_value, "norm_eps": self.norm_eps_value,
                "x_eps": self.x_eps, "u_max": self.u_max, "newton_iters": self.newton_iters,
                "residual_max": self.residual_max, "tolerance_met": self.tolerance_met,
                "residual_floor": self.residual_floor, "continuation": list(self.continuation)}


def ground_state_ansatz(spec: ProblemSpec, gs: GroundState, eps: float, grid: RadialGrid,
                        center: float | None = None) -> RadialField:
    """Rescaled canonical ground state placed at the minimiser of A."""
    if center is None:
        center = check_assumption_A(spec).argmin
    v0 = float(spec.V.radial(center))
    k0 = float(spec.K.radial(center))
    amp = (v0 / k0) ** (1.0 / (spec.p - 1.0))
    y = math.sqrt(v0) * np.abs(grid.nodes - center) / eps
    return RadialField(grid, amp * gs(y))


def newton(disc: Discretization, u0: np.ndarray, tol: float = 1e-8, max_iter: int = 60,
           min_step: float = 2.0**-12):
    """Damped semismooth Newton with Armijo backtracking on the residual norm.

    Negative iterates are clipped to zero. Returns (u, iterations, history,
    tolerance_met). Stops when max|residual| <= tol * max u, or when the
    iteration has stalled at the float64 rounding floor of the operator (then
    tolerance_met is False if that floor exceeds the tolerance). Raises
    SolverFailure otherwise.
    """
    u = np.maximum(np.asarray(u0, dtype=float), 0.0)
    res = disc.residual(u)
    history = [float(np.max(np.abs(res)))]
    for it in range(max_iter + 1):
        umax = float(np.max(u))
        if umax > 0 and history[-1] <= tol * umax:
            return u, it, history, True
        if (umax > 0 and len(history) > 3 and history[-1] >= 0.5 * history[-4]
                and history[-1] <= disc.rounding_floor(u)):
            return u, it, history, False
        if it == max_iter:
            break
        rhs = disc.mass * res
        delta = solve_banded((1, 1), disc.jacobian_bands(u), rhs)
        m0 = disc.merit(res)
        t = 1.0
        while True:
            trial = np.maximum(u - t * delta, 0.0)
            r_trial = disc.residual(trial)
            if disc.merit(r_trial) <= (1.0 - 1e-4 * t) * m0 or t <= min_step:
                break
            t *= 0.5
        u, res = trial, r_trial
        history.append(float(np.max(np.abs(res))))
        if not np.all(np.isfinite(u)):
            break
    raise SolverFailure(f"Newton did not converge at eps={disc.eps:g}", history)


def _finish(disc: Discretization, u: np.ndarray, iters: int, history: list,
            path: list, met: bool) -> SolveReport:
    grid = disc.grid
    if not np.max(u) > 0:
        raise DegenerateSolutionError("converged to the zero solution")
    J = disc.functional(u)
    if J <= 0:
        raise DegenerateSolutionError(f"J = {J:g} <= 0 signals the trivial critical point")
    field = RadialField(grid, u)
    i = int(np.argmax(u))
    res = disc.residual(u)
    return SolveReport(solution=field, eps=disc.eps, J_value=J,
                       norm_eps_value=norm_eps(field, disc.eps, disc.V, disc.far_field),
                       x_eps=float(grid.nodes[i]), u_max=float(u[i]), newton_iters=iters,
                       residual_max=float(np.max(np.abs(res))), residual_history=history,
                       continuation=path, tolerance_met=met,
                       residual_floor=disc.rounding_floor(u))


def solve_least_energy(spec: ProblemSpec, params: PenalizationParams, eps: float,
                       grid: RadialGrid, gs: GroundState, init: RadialField | None = None,
                       tol: float = 1e-8, far_field: str = "harmonic",
                       init_eps: float | None = None, continuation_steps: int = 6,
                       max_iter: int = 60) -> SolveReport:
    """Least-energy solution of the penalized problem by Newton.

    Without init, the rescaled ground state centred at argmin A is used. If
    Newton fails, the solve is repeated along a geometric eps-path from
    init_eps (the eps the init solves; default eps/2 with the ansatz there),
    each solution seeding the next.
    """
    validate_params(params, spec.lambda_region, spec.N)
    disc = Discretization(spec, params, eps, grid, far_field)
    u0 = init.values if init is not None else ground_state_ansatz(spec, gs, eps, grid).values
    try:
        u, iters, hist, met = newton(disc, u0, tol, max_iter)
        return _finish(disc, u, iters, hist, [float(eps)], met)
    except SolverFailure as exc:
        first_history = exc.history
        log.info("direct Newton failed at eps=%g; trying continuation", eps)
    if init is not None and init_eps is not None:
        start, u = float(init_eps), init.values
    else:
        start = 0.5 * eps
        u = ground_state_ansatz(spec, gs, start, grid).values
    path = [float(e) for e in np.geomspace(start, eps, continuation_steps + 1)[1:]]
    total = 0
    for e in path:
        d = Discretization(spec, params, e, grid, far_field)
        try:
            u, iters, hist, met = newton(d, u, tol, max_iter)
        except SolverFailure as exc:
            raise SolverFailure(f"continuation failed at eps={e:g} on the way to {eps:g}",
                                first_history + exc.history) from None
        total += iters
    return _finish(disc, u, total, hist, [start] + path, met)


@dataclass
class NehariResult:
    t_star: float
    J_at_t_star: float
    t_samples: np.ndarray = field(repr=False)
    J_samples: np.ndarray = field(repr=False)

    @property
    def unimodal(self) -> bool:
        d = np.diff(self.J_samples)
        s = np.sign(d[np.abs(d) > 1e-14 * np.max(np.abs(self.J_samples))])
        return bool(np.sum(s[1:] != s[:-1]) <= 1 and (s.size == 0 or s[0] > 0))


def _ray(disc: Discretization, u: np.ndarray):
    return lambda t: disc.functional(t * u)


def nehari_project(field: RadialField, spec: ProblemSpec, params: PenalizationParams,
                   eps: float, far_field: str = "harmonic", n_samples: int = 200,
                   t_end: float | None = None) -> NehariResult:
    """Maximise t -> J(t u) over t > 0 (coarse sampling, then golden section)."""
    u = np.asarray(field.values, dtype=float)
    disc = Discretization(spec, params, eps, field.grid, far_field)
    if not np.any(u > 0) or integrate(field.grid, disc.nl.G(np.maximum(u, 0.0))) <= 0:
        raise NoMaximumError("need a nonnegative nonzero field with int G > 0")
    J = _ray(disc, u)
    if t_end is None:
        t_end = 2.0
        while J(t_end) >= 0:
            t_end *= 2.0
            if t_end > 1e8:
                raise NoMaximumError("J(t u) stays nonnegative along the ray")
    ts = np.linspace(t_end / n_samples, t_end, n_samples)
    Js = np.array([J(t) for t in ts])
    k = int(np.argmax(Js))
    if k == n_samples - 1:
        raise NoMaximumError("J(t u) is nondecreasing on the search interval")
    lo = ts[k - 1] if k > 0 else 0.0
    hi = ts[k + 1]
    res = minimize_scalar(lambda t: -J(t), bracket=(lo, ts[k], hi), method="golden",
                          options={"xtol": 1e-12})
    t_star = float(res.x) if -res.fun >= Js[k] else float(ts[k])
    return NehariResult(t_star=t_star, J_at_t_star=float(J(t_star)), t_samples=ts, J_samples=Js)


def nehari_closed_form(field: RadialField, spec: ProblemSpec, eps: float,
                       far_field: str = "harmonic") -> float:
    """t* = (||u||_eps^2 / int K u^{p+1})^{1/(p-1)} for pure-power nonlinearities."""
    a = norm_eps(field, eps, spec.V, far_field) ** 2
    b = integrate(field.grid, sample(spec.K, field.r) * np.abs(field.values) ** (spec.p + 1))
    return (a / b) ** (1.0 / (spec.p - 1.0))


def mountain_pass_level_estimate(report: SolveReport, spec: ProblemSpec,
                                 params: PenalizationParams, far_field: str = "harmonic",
                                 t_end: float = 2.0) -> float:
    """max over t in [0, t_end] of J(t u_eps), the ray-path upper bound for c_eps."""
    u = report.solution.values
    if not np.any(u > 0):
        raise PathInvalidError("zero field does not define a mountain-pass path")
    disc = Discretization(spec, params, report.eps, report.solution.grid, far_field)
    J = _ray(disc, u)
    for _ in range(30):
        if J(t_end) < 0:
            break
        t_end *= 2.0
    else:
        raise PathInvalidError("could not reach negative energy along the ray")
    res = nehari_project(report.solution, spec, params, report.eps, far_field, t_end=t_end)
    return max(res.J_at_t_star, report.J_value)
