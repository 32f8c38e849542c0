"""Radial ground state of -Lap w + w = w^p and derived constants.

The canonical profile is found by shooting on w(0): the radial ODE
w'' + (N-1)/r w' = w - w^p is integrated from a series start, and the
initial height is bisected between trajectories that cross zero (too high)
and trajectories that turn upward (too low). Beyond the range where the two
bracketing trajectories still agree, the profile is continued with the exact
decaying solution of the linearised equation, c r^{1-N/2} K_{N/2-1}(r).

An independent grid solution (Petviashvili iteration followed by Newton on
the finite-volume discretisation, with Richardson extrapolation) is provided
for cross-validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.integrate import quad, simpson, solve_ivp
from scipy.linalg import solve_banded
from scipy.special import kve

from .grids import (RadialField, RadialGrid, apply_operator, integrate, sphere_area,
                    stiffness_apply, stiffness_bands, uniform_grid)
from .problem import ProblemSpec, concentration_from_values


class GroundStateDomainError(ValueError):
    pass


class SolverFailure(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


def check_exponent(N: int, p: float) -> None:
    if p <= 1:
        raise GroundStateDomainError(f"need p > 1, got p={p:g}")
    if N >= 3 and not p < (N + 2) / (N - 2):
        lo, hi = N / (N - 2), (N + 2) / (N - 2)
        raise GroundStateDomainError(
            f"p={p:g} is not subcritical for N={N}: ground states need 1 < p < {hi:g}; "
            f"the fast-decay admissible range is ({lo:g}, {hi:g})")


def mountain_pass_exponent(p: float) -> float:
    """r with 1/r = 1/2 - 1/(p+1)."""
    return 2.0 * (p + 1.0) / (p - 1.0)


@dataclass
class GroundState:
    N: int
    p: float
    profile: RadialField
    w0: float
    energy_canonical: float
    sobolev: float
    r_mp: float
    gradient_plus_mass: float = 0.0
    power_integral: float = 0.0
    r_match: float = 0.0
    _dense: object = field(default=None, repr=False)
    _tail_coeff: float = field(default=0.0, repr=False)

    def evaluate(self, r):
        """w(r) and w'(r) for arbitrary radii (vectorised)."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        w = np.empty_like(r)
        dw = np.empty_like(r)
        near = r <= self.r_match
        if np.any(near):
            y = self._dense(r[near])
            w[near], dw[near] = y[0], y[1]
        far = ~near
        if np.any(far):
            w[far], dw[far] = _bessel_tail(self.N, self._tail_coeff, r[far])
        return w, dw

    def __call__(self, r):
        return self.evaluate(r)[0]

    def summary(self) -> dict:
        return {"N": self.N, "p": self.p, "w0": self.w0, "S": self.sobolev,
                "r_mp": self.r_mp, "energy": self.energy_canonical,
                "nehari_gradient_plus_mass": self.gradient_plus_mass,
                "nehari_power_integral": self.power_integral}


def _bessel_tail(N: int, c: float, r):
    """c r^{-nu} K_nu(r) and its derivative, nu = N/2 - 1."""
    nu = N / 2.0 - 1.0
    e = np.exp(-r)
    w = c * r ** (-nu) * kve(nu, r) * e
    dw = -c * r ** (-nu) * kve(nu + 1.0, r) * e
    return w, dw


_R0 = 1e-4


def _rhs(N: int, p: float):
    def f(r, y):
        w, dw = y[0], y[1]
        aw = abs(w)
        lap = w - aw ** (p - 1.0) * w
        rn = r ** (N - 1)
        return [dw, lap - (N - 1) / r * dw, rn * (dw * dw + w * w), rn * aw ** (p + 1.0)]
    return f


def _series_start(N: int, p: float, a: float, r0: float):
    c = (a - a**p) / (2.0 * N)
    vol = r0**N / N
    return [a + c * r0**2, 2.0 * c * r0, vol * a * a, vol * abs(a) ** (p + 1.0)]


def _shoot(N: int, p: float, a: float, r_max: float, rtol: float, dense: bool = False):
    """Integrate from the series start; classify as 'high', 'low' or None."""
    r0 = _R0
    def crosses_zero(r, y):
        return y[0]
    crosses_zero.terminal = True
    crosses_zero.direction = -1

    def turns_up(r, y):
        return y[1]
    turns_up.terminal = True
    turns_up.direction = 1

    sol = solve_ivp(_rhs(N, p), (r0, r_max), _series_start(N, p, a, r0), method="DOP853",
                    rtol=rtol, atol=1e-14, events=(crosses_zero, turns_up),
                    dense_output=dense)
    if sol.t_events[0].size:
        return "high", sol
    if sol.t_events[1].size:
        return "low", sol
    return None, sol


def _bracket(N: int, p: float, r_max: float, rtol: float):
    lo = 1.0
    hi = 2.0
    cap = 10.0 * max(2.0, (p + 1) / 2) ** (1.0 / (p - 1.0)) * 10.0 ** (N / 2)
    while True:
        kind, _ = _shoot(N, p, hi, r_max, rtol)
        if kind == "high":
            return lo, hi
        if kind == "low":
            lo = hi
        hi *= 1.5
        if hi > cap:
            raise SolverFailure(f"no shooting bracket found for N={N}, p={p:g}")


def _classify_batch(N: int, p: float, a, r_max: float, rtol: float, chunk: float = 4.0):
    """Classify many initial values at once: +1 'high', -1 'low', 0 undecided.

    All trajectories are integrated as one system in chunks of r. A high
    trajectory decreases until it crosses zero, while a low one turns up and
    never becomes negative, so the signs at the accepted steps decide the label.
    Integration stops once every trajectory is labelled.
    """
    a = np.asarray(a, dtype=float)
    m = a.size
    c = (a - a**p) / (2.0 * N)
    y = np.concatenate([a + c * _R0**2, 2.0 * c * _R0])
    label = np.zeros(m, dtype=int)

    def f(r, y):
        w, dw = y[:m], y[m:]
        return np.concatenate([dw, w - np.abs(w) ** (p - 1.0) * w - (N - 1) / r * dw])

    r0 = _R0
    while r0 < r_max and np.any(label == 0):
        r1 = min(r0 + chunk, r_max)
        sol = solve_ivp(f, (r0, r1), y, method="DOP853", rtol=rtol, atol=1e-14)
        if sol.status < 0:
            break
        W, DW = sol.y[:m], sol.y[m:]
        open_ = label == 0
        label[open_ & np.any(W < 0, axis=1)] = 1
        label[open_ & (label == 0) & np.any((DW > 0) & (W > 0), axis=1)] = -1
        y = sol.y[:, -1]
        r0 = r1
    return label


def solve_canonical(N: int, p: float, tol: float = 1e-13, r_max: float = 40.0,
                    rtol: float = 1e-12, n_profile: int = 4000,
                    agreement: float = 1e-7) -> GroundState:
    """Unique positive radial solution of -Lap w + w = w^p by shooting."""
    check_exponent(N, p)
    lo, hi = _bracket(N, p, r_max, 1e-8)
    while hi - lo > tol * hi:
        # multisection: 48 interior points per pass; integration error only has
        # to stay below the bracket width for the labels to be right
        mids = np.linspace(lo, hi, 50)[1:-1]
        mids = mids[(mids > lo) & (mids < hi)]
        if mids.size == 0:
            break
        step_tol = min(1e-8, max(rtol, 1e-3 * (hi - lo) / hi))
        label = _classify_batch(N, p, mids, r_max, step_tol)
        if np.any(label == 0):
            # an unlabelled trajectory stays positive and decreasing to r_max
            k = int(np.nonzero(label == 0)[0][0])
            lo = hi = float(mids[k])
            break
        high = np.nonzero(label == 1)[0]
        low = np.nonzero(label == -1)[0]
        if low.size:
            lo = float(mids[low[-1]])
        if high.size:
            hi = float(mids[high[0]])
        if low.size and high.size and low[-1] > high[0]:
            raise SolverFailure("inconsistent shooting labels; tighten rtol")
    _, sol_lo = _shoot(N, p, lo, r_max, rtol, dense=True)
    _, sol_hi = _shoot(N, p, hi, r_max, rtol, dense=True)
    a = hi if hi == lo else 0.5 * (lo + hi)
    _, sol = _shoot(N, p, a, r_max, rtol, dense=True)

    # trusted range: bracketing trajectories agree to the requested relative gap
    r_end = min(sol_lo.t[-1], sol_hi.t[-1], sol.t[-1])
    rs = np.linspace(_R0, r_end, 20_001)
    wl, wh, wm = sol_lo.sol(rs)[0], sol_hi.sol(rs)[0], sol.sol(rs)[0]
    gap = np.abs(wh - wl) / np.maximum(np.abs(wm), 1e-300)
    ok = (gap <= agreement) & (wm > 0) & (sol.sol(rs)[1] <= 0)
    bad = np.nonzero(~ok)[0]
    i_c = bad[0] - 1 if bad.size else rs.size - 1
    r_c = float(rs[max(i_c, 1)])
    y_c = sol.sol(r_c)
    nu = N / 2.0 - 1.0
    c_tail = y_c[0] / (r_c ** (-nu) * kve(nu, r_c) * math.exp(-r_c))

    def dense(r):
        out = sol.sol(np.maximum(r, _R0))
        core = r < _R0
        if np.any(core):
            c = (a - a**p) / (2.0 * N)
            out[0, core] = a + c * r[core] ** 2
            out[1, core] = 2.0 * c * r[core]
        return out

    gs = GroundState(N=N, p=p, profile=None, w0=float(a), energy_canonical=0.0,
                     sobolev=0.0, r_mp=mountain_pass_exponent(p), r_match=r_c,
                     _dense=dense, _tail_coeff=float(c_tail))

    # energy integrals: ODE quadrature up to r_c, analytic tail beyond
    area = sphere_area(N)
    def t1(r):
        w, dw = _bessel_tail(N, c_tail, np.array([r]))
        return r ** (N - 1) * (dw[0] ** 2 + w[0] ** 2)

    def t2(r):
        w, _ = _bessel_tail(N, c_tail, np.array([r]))
        return r ** (N - 1) * abs(w[0]) ** (p + 1)

    tail1 = quad(t1, r_c, np.inf, epsabs=0, epsrel=1e-12, limit=200)[0]
    tail2 = quad(t2, r_c, np.inf, epsabs=0, epsrel=1e-12, limit=200)[0]
    A = area * (y_c[2] + tail1)
    B = area * (y_c[3] + tail2)
    gs.gradient_plus_mass = float(A)
    gs.power_integral = float(B)
    gs.energy_canonical = float(0.5 * A - B / (p + 1.0))

    grid = uniform_grid(r_max, n_profile, N)
    gs.profile = RadialField(grid, gs(grid.nodes))
    gs.sobolev = sobolev_constant(gs)
    return gs


def sobolev_constant(gs: GroundState, n: int = 8000, r_end: float | None = None) -> float:
    """S_{p+1} from composite Simpson quadrature of the profile."""
    N, p = gs.N, gs.p
    r_end = r_end or gs.profile.grid.r_max
    r = np.linspace(0.0, r_end, n + 1)
    w, dw = gs.evaluate(r)
    rn = r ** (N - 1)
    area = sphere_area(N)
    grad_mass = area * simpson(rn * (dw**2 + w**2), x=r)
    power = area * simpson(rn * np.abs(w) ** (p + 1), x=r)
    return float(math.sqrt(grad_mass / power ** (2.0 / (p + 1.0))))


def rescale_to_limit(gs: GroundState, V0: float, K0: float, grid: RadialGrid | None = None,
                     center: float = 0.0, eps: float = 1.0) -> RadialField:
    """v(x) = (V0/K0)^{1/(p-1)} w(sqrt(V0) (|x| - center) / eps) sampled on a grid.

    With eps = 1 and center = 0 this solves -Lap v + V0 v = K0 v^p.
    """
    if V0 <= 0 or K0 <= 0:
        raise GroundStateDomainError("V0 and K0 must be positive")
    grid = grid or gs.profile.grid
    amp = (V0 / K0) ** (1.0 / (gs.p - 1.0))
    y = math.sqrt(V0) * np.abs(grid.nodes - center) / eps
    return RadialField(grid, amp * gs(y))


def limit_energy_value(gs: GroundState, A: float) -> float:
    return gs.sobolev ** gs.r_mp / gs.r_mp * A


def limit_energy(spec: ProblemSpec, gs: GroundState, x_star) -> float:
    """c_{x*} = S^{r}/r * A(x*)."""
    A = concentration_from_values(spec.V(x_star), spec.K(x_star), spec.N, spec.p)
    return limit_energy_value(gs, A)


def limit_functional(field: RadialField, V0: float, K0: float, p: float) -> float:
    """F(v) = 1/2 int |grad v|^2 + V0 v^2 - K0/(p+1) int |v|^{p+1} by grid quadrature."""
    from .grids import dirichlet_energy
    v = field.values
    quad_part = dirichlet_energy(field, far_field="neumann") + V0 * integrate(field.grid, v * v)
    return 0.5 * quad_part - K0 / (p + 1.0) * integrate(field.grid, np.abs(v) ** (p + 1.0))


@dataclass
class DecayReport:
    C: float
    holds: bool
    tail_log_slope: float


def check_exponential_decay(field: RadialField, rate: float, r_min: float | None = None,
                            slack: float = 1e-3) -> DecayReport:
    """Smallest C with v <= C (1+r^2)^{(1-N)/4} exp(-rate r) on [r_min, R].

    holds requires a finite C and a log-residual log v - log envelope that
    levels off: its least-squares slope over the far half of the window is
    at most slack. A decay slower than rate gives a slope near the rate gap.
    """
    r = field.r
    v = field.values
    N = field.grid.dim
    r_min = r_min if r_min is not None else 0.5 * r[-1]
    sel = (r >= r_min) & (v > 0)
    if np.count_nonzero(sel) < 4:
        return DecayReport(C=math.inf, holds=False, tail_log_slope=math.inf)
    rs, vs = r[sel], v[sel]
    log_env = (1.0 - N) / 4.0 * np.log1p(rs**2) - rate * rs
    resid = np.log(vs) - log_env
    C = float(np.exp(resid.max()))
    far = rs >= 0.5 * (rs[0] + rs[-1])
    slope = float(np.polyfit(rs[far], resid[far], 1)[0])
    return DecayReport(C=C, holds=bool(np.isfinite(C) and slope <= slack), tail_log_slope=slope)


def _newton_canonical(grid: RadialGrid, p: float, w: np.ndarray, tol: float = 1e-13,
                      max_iter: int = 50) -> np.ndarray:
    m = grid.mass
    diag_s, off = stiffness_bands(grid, "neumann")
    for _ in range(max_iter):
        F = stiffness_apply(grid, w, "neumann") + m * (w - np.abs(w) ** (p - 1) * w)
        if np.max(np.abs(F / m)) < tol * max(1.0, np.max(np.abs(w))):
            break
        ab = np.zeros((3, grid.n))
        ab[0, 1:] = off
        ab[1] = diag_s + m * (1.0 - p * np.abs(w) ** (p - 1))
        ab[2, :-1] = off
        w = w - solve_banded((1, 1), ab, F)
    return w


def _petviashvili(grid: RadialGrid, p: float, iters: int = 400, tol: float = 1e-12) -> np.ndarray:
    r = grid.nodes
    m = grid.mass
    w = 2.0 * np.exp(-0.5 * r * r)
    diag_s, off = stiffness_bands(grid, "neumann")
    ab = np.zeros((3, grid.n))
    ab[0, 1:] = off
    ab[1] = diag_s + m
    ab[2, :-1] = off
    gamma = p / (p - 1.0)
    for _ in range(iters):
        nl = np.abs(w) ** (p - 1) * w
        Lw = stiffness_apply(grid, w, "neumann") + m * w
        factor = np.dot(Lw, w) / np.dot(m * nl, w)
        new = factor**gamma * solve_banded((1, 1), ab, m * nl)
        if np.max(np.abs(new - w)) < tol * np.max(np.abs(new)):
            return new
        w = new
    return w


def grid_ground_state(N: int, p: float, R: float = 30.0, n: int = 15_000,
                      richardson: bool = True) -> RadialField:
    """Ground state from the finite-volume discretisation (independent of shooting).

    Returns the field on the n-interval uniform grid; with richardson=True the
    nodal values are extrapolated from grids with n and 2n intervals.
    """
    check_exponent(N, p)
    coarse = uniform_grid(R, n, N)
    wc = _newton_canonical(coarse, p, _petviashvili(coarse, p))
    if not richardson:
        return RadialField(coarse, wc)
    fine = uniform_grid(R, 2 * n, N)
    start = np.interp(fine.nodes, coarse.nodes, wc)
    wf = _newton_canonical(fine, p, start)
    return RadialField(coarse, (4.0 * wf[::2] - wc) / 3.0)


def ground_state_residual(gs: GroundState, grid: RadialGrid | None = None) -> np.ndarray:
    """Discrete residual -Lap w + w - w^p of the profile on a grid."""
    field = gs.profile if grid is None else RadialField(grid, gs(grid.nodes))
    return (apply_operator(field, 1.0, 1.0, far_field="neumann").values
            - np.abs(field.values) ** gs.p)
