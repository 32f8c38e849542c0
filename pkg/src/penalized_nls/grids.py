"""Graded radial grids and the discrete radial operator.

The Laplacian is discretised in flux (finite-volume) form. The flux between
nodes i and i+1 uses the conductance 1 / int_{r_i}^{r_{i+1}} r^{1-N} dr, so
r^{2-N} is discretely harmonic; the first interval (touching r = 0) uses the
midpoint conductance. Each node owns a dual cell of exact volume
int r^{N-1} dr whose edges are placed so that the flux of r^2 is exact too,
hence constants, r^2 and r^{2-N} are reproduced without truncation error.
The stiffness matrix is symmetric, so the operator is self-adjoint in the
lumped mass inner product and summation by parts holds exactly.

All integrals carry the sphere area |S^{N-1}|, so they are integrals over
R^N of radial functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np
from scipy.optimize import brentq


class GridConfigError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


class UnsupportedCaseError(ValueError):
    pass


def sphere_area(N: int) -> float:
    return 2.0 * math.pi ** (N / 2) / math.gamma(N / 2)


@dataclass(frozen=True, eq=False)
class RadialGrid:
    nodes: np.ndarray
    core_end: float
    growth: float
    dim: int

    def __post_init__(self):
        r = np.asarray(self.nodes, dtype=float)
        r.setflags(write=False)
        object.__setattr__(self, "nodes", r)
        if r[0] != 0.0 or np.any(np.diff(r) <= 0):
            raise GridConfigError("nodes must start at 0 and increase strictly")

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def r_max(self) -> float:
        return float(self.nodes[-1])

    def same_as(self, other: "RadialGrid") -> bool:
        return self is other or (self.dim == other.dim and self.n == other.n
                                 and np.array_equal(self.nodes, other.nodes))

    @cached_property
    def _interval_inverse_moment(self) -> np.ndarray:
        """int_{r_i}^{r_{i+1}} r^{1-N} dr for intervals off the origin."""
        a, b = self.nodes[1:-1], self.nodes[2:]
        N = self.dim
        t = np.log1p((b - a) / a)
        if N == 1:
            return b - a
        if N == 2:
            return t
        return -(a ** (2.0 - N)) * np.expm1((2.0 - N) * t) / (N - 2)

    @cached_property
    def conductance(self) -> np.ndarray:
        r = self.nodes
        N = self.dim
        out = np.empty(self.n - 1)
        out[0] = (0.5 * r[1]) ** (N - 1) / r[1]
        out[1:] = 1.0 / self._interval_inverse_moment
        out.setflags(write=False)
        return out

    @cached_property
    def edges(self) -> np.ndarray:
        """Dual-cell edges; placed so that r^2 and r^{2-N} are discretely exact."""
        r = self.nodes
        N = self.dim
        a, b = r[1:-1], r[2:]
        inner_edges = ((b - a) * (b + a) / (2.0 * self._interval_inverse_moment)) ** (1.0 / N)
        e = np.concatenate([[0.0, 0.5 * r[1]], inner_edges, [r[-1]]])
        e.setflags(write=False)
        return e

    @cached_property
    def mass(self) -> np.ndarray:
        e = self.edges
        N = self.dim
        m = (e[1:] ** N - e[:-1] ** N) / N
        m.setflags(write=False)
        return m

    @cached_property
    def inverse_square_mass(self) -> np.ndarray:
        """Exact cell integrals of r^{N-3}, used for the weight u^2/r^2."""
        N = self.dim
        edges = self.edges
        if N == 2:
            with np.errstate(divide="ignore"):
                out = np.log(edges[1:]) - np.log(edges[:-1])
        elif N == 1:
            with np.errstate(divide="ignore"):
                out = 1.0 / edges[:-1] - 1.0 / edges[1:]
        else:
            out = (edges[1:] ** (N - 2) - edges[:-1] ** (N - 2)) / (N - 2)
        out.setflags(write=False)
        return out

    def exterior_coefficient(self, far_field: str) -> float:
        """Boundary stiffness for the decaying harmonic continuation beyond R_max."""
        if far_field == "harmonic" and self.dim >= 3:
            return (self.dim - 2) * self.r_max ** (self.dim - 2)
        return 0.0

    def describe(self) -> dict:
        return {"n_nodes": self.n, "core_end": self.core_end, "growth": self.growth,
                "R_max": self.r_max, "dim": self.dim}


def build_grid(core_end: float, n_core: int, R_max: float, dim: int = 3,
               growth: float = 1.02) -> RadialGrid:
    """Uniform core on [0, core_end] followed by a geometric far field.

    The stretch factor is adjusted (from the requested value) so that the far
    field lands exactly on R_max with a constant spacing ratio.
    """
    if core_end <= 0 or n_core < 64 or not R_max > core_end:
        raise GridConfigError("need core_end > 0, n_core >= 64 and R_max > core_end")
    if growth <= 1:
        raise GridConfigError("growth must exceed 1")
    h = core_end / n_core
    core = np.linspace(0.0, core_end, n_core + 1)
    span = R_max - core_end
    # number of geometric steps for the requested growth, then exact ratio
    m = max(1, int(round(math.log1p(span * (growth - 1) / h) / math.log(growth))))
    if span <= m * h:
        q = 1.0
        m = max(1, int(round(span / h)))
        steps = np.full(m, span / m)
    else:
        q = brentq(lambda x: h * x * (x**m - 1) / (x - 1) - span, 1.0 + 1e-12, 2.0 * growth,
                   xtol=1e-15)
        steps = h * q ** np.arange(1, m + 1)
        steps *= span / steps.sum()
    far = core_end + np.cumsum(steps)
    far[-1] = R_max
    return RadialGrid(nodes=np.concatenate([core, far]), core_end=float(core_end),
                      growth=float(q), dim=int(dim))


def uniform_grid(R: float, n: int, dim: int) -> RadialGrid:
    return RadialGrid(nodes=np.linspace(0.0, R, n + 1), core_end=float(R), growth=1.0,
                      dim=int(dim))


@dataclass(frozen=True, eq=False)
class RadialField:
    grid: RadialGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.nodes.shape:
            raise GridMismatchError("values do not match the grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def r(self) -> np.ndarray:
        return self.grid.nodes

    def _check(self, other: "RadialField"):
        if not self.grid.same_as(other.grid):
            raise GridMismatchError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, RadialField):
            self._check(other)
            return RadialField(self.grid, self.values + other.values)
        return RadialField(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, RadialField):
            self._check(other)
            return RadialField(self.grid, self.values - other.values)
        return RadialField(self.grid, self.values - other)

    def __mul__(self, c):
        return RadialField(self.grid, self.values * c)

    __rmul__ = __mul__

    def to_csv(self, path, header: str = "r,value") -> None:
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for a, b in zip(self.r, self.values):
                fh.write(f"{a:.17g},{b:.17g}\n")


def sample(V, r) -> np.ndarray:
    """Potential, callable, scalar or array sampled at radii r."""
    if hasattr(V, "radial"):
        return np.asarray(V.radial(r), dtype=float) * np.ones_like(r)
    if callable(V):
        return np.asarray(V(r), dtype=float) * np.ones_like(r)
    return np.asarray(V, dtype=float) * np.ones_like(r)


def stiffness_apply(grid: RadialGrid, u: np.ndarray, far_field: str = "harmonic") -> np.ndarray:
    """S u, the symmetric flux stiffness (without the 1/mass scaling)."""
    c = grid.conductance
    flux = c * np.diff(u)
    out = np.zeros_like(u)
    out[:-1] -= flux
    out[1:] += flux
    out[-1] += grid.exterior_coefficient(far_field) * u[-1]
    return out


def stiffness_bands(grid: RadialGrid, far_field: str = "harmonic"):
    """(diagonal, off-diagonal) of the symmetric stiffness matrix."""
    c = grid.conductance
    diag = np.zeros(grid.n)
    diag[:-1] += c
    diag[1:] += c
    diag[-1] += grid.exterior_coefficient(far_field)
    return diag, -c


def laplacian_values(grid: RadialGrid, u: np.ndarray, far_field: str = "harmonic") -> np.ndarray:
    """Discrete radial Laplacian u'' + (N-1)/r u' at every node."""
    return -stiffness_apply(grid, u, far_field) / grid.mass


def apply_operator(field: RadialField, eps: float, V, far_field: str = "harmonic") -> RadialField:
    """-eps^2 (u'' + (N-1)/r u') + V u, nodewise."""
    u = field.values
    return RadialField(field.grid, -eps**2 * laplacian_values(field.grid, u, far_field)
                       + sample(V, field.r) * u)


def integrate(grid: RadialGrid, f) -> float:
    """int_{R^N} f(|x|) dx with the lumped nodal weights."""
    return sphere_area(grid.dim) * float(np.dot(grid.mass, f))


def inner(u: RadialField, v: RadialField) -> float:
    u._check(v)
    return integrate(u.grid, u.values * v.values)


def dirichlet_energy(field: RadialField, far_field: str = "harmonic") -> float:
    """int |grad u|^2 (plus the exterior harmonic tail when far_field='harmonic')."""
    g = field.grid
    d = np.diff(field.values)
    bulk = float(np.dot(g.conductance, d * d))
    ext = g.exterior_coefficient(far_field) * field.values[-1] ** 2
    return sphere_area(g.dim) * (bulk + ext)


def norm_eps(field: RadialField, eps: float, V, far_field: str = "harmonic") -> float:
    """sqrt(int eps^2 |grad u|^2 + V u^2)."""
    pot = integrate(field.grid, sample(V, field.r) * field.values**2)
    return math.sqrt(eps**2 * dirichlet_energy(field, far_field) + pot)


@dataclass
class QuadraticFormReport:
    form_value: float
    hardy_weight_integral: float
    ratio: float
    bound: float


def hardy_rayleigh(field: RadialField, params, N: int, lambda_region=None) -> QuadraticFormReport:
    """Rayleigh quotient of int |grad u|^2 - H u^2 against the Hardy weight.

    N >= 3: weight u^2/|x|^2, bound (N-2)^2/4 - kappa/log(rho/rho0)^{1+beta}.
    N = 2: weight u^2/(|x|^2 log^2(|x|/rho0)) for fields vanishing on B(0, rho0),
    bound 1/4 - kappa/log(rho/rho0)^beta.
    Without lambda_region, H is taken on all of |x| > rho (the smallest
    admissible Lambda, B(0, rho)).
    """
    from .penalization import form_margin, hardy_potential_radial
    from .problem import DomainLambda

    g = field.grid
    if g.dim != N:
        raise GridMismatchError("grid dimension differs from N")
    lam = lambda_region if lambda_region is not None else DomainLambda(params.rho)
    r = field.r
    u = field.values
    H = np.zeros_like(r)
    pos = r > params.rho0
    H[pos] = hardy_potential_radial(params, lam, N, r[pos])
    grad = dirichlet_energy(field, far_field="dirichlet")
    if N >= 3:
        if u[-1] != 0.0:
            raise UnsupportedCaseError("field must vanish at R_max")
        weight = sphere_area(N) * float(np.dot(g.inverse_square_mass, u * u))
    elif N == 2:
        support = r[np.abs(u) > 0]
        if support.size and (support.min() <= params.rho0 or u[-1] != 0.0):
            raise UnsupportedCaseError("N = 2 needs support outside B(0, rho0) and u(R_max) = 0")
        w = np.zeros_like(r)
        w[pos] = 1.0 / (r[pos] ** 2 * np.log(r[pos] / params.rho0) ** 2)
        weight = integrate(g, w * u * u)
    else:
        raise UnsupportedCaseError("Hardy quotient needs N >= 2")
    form = grad - integrate(g, H * u * u)
    ratio = form / weight if weight > 0 else math.nan
    return QuadraticFormReport(form_value=form, hardy_weight_integral=weight, ratio=ratio,
                               bound=form_margin(params, N))
