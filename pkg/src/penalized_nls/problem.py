"""Problem data for -eps^2 Lap u + V u = K u^p with radial potentials.

Holds the dimension, exponent, potentials and the region Lambda, evaluates
the concentration function A(x) = V^{(p+1)/(p-1) - N/2} / K^{2/(p-1)} and
checks the standing growth and localisation hypotheses numerically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar


class DimensionUnsupportedError(ValueError):
    pass


class UndefinedConcentrationError(ValueError):
    """A(x) needs V(x) > 0 and K(x) > 0."""


class InvalidRegionError(ValueError):
    pass


def smoothstep5(t):
    """C^2 ramp from 0 (t <= 0) to 1 (t >= 1)."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def _radius(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return np.abs(x)
    return np.linalg.norm(x, axis=-1)


@dataclass(frozen=True)
class Potential:
    """Nonnegative radial potential.

    Families:
      constant      value
      polynomial    poly = [c0, c1, ...] in r
      plateau       poly(r) * (1 - smoothstep((r - r_on) / (r_off - r_on)))
      power_decay   m * (1 + r)^(-alpha)
      tabulated     piecewise linear through (r, values), constant beyond
    """

    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        known = {"constant", "polynomial", "plateau", "power_decay", "tabulated"}
        if self.family not in known:
            raise ValueError(f"unknown potential family {self.family!r}")
        if self.family == "plateau" and not self.params["r_on"] < self.params["r_off"]:
            raise ValueError("plateau needs r_on < r_off")

    # constructors -----------------------------------------------------
    @classmethod
    def constant(cls, value: float) -> "Potential":
        return cls("constant", {"value": float(value)})

    @classmethod
    def polynomial(cls, coeffs: Sequence[float]) -> "Potential":
        return cls("polynomial", {"poly": [float(c) for c in coeffs]})

    @classmethod
    def plateau(cls, coeffs: Sequence[float], r_on: float, r_off: float) -> "Potential":
        return cls("plateau", {"poly": [float(c) for c in coeffs],
                               "r_on": float(r_on), "r_off": float(r_off)})

    @classmethod
    def power_decay(cls, m: float, alpha: float) -> "Potential":
        return cls("power_decay", {"m": float(m), "alpha": float(alpha)})

    @classmethod
    def tabulated(cls, r: Sequence[float], values: Sequence[float]) -> "Potential":
        return cls("tabulated", {"r": [float(v) for v in r],
                                 "values": [float(v) for v in values]})

    # evaluation -------------------------------------------------------
    def radial(self, r):
        """Evaluate at radius (scalar or array)."""
        r = np.asarray(r, dtype=float)
        p = self.params
        if self.family == "constant":
            out = np.full_like(r, p["value"])
        elif self.family == "polynomial":
            out = np.polynomial.polynomial.polyval(r, p["poly"])
        elif self.family == "plateau":
            t = (r - p["r_on"]) / (p["r_off"] - p["r_on"])
            out = np.polynomial.polynomial.polyval(r, p["poly"]) * (1.0 - smoothstep5(t))
        elif self.family == "power_decay":
            out = p["m"] * (1.0 + r) ** (-p["alpha"])
        else:
            out = np.interp(r, p["r"], p["values"])
        if out.ndim == 0:
            return float(out)
        return out

    def __call__(self, x):
        return self.radial(_radius(x))

    def support_radius(self) -> float:
        """Radius beyond which the potential vanishes identically (inf if never)."""
        if self.family == "plateau":
            return self.params["r_off"]
        if self.family == "constant" and self.params["value"] == 0.0:
            return 0.0
        if self.family == "tabulated" and self.params["values"][-1] == 0.0:
            vals = np.asarray(self.params["values"])
            nz = np.nonzero(vals)[0]
            return self.params["r"][nz[-1] + 1] if nz.size else 0.0
        return np.inf

    def to_dict(self) -> dict:
        return {"family": self.family, **self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "Potential":
        d = dict(d)
        family = d.pop("family")
        if family == "constant":
            return cls.constant(d["value"])
        if family == "polynomial":
            return cls.polynomial(d["poly"])
        if family == "plateau":
            return cls.plateau(d["poly"], d["r_on"], d["r_off"])
        if family == "power_decay":
            return cls.power_decay(d["m"], d["alpha"])
        if family == "tabulated":
            return cls.tabulated(d["r"], d["values"])
        raise ValueError(f"unknown potential family {family!r}")


@dataclass(frozen=True)
class DomainLambda:
    """Open ball B(0, r_outer) (r_inner = 0) or annulus r_inner < |x| < r_outer."""

    r_outer: float
    r_inner: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.r_inner < self.r_outer < np.inf:
            raise InvalidRegionError("need 0 <= r_inner < r_outer < inf")

    @property
    def is_ball(self) -> bool:
        return self.r_inner == 0.0

    def contains_radius(self, r):
        r = np.asarray(r, dtype=float)
        inside = r < self.r_outer
        if not self.is_ball:
            inside &= r > self.r_inner
        return inside

    def indicator(self, x):
        return self.contains_radius(_radius(x)).astype(float)

    def boundary_radii(self) -> list[float]:
        return [self.r_outer] if self.is_ball else [self.r_inner, self.r_outer]

    def inradius_at_origin(self) -> float:
        """Largest rho with B(0, rho) inside Lambda (0 if the origin is outside)."""
        return self.r_outer if self.is_ball else 0.0

    def distance_to_boundary(self, r: float) -> float:
        return min(abs(r - b) for b in self.boundary_radii())

    def to_dict(self) -> dict:
        if self.is_ball:
            return {"kind": "ball", "R": self.r_outer}
        return {"kind": "annulus", "r1": self.r_inner, "r2": self.r_outer}

    @classmethod
    def from_dict(cls, d: dict) -> "DomainLambda":
        if d.get("kind", "ball") == "ball":
            return cls(float(d["R"]))
        return cls(float(d["r2"]), float(d["r1"]))


@dataclass(frozen=True)
class ProblemSpec:
    N: int
    p: float
    epsilons: tuple
    V: Potential
    K: Potential
    lambda_region: DomainLambda
    sigma: float
    M: float
    fast_decay: bool = True

    def __post_init__(self):
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if self.p <= 1:
            raise ValueError("p must exceed 1")
        if any(e <= 0 for e in self.epsilons):
            raise ValueError("all eps must be positive")
        if self.M <= 0:
            raise ValueError("M must be positive")
        if self.N >= 3:
            lo, hi = admissible_p_range(self.N)
            if not self.p < hi:
                raise ValueError(f"p must be subcritical, p < {hi:g}")
            if self.fast_decay and not lo < self.p:
                raise ValueError(f"p must lie in ({lo:g}, {hi:g}) for fast decay")
        if not self.sigma < sigma_bound(self.N, self.p):
            raise ValueError(
                f"sigma must be < {sigma_bound(self.N, self.p):g} for N={self.N}, p={self.p:g}")

    def to_dict(self) -> dict:
        return {"N": self.N, "p": self.p, "epsilons": list(self.epsilons),
                "V": self.V.to_dict(), "K": self.K.to_dict(),
                "Lambda": self.lambda_region.to_dict(),
                "sigma": self.sigma, "M": self.M, "fast_decay": self.fast_decay}

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        return cls(N=int(d["N"]), p=float(d["p"]), epsilons=tuple(d.get("epsilons", ())),
                   V=Potential.from_dict(d["V"]), K=Potential.from_dict(d["K"]),
                   lambda_region=DomainLambda.from_dict(d["Lambda"]),
                   sigma=float(d["sigma"]), M=float(d["M"]),
                   fast_decay=bool(d.get("fast_decay", True)))


def admissible_p_range(N: int) -> tuple[float, float]:
    """Open interval of exponents for which fast-decay existence holds (N >= 3)."""
    if N < 3:
        raise DimensionUnsupportedError(
            "admissible range is defined for N >= 3; for N = 2 any p > 1 is allowed")
    return N / (N - 2), (N + 2) / (N - 2)


def sigma_bound(N: int, p: float) -> float:
    """Strict upper bound on the growth exponent of K."""
    return (N - 2) * p - N if N >= 3 else -2.0


def concentration_exponent(N: int, p: float) -> float:
    return (p + 1) / (p - 1) - N / 2


def concentration_from_values(v, k, N: int, p: float):
    v = np.asarray(v, dtype=float)
    k = np.asarray(k, dtype=float)
    if np.any(v <= 0) or np.any(k <= 0):
        raise UndefinedConcentrationError("A(x) requires V(x) > 0 and K(x) > 0")
    out = v ** concentration_exponent(N, p) / k ** (2.0 / (p - 1))
    return float(out) if out.ndim == 0 else out


def eval_concentration(spec: ProblemSpec, x) -> float:
    return concentration_from_values(spec.V(x), spec.K(x), spec.N, spec.p)


@dataclass
class AssumptionKReport:
    holds: bool
    worst_ratio: float
    holds_log_variant: bool
    worst_ratio_log_variant: float


def check_assumption_K(spec: ProblemSpec, sample_radii: Sequence[float],
                       beta: float = 1.0) -> AssumptionKReport:
    """Sampled check of K <= M (1+r)^sigma, plus the log-corrected variant.

    The variant bound is M (1+r)^{(N-2)p-N} / log(r+3)^{1+beta}.
    """
    r = np.asarray(sample_radii, dtype=float)
    if r.size == 0 or np.any(r <= 0):
        raise ValueError("sample_radii must be nonempty and positive")
    k = np.asarray(spec.K.radial(r), dtype=float)
    bound = spec.M * (1.0 + r) ** spec.sigma
    ratio = k / bound
    crit = sigma_bound(spec.N, spec.p)
    bound_log = spec.M * (1.0 + r) ** crit / np.log(r + 3.0) ** (1.0 + beta)
    ratio_log = k / bound_log
    worst = float(ratio.max())
    worst_log = float(ratio_log.max())
    return AssumptionKReport(holds=worst <= 1.0 and spec.sigma < crit, worst_ratio=worst,
                             holds_log_variant=worst_log <= 1.0,
                             worst_ratio_log_variant=worst_log)


@dataclass
class AssumptionAReport:
    holds: bool
    inf_interior: float
    inf_boundary: float
    argmin: float
    resolution: float


def check_assumption_A(spec: ProblemSpec, n_samples: int = 10_000,
                       xtol: float = 1e-10) -> AssumptionAReport:
    """Compare inf of A over Lambda with inf over its boundary.

    Radial sampling of the closure followed by bounded golden-section style
    refinement around the best sample. The returned argmin is a radius.
    """
    lam = spec.lambda_region
    N, p = spec.N, spec.p
    r = np.linspace(lam.r_inner, lam.r_outer, n_samples + 1)
    h = r[1] - r[0]
    a = concentration_from_values(spec.V.radial(r), spec.K.radial(r), N, p)

    def A(t):
        return concentration_from_values(spec.V.radial(t), spec.K.radial(t), N, p)

    inf_boundary = min(A(b) for b in lam.boundary_radii())
    interior = slice(1, -1) if not lam.is_ball else slice(0, -1)
    idx = np.arange(r.size)[interior]
    i = idx[np.argmin(a[interior])]
    lo, hi = r[max(i - 1, 0)], r[min(i + 1, r.size - 1)]
    best_r, best_a = r[i], a[i]
    if hi > lo:
        res = minimize_scalar(A, bounds=(lo, hi), method="bounded",
                              options={"xatol": xtol})
        if res.fun < best_a:
            best_r, best_a = float(res.x), float(res.fun)
    dist = lam.distance_to_boundary(best_r)
    holds = bool(0.0 < best_a < inf_boundary and dist > h)
    return AssumptionAReport(holds=holds, inf_interior=float(best_a),
                             inf_boundary=float(inf_boundary), argmin=float(best_r),
                             resolution=float(h))


def inf_over_lambda(spec: ProblemSpec, values_fn, n_samples: int = 10_000) -> float:
    """inf over the closure of Lambda of a radial function, by dense sampling."""
    lam = spec.lambda_region
    r = np.linspace(lam.r_inner, lam.r_outer, n_samples + 1)
    return float(np.min(values_fn(r)))
