"""Hardy-type penalization potential and the truncated nonlinearity.

Outside Lambda the nonlinearity K s^p is capped by eps^2 H(x) s, where

    H(x) = kappa (1 - chi_Lambda(x)) / (|x|^2 log(|x|/rho0)^q),

q = 1 + beta for N >= 3 and q = 2 + beta for N = 2. kappa is kept below the
Hardy constant so that -Lap - H keeps a positive quadratic form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .problem import DomainLambda, InvalidRegionError, ProblemSpec


class InconsistentRegionError(ValueError):
    pass


class FormNotPositiveError(ValueError):
    """kappa violates the Hardy bound; the comparison principle is unavailable."""


@dataclass(frozen=True)
class PenalizationParams:
    kappa: float
    beta: float
    rho0: float
    rho: float

    def __post_init__(self):
        if self.kappa < 0 or min(self.beta, self.rho0, self.rho) <= 0:
            raise ValueError("need kappa >= 0 and positive beta, rho0, rho")
        if not self.rho0 < self.rho:
            raise ValueError("need rho0 < rho")

    @property
    def log_ratio(self) -> float:
        return float(np.log(self.rho / self.rho0))

    def to_dict(self) -> dict:
        return {"kappa": self.kappa, "beta": self.beta, "rho0": self.rho0, "rho": self.rho}

    @classmethod
    def from_dict(cls, d: dict) -> "PenalizationParams":
        return cls(float(d["kappa"]), float(d["beta"]), float(d["rho0"]), float(d["rho"]))


def log_exponent(N: int, beta: float) -> float:
    return 2.0 + beta if N == 2 else 1.0 + beta


def kappa_bound(N: int, beta: float, log_ratio: float) -> float:
    """Supremum of admissible kappa for the given log(rho/rho0)."""
    if N == 2:
        return 0.25 * log_ratio**beta
    return (N - 2) ** 2 / 4.0 * log_ratio ** (1.0 + beta)


def form_margin(params: PenalizationParams, N: int) -> float:
    """Hardy constant minus the kappa term; the quadratic form bound."""
    if N == 2:
        return 0.25 - params.kappa / params.log_ratio**params.beta
    return (N - 2) ** 2 / 4.0 - params.kappa / params.log_ratio ** (1.0 + params.beta)


def validate_params(params: PenalizationParams, lam: DomainLambda, N: int) -> None:
    if not params.rho <= lam.inradius_at_origin():
        raise InvalidRegionError(
            f"B(0, {params.rho:g}) must lie in Lambda (inradius {lam.inradius_at_origin():g})")
    if form_margin(params, N) <= 0:
        raise FormNotPositiveError(
            f"kappa={params.kappa:g} exceeds the Hardy bound "
            f"{kappa_bound(N, params.beta, params.log_ratio):g}")


def select_params(spec: ProblemSpec, safety: float = 0.5, beta: float = 1.0) -> PenalizationParams:
    """Default parameters: rho half the inradius, rho/rho0 = e, kappa a fraction of the bound."""
    if not 0.0 < safety <= 1.0:
        raise ValueError("safety must lie in (0, 1]")
    inradius = spec.lambda_region.inradius_at_origin()
    if inradius <= 0:
        raise InvalidRegionError("Lambda has zero inradius around the origin")
    rho = 0.5 * inradius
    rho0 = rho / np.e
    kappa = safety * kappa_bound(spec.N, beta, 1.0)
    return PenalizationParams(kappa=kappa, beta=beta, rho0=rho0, rho=rho)


def hardy_potential_radial(params: PenalizationParams, lam: DomainLambda, N: int, r):
    """H at radius r (vectorised)."""
    scalar = np.ndim(r) == 0
    r = np.atleast_1d(np.asarray(r, dtype=float))
    outside = ~lam.contains_radius(r)
    if np.any(outside & (r <= params.rho0)):
        raise InconsistentRegionError("point outside Lambda with |x| <= rho0")
    out = np.zeros_like(r)
    ro = r[outside]
    out[outside] = params.kappa / (ro**2 * np.log(ro / params.rho0) ** log_exponent(N, params.beta))
    return float(out[0]) if scalar else out


def hardy_potential(params: PenalizationParams, lambda_region: DomainLambda, N: int, x) -> float:
    x = np.asarray(x, dtype=float)
    r = np.abs(x) if x.ndim == 0 else np.linalg.norm(x, axis=-1)
    return hardy_potential_radial(params, lambda_region, N, r)


@dataclass(frozen=True)
class PenalizedNonlinearity:
    """g_eps and G_eps at a fixed set of radii (typically grid nodes).

    Stores K, eps^2 H and chi_Lambda at the radii so evaluation in s is cheap.
    """

    p: float
    k: np.ndarray
    eps2h: np.ndarray
    inside: np.ndarray
    log_sstar: np.ndarray = field(init=False)

    def __post_init__(self):
        k = np.asarray(self.k, dtype=float)
        e = np.asarray(self.eps2h, dtype=float)
        with np.errstate(divide="ignore"):
            # s* = (eps^2 H / K)^{1/(p-1)} in log space; +inf where K = 0 or inside Lambda
            ls = (np.log(e) - np.log(k)) / (self.p - 1.0)
        ls = np.where((k > 0) & ~self.inside, ls, np.inf)
        ls = np.where((k > 0) & ~self.inside & (e <= 0), -np.inf, ls)
        object.__setattr__(self, "log_sstar", ls)

    @classmethod
    def at_radii(cls, spec: ProblemSpec, params: PenalizationParams, eps: float, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        lam = spec.lambda_region
        inside = lam.contains_radius(r)
        h = hardy_potential_radial(params, lam, spec.N, r)
        return cls(p=spec.p, k=np.asarray(spec.K.radial(r), dtype=float),
                   eps2h=eps**2 * np.atleast_1d(h), inside=inside)

    def capped(self, s) -> np.ndarray:
        """True where the linear cap eps^2 H s is the active branch."""
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            return (~self.inside) & (np.log(np.maximum(s, 0.0)) > self.log_sstar)

    def g(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise ValueError("g_eps is defined for s >= 0")
        power = self.k * s**self.p
        cap = self.eps2h * s
        out = np.where(self.inside, power, np.minimum(power, cap))
        return out

    def dg(self, s) -> np.ndarray:
        """Branch derivative in s (a.e. derivative at the switch)."""
        s = np.asarray(s, dtype=float)
        power = self.p * self.k * s ** (self.p - 1.0)
        return np.where(self.capped(s), self.eps2h, power)

    def G(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise ValueError("G_eps is defined for s >= 0")
        p1 = self.p + 1.0
        pure = self.k * s**p1 / p1
        capped = self.capped(s)
        if not np.any(capped):
            return pure
        sstar = np.exp(np.where(capped, self.log_sstar, 0.0))
        alt = self.k * sstar**p1 / p1 + 0.5 * self.eps2h * (s**2 - sstar**2)
        return np.where(capped, alt, pure)


def g_eps(spec: ProblemSpec, params: PenalizationParams, eps: float, x, s) -> float:
    r = np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=float)))
    nl = PenalizedNonlinearity.at_radii(spec, params, eps, r)
    return float(nl.g(np.asarray([s], dtype=float))[0])


def G_eps(spec: ProblemSpec, params: PenalizationParams, eps: float, x, s) -> float:
    r = np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=float)))
    nl = PenalizedNonlinearity.at_radii(spec, params, eps, r)
    return float(nl.G(np.asarray([s], dtype=float))[0])


@dataclass
class GPropertiesReport:
    holds: bool
    violations: list
    n_checked: int
    small_s_ratio: float
    large_s_ratio: float


def verify_g_properties(spec: ProblemSpec, params: PenalizationParams, eps: float,
                        radii, s_values, rtol: float = 1e-12) -> GPropertiesReport:
    """Check (g3) on Lambda, (g4) off Lambda and the limit ratios (g1), (g2).

    radii and s_values are paired samples. (g1) is probed with s in {1e-6, 1e-4}
    at the inside radii, (g2) with s in {1e2, 1e4}.
    """
    r = np.asarray(radii, dtype=float)
    s = np.asarray(s_values, dtype=float)
    if np.any(s <= 0):
        raise ValueError("samples need s > 0")
    nl = PenalizedNonlinearity.at_radii(spec, params, eps, r)
    g = nl.g(s)
    G = nl.G(s)
    sg = s * g
    p = spec.p
    violations = []
    tol = rtol * np.maximum(np.abs(sg), np.finfo(float).tiny)
    ins = nl.inside
    bad3 = ins & ((G < -tol) | ((p + 1) * G > sg + tol * (p + 1)))
    bad4 = (~ins) & ((G < -tol) | (2 * G > sg + 2 * tol)
                     | (sg > nl.eps2h * s**2 * (1 + rtol) + np.finfo(float).tiny))
    for i in np.nonzero(bad3)[0]:
        violations.append({"property": "g3", "r": float(r[i]), "s": float(s[i])})
    for i in np.nonzero(bad4)[0]:
        violations.append({"property": "g4", "r": float(r[i]), "s": float(s[i])})

    # (g1): g/s -> 0 as s -> 0 on Lambda (K bounded there)
    small = np.array([1e-6, 1e-4])
    ratios_small = []
    large = np.array([1e2, 1e4])
    ratios_large = []
    for ri in np.unique(r):
        one = PenalizedNonlinearity.at_radii(spec, params, eps, ri)
        ratios_small.append(np.max(one.g(small) / small))
        ratios_large.append(np.max(one.g(large) / large**p))
    small_ratio = float(np.max(ratios_small))
    large_ratio = float(np.max(ratios_large))
    kmax = float(np.max(nl.k)) if nl.k.size else 0.0
    if small_ratio > kmax * 1e-4 ** (p - 1) * (1 + rtol):
        violations.append({"property": "g1", "ratio": small_ratio})
    if large_ratio > kmax * (1 + rtol):
        violations.append({"property": "g2", "ratio": large_ratio})
    return GPropertiesReport(holds=not violations, violations=violations, n_checked=int(r.size),
                             small_s_ratio=small_ratio, large_s_ratio=large_ratio)


def eps_satisfies_2d_constraint(eps: float, C: float, inf_V_ball: float) -> bool:
    """eps^2 C <= inf over B(0, rho) of V, needed for the planar form inequality."""
    return eps**2 * C <= inf_V_ball
