import math

import numpy as np
import pytest

from penalized_nls.grids import RadialField, uniform_grid
from penalized_nls.groundstate import (GroundStateDomainError, check_exponential_decay,
                                       grid_ground_state, limit_energy, limit_energy_value,
                                       limit_functional, mountain_pass_exponent,
                                       rescale_to_limit, sobolev_constant, solve_canonical)
from penalized_nls.problem import DomainLambda, Potential, ProblemSpec, concentration_from_values


def test_sech_profile(gs_cache):
    gs = gs_cache(1, 3.0)
    r = np.linspace(0.0, 20.0, 20001)
    assert np.max(np.abs(gs(r) - math.sqrt(2) / np.cosh(r))) < 1e-6
    assert gs.w0 == pytest.approx(math.sqrt(2), abs=1e-9)


def test_sech_integrals(gs_cache):
    gs = gs_cache(1, 3.0)
    assert gs.gradient_plus_mass == pytest.approx(16 / 3, rel=1e-8)
    assert gs.power_integral == pytest.approx(16 / 3, rel=1e-8)
    assert gs.sobolev == pytest.approx((16 / 3) ** 0.25, abs=1e-8)
    assert gs.energy_canonical == pytest.approx(4 / 3, abs=1e-8)
    assert limit_energy_value(gs, 1.0) == pytest.approx(4 / 3, abs=1e-8)


@pytest.mark.parametrize("N,p", [(3, 3.0), (3, 4.0), (5, 2.0)])
def test_shooting_agrees_with_grid_newton(gs_cache, N, p):
    gs = gs_cache(N, p)
    ref = grid_ground_state(N, p)
    err = np.max(np.abs(gs(ref.r) - ref.values)) / np.max(ref.values)
    assert err < 1e-5


def test_three_dimensional_cubic_amplitude(gs_cache):
    assert gs_cache(3, 3.0).w0 == pytest.approx(4.3374, abs=1e-3)


@pytest.mark.parametrize("N,p", [(3, 3.0), (3, 4.0), (5, 2.0)])
def test_nehari_identity(gs_cache, N, p):
    gs = gs_cache(N, p)
    assert gs.gradient_plus_mass == pytest.approx(gs.power_integral, rel=1e-6)


@pytest.mark.parametrize("N,p", [(1, 3.0), (3, 3.0), (3, 4.0), (5, 2.0)])
def test_sobolev_two_routes(gs_cache, N, p):
    gs = gs_cache(N, p)
    r = mountain_pass_exponent(p)
    quad_energy = 0.5 * gs.gradient_plus_mass - gs.power_integral / (p + 1)
    assert gs.sobolev**r / r == pytest.approx(quad_energy, rel=1e-6)
    s1 = sobolev_constant(gs, n=8000)
    s2 = sobolev_constant(gs, n=16000)
    assert abs(s1 - s2) < 1e-7


def test_mountain_pass_exponents():
    assert mountain_pass_exponent(3.0) == 4.0
    assert mountain_pass_exponent(4.0) == pytest.approx(10 / 3)


def test_rescale_identity_and_amplitude(gs_cache):
    gs = gs_cache(3, 3.0)
    v = rescale_to_limit(gs, 1.0, 1.0)
    assert np.array_equal(v.values, gs(gs.profile.r))
    assert rescale_to_limit(gs, 4.0, 1.0).values[0] == pytest.approx(2 * gs.w0, rel=1e-14)


@pytest.mark.parametrize("V0,K0", [(1.0, 1.0), (2.0, 0.5), (0.7, 3.0)])
def test_scaling_identity(gs_cache, V0, K0):
    gs = gs_cache(3, 4.0)
    grid = uniform_grid(30.0 / math.sqrt(V0), 60000, 3)
    v = rescale_to_limit(gs, V0, K0, grid)
    A = concentration_from_values(V0, K0, 3, 4.0)
    assert limit_functional(v, V0, K0, 4.0) == pytest.approx(limit_energy_value(gs, A), rel=1e-4)


def test_limit_energy_uses_concentration(gs_cache):
    gs = gs_cache(3, 4.0)
    spec = ProblemSpec(N=3, p=4.0, epsilons=(0.1,), V=Potential.constant(4.0),
                       K=Potential.constant(1.0), lambda_region=DomainLambda(1.0),
                       sigma=0.0, M=1.0)
    assert limit_energy(spec, gs, 0.0) == pytest.approx(2 ** (1 / 3) * gs.energy_canonical)


def test_exponential_decay_sech(gs_cache):
    rep = check_exponential_decay(gs_cache(1, 3.0).profile, 1.0, r_min=1.0)
    assert rep.holds and rep.C <= 2 * math.sqrt(2)
    assert not check_exponential_decay(gs_cache(1, 3.0).profile, 1.5, r_min=1.0).holds


def test_exponential_decay_three_dimensions(gs_cache):
    rep = check_exponential_decay(gs_cache(3, 3.0).profile, 1.0)
    assert rep.holds and math.isfinite(rep.C)


def test_domain_errors():
    with pytest.raises(GroundStateDomainError, match=r"\(3, 5\)"):
        solve_canonical(3, 7.0)
    with pytest.raises(GroundStateDomainError):
        solve_canonical(2, 1.0)


def test_profile_is_positive_and_decreasing(gs_cache):
    w = gs_cache(5, 2.0).profile.values
    assert np.all(w > 0) and np.all(np.diff(w) < 0)


def test_grid_field_type(gs_cache):
    ref = grid_ground_state(3, 3.0, n=4000, richardson=False)
    assert isinstance(ref, RadialField) and ref.grid.dim == 3
