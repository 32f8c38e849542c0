import math

import numpy as np
import pytest

from penalized_nls.grids import (GridConfigError, GridMismatchError, RadialField,
                                 apply_operator, build_grid, hardy_rayleigh, integrate,
                                 norm_eps, uniform_grid)
from penalized_nls.groundstate import ground_state_residual
from penalized_nls.penalization import PenalizationParams
from penalized_nls.problem import DomainLambda

PARAMS = PenalizationParams(kappa=0.125, beta=1.0, rho0=0.5 / math.e, rho=0.5)


def bump(r, a, b):
    """C^infinity bump supported in (a, b)."""
    t = (r - a) / (b - a)
    out = np.zeros_like(r)
    m = (t > 0) & (t < 1)
    out[m] = np.exp(-1.0 / (t[m] * (1 - t[m])))
    return out


def test_build_grid_deterministic_with_constant_far_ratio():
    g1 = build_grid(10.0, 1000, 1000.0)
    g2 = build_grid(10.0, 1000, 1000.0)
    assert np.array_equal(g1.nodes, g2.nodes)
    far = np.diff(g1.nodes[g1.nodes >= 10.0 - 1e-12])
    ratios = far[1:] / far[:-1]
    assert np.ptp(ratios) < 1e-9
    assert g1.r_max == 1000.0


def test_build_grid_rejects_empty_far_field():
    with pytest.raises(GridConfigError):
        build_grid(10.0, 1000, 10.0)


def test_doubling_core_resolution_halves_spacing():
    h1 = np.diff(build_grid(4.0, 1024, 100.0).nodes)[0]
    h2 = np.diff(build_grid(4.0, 2048, 100.0).nodes)[0]
    assert h2 == h1 / 2


def test_operator_on_constants():
    g = build_grid(4.0, 512, 100.0)
    out = apply_operator(RadialField(g, np.ones(g.n)), 0.3, 2.5, far_field="neumann")
    assert np.allclose(out.values[:-1], 2.5, rtol=0, atol=1e-12)


def test_operator_on_quadratic():
    g = build_grid(4.0, 1024, 100.0)
    eps, V = 0.3, 2.0
    out = apply_operator(RadialField(g, g.nodes**2), eps, V, far_field="neumann").values
    expect = -6 * eps**2 + V * g.nodes**2
    assert np.max(np.abs(out - expect)[:-1]) < 1e-8


def test_ground_state_residual_on_line(gs_cache):
    gs = gs_cache(1, 3.0)
    g = uniform_grid(20.0, 20000, 1)
    res = ground_state_residual(gs, g)
    assert np.max(np.abs(res[g.nodes <= 10])) < 1e-6


def test_ground_state_residual_second_order(gs_cache):
    gs = gs_cache(3, 3.0)
    errs = []
    for n in (10000, 20000, 40000):
        g = uniform_grid(20.0, n, 3)
        errs.append(np.max(np.abs(ground_state_residual(gs, g)[g.nodes <= 10])))
    assert errs[-1] < 1e-4
    for a, b in zip(errs, errs[1:]):
        assert 3.5 < a / b < 4.5


def test_norm_zero_and_homogeneous(gs_cache):
    g = build_grid(4.0, 512, 100.0)
    u = RadialField(g, bump(g.nodes, 0.5, 2.0))
    assert norm_eps(u * 0.0, 0.1, 1.0) == 0.0
    assert norm_eps(u * 2.0, 0.1, 1.0) == pytest.approx(2 * norm_eps(u, 0.1, 1.0), rel=1e-14)


def test_norm_of_sech_profile(gs_cache):
    gs = gs_cache(1, 3.0)
    g = uniform_grid(40.0, 40000, 1)
    u = RadialField(g, gs(g.nodes))
    assert norm_eps(u, 1.0, 1.0, far_field="neumann") ** 2 == pytest.approx(16 / 3, rel=1e-6)


def test_mass_integrates_polynomials_exactly():
    g = build_grid(4.0, 256, 50.0)
    # cell masses sum to the ball volume over the sphere area
    assert integrate(g, np.ones(g.n)) == pytest.approx(4 * math.pi * 50.0**3 / 3, rel=1e-13)


def test_hardy_free_bump_in_annulus():
    g = uniform_grid(10.0, 20000, 3)
    zero = PenalizationParams(0.0, 1.0, PARAMS.rho0, PARAMS.rho)
    rep = hardy_rayleigh(RadialField(g, bump(g.nodes, 1.0, 3.0)), zero, 3)
    assert rep.ratio >= 0.25 - 1e-3


def test_hardy_inside_lambda_has_no_penalty():
    g = uniform_grid(4.0, 20000, 3)
    u = RadialField(g, bump(g.nodes, 0.1, 0.9))
    rep = hardy_rayleigh(u, PARAMS, 3, DomainLambda(1.0))
    assert rep.ratio >= 0.25 - 1e-3
    zero = PenalizationParams(0.0, 1.0, PARAMS.rho0, PARAMS.rho)
    assert rep.form_value == hardy_rayleigh(u, zero, 3, DomainLambda(1.0)).form_value


@pytest.mark.parametrize("N", [3, 2])
def test_hardy_random_bumps(N):
    rng = np.random.default_rng(2024 + N)
    g = build_grid(4.0, 16384, 400.0, dim=N)
    worst = math.inf
    for _ in range(100):
        a = rng.uniform(PARAMS.rho0 * 1.001, 5.0) if N == 2 else rng.uniform(0.0, 5.0)
        b = a + 10 ** rng.uniform(-1.0, 2.0)
        rep = hardy_rayleigh(RadialField(g, bump(g.nodes, a, b)), PARAMS, N)
        worst = min(worst, rep.ratio - rep.bound)
    assert worst >= -1e-3


def test_hardy_dimension_mismatch():
    g = uniform_grid(4.0, 100, 3)
    with pytest.raises(GridMismatchError):
        hardy_rayleigh(RadialField(g, bump(g.nodes, 1.0, 2.0)), PARAMS, 2)
