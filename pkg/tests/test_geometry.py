import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as si

from cmcsurf.geometry import (ChartError, Params, background_curvature, build_bolza_octagon,
                              build_flat_torus_patch, build_hyperbolic_disk_patch, integrate,
                              octagon_geometry, octagon_interior_angle, poincare_rho,
                              solve_octagon_radius, verify_side_pairings)


def test_params_lambda_and_validation():
    assert Params(-1, 0.5).lam == pytest.approx(-0.75)
    with pytest.raises(ValueError):
        Params(2, 0.0)
    with pytest.raises(ValueError):
        Params(-1, 0.0, T=-1.0)
    with pytest.raises(ValueError, match="must be negative"):
        Params(0, 0.5).require_negative()
    with pytest.raises(ValueError, match=r"\|c\| < 1"):
        Params(-1, 1.2).require_negative()


@pytest.mark.parametrize("build,kwargs,msg", [
    (build_hyperbolic_disk_patch, {"n": 16, "r0": 1.0}, "metric singular"),
    (build_hyperbolic_disk_patch, {"n": 16, "r0": 0.9}, "exceeds"),
    (build_hyperbolic_disk_patch, {"n": 8, "r0": 0.5}, "resolution"),
    (build_flat_torus_patch, {"n": 7}, "even"),
    (build_bolza_octagon, {"n": 16}, "resolution"),
])
def test_builder_rejects_bad_input(build, kwargs, msg):
    with pytest.raises(ChartError, match=msg):
        build(**kwargs)


def test_torus_area_and_flat_curvature(torus16):
    assert torus16.area == pytest.approx(1.0, abs=1e-14)
    assert not torus16.boundary.any()
    assert np.all(background_curvature(torus16) == 0.0)


def test_disk_area_matches_adaptive_quadrature():
    # independent nested adaptive quadrature of the hyperbolic area density
    exact = si.dblquad(lambda y, x: 4.0 / (1 - x * x - y * y) ** 2, -0.5, 0.5, -0.5, 0.5,
                       epsabs=1e-13, epsrel=1e-13)[0]
    errs = [abs(build_hyperbolic_disk_patch(n, 0.5).area - exact) for n in (32, 64)]
    assert errs[1] / exact < 1e-3
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_disk_background_curvature_is_minus_one():
    chart = build_hyperbolic_disk_patch(64, 0.5)
    K = background_curvature(chart)
    assert np.max(np.abs(K[chart.free] + 1.0)) < 1e-6
    assert np.all(chart.K == -1.0)


def test_disk_drops_nodes_outside_unit_circle():
    chart = build_hyperbolic_disk_patch(32, 0.8)
    assert np.all(np.abs(chart.z) < 1.0)
    assert chart.size < 33 * 33


def test_octagon_radius_gives_quarter_turn_angles():
    R = solve_octagon_radius()
    assert octagon_interior_angle(R) == pytest.approx(math.pi / 4, abs=1e-12)
    # closed form: the regular octagon with angles pi/4 has circumradius 2^(-1/4)
    assert R == pytest.approx(2 ** -0.25, abs=1e-12)


def test_octagon_area_is_four_pi(bolza48):
    # Gauss-Bonnet for genus two with K = -1
    assert bolza48.area == pytest.approx(4 * math.pi, rel=1e-6)
    assert np.max(np.abs(background_curvature(bolza48) + 1.0)) < 1e-3


def test_side_pairings_are_isometries_closing_up(bolza32):
    rep = verify_side_pairings(bolza32)
    assert rep.passed, rep.failures
    assert rep.relator_defect < 1e-10
    assert set(rep.as_dict()) >= {"passed", "max_defect", "relator_defect"}


def test_side_pairings_need_automorphic_chart(disk16):
    with pytest.raises(ChartError, match="automorphic"):
        verify_side_pairings(disk16)


def test_octagon_reduce_lands_inside():
    geo = octagon_geometry()
    rng = np.random.default_rng(0)
    for z in 0.95 * np.sqrt(rng.random(20)) * np.exp(2j * np.pi * rng.random(20)):
        w, _ = geo.reduce(complex(z))[:2]
        assert np.all(geo.side_function(np.array([w])) <= 1e-9)


@pytest.mark.parametrize("name", ["torus16", "disk32", "bolza32"])
def test_stiffness_symmetric_and_kills_constants(name, request):
    chart = request.getfixturevalue(name)
    L = chart.stiffness
    assert abs(L - L.T).max() < 1e-12
    assert np.max(np.abs(L @ np.ones(chart.size))) < 1e-12
    v = np.random.default_rng(1).standard_normal(chart.size)
    assert v @ (L @ v) > 0


def test_central_difference_exact_on_quadratics(disk32):
    from cmcsurf.fields import WeightedField, d_z, d_zbar

    f = WeightedField(np.conj(disk32.z) ** 2, (0, 0), disk32)
    free = disk32.free
    assert np.max(np.abs(d_zbar(f).values - 2 * np.conj(disk32.z))[free]) < 1e-12
    assert np.max(np.abs(d_z(f).values)[free]) < 1e-12


def test_derivatives_second_order_on_free_nodes():
    from cmcsurf.fields import WeightedField, d_z

    errs = []
    for n in (32, 64, 128):
        ch = build_hyperbolic_disk_patch(n, 0.5)
        f = WeightedField(np.sin(3 * ch.x) * np.cos(2 * ch.y), (0, 0), ch)
        exact = 0.5 * (3 * np.cos(3 * ch.x) * np.cos(2 * ch.y)
                       + 2j * np.sin(3 * ch.x) * np.sin(2 * ch.y))
        errs.append(np.max(np.abs(d_z(f).values - exact)[ch.free]))
    for a, b in zip(errs, errs[1:]):
        assert 3.8 < a / b < 4.2


def test_torus_spectral_derivative(torus16):
    from cmcsurf.fields import WeightedField, d_z

    f = WeightedField(np.exp(2j * np.pi * (torus16.x + 2 * torus16.y)), (0, 0), torus16)
    want = 0.5 * (2j * np.pi - 1j * 4j * np.pi) * f.values
    assert np.max(np.abs(d_z(f).values - want)) < 1e-11


def test_fingerprint_stable_and_distinct(disk32, bolza32):
    assert build_hyperbolic_disk_patch(32, 0.5).fingerprint == disk32.fingerprint
    assert build_hyperbolic_disk_patch(32, 0.4).fingerprint != disk32.fingerprint
    assert bolza32.fingerprint != disk32.fingerprint


def test_chart_arrays_read_only(disk16):
    with pytest.raises(ValueError):
        disk16.rho[0] = 1.0


def test_integrate_checks_shape(disk16):
    with pytest.raises(Exception):
        integrate(disk16, np.ones(disk16.size + 1))


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 2 ** 16))
def test_integrate_is_linear(a, b, seed):
    chart = _disk()
    rng = np.random.default_rng(seed)
    f, g = rng.standard_normal((2, chart.size))
    lhs = integrate(chart, a * f + b * g)
    rhs = a * integrate(chart, f) + b * integrate(chart, g)
    assert lhs == pytest.approx(rhs, abs=1e-10 * (1 + abs(lhs)))


@settings(max_examples=40, deadline=None)
@given(r=st.floats(0, 0.99), t=st.floats(0, 2 * math.pi))
def test_poincare_rho_positive_and_radial(r, t):
    z = r * np.exp(1j * t)
    assert poincare_rho(z) == pytest.approx(2 / (1 - r * r))
    assert poincare_rho(z) >= 2.0


_DISK = {}


def _disk():
    if "c" not in _DISK:
        _DISK["c"] = build_hyperbolic_disk_patch(16, 0.5)
    return _DISK["c"]
