import json
import math

import numpy as np
import pytest

from cmcsurf import donaldson as dn
from cmcsurf import solver as sv
from cmcsurf import verify as vf
from cmcsurf.fields import bolza_beta, constant_beta, zero_beta
from cmcsurf.geometry import Params, build_hyperbolic_disk_patch


def test_report_pass_flag_and_manifest():
    good = vf.CheckReport("a", 1e-9, 1e-8, "x")
    bad = vf.CheckReport("b", 2e-8, 1e-8, "x", {"k": 1})
    edge = vf.CheckReport("c", 1e-8, 1e-8, "x")
    assert good.passed and edge.passed and not bad.passed
    assert good.line().startswith("PASS a") and bad.line().startswith("FAIL b")
    assert not vf.CheckReport("nan", math.nan, 1.0, "x").passed
    data = json.loads(vf.manifest([good, bad]))
    assert data["passed"] is False
    assert [c["passed"] for c in data["checks"]] == [True, False]


def test_smooth_fields_seeded(disk32, bolza32):
    for ch in (disk32, bolza32):
        a = vf.smooth_field(ch, np.random.default_rng(3), True)
        b = vf.smooth_field(ch, np.random.default_rng(3), True)
        assert np.array_equal(a, b)
    d = vf.smooth_direction(disk32, np.random.default_rng(0))
    assert np.all(d.v.values[disk32.boundary] == 0)
    assert np.all(d.psi.values[disk32.boundary] == 0)


def test_gradient_check_at_trivial_state(disk32):
    st = dn.SolveState.zeros(disk32)
    g = dn.gradient(st, zero_beta(disk32), -1.0)
    assert g.norm() < 1e-12
    rep = vf.check_gradient(st, zero_beta(disk32), -1.0, trials=2)
    assert rep.passed


@pytest.mark.parametrize("name", ["torus16", "bolza32"])
def test_hessian_check_reports_symmetry(name, request):
    chart = request.getfixturevalue(name)
    beta = bolza_beta(chart, {0: 0.2}) if name == "bolza32" else constant_beta(chart, 0.2)
    st = vf.smooth_state(chart, np.random.default_rng(1))
    rep = vf.check_hessian(st, beta, -0.5, trials=2)
    assert rep.passed


def test_mms_zero_recipe_has_no_sources(disk32):
    case = vf.make_mms_case(disk32, Params(-1, 0.0), {"a": 0.0, "b": 0.0, "b0": 0.0})
    assert np.max(np.abs(case.source[0])) < 1e-14
    assert np.max(np.abs(case.source[1])) < 1e-14
    sol = case.solve()
    assert np.max(np.abs(sol.u)) < 1e-12


def test_mms_exact_fields_are_discrete_critical_points_to_order():
    res = []
    for n in (32, 64):
        ch = build_hyperbolic_disk_patch(n, 0.5)
        case = vf.make_mms_case(ch, Params(-1, 0.5), {"a": 0.1, "b": 0.02j, "b0": 0.1})
        st = dn.SolveState.from_arrays(ch, case.u_exact, case.F_exact)
        g = dn.gradient(st, case.beta, case.lam, source=case.source)
        inner = ch.free & (np.abs(ch.x) < 0.35) & (np.abs(ch.y) < 0.35)
        res.append(np.max(np.abs(g.v.values[inner])))
    assert 3.5 < res[0] / res[1] < 4.5


def test_mms_coupling_only_compares_B():
    errs = []
    for n in (32, 64):
        case = vf.make_mms_case(build_hyperbolic_disk_patch(n, 0.5), Params(-1, 0.0),
                                {"a": 0.0, "b": 0.05, "b0": 0.0})
        errs.append(case.errors(case.solve())["B_interior"])
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_mms_rejects_octagon_and_bad_patch(bolza32):
    with pytest.raises(ValueError, match="automorphic"):
        vf.make_mms_case(bolza32, -1.0)
    with pytest.raises(ValueError, match="corners"):
        vf.make_mms_case(build_hyperbolic_disk_patch(16, 0.75), -1.0)


def test_gauge_audit_trivial_and_preconditions(disk32, bolza32):
    rep = vf.gauge_invariance_audit(disk32, constant_beta(disk32, 0.2), np.zeros(disk32.size), -1.0)
    assert rep.passed and rep.error == 0.0
    bad = np.ones(disk32.size, dtype=complex)
    with pytest.raises(ValueError, match="Dirichlet"):
        vf.gauge_invariance_audit(disk32, constant_beta(disk32, 0.2), bad, -1.0)
    with pytest.raises(ValueError, match="callable"):
        vf.gauge_invariance_audit(bolza32, zero_beta(bolza32), np.zeros(bolza32.size), -1.0)
    with pytest.raises(ValueError, match="not automorphic"):
        vf.gauge_invariance_audit(bolza32, zero_beta(bolza32), lambda z: 0.1 * z, -1.0)


def test_gauss_bonnet_requires_closed_chart(disk16, torus16, bolza32):
    assert vf.euler_characteristic(bolza32) == -2
    assert vf.euler_characteristic(torus16) == 0
    sol = sv.newton_solve(disk16, zero_beta(disk16), -1.0)
    with pytest.raises(ValueError, match="closed"):
        vf.gauss_bonnet_audit(sol)


def test_gauss_bonnet_routes_agree(bolza32):
    sol = sv.newton_solve(bolza32, bolza_beta(bolza32, {1: 0.4}), Params(-1, 0.5))
    rep = vf.gauss_bonnet_audit(sol)
    assert rep.passed
    assert rep.details["pointwise_route_gap"] < 1e-8


def test_bochner_exact_on_torus(torus16):
    rep = vf.bochner_identity_audit(torus16, trials=3, tol=1e-10)
    assert rep.passed, rep.error


def test_bochner_zero_field(bolza32):
    t = vf.bochner_terms(bolza32, np.zeros(bolza32.size, dtype=complex))
    assert t == {"dbar": 0.0, "d": 0.0, "K": 0.0}


def test_bochner_octagon_refines(bolza48, bolza96):
    e48 = vf.bochner_identity_audit(bolza48, trials=1)
    e96 = vf.bochner_identity_audit(bolza96, trials=1)
    assert e48.passed and e96.passed
    # observed order is about 1.5 rather than 2; see the notes on the octagon collar
    assert e48.error / e96.error > 2.5


def test_bochner_rejects_patch(disk16):
    with pytest.raises(ValueError):
        vf.bochner_identity_audit(disk16)


def test_hessian_display_factor_resolution(bolza32):
    sol = sv.newton_solve(bolza32, bolza_beta(bolza32, {0: 0.5, 2: 0.3j}), -1.0)
    rep = vf.hessian_formula_audit(sol, trials=5)
    assert rep.passed
    assert rep.details["matches"] == [4]
    assert rep.details["factor2"] > 1e-4


def test_hessian_lower_bound_holds(disk32):
    sol = sv.newton_solve(disk32, constant_beta(disk32, 0.3), Params(-1, 0.5))
    rep = vf.hessian_lower_bound_audit(sol, trials=20)
    assert rep.passed


def test_audits_reproducible(bolza32):
    a = vf.bochner_identity_audit(bolza32, trials=2, seed=5)
    b = vf.bochner_identity_audit(bolza32, trials=2, seed=5)
    assert a.as_dict() == b.as_dict()


def test_mutants_caught_and_restored(disk32, bolza32):
    st = vf.smooth_state(disk32, np.random.default_rng(0))
    beta = constant_beta(disk32, 0.3)
    with vf.mutant("volume_sign"):
        assert not vf.check_gradient(st, beta, -0.5, trials=2).passed
    with vf.mutant("hessian_cross_sign"):
        assert not vf.check_hessian(st, beta, -0.5, trials=2).passed
    sol = sv.newton_solve(bolza32, bolza_beta(bolza32, {0: 0.3}), -1.0)
    with vf.mutant("curvature_sign"):
        assert not vf.gauss_bonnet_audit(sol).passed
    # originals are back
    assert vf.check_gradient(st, beta, -0.5, trials=2).passed
    assert vf.gauss_bonnet_audit(sol).passed
    with pytest.raises(ValueError):
        with vf.mutant("nope"):
            pass
