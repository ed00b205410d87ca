import math

import numpy as np
import pytest

from cmcsurf import donaldson as dn
from cmcsurf import solver as sv
from cmcsurf import verify as vf
from cmcsurf.fields import bolza_beta, constant_beta, zero_beta
from cmcsurf.geometry import Params, build_hyperbolic_disk_patch


def test_config_defaults_and_validation():
    cfg = sv.SolverConfig()
    d = cfg.as_dict()
    assert d["tol_grad"] == 1e-10 and d["max_newton"] == 50 and d["cg_tol"] == 1e-8
    assert d["cg_max"] == 2000 and d["armijo"] == 1e-4 and d["backtrack"] == 0.5
    assert d["max_backtrack"] == 30 and d["steps"] == 10 and d["guard"] == 50.0
    for bad in ({"tol_grad": 0.0}, {"max_newton": -1}, {"backtrack": 1.5}):
        with pytest.raises(ValueError):
            sv.SolverConfig(**bad)


def test_newton_rejects_positive_lambda_and_foreign_beta(disk16, disk32):
    with pytest.raises(ValueError, match="lambda"):
        sv.newton_solve(disk16, zero_beta(disk16), Params(1, 0.5))
    with pytest.raises(ValueError, match="different chart"):
        sv.newton_solve(disk16, zero_beta(disk32), -1.0)


def test_newton_trace_monotone_and_quadratic(disk32):
    rng = np.random.default_rng(0)
    init = dn.SolveState.from_arrays(disk32, 0.3 * vf.smooth_field(disk32, rng) * disk32.free,
                                     0.1 * vf.smooth_field(disk32, rng, True) * disk32.free)
    sol = sv.newton_solve(disk32, constant_beta(disk32, 0.3), Params(-1, 0.5), init)
    energies = [r["energy"] for r in sol.trace]
    assert all(b < a for a, b in zip(energies, energies[1:]))
    assert sol.converged and sol.grad_norm <= 1e-10 * sol.trace[0]["grad_norm"] + 1e-13
    # the ratio |g_k+1| / |g_k|^2 stays bounded once Newton is in its quadratic regime
    tail = [r["ratio"] for r in sol.trace[1:] if r["step_length"] == 1.0]
    assert tail and max(tail[-2:]) < 1e3


def test_newton_bit_identical_traces(bolza32):
    beta = bolza_beta(bolza32, {0: 0.3, 1: -0.2j})
    a = sv.newton_solve(bolza32, beta, -1.0)
    b = sv.newton_solve(bolza32, beta, -1.0)
    assert a.trace == b.trace
    assert np.array_equal(a.u, b.u) and np.array_equal(a.F, b.F)


def test_truncated_step_on_negative_curvature(bolza32):
    rng = np.random.default_rng(100)
    init = dn.SolveState.from_arrays(bolza32, 0.3 * vf.smooth_field(bolza32, rng),
                                     0.1 * vf.smooth_field(bolza32, rng, True))
    sol = sv.newton_solve(bolza32, bolza_beta(bolza32, {0: 0.5, 2: 0.3j}), -1.0, init)
    flagged = [r["negative_curvature"] for r in sol.trace if r.get("negative_curvature")]
    assert flagged and all(q <= 0 for q in flagged)
    assert sol.converged
    # positivity holds again at the solution
    assert sv.min_eig_estimate(sol, probes=1).value > 0


def test_cg_breakdown_reports_rayleigh_quotient(disk16):
    P = sv._Packed(disk16, zero_beta(disk16), -1.0)
    rhs = np.ones(P.wt.size)
    with pytest.raises(sv.CGBreakdown) as info:
        sv._pcg(P, lambda x: -x, rhs, np.ones_like(rhs), 1e-8, 10)
    assert info.value.rayleigh == pytest.approx(-1.0)
    x, its, ok, rq = sv._pcg(P, lambda x: -x, rhs, np.ones_like(rhs), 1e-8, 10, truncate=True)
    assert not ok and rq < 0 and P.dot(rhs, x) > 0


def test_cg_solves_spd_system(disk16):
    P = sv._Packed(disk16, zero_beta(disk16), -1.0)
    st = dn.SolveState.zeros(disk16)
    H = P.hess(st.u.values, st.F.values)
    rhs = np.random.default_rng(1).standard_normal(P.wt.size)
    x, its, ok, rq = sv._pcg(P, H, rhs, P.diag(st.u.values, st.F.values), 1e-12, 2000)
    assert ok and rq is None
    assert P.norm(H(x) - rhs) <= 1e-11 * P.norm(rhs)


def test_continuation_zero_beta_is_single_newton(disk32):
    sol, trace = sv.continuation_solve(disk32, zero_beta(disk32), -0.6)
    ref = sv.newton_solve(disk32, zero_beta(disk32), -0.6)
    assert trace.t == [1.0]
    assert np.array_equal(sol.u, ref.u)


def test_continuation_trace_and_halving(bolza32):
    beta = bolza_beta(bolza32, {0: 1.5, 2: 1.0j})
    sol, trace = sv.continuation_solve(bolza32, beta, -1.0, sv.SolverConfig(max_newton=4),
                                       steps=1)
    assert trace.halvings >= 1
    assert trace.t[-1] == 1.0
    assert all(b > a for a, b in zip(trace.t, trace.t[1:]))
    assert sol.beta is beta and sol.r_gauss < 1e-10
    assert len(trace.rows()) == len(trace.t)
    assert set(trace.as_dict()) == {"t", "newton_iterations", "grad_norm", "min_eig", "halvings"}


def test_continuation_eigen_probe(disk32):
    _, trace = sv.continuation_solve(disk32, constant_beta(disk32, 0.3), -1.0,
                                     sv.SolverConfig(probe_eigs=True), steps=3)
    assert len(trace.min_eig) == 3 and all(e > 0 for e in trace.min_eig)


def test_continuation_failure_reports_last_t(torus16):
    with pytest.raises(sv.ContinuationFailure) as info:
        sv.continuation_solve(torus16, constant_beta(torus16, 0.3), -1.0,
                              sv.SolverConfig(max_halvings=2), steps=2)
    assert info.value.last_t == 0.0
    assert "Gauss-Bonnet" in str(info.value)


def test_constrained_rejects_bad_input(disk16, bolza32):
    with pytest.raises(ValueError, match="positive"):
        sv.constrained_solve(bolza32, zero_beta(bolza32), -1.0)
    with pytest.raises(ValueError, match="closed"):
        sv.constrained_solve(disk16, zero_beta(disk16), 1.0)


def test_constrained_matches_unconstrained_with_beta(bolza32):
    beta = bolza_beta(bolza32, {0: 0.3})
    T = 4 * math.pi
    sol, lam = sv.constrained_solve(bolza32, beta, T)
    assert lam < 0
    assert dn.volume(sol.state) == pytest.approx(T, rel=1e-10)
    assert sol.r_gauss < 1e-9
    ref = sv.newton_solve(bolza32, beta, lam)
    assert np.max(np.abs(ref.u - sol.u)) < 1e-8
    assert np.max(np.abs(ref.alpha.values - sol.alpha.values)) < 1e-8


def test_min_eig_matches_dense_and_decreases_toward_zero_lambda(disk16):
    vals = []
    for lam in (-1.0, -0.5, -0.1, -1e-3):
        sol = sv.newton_solve(disk16, zero_beta(disk16), lam)
        est = sv.min_eig_estimate(sol, probes=2, steps=10 ** 6, tol=1e-12)
        dense = sv.dense_hessian_eigenvalues(sol)
        assert est.value == pytest.approx(dense[0], abs=1e-8)
        assert est.lower <= est.value == est.upper
        vals.append(est.value)
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] > 0


def test_min_eig_and_random_rayleigh_quotients(bolza32):
    sol = sv.newton_solve(bolza32, bolza_beta(bolza32, {1: 0.4}), Params(-1, 0.3))
    est = sv.min_eig_estimate(sol, probes=2, steps=30)
    assert est.value > 0 and est.as_dict()["steps"] <= 30
    assert float(est) == est.value
    rng = np.random.default_rng(4)
    q = []
    for _ in range(200):
        d = vf.smooth_direction(bolza32, rng)
        q.append(dn.hessian_apply(sol.state, sol.beta, sol.lam, d).dot(d) / d.dot(d))
    assert min(q) >= est.value - 1e-8


def test_lambda_zero_edge_stays_nonnegative(disk16):
    beta = constant_beta(disk16, 0.4)
    sol = sv.newton_solve(disk16, beta, 0.0)
    assert sv.min_eig_estimate(sol, probes=1, steps=10 ** 6).value >= 0


def test_gauge_shift_moves_F_by_psi(disk32):
    psi = 0.05 * vf.smooth_field(disk32, np.random.default_rng(5), True) * disk32.free
    rep = vf.gauge_invariance_audit(disk32, constant_beta(disk32, 0.2), psi, Params(-1, 0.5))
    assert rep.passed
    assert rep.details["F_shift_defect"] < 1e-7


def test_octagon_solution_settles_under_refinement(bolza48, bolza96):
    vols, coup = [], []
    for ch in (bolza48, bolza96):
        sol = sv.newton_solve(ch, bolza_beta(ch, {0: 0.5}), -1.0)
        vols.append(dn.volume(sol.state))
        coup.append(sol.energy.coupling)
    assert abs(vols[1] - vols[0]) / vols[1] < 1e-3
    assert abs(coup[1] - coup[0]) / coup[1] < 2e-3


def test_mms_recovers_fields_second_order():
    errs = []
    for n in (32, 64):
        case = vf.make_mms_case(build_hyperbolic_disk_patch(n, 0.5), Params(-1, 0.0),
                                {"a": 0.1, "b": 0.01, "b0": 0.1})
        errs.append(case.errors(case.solve()))
    assert 3.5 < errs[0]["u"] / errs[1]["u"] < 4.5
    assert 3.5 < errs[0]["F"] / errs[1]["F"] < 4.5
