"""Oracles: finite-difference checks, manufactured solutions and audits.

The manufactured sources are derived symbolically (sympy) from the
continuous Euler-Lagrange operators, so they share no code with the discrete
residuals they are compared against.
"""

from __future__ import annotations

import contextlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import sympy as sym

from . import donaldson as dn
from .donaldson import Perturbation, Solution, SolveState
from .fields import (ONE_FORM, SCALAR, VECTOR, BetaClass, WeightedField, automorphy_defect,
                     bolza_gauge_function, zero_beta)
from .geometry import BolzaChart, Chart, DiskChart, TorusChart
from .solver import SolverConfig, newton_solve

EPS_SWEEP = (1e-3, 1e-4, 1e-5, 1e-6)
HESS_EPS_SWEEP = (1e-2, 1e-3, 1e-4)


@dataclass
class CheckReport:
    name: str
    error: float
    tolerance: float
    oracle: str
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tolerance)

    def as_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def line(self):
        return (f"{'PASS' if self.passed else 'FAIL'} {self.name}: error {self.error:.3e} "
                f"(tol {self.tolerance:.1e})")


def manifest(reports) -> str:
    """JSON verification manifest for a list of reports."""
    data = {"passed": all(r.passed for r in reports),
            "checks": [r.as_dict() for r in reports]}
    return json.dumps(data, indent=2, sort_keys=True, default=float)


# ---------------------------------------------------------------------------
# Random smooth fields
# ---------------------------------------------------------------------------


def _period(chart: Chart) -> float:
    if isinstance(chart, TorusChart):
        return 1.0
    return 2.0 * float(max(np.abs(chart.x).max(), np.abs(chart.y).max()))


def smooth_field(chart: Chart, rng, complex_=False, modes=3) -> np.ndarray:
    """Random low-mode trigonometric field, zero on Dirichlet nodes.

    On the disk patch it is tapered by a cosine bump so it vanishes smoothly
    at the patch edge.
    """
    x, y = chart.x, chart.y
    L = _period(chart)
    out = np.zeros(chart.size, complex if complex_ else float)
    for kx in range(-modes, modes + 1):
        for ky in range(-modes, modes + 1):
            c = rng.normal() + (1j * rng.normal() if complex_ else 0.0)
            wave = c * np.exp(2j * np.pi * (kx * x + ky * y) / L)
            out += wave if complex_ else wave.real
    out /= 2 * modes + 1
    if isinstance(chart, DiskChart):
        r0 = chart.meta["r0"]
        out = out * np.cos(np.pi * x / (2 * r0)) * np.cos(np.pi * y / (2 * r0))
    return out * chart.free


def smooth_state(chart: Chart, rng, u_amp=0.1, F_amp=0.05) -> SolveState:
    return SolveState.from_arrays(chart, u_amp * smooth_field(chart, rng),
                                  F_amp * smooth_field(chart, rng, True))


def smooth_direction(chart: Chart, rng) -> Perturbation:
    return Perturbation.from_arrays(chart, smooth_field(chart, rng),
                                    smooth_field(chart, rng, True))


# ---------------------------------------------------------------------------
# Finite-difference checks
# ---------------------------------------------------------------------------


def _energy(state, beta, params, source):
    return dn.functional(state, beta, params, source=source).total


def check_gradient(state: SolveState, beta: BetaClass, params, trials: int = 5, *,
                   seed: int = 0, tol: float = 1e-6, source=None) -> CheckReport:
    """Directional derivative against central differences, best over an eps sweep."""
    rng = np.random.default_rng(seed)
    D0 = abs(_energy(state, beta, params, source))
    g = dn.gradient(state, beta, params, source=source)
    worst, rows = 0.0, []
    for _ in range(trials):
        d = smooth_direction(state.chart, rng)
        dd = g.dot(d)
        errs = []
        for eps in EPS_SWEEP:
            fd = (_energy(state.shifted(d, eps), beta, params, source)
                  - _energy(state.shifted(d, -eps), beta, params, source)) / (2 * eps)
            errs.append(abs(dd - fd) / max(abs(fd), abs(dd), 1e-8 * (1.0 + D0)))
        rows.append(errs)
        worst = max(worst, min(errs))
    return CheckReport("gradient_fd", worst, tol, "central differences of the energy",
                       {"eps": list(EPS_SWEEP), "errors": rows,
                        "backend": state.chart.backend_kind})


def check_hessian(state: SolveState, beta: BetaClass, params, trials: int = 5, *,
                  seed: int = 0, tol: float = 1e-5, sym_tol: float = 1e-11) -> CheckReport:
    """Quadratic form against second differences; also reports the symmetry defect."""
    rng = np.random.default_rng(seed)
    D0 = _energy(state, beta, params, None)
    worst, sym_worst, rows = 0.0, 0.0, []
    for _ in range(trials):
        d = smooth_direction(state.chart, rng)
        e = smooth_direction(state.chart, rng)
        Hd = dn.hessian_apply(state, beta, params, d)
        q = Hd.dot(d)
        errs = []
        for eps in HESS_EPS_SWEEP:
            fd2 = (_energy(state.shifted(d, eps), beta, params, None) - 2 * D0
                   + _energy(state.shifted(d, -eps), beta, params, None)) / eps ** 2
            errs.append(abs(q - fd2) / max(abs(fd2), abs(q), 1e-300))
        rows.append(errs)
        worst = max(worst, min(errs))
        He = dn.hessian_apply(state, beta, params, e)
        a, b = Hd.dot(e), He.dot(d)
        sym_worst = max(sym_worst, abs(a - b) / max(abs(a), abs(b), 1e-300))
    err = worst if sym_worst <= sym_tol else math.inf
    return CheckReport("hessian_fd", err, tol, "second central differences of the energy",
                       {"eps": list(HESS_EPS_SWEEP), "errors": rows, "symmetry": sym_worst,
                        "backend": state.chart.backend_kind})


# ---------------------------------------------------------------------------
# Manufactured solutions
# ---------------------------------------------------------------------------


@dataclass
class MmsCase:
    chart: Chart
    lam: float
    beta: BetaClass
    u_exact: np.ndarray
    F_exact: np.ndarray
    B_exact: np.ndarray
    source: tuple
    recipe: dict

    def initial_state(self) -> SolveState:
        """Exact values on Dirichlet nodes, zero elsewhere."""
        bd = self.chart.boundary
        return SolveState.from_arrays(self.chart, np.where(bd, self.u_exact, 0.0),
                                      np.where(bd, self.F_exact, 0.0))

    def solve(self, config: SolverConfig | None = None) -> Solution:
        return newton_solve(self.chart, self.beta, self.lam, self.initial_state(), config,
                            source=self.source)

    def errors(self, sol: Solution, interior: float = 0.75) -> dict:
        """Sup errors over free nodes; ``B_interior`` is restricted to the inner
        ``interior`` fraction of the patch, away from the one-sided boundary closure."""
        ch = self.chart
        free = ch.free
        eB = ch.rho ** -2 * np.abs(sol.B.values - self.B_exact)
        half = interior * _period(ch) / 2 + 1e-12
        inner = free & (np.abs(ch.x - ch.x.mean()) <= half) & (np.abs(ch.y - ch.y.mean()) <= half)
        return {"u": float(np.max(np.abs(sol.u - self.u_exact)[free])),
                "F": float(np.max(np.abs(sol.F - self.F_exact)[free])),
                "B": float(np.max(eB[free])),
                "B_interior": float(np.max(eB[inner]))}


def _mms_symbols(chart: Chart):
    x, y = sym.symbols("x y", real=True)
    if isinstance(chart, TorusChart):
        rho, K = sym.Integer(1), sym.Integer(0)
    elif isinstance(chart, DiskChart):
        rho, K = 2 / (1 - x ** 2 - y ** 2), sym.Integer(-1)
    else:
        raise ValueError("manufactured solutions need a torus or disk patch; "
                         "closed forms are not automorphic on the bolza chart")
    return x, y, rho, K


def make_mms_case(chart: Chart, params, recipe: dict | None = None) -> MmsCase:
    """Manufactured critical point ``u* = a sin 2pi x sin 2pi y``, ``F* = b exp(2pi i (x - y))``.

    Optional ``b0`` adds a constant representative.  Sources are the
    continuous residuals of the exact fields:
    ``s_u = -Lap_g u* + K + e^{2u*}(-lam + 2 rho^-4 |B*|^2)``,
    ``s_F = -2 rho^-2 d_z(e^{2u*} B*)`` with ``B* = b0 + rho^2 d_zbar F*``.
    """
    recipe = {"a": 0.1, "b": 0.0, "b0": 0.0, **(recipe or {})}
    lam = dn._lam(params)
    a, bc, b0 = float(recipe["a"]), complex(recipe["b"]), complex(recipe["b0"])
    x, y, rho, K = _mms_symbols(chart)
    if isinstance(chart, DiskChart) and chart.meta["r0"] * math.sqrt(2) >= 1:
        raise ValueError("patch corners leave the disk")
    u = a * sym.sin(2 * sym.pi * x) * sym.sin(2 * sym.pi * y)
    Fr = sym.re(bc) * sym.cos(2 * sym.pi * (x - y)) - sym.im(bc) * sym.sin(2 * sym.pi * (x - y))
    Fi = sym.re(bc) * sym.sin(2 * sym.pi * (x - y)) + sym.im(bc) * sym.cos(2 * sym.pi * (x - y))

    def dz(fr, fi):
        return ((sym.diff(fr, x) + sym.diff(fi, y)) / 2, (sym.diff(fi, x) - sym.diff(fr, y)) / 2)

    def dzbar(fr, fi):
        return ((sym.diff(fr, x) - sym.diff(fi, y)) / 2, (sym.diff(fi, x) + sym.diff(fr, y)) / 2)

    gr, gi = dzbar(Fr, Fi)
    Br = sym.re(b0) + rho ** 2 * gr
    Bi = sym.im(b0) + rho ** 2 * gi
    E = sym.exp(2 * u)
    lap = rho ** -2 * (sym.diff(u, x, 2) + sym.diff(u, y, 2))
    su = -lap + K + E * (-lam + 2 * rho ** -4 * (Br ** 2 + Bi ** 2))
    hr, hi = dz(E * Br, E * Bi)
    sFr, sFi = -2 * rho ** -2 * hr, -2 * rho ** -2 * hi

    X, Y = chart.x, chart.y

    def ev(expr):
        f = sym.lambdify((x, y), expr, "numpy")
        return np.broadcast_to(np.asarray(f(X, Y), dtype=float), X.shape).copy()

    beta = BetaClass(WeightedField(np.full(chart.size, b0), (0, 2), chart), f"constant {b0}")
    return MmsCase(chart=chart, lam=lam, beta=beta, u_exact=ev(u),
                   F_exact=ev(Fr) + 1j * ev(Fi), B_exact=ev(Br) + 1j * ev(Bi),
                   source=(ev(su), ev(sFr) + 1j * ev(sFi)),
                   recipe={"a": a, "b": [bc.real, bc.imag], "b0": [b0.real, b0.imag]})


def mms_convergence(make_chart, params, recipe, sizes=(32, 64, 128),
                    config: SolverConfig | None = None) -> dict:
    """Sup errors across refinements and successive ratios for ``u``, ``F`` and interior ``B``."""
    errs = []
    for n in sizes:
        case = make_mms_case(make_chart(n), params, recipe)
        errs.append(case.errors(case.solve(config)))
    out = {"sizes": list(sizes), "errors": errs}
    for key in ("u", "F", "B_interior"):
        out[f"ratio_{key}"] = [errs[i][key] / errs[i + 1][key] if errs[i + 1][key] > 0
                               else math.inf for i in range(len(errs) - 1)]
    return out


# ---------------------------------------------------------------------------
# Audits
# ---------------------------------------------------------------------------


def gauge_representative(beta: BetaClass, psi0: np.ndarray) -> BetaClass:
    """``b + rho^2 d_zbar psi0`` through the discrete operator used by the solver."""
    chart = beta.chart
    return BetaClass(beta.b + WeightedField(dn.ops(chart).P @ psi0, (0, 2), chart),
                     f"{beta.note} + dbar(psi0)")


def _gauge_values(chart: Chart, psi0):
    if callable(psi0):
        if isinstance(chart, BolzaChart):
            defect = automorphy_defect(chart, psi0, VECTOR)
            if defect > 1e-3:
                raise ValueError(f"psi0 is not automorphic (defect {defect:.2e})")
        return np.asarray(psi0(chart.z), dtype=complex)
    if isinstance(chart, BolzaChart):
        raise ValueError("on the bolza chart psi0 must be given as a callable so its "
                         "automorphy can be checked")
    vals = np.asarray(psi0, dtype=complex)
    if np.any(np.abs(vals[chart.boundary]) > 0):
        raise ValueError("psi0 must vanish on Dirichlet nodes")
    return vals


def gauge_invariance_audit(chart: Chart, beta: BetaClass, psi0, params,
                           config: SolverConfig | None = None, *, tol: float = 1e-7) -> CheckReport:
    """Solve with ``b`` and with ``b + rho^2 d_zbar psi0``; compare ``(h, alpha)``."""
    vals = _gauge_values(chart, psi0)
    s1 = newton_solve(chart, beta, params, None, config)
    s2 = newton_solve(chart, gauge_representative(beta, vals), params, None, config)
    dh = float(np.max(np.abs(s1.rho_h ** 2 - s2.rho_h ** 2) / chart.rho ** 2))
    da = float(np.max(np.abs(s1.alpha.values - s2.alpha.values) * s1.rho_h ** -2))
    dF = float(np.max(np.abs(dn.project_F(chart, s2.F - s1.F + vals))))
    return CheckReport("gauge_invariance", max(dh, da), tol,
                       "two solves in the same class",
                       {"h": dh, "alpha": da, "F_shift_defect": dF,
                        "backend": chart.backend_kind})


def euler_characteristic(chart: Chart) -> int:
    if isinstance(chart, BolzaChart):
        return -2
    if isinstance(chart, TorusChart):
        return 0
    raise ValueError("Gauss-Bonnet needs a closed chart")


def gauss_bonnet_audit(solution: Solution, *, tol: float = 0.01,
                       gap_tol: float = 1e-8) -> CheckReport:
    """``int K(h) dmu_h`` from the curvature identity and from the Gauss equation.

    The two pointwise curvature routes must also agree to ``gap_tol``; the
    integrals alone cannot see a sign error in the Laplacian term.
    """
    chart = solution.chart
    target = 2 * math.pi * euler_characteristic(chart)
    E = np.exp(2 * solution.u)
    k_identity = dn.gauss_curvature_h(solution)
    k_gauss = solution.lam - 2 * solution.rho_h ** -4 * np.abs(solution.alpha.values) ** 2
    i1 = float(np.dot(chart.w, E * k_identity))
    i2 = float(np.dot(chart.w, E * k_gauss))
    scale = abs(target) if target else 1.0
    err = max(abs(i1 - target), abs(i2 - target)) / scale
    gap = float(np.max(np.abs(k_identity - k_gauss)[chart.free]))
    if gap > gap_tol:
        err = math.inf
    return CheckReport("gauss_bonnet", err, tol, "topological total curvature 2 pi chi",
                       {"identity_route": i1, "gauss_route": i2, "target": target,
                        "pointwise_route_gap": gap,
                        "backend": chart.backend_kind})


def random_automorphic_vector(chart: Chart, rng) -> np.ndarray:
    """Smooth weight (-1,0) field compatible with the chart's identifications."""
    if isinstance(chart, BolzaChart):
        out = np.zeros(chart.size, dtype=complex)
        for j in range(3):
            c = complex(rng.normal(), rng.normal())
            out += c * bolza_gauge_function(chart, j)(chart.z)
        return out
    return smooth_field(chart, rng, True)


def bochner_terms(chart: Chart, F: np.ndarray) -> dict:
    """``int |dbar f|^2``, ``int |d f|^2`` and ``int K |f|^2`` for ``f = F d/dz``."""
    rho = chart.rho
    _, dzb = chart.wirtinger(VECTOR)
    dz1, _ = chart.wirtinger(ONE_FORM)
    dbar = dzb @ F
    d = rho ** -2 * (dz1 @ (rho ** 2 * F))
    return {"dbar": float(np.dot(chart.w, np.abs(dbar) ** 2)),
            "d": float(np.dot(chart.w, np.abs(d) ** 2)),
            "K": float(np.dot(chart.w, chart.K * rho ** 2 * np.abs(F) ** 2))}


def bochner_identity_audit(chart: Chart, trials: int = 3, *, seed: int = 0,
                           tol: float | None = None) -> CheckReport:
    """Relative defect of ``int |dbar f|^2 = int |d f|^2 - 1/2 int K |f|^2`` on a closed chart.

    The default tolerance is ``50 h^2`` (discretization order).
    """
    if not chart.closed:
        raise ValueError("the identity needs a closed chart")
    rng = np.random.default_rng(seed)
    worst = 0.0
    rows = []
    for _ in range(trials):
        t = bochner_terms(chart, random_automorphic_vector(chart, rng))
        scale = max(t["d"], t["dbar"], 1e-300)
        defect = abs(t["dbar"] - t["d"] + 0.5 * t["K"]) / scale
        rows.append({**t, "defect": defect})
        worst = max(worst, defect)
    if tol is None:
        tol = 50.0 * chart.h ** 2
    return CheckReport("bochner_identity", worst, tol, "integration by parts on a closed chart",
                       {"trials": rows, "h": chart.h, "backend": chart.backend_kind})


def hessian_formula_terms(solution: Solution, d: Perturbation) -> dict:
    """Quadratic-form pieces in the solution frame, for comparison with the critical-point display.

    With ``beta_h = e^{2u} B``, ``mu_h = e^{2u} mu`` and ``dbar f = e^{2u} rho^2 d_zbar psi``
    the exact second variation at a critical point is
    ``dirichlet - 2 int v^2 K(h) + 2 c int v Re<beta, dbar f> + 2 int |dbar f|^2``
    with ``c = 4``.
    """
    chart = solution.chart
    o = dn.ops(chart)
    w = chart.w
    v, psi = d.v.values, d.psi.values
    E = np.exp(2 * solution.u)
    B = solution.B.values
    dB = o.P @ psi
    return {"dirichlet": float(v @ (o.L @ v)),
            "curvature": -2.0 * float(np.dot(w, E * v ** 2 * dn.gauss_curvature_h(solution))),
            "cross_unit": 2.0 * float(np.dot(w, E * v * o.rho_m4 * np.real(np.conj(B) * dB))),
            "dbar": 2.0 * float(np.dot(w, E * o.rho_m4 * np.abs(dB) ** 2))}


def hessian_formula_audit(solution: Solution, trials: int = 10, *, seed: int = 0,
                          tol: float = 1e-6) -> CheckReport:
    """Compare the exact quadratic form with the display for both cross-term factors (4 and 2)."""
    rng = np.random.default_rng(seed)
    err = {4: 0.0, 2: 0.0}
    for _ in range(trials):
        d = smooth_direction(solution.chart, rng)
        q = dn.hessian_apply(solution.state, solution.beta, solution.lam, d).dot(d)
        t = hessian_formula_terms(solution, d)
        for c in err:
            form = t["dirichlet"] + t["curvature"] + c * t["cross_unit"] + t["dbar"]
            err[c] = max(err[c], abs(form - q) / abs(q))
    return CheckReport("hessian_display_factor4", err[4], tol,
                       "term-by-term assembly at a critical point",
                       {"factor4": err[4], "factor2": err[2],
                        "matches": [c for c, e in err.items() if e <= tol]})


def hessian_lower_bound_audit(solution: Solution, trials: int = 20, *, seed: int = 0) -> CheckReport:
    """Check ``q(d) >= `` the pointwise AM-GM lower-bound integrand for random directions.

    Error is the largest relative shortfall ``max(0, bound - q) / |q|``.
    """
    chart = solution.chart
    o = dn.ops(chart)
    rng = np.random.default_rng(seed)
    dz, _ = chart.wirtinger(SCALAR)
    rho_h = solution.rho_h
    E = np.exp(2 * solution.u)
    w = chart.w * E
    beta_abs = rho_h ** -2 * np.abs(solution.alpha.values)
    worst, rows = 0.0, []
    for _ in range(trials):
        d = smooth_direction(chart, rng)
        v, psi = d.v.values, d.psi.values
        q = dn.hessian_apply(solution.state, solution.beta, solution.lam, d).dot(d)
        dv2 = 2.0 * rho_h ** -2 * np.abs(dz @ v) ** 2
        dbar_abs = chart.rho ** -2 * np.abs(o.P @ psi)
        f_abs = rho_h * np.abs(psi)
        integrand = (dv2 + 2 * v ** 2 * beta_abs ** 2 + 0.5 * dbar_abs ** 2
                     + f_abs ** 2 * beta_abs ** 2 - 2 * np.abs(v) * beta_abs * dbar_abs
                     - 2 * np.sqrt(dv2) * f_abs * beta_abs)
        bound = 2.0 * float(np.dot(w, integrand))
        rows.append((q, bound))
        worst = max(worst, max(0.0, bound - q) / abs(q))
    return CheckReport("hessian_lower_bound", worst, 0.0, "pointwise AM-GM bound",
                       {"pairs": rows})


# ---------------------------------------------------------------------------
# Mutation harness
# ---------------------------------------------------------------------------

MUTANTS = ("volume_sign", "hessian_cross_sign", "curvature_sign")


@contextlib.contextmanager
def mutant(name: str):
    """Temporarily plant a sign error in one term of the discrete core."""
    if name == "volume_sign":
        orig = dn._grad

        def bad(o, u, F, b, lam, source=None):
            Ru, RF = orig(o, u, F, b, lam, source)
            return Ru + 2.0 * lam * np.exp(2 * u) * o.free, RF
        target, attr = dn, "_grad"
    elif name == "hessian_cross_sign":
        orig = dn._hess

        def bad(o, u, F, b, lam, v, psi):
            Hv, Hpsi = orig(o, u, F, b, lam, v, psi)
            E = np.exp(2 * u)
            B = b + o.P @ F
            cross = 4.0 * E * o.rho_m4 * np.real(np.conj(B) * (o.P @ (psi * o.free)))
            return Hv - 2.0 * cross * o.free, Hpsi
        target, attr = dn, "_hess"
    elif name == "curvature_sign":
        orig = dn.gauss_curvature_h

        def bad(sol):
            o = dn.ops(sol.chart)
            return np.exp(-2.0 * sol.u) * (o.K - (o.L @ sol.u) * o.winv)
        target, attr = dn, "gauss_curvature_h"
    else:
        raise ValueError(f"unknown mutant {name!r}; choose from {MUTANTS}")
    setattr(target, attr, bad)
    try:
        yield
    finally:
        setattr(target, attr, orig)


__all__ = [
    "CheckReport", "MmsCase", "check_gradient", "check_hessian", "make_mms_case",
    "mms_convergence", "gauge_invariance_audit", "gauge_representative", "gauss_bonnet_audit",
    "bochner_identity_audit", "bochner_terms", "hessian_formula_audit",
    "hessian_lower_bound_audit", "mutant", "MUTANTS", "smooth_field", "smooth_state",
    "smooth_direction", "random_automorphic_vector", "manifest", "zero_beta",
]
