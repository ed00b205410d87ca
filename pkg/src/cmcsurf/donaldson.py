"""The convex energy for the conformal factor and the Hopf differential.

Discrete functional (``E = exp(2u)``, ``B = b + rho^2 d_zbar F``,
``s = |B|_g^2 = rho^-4 |B|^2``)::

    D(u, F) = u.L.u / 2 + sum w K u + sum w E (-lam/2 + s) + C

``u.L.u / 2`` is the Dirichlet energy ``int 2 rho^-2 |d_z u|^2 dmu``.  Gradients
and Hessian actions are the exact derivatives of this sum with respect to
nodal values, divided by the quadrature weights ("density form"), so that
``dD = sum w (R_u v + Re(conj(R_F) psi))``.

With these conventions the u-equation reads ``Delta_g u = K + E(-lam + 2s)``;
combined with ``K(h) = exp(-2u)(K(g) - Delta_g u)`` it is exactly the Gauss
equation ``K(h) = lam - 2|alpha|_h^2`` for ``alpha = E conj(B)``.
"""

from __future__ import annotations

import json
import weakref
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fields import (BETA, HOPF, VECTOR, BetaClass, WeightedField, d_zbar, scalar_field,
                     vector_field)
from .geometry import Chart, ChartError, Params

EXP_GUARD = 50.0


class DivergingIterate(FloatingPointError):
    """``|2u|`` left the representable range or the volume collapsed."""


@dataclass(frozen=True)
class SolveState:
    u: WeightedField
    F: WeightedField

    def __post_init__(self):
        if self.u.chart is not self.F.chart:
            raise ChartError("u and F must live on the same chart")
        if self.u.weight != (0, 0) or not self.u.real:
            raise ValueError("u must be a real scalar field")
        if self.F.weight != VECTOR:
            raise ValueError(f"F must have weight (-1,0), got {self.F.weight}")

    @property
    def chart(self) -> Chart:
        return self.u.chart

    @classmethod
    def zeros(cls, chart: Chart) -> "SolveState":
        return cls(scalar_field(chart, np.zeros(chart.size)),
                   vector_field(chart, np.zeros(chart.size)))

    @classmethod
    def from_arrays(cls, chart: Chart, u, F) -> "SolveState":
        return cls(scalar_field(chart, u), vector_field(chart, F))

    def shifted(self, d: "Perturbation", eps: float = 1.0) -> "SolveState":
        return SolveState.from_arrays(self.chart, self.u.values + eps * d.v.values,
                                      self.F.values + eps * d.psi.values)


@dataclass(frozen=True)
class Perturbation:
    v: WeightedField
    psi: WeightedField

    @property
    def chart(self) -> Chart:
        return self.v.chart

    @classmethod
    def from_arrays(cls, chart: Chart, v, psi) -> "Perturbation":
        return cls(scalar_field(chart, v), vector_field(chart, psi))

    def dot(self, other: "Perturbation") -> float:
        """Weighted real pairing ``sum w (v v' + Re(psi conj(psi')))``."""
        w = self.chart.w
        return float(np.dot(w, self.v.values * other.v.values)
                     + np.dot(w, np.real(self.psi.values * np.conj(other.psi.values))))

    def norm(self, free_only=True) -> float:
        w = self.chart.w * (self.chart.free if free_only else 1.0)
        return float(np.sqrt(np.dot(w, self.v.values ** 2 + np.abs(self.psi.values) ** 2)))


@dataclass(frozen=True)
class EnergyReport:
    total: float
    dirichlet: float
    linear: float
    volume: float
    coupling: float
    C: float
    source: float = 0.0

    def as_dict(self):
        return {"total": self.total, "dirichlet": self.dirichlet, "linear": self.linear,
                "volume": self.volume, "coupling": self.coupling, "C": self.C,
                "source": self.source}


@dataclass
class Solution:
    state: SolveState
    beta: BetaClass
    lam: float
    rho_h: np.ndarray
    alpha: WeightedField
    B: WeightedField
    grad_norm: float = float("nan")
    r_gauss: float = float("nan")
    r_codazzi: float = float("nan")
    energy: EnergyReport | None = None
    trace: list = field(default_factory=list)
    min_eig: float | None = None
    converged: bool = False

    @property
    def chart(self) -> Chart:
        return self.state.chart

    @property
    def u(self) -> np.ndarray:
        return self.state.u.values

    @property
    def F(self) -> np.ndarray:
        return self.state.F.values

    def residual_dict(self):
        out = {"grad_norm": self.grad_norm, "r_gauss": self.r_gauss, "r_codazzi": self.r_codazzi}
        if self.energy is not None:
            out.update(self.energy.as_dict())
        return out


# ---------------------------------------------------------------------------
# Cached chart operators
# ---------------------------------------------------------------------------


class _Ops:
    def __init__(self, chart: Chart):
        self.chart = chart
        _, Dzb = chart.wirtinger(VECTOR)
        raw = (sp.diags(chart.rho ** 2) @ Dzb).tocsr()
        self.P_raw = raw
        harmonic = _discrete_harmonic_space(chart)
        self.P = _GaugedOp(raw, harmonic, chart.w * chart.rho ** -4.0)
        self.PH = self.P.H
        self.kernel = self.P.kernel(chart.w)
        self.L = chart.stiffness
        self.w = chart.w
        self.winv = np.where(chart.w > 0, 1.0 / np.where(chart.w > 0, chart.w, 1.0), 0.0)
        self.rho_m4 = chart.rho ** -4.0
        self.K = chart.K
        self.free = chart.free.astype(float)


class _GaugedOp:
    """``rho^2 d_zbar`` followed by removal of the harmonic (0,2) coefficients.

    On a closed chart the continuous operator misses a finite-dimensional space
    of harmonic representatives; a square difference matrix generically does
    not, so every class would look exact.  Projecting those representatives
    out of the range restores the cokernel, and the complementary kernel in
    ``F`` is gauge-fixed by :meth:`project_F`.
    """

    def __init__(self, raw, harmonic, w4, adjoint=False):
        self.raw = raw
        self.E = harmonic
        self.w4 = w4
        self.adjoint = adjoint

    @property
    def H(self):
        return _GaugedOp(self.raw, self.E, self.w4, adjoint=not self.adjoint)

    def __matmul__(self, x):
        if self.E is None:
            return (self.raw.conj().T @ x) if self.adjoint else self.raw @ x
        if self.adjoint:
            y = x - self.w4 * (self.E @ (self.E.conj().T @ x))
            return self.raw.conj().T @ y
        y = self.raw @ x
        return y - self.E @ (self.E.conj().T @ (self.w4 * y))

    def kernel(self, w):
        """Weighted-orthonormal basis of ``{F : P F harmonic}``, or ``None``."""
        if self.E is None:
            return None
        from scipy.sparse.linalg import splu
        lu = splu(self.raw.tocsc().astype(complex))
        return _orthonormal(np.column_stack([lu.solve(e) for e in self.E.T]), w)


def _orthonormal(V, w):
    # Gram-Schmidt twice in the complex inner product sum w x conj(y)
    V = np.array(V, dtype=complex)
    for _ in range(2):
        for j in range(V.shape[1]):
            for k in range(j):
                V[:, j] -= V[:, k] * np.sum(w * V[:, j] * np.conj(V[:, k]))
            V[:, j] /= np.sqrt(np.sum(w * np.abs(V[:, j]) ** 2))
    return V


def _discrete_harmonic_space(chart: Chart):
    from .geometry import BolzaChart
    if not isinstance(chart, BolzaChart):
        return None
    from .fields import BASIS_EXPONENTS, quadratic_differential
    cols = [np.conj(quadratic_differential(chart, j)) for j in range(len(BASIS_EXPONENTS))]
    return _orthonormal(np.column_stack(cols), chart.w * chart.rho ** -4.0)


def project_F(chart: Chart, F):
    """Remove the gauge kernel component of ``F`` (identity on charts without one)."""
    G = ops(chart).kernel
    if G is None:
        return F
    return F - G @ (G.conj().T @ (chart.w * F))


_OPS: "weakref.WeakKeyDictionary[Chart, _Ops]" = weakref.WeakKeyDictionary()


def ops(chart: Chart) -> _Ops:
    if chart not in _OPS:
        _OPS[chart] = _Ops(chart)
    return _OPS[chart]


def _exp2u(u):
    big = float(np.max(np.abs(2.0 * u))) if u.size else 0.0
    if not np.isfinite(big) or big > EXP_GUARD:
        raise DivergingIterate(
            f"diverging iterate: max |2u| = {big:.3g} exceeds {EXP_GUARD:g}")
    return np.exp(2.0 * u)


def _B(o: _Ops, b, F):
    return b + o.P @ F


def _energy_parts(o: _Ops, u, F, b, lam, source=None):
    E = _exp2u(u)
    B = _B(o, b, F)
    s = o.rho_m4 * np.abs(B) ** 2
    dirichlet = 0.5 * float(u @ (o.L @ u))
    linear = float(np.dot(o.w, o.K * u))
    volume = float(np.dot(o.w, E)) * (-0.5 * lam)
    coupling = float(np.dot(o.w, E * s))
    src = 0.0
    if source is not None:
        su, sF = source
        src = -float(np.dot(o.w, su * u + np.real(np.conj(sF) * F)))
    return dirichlet, linear, volume, coupling, src


def _grad(o: _Ops, u, F, b, lam, source=None):
    E = _exp2u(u)
    B = _B(o, b, F)
    s = o.rho_m4 * np.abs(B) ** 2
    Ru = (o.L @ u) * o.winv + o.K + E * (-lam + 2.0 * s)
    RF = 2.0 * (o.PH @ (o.w * E * o.rho_m4 * B)) * o.winv
    if source is not None:
        Ru = Ru - source[0]
        RF = RF - source[1]
    return Ru * o.free, RF * o.free


def _hess(o: _Ops, u, F, b, lam, v, psi):
    v = v * o.free
    psi = psi * o.free
    E = _exp2u(u)
    B = _B(o, b, F)
    s = o.rho_m4 * np.abs(B) ** 2
    dB = o.P @ psi
    Hv = (o.L @ v) * o.winv + E * (2.0 * v * (-lam + 2.0 * s)
                                   + 4.0 * o.rho_m4 * np.real(np.conj(B) * dB))
    Hpsi = 2.0 * (o.PH @ (o.w * E * o.rho_m4 * (2.0 * v * B + dB))) * o.winv
    return Hv * o.free, Hpsi * o.free


def _lam(params) -> float:
    return params.lam if isinstance(params, Params) else float(params)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def functional(state: SolveState, beta: BetaClass, params, *, C: float = 0.0,
               source=None) -> EnergyReport:
    """Evaluate the discrete energy and its parts.

    ``source`` (``(s_u, s_F)`` density arrays) subtracts
    ``sum w (s_u u + Re(conj(s_F) F))``; it is used by manufactured solutions.
    """
    o = ops(state.chart)
    parts = _energy_parts(o, state.u.values, state.F.values, beta.b.values, _lam(params), source)
    return EnergyReport(sum(parts) + C, *parts[:4], C=C, source=parts[4])


def normalization_constant(chart: Chart, beta0: BetaClass, params) -> float:
    """``C`` making the energy vanish at ``u = 0, F = 0`` with representative ``beta0``."""
    ref = functional(SolveState.zeros(chart), beta0, params)
    return -ref.total


def gradient(state: SolveState, beta: BetaClass, params, *, source=None) -> Perturbation:
    """Euler-Lagrange residuals ``(R_u, R_F)``; zero on Dirichlet nodes."""
    o = ops(state.chart)
    Ru, RF = _grad(o, state.u.values, state.F.values, beta.b.values, _lam(params), source)
    return Perturbation.from_arrays(state.chart, Ru, RF)


def hessian_apply(state: SolveState, beta: BetaClass, params,
                  direction: Perturbation) -> Perturbation:
    """Second variation applied to ``direction`` (density form, homogeneous boundary)."""
    o = ops(state.chart)
    Hv, Hpsi = _hess(o, state.u.values, state.F.values, beta.b.values, _lam(params),
                     direction.v.values, direction.psi.values)
    return Perturbation.from_arrays(state.chart, Hv, Hpsi)


def volume(state: SolveState) -> float:
    o = ops(state.chart)
    return float(np.dot(o.w, _exp2u(state.u.values)))


def constrained_functional(state: SolveState, beta: BetaClass, T: float | None = None, *,
                           C: float = 0.0) -> tuple[float, float]:
    """Energy without the volume term, and the volume ``int exp(2u) dmu``."""
    o = ops(state.chart)
    d, lin, _, coup, _ = _energy_parts(o, state.u.values, state.F.values, beta.b.values, 0.0)
    return d + lin + coup + C, volume(state)


def constrained_gradient(state: SolveState, beta: BetaClass) -> tuple[Perturbation, Perturbation]:
    """Density-form gradients of the volume-free energy and of the volume."""
    o = ops(state.chart)
    Ru, RF = _grad(o, state.u.values, state.F.values, beta.b.values, 0.0)
    dvol = 2.0 * _exp2u(state.u.values) * o.free
    chart = state.chart
    return (Perturbation.from_arrays(chart, Ru, RF),
            Perturbation.from_arrays(chart, dvol, np.zeros(chart.size)))


def assemble_solution(state: SolveState, beta: BetaClass, params, *, source=None,
                      trace=None, C: float = 0.0) -> Solution:
    """Derived metric ``rho_h = exp(u) rho``, Hopf coefficient ``alpha = exp(2u) conj(B)``."""
    chart = state.chart
    o = ops(chart)
    lam = _lam(params)
    u = state.u.values
    B = _B(o, beta.b.values, state.F.values)
    E = _exp2u(u)
    alpha = WeightedField(E * np.conj(B), HOPF, chart)
    sol = Solution(state=state, beta=beta, lam=lam, rho_h=np.exp(u) * chart.rho, alpha=alpha,
                   B=WeightedField(B, BETA, chart), trace=list(trace or []))
    sol.grad_norm = gradient(state, beta, lam, source=source).norm()
    sol.r_gauss, sol.r_codazzi = gauss_codazzi_residuals(sol, lam)
    sol.energy = functional(state, beta, lam, C=C, source=source)
    return sol


def gauss_curvature_h(sol: Solution) -> np.ndarray:
    """``K(h) = exp(-2u) (K(g) - Delta_g u)`` with ``-Delta_g u = L u / w``."""
    o = ops(sol.chart)
    minus_lap = (o.L @ sol.u) * o.winv
    return np.exp(-2.0 * sol.u) * (o.K + minus_lap)


def gauss_codazzi_residuals(sol: Solution, params) -> tuple[float, float]:
    """Sup over free nodes of the Gauss defect and of ``|d_zbar alpha|_h``."""
    lam = _lam(params)
    chart = sol.chart
    free = chart.free
    alpha_sq_h = sol.rho_h ** -4 * np.abs(sol.alpha.values) ** 2
    gauss = gauss_curvature_h(sol) - lam + 2.0 * alpha_sq_h
    dbar_a = d_zbar(sol.alpha).values
    codazzi = np.abs(dbar_a) * sol.rho_h ** -3
    return float(np.max(np.abs(gauss[free]))), float(np.max(codazzi[free]))


def second_fundamental_form(sol: Solution, params):
    """Components ``(gamma_zz, gamma_zzbar, gamma_zbarzbar)`` with ``gamma_zzbar = c h_zzbar``."""
    c = params.c if isinstance(params, Params) else float(params)
    a = sol.alpha.values
    return a.copy(), c * sol.rho_h ** 2, np.conj(a)


def report_json(sol: Solution, **extra) -> str:
    keys = ("total", "dirichlet", "linear", "volume", "coupling", "C")
    data = {k: getattr(sol.energy, k) for k in keys}
    data.update(grad_norm=sol.grad_norm, r_gauss=sol.r_gauss, r_codazzi=sol.r_codazzi)
    data.update(extra)
    return json.dumps(data, sort_keys=True)


def energy_difference(state: SolveState, beta: BetaClass, params, du, dF, *,
                      source=None) -> float:
    """``D(state + (du, dF)) - D(state)`` evaluated without cancellation.

    Needed by line searches once energy changes drop below the round-off
    level of the energy itself.
    """
    o = ops(state.chart)
    lam = _lam(params)
    u, F, b = state.u.values, state.F.values, beta.b.values
    E = _exp2u(u)
    _exp2u(u + du)
    dE = E * np.expm1(2.0 * du)
    B = _B(o, b, F)
    dB = o.P @ dF
    s_old = o.rho_m4 * np.abs(B) ** 2
    ds = o.rho_m4 * (2.0 * np.real(np.conj(B) * dB) + np.abs(dB) ** 2)
    out = float(du @ (o.L @ u)) + 0.5 * float(du @ (o.L @ du))
    out += float(np.dot(o.w, o.K * du))
    out += float(np.dot(o.w, dE)) * (-0.5 * lam)
    out += float(np.dot(o.w, dE * (s_old + ds) + E * ds))
    if source is not None:
        su, sF = source
        out -= float(np.dot(o.w, su * du + np.real(np.conj(sF) * dF)))
    return out


def hessian_diagonal(state: SolveState, beta: BetaClass, params) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal of the density-form Hessian for ``u`` and for each real part of ``F``."""
    o = ops(state.chart)
    lam = _lam(params)
    u = state.u.values
    E = _exp2u(u)
    B = _B(o, beta.b.values, state.F.values)
    s = o.rho_m4 * np.abs(B) ** 2
    du = o.L.diagonal() * o.winv + 2.0 * E * (-lam + 2.0 * s)
    P2 = o.P_raw.multiply(o.P_raw.conj()).real
    dF = 2.0 * (P2.T @ (o.w * E * o.rho_m4)) * o.winv
    return du, dF
