"""Weighted tensor fields and the discrete complex calculus on a chart.

A coefficient of weight ``(p, q)`` stands for ``T dz^p dzbar^q``.  Norms use
``g_{z zbar} = rho^2``, so ``|T|_g^2 = rho^(-2(p+q)) |T|^2``; for example a
vector field ``F d/dz`` (weight ``(-1, 0)``) has ``|f|^2 = rho^2 |F|^2`` and a
(0,2) coefficient ``b`` has ``|b|^2 = rho^-4 |b|^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .geometry import BolzaChart, Chart, ChartError, integrate, mobius_apply, mobius_deriv

SCALAR = (0, 0)
VECTOR = (-1, 0)
ONE_FORM = (0, 1)
BETA = (0, 2)
HOPF = (2, 0)


class WeightError(ValueError):
    """Operation applied to a field of the wrong conformal weight."""


@dataclass(frozen=True, eq=False)
class WeightedField:
    values: np.ndarray
    weight: tuple[int, int]
    chart: Chart = field(repr=False)
    real: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values)
        self.chart.check_field(vals)
        if self.real:
            if np.iscomplexobj(vals):
                if np.any(vals.imag != 0):
                    raise WeightError("real-typed field has non-zero imaginary part")
                vals = vals.real
            vals = np.array(vals, dtype=float)
        else:
            vals = np.array(vals, dtype=complex)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "weight", (int(self.weight[0]), int(self.weight[1])))

    def like(self, values, weight=None, real=None) -> "WeightedField":
        return WeightedField(values, self.weight if weight is None else weight, self.chart,
                             self.real if real is None else real)

    def __add__(self, other):
        _same_weight(self, other)
        return self.like(self.values + other.values, real=self.real and other.real)

    def __sub__(self, other):
        _same_weight(self, other)
        return self.like(self.values - other.values, real=self.real and other.real)

    def __mul__(self, scalar):
        if isinstance(scalar, WeightedField):
            raise TypeError("use explicit products of fields")
        return self.like(self.values * scalar,
                         real=self.real and np.isrealobj(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return self.like(-self.values)


def _same_weight(a: WeightedField, b: WeightedField):
    if a.chart is not b.chart:
        raise ChartError("fields live on different charts")
    if a.weight != b.weight:
        raise WeightError(f"weight mismatch {a.weight} vs {b.weight}")


def scalar_field(chart: Chart, values) -> WeightedField:
    return WeightedField(values, SCALAR, chart, real=True)


def vector_field(chart: Chart, values) -> WeightedField:
    return WeightedField(values, VECTOR, chart)


def rho_power(field_: WeightedField, power: int) -> WeightedField:
    """Multiply by ``rho^power`` (``power`` even); ``rho^2`` carries weight (1, 1)."""
    if power % 2:
        raise WeightError("only even powers of rho carry an integer weight")
    s = power // 2
    p, q = field_.weight
    return field_.like(field_.values * field_.chart.rho ** power, weight=(p + s, q + s))


def d_z(field_: WeightedField) -> WeightedField:
    Dz, _ = field_.chart.wirtinger(field_.weight)
    p, q = field_.weight
    return WeightedField(Dz @ field_.values, (p + 1, q), field_.chart)


def d_zbar(field_: WeightedField) -> WeightedField:
    _, Dzb = field_.chart.wirtinger(field_.weight)
    p, q = field_.weight
    return WeightedField(Dzb @ field_.values, (p, q + 1), field_.chart)


def d_zbar_adjoint(y: WeightedField) -> WeightedField:
    """Formal adjoint of ``d_zbar`` for the metric pairing: ``-rho^(2s-2) d_z(rho^(-2s) y)``.

    ``y`` has weight ``(p, q+1)``; the result has weight ``(p, q)`` and ``s = p + q``.
    """
    p, q1 = y.weight
    s = p + q1 - 1
    inner = rho_power(y, -2 * s)
    out = rho_power(d_z(inner), 2 * s - 2)
    return out.like(-out.values)


def total_beta(b: WeightedField, F: WeightedField) -> WeightedField:
    """``B = b + rho^2 d_zbar F``: the representative ``beta + dbar f`` as a (0,2) coefficient."""
    if b.weight != BETA:
        raise WeightError(f"b must have weight (0,2), got {b.weight}")
    if F.weight != VECTOR:
        raise WeightError(f"F must have weight (-1,0), got {F.weight}")
    lowered = rho_power(d_zbar(F), 2)
    return b.like(b.values + lowered.values, weight=BETA, real=False)


def pointwise_norm_sq(field_: WeightedField) -> np.ndarray:
    p, q = field_.weight
    return field_.chart.rho ** (-2 * (p + q)) * np.abs(field_.values) ** 2


def inner_product(x: WeightedField, y: WeightedField) -> complex:
    """``integral rho^(-2(p+q)) x conj(y) dmu`` (linear in ``x``)."""
    _same_weight(x, y)
    p, q = x.weight
    dens = x.chart.rho ** (-2 * (p + q)) * x.values * np.conj(y.values)
    return complex(np.dot(x.chart.w, dens))


def conjugate_dual(field_: WeightedField) -> WeightedField:
    """Coefficient conjugation, exchanging weights (0,2) and (2,0)."""
    if field_.weight not in (BETA, HOPF):
        raise WeightError(f"conjugate dual defined for weights (0,2)/(2,0), got {field_.weight}")
    p, q = field_.weight
    return field_.like(np.conj(field_.values), weight=(q, p), real=False)


@dataclass(frozen=True)
class BetaClass:
    """Representative ``b`` of a (0,2) class together with how it was built."""

    b: WeightedField
    note: str = ""

    def __post_init__(self):
        if self.b.weight != BETA:
            raise WeightError(f"BetaClass needs a weight (0,2) field, got {self.b.weight}")

    @property
    def chart(self) -> Chart:
        return self.b.chart

    def scaled(self, t: float) -> "BetaClass":
        return BetaClass(self.b * t, f"{t:g} * ({self.note})")

    def gauge(self, psi0: WeightedField) -> "BetaClass":
        """Same class, representative ``b + rho^2 d_zbar psi0``."""
        return BetaClass(total_beta(self.b, psi0), f"{self.note} + dbar(psi0)")


def zero_beta(chart: Chart) -> BetaClass:
    return BetaClass(WeightedField(np.zeros(chart.size), BETA, chart), "zero")


def constant_beta(chart: Chart, b0: complex) -> BetaClass:
    """Constant coefficient ``b0``.  On the Bolza chart this is not automorphic."""
    if isinstance(chart, BolzaChart):
        raise ChartError("a constant coefficient is not automorphic on the bolza chart")
    return BetaClass(WeightedField(np.full(chart.size, complex(b0)), BETA, chart),
                     f"constant {complex(b0)}")


# ---------------------------------------------------------------------------
# Automorphic forms on the Bolza surface (truncated Poincare series)
# ---------------------------------------------------------------------------

POINCARE_RADIUS = 10.0
BASIS_EXPONENTS = (0, 2, 4)


@lru_cache(maxsize=4)
def _group_elements(radius: float = POINCARE_RADIUS) -> np.ndarray:
    """Elements ``g`` of the Bolza group with ``d(0, g 0) <= radius``."""
    from .geometry import octagon_geometry

    gens = [g.matrix for g in octagon_geometry().generators]
    rmax = np.tanh(radius / 2)
    seen = {(0.0, 0.0): np.eye(2, dtype=complex)}
    frontier = [np.eye(2, dtype=complex)]
    while frontier:
        nxt = []
        for M in frontier:
            for G in gens:
                P = G @ M
                p = P[0, 1] / P[1, 1]
                if abs(p) > rmax:
                    continue
                key = (round(p.real, 9), round(p.imag, 9))
                if key not in seen:
                    seen[key] = P
                    nxt.append(P)
        frontier = nxt
    keys = sorted(seen)
    return np.array([seen[k] for k in keys])


def _series(z: np.ndarray, m: int, derivative=False) -> np.ndarray:
    """``sum_g g(z)^m g'(z)^2`` (or its z-derivative) over the truncated group."""
    E = _group_elements()
    a, b, c, d = E[:, 0, 0], E[:, 0, 1], E[:, 1, 0], E[:, 1, 1]
    out = np.empty(z.size, dtype=complex)
    for start in range(0, z.size, 256):
        zz = z[start:start + 256, None]
        den = c * zz + d
        gz = (a * zz + b) / den
        jac = 1.0 / den ** 2
        if not derivative:
            out[start:start + 256] = np.sum(gz ** m * jac ** 2, axis=1)
        else:
            jac2 = -2.0 * c / den ** 3
            term = 2.0 * gz ** m * jac * jac2
            if m:
                term = term + m * gz ** (m - 1) * jac ** 3
            out[start:start + 256] = np.sum(term, axis=1)
    return out


def _reduced(chart: BolzaChart, z):
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    wpts = np.empty_like(z)
    jac = np.empty_like(z)
    for i, zi in enumerate(z):
        wi, M = chart.octagon.reduce(zi)
        wpts[i] = wi
        jac[i] = mobius_deriv(M, zi)
    return wpts, jac


def quadratic_differential(chart: BolzaChart, index: int, z=None) -> np.ndarray:
    """Holomorphic quadratic differential ``q_index`` (weight (2,0)) sampled at ``z``.

    Values are computed inside the octagon and carried to other points by the
    transformation law, so sampled fields are exactly automorphic.
    """
    if not isinstance(chart, BolzaChart):
        raise ChartError("quadratic differential basis only exists on the bolza chart")
    if index not in range(len(BASIS_EXPONENTS)):
        raise ValueError(f"basis index must be 0..{len(BASIS_EXPONENTS) - 1}, got {index}")
    z = chart.z if z is None else z
    wpts, jac = _reduced(chart, z)
    return _series(wpts, BASIS_EXPONENTS[index]) * jac ** 2


@lru_cache(maxsize=16)
def _basis_scale(index: int) -> float:
    from .geometry import octagon_geometry, poincare_rho

    geo = octagon_geometry()
    r = np.linspace(0, 0.999, 40) * geo.mid_dist
    pts = (r[:, None] * np.exp(2j * np.pi * np.arange(32) / 32)[None, :]).ravel()
    q = _series(pts, BASIS_EXPONENTS[index])
    return float(np.max(np.abs(q) / poincare_rho(pts) ** 2))


def bolza_beta(chart: BolzaChart, coeffs: dict[int, complex]) -> BetaClass:
    """``b = sum_j c_j conj(q_j) / s_j`` with ``s_j`` normalising ``max |q_j|_g`` to 1."""
    total = np.zeros(chart.size, dtype=complex)
    for idx, coef in coeffs.items():
        total += complex(coef) * np.conj(quadratic_differential(chart, idx)) / _basis_scale(idx)
    note = " + ".join(f"{complex(c)}*basis{j}" for j, c in sorted(coeffs.items()))
    return BetaClass(WeightedField(total, BETA, chart), note or "zero")


def bolza_gauge_function(chart: BolzaChart, index: int = 0, scale: float = 1.0):
    """Smooth automorphic vector field ``psi = rho^-2 d_zbar(|q|_g^2)`` as a callable.

    Returns ``psi(z)`` (weight (-1,0) coefficient) for any ``z`` in the disk.
    """
    m = BASIS_EXPONENTS[index]
    s = _basis_scale(index)

    def inside(w):
        q = _series(w, m) / s
        dq = _series(w, m, derivative=True) / s
        r2 = np.abs(w) ** 2
        rho_m4 = (1 - r2) ** 4 / 16.0
        dbar_rho_m4 = -w * (1 - r2) ** 3 / 4.0
        dbar_phi = q * np.conj(dq) * rho_m4 + np.abs(q) ** 2 * dbar_rho_m4
        return scale * dbar_phi * (1 - r2) ** 2 / 4.0

    def psi(z):
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        wpts, jac = _reduced(chart, z)
        # F(z) = F(g z) / g'(z) for weight (-1, 0)
        return inside(wpts) / jac

    return psi


def automorphy_defect(chart: BolzaChart, fn, weight, samples: int = 9) -> float:
    """Relative defect of ``fn`` against its weight law across every side pairing."""
    p, q = weight
    worst, scale = 0.0, 0.0
    for g in chart.deck:
        pts = chart.octagon.side_points(g.source, samples + 2)[1:-1]
        jac = g.deriv(pts)
        lhs = fn(pts)
        rhs = fn(g(pts)) * jac ** p * np.conj(jac) ** q
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        scale = max(scale, float(np.max(np.abs(lhs))))
    return worst / max(scale, 1e-300)


def sample(chart: Chart, fn, weight, real=False) -> WeightedField:
    return WeightedField(fn(chart.z), weight, chart, real=real)


__all__ = [
    "WeightedField", "BetaClass", "WeightError", "d_z", "d_zbar", "d_zbar_adjoint",
    "total_beta", "pointwise_norm_sq", "inner_product", "conjugate_dual", "rho_power",
    "zero_beta", "constant_beta", "bolza_beta", "quadratic_differential",
    "bolza_gauge_function", "automorphy_defect", "scalar_field", "vector_field", "sample",
    "integrate", "mobius_apply",
]
