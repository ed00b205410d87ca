"""Discretized background charts for the conformal solver.

Three backends share one interface:

* ``torus-patch``: unit square with periodic identification, flat metric,
  trigonometric (spectral) differentiation.
* ``disk-patch``: square ``[-r0, r0]^2`` inside the Poincare disk, Dirichlet
  boundary, second-order summation-by-parts differences.
* ``bolza``: the regular octagon with angles pi/4 and opposite sides glued,
  a closed genus-2 hyperbolic surface.  Stencil values that fall outside the
  octagon are fetched through the side pairings and a local least-squares fit.

Every chart carries flat node arrays (complex position ``z``, conformal factor
``rho``, area weights ``w`` for ``dmu = rho^2 dx dy``, the exact background
curvature ``K`` and a Dirichlet mask) plus sparse derivative and stiffness
operators built on demand.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

BACKENDS = ("torus-patch", "disk-patch", "bolza")


class ChartError(ValueError):
    """Invalid chart construction or use."""


@dataclass(frozen=True)
class Params:
    """Ambient curvature ``k``, mean curvature ``c`` and optional volume ``T``."""

    k: int = -1
    c: float = 0.0
    T: float | None = None

    def __post_init__(self):
        if self.k not in (-1, 0, 1):
            raise ValueError(f"k must be -1, 0 or 1, got {self.k}")
        if not math.isfinite(self.c):
            raise ValueError("c must be finite")
        if self.T is not None and not self.T > 0:
            raise ValueError(f"target volume T must be positive, got {self.T}")

    @property
    def lam(self) -> float:
        return self.k + self.c * self.c

    def require_negative(self):
        if self.k == -1 and abs(self.c) >= 1:
            raise ValueError(f"|c| < 1 is required when k = -1 (got c = {self.c})")
        if not self.lam < 0:
            raise ValueError(
                f"lambda = k + c^2 = {self.lam:g} must be negative for the unconstrained problem"
            )


# ---------------------------------------------------------------------------
# Mobius maps of the unit disk
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeckTransform:
    """Disk automorphism ``z -> (a z + b) / (conj(b) z + conj(a))``.

    ``source`` is the octagon side that is carried onto side ``target``.
    """

    a: complex
    b: complex
    source: int = -1
    target: int = -1

    def __call__(self, z):
        a, b = self.a, self.b
        return (a * z + b) / (np.conj(b) * z + np.conj(a))

    def deriv(self, z):
        a, b = self.a, self.b
        det = abs(a) ** 2 - abs(b) ** 2
        return det / (np.conj(b) * z + np.conj(a)) ** 2

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [np.conj(self.b), np.conj(self.a)]])

    @property
    def det(self) -> float:
        return abs(self.a) ** 2 - abs(self.b) ** 2


def mobius_apply(m: np.ndarray, z):
    return (m[0, 0] * z + m[0, 1]) / (m[1, 0] * z + m[1, 1])


def mobius_deriv(m: np.ndarray, z):
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    return det / (m[1, 0] * z + m[1, 1]) ** 2


def poincare_rho(z):
    return 2.0 / (1.0 - np.abs(z) ** 2)


# ---------------------------------------------------------------------------
# Chart
# ---------------------------------------------------------------------------


class Chart:
    """Immutable discretized background surface.

    Attributes are flat arrays over the ``N`` nodes that carry unknowns.
    ``boundary`` marks Dirichlet nodes (always False on closed charts).
    Derivative operators act on coefficient arrays of a field with conformal
    weight ``(p, q)``; on closed charts the weight selects the ghost-value
    transformation law.
    """

    backend_kind: str
    boundary_spec: str

    def __init__(self, n, h, z, rho, w, K, boundary, grid_index, grid_shape,
                 rho_fn: Callable, meta: dict | None = None):
        self.n = int(n)
        self.h = float(h)
        self.z = np.asarray(z, dtype=complex)
        self.rho = np.asarray(rho, dtype=float)
        self.w = np.asarray(w, dtype=float)
        self.K = np.asarray(K, dtype=float)
        self.boundary = np.asarray(boundary, dtype=bool)
        self.grid_index = np.asarray(grid_index, dtype=np.int64)
        self.grid_shape = tuple(grid_shape)
        self.rho_fn = rho_fn
        self.meta = dict(meta or {})
        self._deriv_cache: dict[tuple[int, int], tuple[sp.csr_matrix, sp.csr_matrix]] = {}
        for arr in (self.z, self.rho, self.w, self.K, self.boundary):
            arr.setflags(write=False)
        if not np.all(np.isfinite(self.rho)) or np.any(self.rho <= 0):
            raise ChartError("conformal factor must be finite and positive at every node")
        if np.any(self.w < 0) or not np.all(np.isfinite(self.w)):
            raise ChartError("quadrature weights must be finite and non-negative")

    @property
    def size(self) -> int:
        return self.z.size

    @property
    def x(self) -> np.ndarray:
        return self.z.real

    @property
    def y(self) -> np.ndarray:
        return self.z.imag

    @property
    def free(self) -> np.ndarray:
        return ~self.boundary

    @property
    def closed(self) -> bool:
        return self.boundary_spec in ("periodic", "automorphic")

    @property
    def area(self) -> float:
        return float(np.sum(self.w))

    def derivatives(self, weight=(0, 0)) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Sparse ``(Dx, Dy)`` acting on coefficients of the given weight."""
        key = tuple(int(v) for v in weight)
        if key not in self._deriv_cache:
            self._deriv_cache[key] = self._build_derivatives(key)
        return self._deriv_cache[key]

    def wirtinger(self, weight=(0, 0)) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """``(d_z, d_zbar)`` with ``d_z = (Dx - i Dy)/2`` and ``d_zbar = (Dx + i Dy)/2``."""
        Dx, Dy = self.derivatives(weight)
        return ((Dx - 1j * Dy) * 0.5).tocsr(), ((Dx + 1j * Dy) * 0.5).tocsr()

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """Symmetric PSD matrix ``L`` with ``u^T L u / 2`` the discrete Dirichlet energy."""
        return self._build_stiffness().tocsr()

    def _build_derivatives(self, weight):
        raise NotImplementedError

    def _build_stiffness(self):
        raise NotImplementedError

    def check_field(self, values) -> np.ndarray:
        values = np.asarray(values)
        if values.shape != (self.size,):
            raise ChartError(
                f"field has shape {values.shape}, chart expects ({self.size},)"
            )
        return values

    def to_grid(self, values, fill=np.nan) -> np.ndarray:
        """Scatter node values onto the full rectangular grid (for output)."""
        values = self.check_field(values)
        dtype = complex if np.iscomplexobj(values) else float
        out = np.full(self.grid_shape, fill, dtype=dtype)
        out[self.grid_index[:, 0], self.grid_index[:, 1]] = values
        return out

    @cached_property
    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.backend_kind.encode())
        digest.update(np.int64(self.n).tobytes())
        for arr in (self.z.view(float), self.rho, self.w):
            digest.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return digest.hexdigest()[:16]

    def __repr__(self):
        return (f"{type(self).__name__}(backend={self.backend_kind!r}, n={self.n}, "
                f"nodes={self.size}, area={self.area:.6g})")


def _edge_stiffness(N, edges_a, edges_b, coef):
    """Assemble ``sum_e coef_e (u_b - u_a)^2`` as ``u^T L u / 2``... times 2."""
    rows = np.concatenate([edges_a, edges_b, edges_a, edges_b])
    cols = np.concatenate([edges_a, edges_b, edges_b, edges_a])
    vals = np.concatenate([coef, coef, -coef, -coef])
    return sp.coo_matrix((vals, (rows, cols)), shape=(N, N)).tocsr()


# ---------------------------------------------------------------------------
# Flat torus
# ---------------------------------------------------------------------------


def spectral_diff_matrix(n: int, period: float = 1.0) -> np.ndarray:
    """Trigonometric first-derivative matrix on ``n`` equispaced periodic nodes.

    For even ``n`` the Nyquist mode is differentiated to zero, which keeps the
    matrix real and antisymmetric.
    """
    if n % 2:
        raise ValueError("spectral matrix implemented for even n only")
    k = np.arange(n)
    diff = k[:, None] - k[None, :]
    with np.errstate(divide="ignore"):
        D = 0.5 * (-1.0) ** diff / np.tan(np.pi * diff / n)
    D[diff == 0] = 0.0
    return D * (2.0 * np.pi / period)


class TorusChart(Chart):
    backend_kind = "torus-patch"
    boundary_spec = "periodic"

    def _build_derivatives(self, weight):
        n = self.n
        D1 = sp.csr_matrix(spectral_diff_matrix(n))
        eye = sp.identity(n, format="csr")
        # node index = j * n + i with x-index i, y-index j
        Dx = sp.kron(eye, D1, format="csr")
        Dy = sp.kron(D1, eye, format="csr")
        return Dx.astype(complex), Dy.astype(complex)

    def _build_stiffness(self):
        Dx, Dy = self.derivatives((0, 0))
        Dx, Dy = Dx.real, Dy.real
        area = self.h * self.h
        return area * (Dx.T @ Dx + Dy.T @ Dy)


def build_flat_torus_patch(n: int) -> TorusChart:
    """Unit-square periodic chart with ``rho = 1`` and ``n x n`` nodes."""
    if n < 8 or n % 2:
        raise ChartError(f"resolution too small / odd: torus needs even n >= 8, got {n}")
    h = 1.0 / n
    j, i = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    z = (i * h + 1j * j * h).ravel()
    rho = np.ones(n * n)
    w = np.full(n * n, h * h)
    grid_index = np.stack([j.ravel(), i.ravel()], axis=1)
    return TorusChart(n, h, z, rho, w, np.zeros(n * n), np.zeros(n * n, bool),
                      grid_index, (n, n), rho_fn=lambda zz: np.ones(np.shape(zz)),
                      meta={"area_exact": 1.0})


# ---------------------------------------------------------------------------
# Hyperbolic disk patch
# ---------------------------------------------------------------------------


class DiskChart(Chart):
    backend_kind = "disk-patch"
    boundary_spec = "dirichlet"

    def __init__(self, *args, nbr=None, **kw):
        super().__init__(*args, **kw)
        # nbr[d] : index of the neighbour in direction d (+x, -x, +y, -y) or -1
        self._nbr = nbr

    def _build_derivatives(self, weight):
        N, h = self.size, self.h
        mats = []
        for plus, minus in ((0, 1), (2, 3)):
            ip, im = self._nbr[plus], self._nbr[minus]
            rows, cols, vals = [], [], []
            idx = np.arange(N)
            both = (ip >= 0) & (im >= 0)
            only_p = (ip >= 0) & (im < 0)
            only_m = (ip < 0) & (im >= 0)
            for sel, entries in (
                (both, ((ip, 0.5 / h), (im, -0.5 / h))),
                (only_p, ((ip, 1.0 / h), (idx, -1.0 / h))),
                (only_m, ((idx, 1.0 / h), (im, -1.0 / h))),
            ):
                for target, coef in entries:
                    rows.append(idx[sel])
                    cols.append(target[sel])
                    vals.append(np.full(int(sel.sum()), coef))
            M = sp.coo_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(N, N),
            ).tocsr()
            mats.append(M.astype(complex))
        return mats[0], mats[1]

    def _build_stiffness(self):
        fx, fy = self.meta["_fx"], self.meta["_fy"]
        a_list, b_list, c_list = [], [], []
        for d, f_cross in ((0, fy), (2, fx)):
            nb = self._nbr[d]
            sel = nb >= 0
            a = np.nonzero(sel)[0]
            b = nb[sel]
            a_list.append(a)
            b_list.append(b)
            c_list.append(np.minimum(f_cross[a], f_cross[b]))
        return _edge_stiffness(self.size, np.concatenate(a_list), np.concatenate(b_list),
                               np.concatenate(c_list))


def build_hyperbolic_disk_patch(n: int, r0: float = 0.5) -> DiskChart:
    """Square ``[-r0, r0]^2`` in the Poincare disk, ``(n+1)^2`` nodes, spacing ``2 r0 / n``.

    Nodes on or outside the unit circle are dropped; any node missing one of
    its four neighbours is a Dirichlet node.
    """
    if not (0 < r0 < 1):
        raise ChartError(f"metric singular at boundary: need 0 < r0 < 1, got {r0}")
    if r0 > 0.8:
        raise ChartError(f"patch radius r0 = {r0} exceeds 0.8")
    if n < 16:
        raise ChartError(f"resolution too small: disk patch needs n >= 16, got {n}")
    m = n + 1
    h = 2.0 * r0 / n
    coords = -r0 + h * np.arange(m)
    coords[-1] = r0
    Y, X = np.meshgrid(coords, coords, indexing="ij")
    Zg = X + 1j * Y
    active = np.abs(Zg) < 1.0 - 1e-12
    index = np.full((m, m), -1, dtype=np.int64)
    jj, ii = np.nonzero(active)
    index[jj, ii] = np.arange(jj.size)
    N = jj.size

    def neighbour(dj, di):
        tj, ti = jj + dj, ii + di
        ok = (tj >= 0) & (tj < m) & (ti >= 0) & (ti < m)
        out = np.full(N, -1, dtype=np.int64)
        out[ok] = index[tj[ok], ti[ok]]
        return out

    nbr = [neighbour(0, 1), neighbour(0, -1), neighbour(1, 0), neighbour(-1, 0)]
    fx = np.where((nbr[0] < 0) | (nbr[1] < 0), 0.5, 1.0)
    fy = np.where((nbr[2] < 0) | (nbr[3] < 0), 0.5, 1.0)
    boundary = np.any(np.stack(nbr) < 0, axis=0)
    z = Zg[jj, ii]
    rho = poincare_rho(z)
    w = rho ** 2 * h * h * fx * fy
    K = -np.ones(N)
    chart = DiskChart(n, h, z, rho, w, K, boundary, np.stack([jj, ii], axis=1), (m, m),
                      rho_fn=poincare_rho, meta={"r0": float(r0), "_fx": fx, "_fy": fy},
                      nbr=nbr)
    return chart


# ---------------------------------------------------------------------------
# Bolza octagon
# ---------------------------------------------------------------------------


def _octagon_vertices(R):
    k = np.arange(8)
    return R * np.exp(1j * (2 * k - 1) * np.pi / 8)


def octagon_interior_angle(R: float) -> float:
    """Interior angle of the regular geodesic octagon with Euclidean circumradius ``R``."""
    v = _octagon_vertices(R)
    v0 = v[0]

    def to_origin(z):
        return (z - v0) / (1 - np.conj(v0) * z)

    return abs(np.angle(to_origin(v[1]) / to_origin(v[7])))


def solve_octagon_radius(target_angle=np.pi / 4, tol=1e-12) -> float:
    """Bisection for the circumradius whose interior angles equal ``target_angle``."""
    lo, hi = 0.05, 0.999
    f_lo = octagon_interior_angle(lo) - target_angle
    if f_lo * (octagon_interior_angle(hi) - target_angle) > 0:
        raise ChartError("octagon closing condition has no root in bracket")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = octagon_interior_angle(mid) - target_angle
        if f_mid * f_lo > 0:
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class OctagonGeometry:
    R: float
    circle_dist: float
    circle_radius: float
    mid_dist: float
    translation: float
    vertices: np.ndarray
    generators: list[DeckTransform] = field(default_factory=list)

    @property
    def translation_length(self) -> float:
        return 2.0 * math.atanh(self.translation)

    @property
    def centers(self) -> np.ndarray:
        """Images of the origin under the generators (Dirichlet-domain neighbours)."""
        return np.array([g(0.0) for g in self.generators])

    def side_function(self, z):
        """``s[k] > 0`` iff ``z`` lies beyond side ``k`` (closer to ``g_k(0)`` than to 0)."""
        z = np.asarray(z, dtype=complex)
        p = self.centers
        zz = z[..., None]
        return np.abs(zz) ** 2 - np.abs(zz - p) ** 2 / (1 - np.abs(p) ** 2)

    def side_points(self, k: int, m: int) -> np.ndarray:
        """``m`` points along geodesic side ``k`` from vertex ``k`` to vertex ``k+1``."""
        c = self.circle_dist * np.exp(1j * k * np.pi / 4)
        a0 = np.angle(self.vertices[k] - c)
        a1 = np.angle(self.vertices[(k + 1) % 8] - c)
        da = (a1 - a0 + np.pi) % (2 * np.pi) - np.pi
        t = np.linspace(0.0, 1.0, m)
        return c + self.circle_radius * np.exp(1j * (a0 + t * da))

    def boundary_polygon(self, per_side=4096) -> np.ndarray:
        pts = [self.side_points(k, per_side + 1)[:-1] for k in range(8)]
        return np.concatenate(pts)

    def reduce(self, z: complex, max_steps=64):
        """Map ``z`` into the octagon; return ``(w, M)`` with ``w = M(z)``."""
        M = np.eye(2, dtype=complex)
        w = complex(z)
        for _ in range(max_steps):
            s = self.side_function(w)
            k = int(np.argmax(s))
            if s[k] <= 1e-14:
                return w, M
            g = self.generators[(k + 4) % 8]
            M = g.matrix @ M
            w = complex(mobius_apply(M, z))
        raise ChartError(f"point {z} could not be reduced into the octagon")


def octagon_geometry() -> OctagonGeometry:
    R = solve_octagon_radius()
    d = (R * R + 1) / (2 * R * math.cos(math.pi / 8))
    r = math.sqrt(d * d - 1)
    m = d - r
    t = 2 * m / (1 + m * m)
    s = 1.0 / math.sqrt(1 - t * t)
    gens = []
    for k in range(8):
        e = np.exp(1j * k * np.pi / 4)
        gens.append(DeckTransform(a=complex(s), b=complex(s * t * e), source=(k + 4) % 8, target=k))
    return OctagonGeometry(R=R, circle_dist=d, circle_radius=r, mid_dist=m, translation=t,
                           vertices=_octagon_vertices(R), generators=gens)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def hyperbolic_ring_area(ring: np.ndarray) -> float:
    """``int rho^2 dx dy`` over a closed polygon ring (Green's theorem, Poincare rho).

    Uses ``rho^2 dx dy = d[2 (x dy - y dx) / (1 - |z|^2)]``; along a straight
    segment ``x dy - y dx`` is constant so only ``2/(1-|z|^2)`` is integrated.
    """
    p = ring[:-1]
    q = ring[1:]
    d = q - p
    zt = p[:, None] + _GL_X[None, :] * d[:, None]
    integ = (2.0 / (1.0 - np.abs(zt) ** 2)) @ _GL_W
    return float(np.sum(np.imag(np.conj(p) * q) * integ))


def _geometry_rings(geom):
    import shapely

    if geom.is_empty:
        return []
    polys = getattr(geom, "geoms", [geom])
    rings = []
    for poly in polys:
        if poly.geom_type != "Polygon" or poly.is_empty:
            continue
        for ring, sign in [(poly.exterior, 1.0)] + [(r, -1.0) for r in poly.interiors]:
            coords = np.asarray(ring.coords)
            zc = coords[:, 0] + 1j * coords[:, 1]
            ccw = shapely.LinearRing(coords).is_ccw
            rings.append((zc, sign if ccw else -sign))
    return rings


class BolzaChart(Chart):
    backend_kind = "bolza"
    boundary_spec = "automorphic"

    def __init__(self, *args, octagon: OctagonGeometry, nbr, ghosts, deck, **kw):
        super().__init__(*args, **kw)
        self.octagon = octagon
        self.deck = list(deck)
        self._nbr = nbr
        self._ghosts = ghosts

    def neighbour_values(self, direction: int, weight=(0, 0)) -> sp.csr_matrix:
        """Matrix returning each node's neighbour value in ``direction`` (+x,-x,+y,-y)."""
        p, q = weight
        N = self.size
        nb = self._nbr[direction]
        direct = nb >= 0
        rows = [np.nonzero(direct)[0]]
        cols = [nb[direct]]
        vals = [np.ones(int(direct.sum()), dtype=complex)]
        g_ids = -nb[~direct] - 1
        g_rows = np.nonzero(~direct)[0]
        gh = self._ghosts
        for r, g in zip(g_rows, g_ids):
            idx, coef, jac = gh["idx"][g], gh["coef"][g], gh["jac"][g]
            factor = jac ** p * np.conj(jac) ** q
            rows.append(np.full(idx.size, r))
            cols.append(idx)
            vals.append(coef * factor)
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
        ).tocsr()

    def _build_derivatives(self, weight):
        S = [self.neighbour_values(d, weight) for d in range(4)]
        inv2h = 0.5 / self.h
        return ((S[0] - S[1]) * inv2h).tocsr(), ((S[2] - S[3]) * inv2h).tocsr()

    def _build_stiffness(self):
        # sum over nodes of a_i * (1/4) * sum_dir (u_nb - u_i)^2 ; a_i = Euclidean cell fraction
        a = self.w / (self.rho ** 2 * self.h ** 2)
        A = sp.diags(a)
        eye = sp.identity(self.size, format="csr")
        L = sp.csr_matrix((self.size, self.size))
        for d in range(4):
            G = (self.neighbour_values(d, (0, 0)).real - eye)
            L = L + 0.5 * (G.T @ A @ G)
        return L


def _ls_interpolation_weights(pts: np.ndarray, w: complex, h: float):
    """Least-squares cubic (fallback quadratic) weights reproducing the value at ``w``."""
    dx = (pts.real - w.real) / h
    dy = (pts.imag - w.imag) / h
    for deg in (3, 2):
        cols = [dx ** a * dy ** b for tot in range(deg + 1) for a in range(tot + 1)
                for b in [tot - a]]
        V = np.stack(cols, axis=1)
        if np.linalg.cond(V) < 1e8:
            return np.linalg.pinv(V)[0]
    raise ChartError(f"ill-conditioned ghost interpolation near {w}")


def build_bolza_octagon(n: int, *, ghost_stencil: int = 16,
                        keep_fraction: float = 0.5) -> BolzaChart:
    """Genus-2 Bolza surface: regular octagon, opposite sides paired.

    Nodes sit at centres of an ``n x n`` grid of square cells covering
    ``[-R, R]^2`` (``R`` the octagon circumradius).  A node carries an
    unknown when at least ``keep_fraction`` of its cell lies in the octagon;
    smaller clipped pieces are credited to the nearest kept node so the
    weights tile the octagon exactly.
    """
    import shapely

    if n < 32:
        raise ChartError(f"resolution too small for octagon mesh: need n >= 32, got {n}")
    geo = octagon_geometry()
    R = geo.R
    h = 2 * R / n
    coords = -R + h * (np.arange(n) + 0.5)
    Y, X = np.meshgrid(coords, coords, indexing="ij")
    Zg = (X + 1j * Y).ravel()

    poly_pts = geo.boundary_polygon()
    octagon = shapely.Polygon(np.stack([poly_pts.real, poly_pts.imag], axis=1))
    shapely.prepare(octagon)
    boxes = shapely.box(Zg.real - h / 2, Zg.imag - h / 2, Zg.real + h / 2, Zg.imag + h / 2)
    inside = shapely.contains(octagon, boxes)
    touches = shapely.intersects(octagon, boxes)

    area_e = np.zeros(Zg.size)
    area_h = np.zeros(Zg.size)
    area_e[inside] = h * h
    full_idx = np.nonzero(inside)[0]
    for idx in full_idx:
        corners = Zg[idx] + h / 2 * np.array([-1 - 1j, 1 - 1j, 1 + 1j, -1 + 1j, -1 - 1j])
        area_h[idx] = hyperbolic_ring_area(corners)
    cut_idx = np.nonzero(touches & ~inside)[0]
    clipped = shapely.intersection(boxes[cut_idx], octagon)
    for idx, geom in zip(cut_idx, clipped):
        area_e[idx] = geom.area
        area_h[idx] = sum(s * hyperbolic_ring_area(r) for r, s in _geometry_rings(geom))

    keep = area_e >= keep_fraction * h * h
    kept = np.nonzero(keep)[0]
    tree = cKDTree(np.stack([Zg[kept].real, Zg[kept].imag], axis=1))
    orphans = np.nonzero(~keep & (area_h > 0))[0]
    w_full = area_h.copy()
    if orphans.size:
        _, near = tree.query(np.stack([Zg[orphans].real, Zg[orphans].imag], axis=1))
        np.add.at(w_full, kept[near], area_h[orphans])

    N = kept.size
    index = np.full(n * n, -1, dtype=np.int64)
    index[kept] = np.arange(N)
    z = Zg[kept]
    w = w_full[kept]
    jj, ii = np.divmod(kept, n)

    ghosts = {"idx": [], "coef": [], "jac": [], "pos": []}
    ghost_lookup: dict[tuple[int, int], int] = {}
    nbr = []
    for dj, di in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        out = np.empty(N, dtype=np.int64)
        for k in range(N):
            tj, ti = jj[k] + dj, ii[k] + di
            if 0 <= tj < n and 0 <= ti < n and index[tj * n + ti] >= 0:
                out[k] = index[tj * n + ti]
                continue
            key = (int(tj), int(ti))
            if key not in ghost_lookup:
                zg = complex(-R + h * (ti + 0.5), -R + h * (tj + 0.5))
                wpt, M = geo.reduce(zg)
                _, near = tree.query([wpt.real, wpt.imag], k=ghost_stencil)
                coef = _ls_interpolation_weights(z[near], wpt, h)
                ghost_lookup[key] = len(ghosts["idx"])
                ghosts["idx"].append(np.asarray(near, dtype=np.int64))
                ghosts["coef"].append(coef.astype(complex))
                ghosts["jac"].append(complex(mobius_deriv(M, zg)))
                ghosts["pos"].append(zg)
            out[k] = -ghost_lookup[key] - 1
        nbr.append(out)

    rho = poincare_rho(z)
    chart = BolzaChart(
        n, h, z, rho, w, -np.ones(N), np.zeros(N, bool), np.stack([jj, ii], axis=1), (n, n),
        rho_fn=poincare_rho,
        meta={"circumradius": geo.R, "translation_length": geo.translation_length,
              "side_distance": geo.mid_dist, "ghosts": len(ghosts["idx"]),
              "area_exact": 4 * np.pi},
        octagon=geo, nbr=nbr, ghosts=ghosts, deck=geo.generators,
    )
    report = verify_side_pairings(chart)
    if not report.passed:
        raise ChartError(f"side-pairing verification failed: {report.failures}")
    return chart


# ---------------------------------------------------------------------------
# Quadrature, curvature, pairing audit
# ---------------------------------------------------------------------------


def integrate(chart: Chart, density) -> float:
    """``sum_i w_i f_i`` (``w_i`` carries ``rho^2 dx dy``)."""
    density = chart.check_field(density)
    if np.iscomplexobj(density):
        if np.any(density.imag):
            return complex(np.dot(chart.w, density))
        density = density.real
    return float(np.dot(chart.w, density))


_FD6 = np.array([2.0, -27.0, 270.0, -490.0, 270.0, -27.0, 2.0]) / 180.0


def background_curvature(chart: Chart, rho_fn: Callable | None = None) -> np.ndarray:
    """``K(g) = -rho^-2 (d_xx + d_yy) log rho`` by sixth-order central differences.

    ``rho`` is sampled at stencil points ``z + m h`` (``|m| <= 3``) through the
    chart's metric function; constant ``rho`` gives exact zeros.
    """
    fn = rho_fn or chart.rho_fn
    h = chart.h
    z = chart.z
    lap = np.zeros(chart.size)
    for step in (1.0, 1j):
        vals = [np.log(fn(z + (m - 3) * h * step)) for m in range(7)]
        lap += sum(c * v for c, v in zip(_FD6, vals)) / (h * h)
    rho = fn(z)
    return -lap / rho ** 2


@dataclass
class PairingReport:
    passed: bool
    max_defect: float
    side_defect: dict
    isometry_defect: dict
    relator_defect: float
    failures: list

    def as_dict(self):
        return {
            "passed": self.passed, "max_defect": self.max_defect,
            "side_defect": self.side_defect, "isometry_defect": self.isometry_defect,
            "relator_defect": self.relator_defect, "failures": self.failures,
        }


def vertex_cycle_word(deck, geo: OctagonGeometry) -> list[int]:
    """Generator indices met walking once around the (single) vertex class."""
    word = []
    side, vert = 7, 0  # vertex 0 joins sides 7 and 0
    for _ in range(8):
        g = (side + 4) % 8  # carries side ``side`` onto side ``side + 4``
        word.append(g)
        img = deck[g](geo.vertices[vert])
        new_side = (side + 4) % 8
        ends = (new_side, (new_side + 1) % 8)
        vert = min(ends, key=lambda e: abs(geo.vertices[e] - img))
        side = (vert - 1) % 8 if vert == new_side else vert
    return word


def verify_side_pairings(chart: Chart, tol: float = 1e-8, samples: int = 33) -> PairingReport:
    """Check every deck transform maps its source side onto its target side."""
    if not isinstance(chart, BolzaChart):
        raise ChartError("not an automorphic chart: side pairings only exist on bolza")
    geo = chart.octagon
    side_def, iso_def, failures = {}, {}, []
    rng_pts = 0.3 * np.exp(2j * np.pi * np.arange(7) / 7) + 0.1
    for k, g in enumerate(chart.deck):
        src = geo.side_points(g.source, samples)
        img = g(src)
        tgt_ends = geo.vertices[[g.target, (g.target + 1) % 8]]
        c = geo.circle_dist * np.exp(1j * g.target * np.pi / 4)
        on_circle = np.abs(np.abs(img - c) - geo.circle_radius)
        ends = min(max(abs(img[0] - tgt_ends[0]), abs(img[-1] - tgt_ends[1])),
                   max(abs(img[0] - tgt_ends[1]), abs(img[-1] - tgt_ends[0])))
        side_def[k] = float(max(on_circle.max(), ends))
        iso = np.abs(np.abs(g.deriv(rng_pts)) * poincare_rho(g(rng_pts)) / poincare_rho(rng_pts) - 1)
        iso_def[k] = float(iso.max())
        if side_def[k] > tol or iso_def[k] > tol:
            failures.append(f"generator {k} (side {g.source} -> {g.target}): "
                            f"side defect {side_def[k]:.3e}, isometry defect {iso_def[k]:.3e}")
    word = vertex_cycle_word(chart.deck, geo)
    M = np.eye(2, dtype=complex)
    for gidx in word:
        M = chart.deck[gidx].matrix @ M
    M = M / np.sqrt(M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0])
    relator = float(min(np.abs(M - np.eye(2)).max(), np.abs(M + np.eye(2)).max()))
    if relator > tol:
        failures.append(f"vertex relator {word} off identity by {relator:.3e}")
    max_def = max([relator] + list(side_def.values()) + list(iso_def.values()))
    return PairingReport(not failures, max_def, side_def, iso_def, relator, failures)
