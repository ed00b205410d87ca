"""Newton-Krylov minimization of the energy, continuation in the class, and the
volume-constrained problem.

All Krylov work happens on the free degrees of freedom packed as one real
vector ``[u, Re F, Im F]``.  The density-form Hessian is self-adjoint for the
quadrature-weighted inner product, so CG and Lanczos run in that inner product
with no change of variables.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from . import donaldson as dn
from .donaldson import DivergingIterate, Solution, SolveState
from .fields import BetaClass
from .geometry import Chart


class SolverError(RuntimeError):
    """Base class for solver failures other than a diverging iterate."""


class NewtonFailure(SolverError):
    pass


class CGBreakdown(SolverError):
    """Non-positive curvature met inside CG; the Hessian is not positive definite here."""

    def __init__(self, msg, rayleigh):
        super().__init__(msg)
        self.rayleigh = rayleigh


class ContinuationFailure(SolverError):
    def __init__(self, msg, last_t):
        super().__init__(msg)
        self.last_t = last_t


class KKTError(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    tol_grad: float = 1e-10
    tol_abs: float = 1e-13
    max_newton: int = 50
    cg_tol: float = 1e-8
    cg_max: int = 2000
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtrack: int = 30
    steps: int = 10
    max_halvings: int = 8
    guard: float = 50.0
    vol_collapse: float = 1e-8
    probe_eigs: bool = False

    def __post_init__(self):
        for k, v in asdict(self).items():
            if isinstance(v, bool):
                continue
            if not v > 0:
                raise ValueError(f"solver option {k} must be positive, got {v}")
        if not 0 < self.backtrack < 1 or not 0 < self.armijo < 1:
            raise ValueError("armijo and backtrack must lie in (0, 1)")

    def as_dict(self):
        return asdict(self)


@dataclass
class ContinuationTrace:
    t: list = field(default_factory=list)
    newton_iterations: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    min_eig: list = field(default_factory=list)
    halvings: int = 0

    def add(self, t, its, gnorm, eig):
        self.t.append(float(t))
        self.newton_iterations.append(int(its))
        self.grad_norm.append(float(gnorm))
        self.min_eig.append(None if eig is None else float(eig))

    def rows(self):
        return list(zip(self.t, self.newton_iterations, self.grad_norm, self.min_eig))

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class EigenEstimate:
    value: float
    lower: float
    upper: float
    spread: float
    steps: int

    def __float__(self):
        return self.value

    def as_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# Packed problem on free nodes
# ---------------------------------------------------------------------------


class _Packed:
    def __init__(self, chart: Chart, beta: BetaClass, lam: float, source=None):
        self.chart = chart
        self.beta = beta
        self.lam = lam
        self.source = source
        self.o = dn.ops(chart)
        self.idx = np.flatnonzero(chart.free)
        wf = chart.w[self.idx]
        self.wt = np.concatenate([wf, wf, wf])
        self.m = self.idx.size
        G = self.o.kernel
        self.G = None if G is None else G[self.idx]

    def proj(self, x):
        """Drop the gauge-kernel part of the ``F`` block (weighted-orthogonal)."""
        if self.G is None:
            return x
        v, psi = self.unpack(x)
        psi = dn.project_F(self.chart, psi)
        return self.pack(v, psi)

    def pack(self, v, psi):
        i = self.idx
        return np.concatenate([v[i], psi[i].real, psi[i].imag])

    def unpack(self, x):
        m, i = self.m, self.idx
        v = np.zeros(self.chart.size)
        psi = np.zeros(self.chart.size, dtype=complex)
        v[i] = x[:m]
        psi[i] = x[m:2 * m] + 1j * x[2 * m:]
        return v, psi

    def dot(self, x, y):
        return float(np.dot(self.wt, x * y))

    def norm(self, x):
        return math.sqrt(max(self.dot(x, x), 0.0))

    def grad(self, u, F, lam=None):
        lam = self.lam if lam is None else lam
        Ru, RF = dn._grad(self.o, u, F, self.beta.b.values, lam, self.source)
        return self.pack(Ru, RF)

    def hess(self, u, F, lam=None):
        lam = self.lam if lam is None else lam
        b = self.beta.b.values

        def apply(x):
            v, psi = self.unpack(x)
            return self.pack(*dn._hess(self.o, u, F, b, lam, v, psi))
        return apply

    def diag(self, u, F, lam=None):
        lam = self.lam if lam is None else lam
        st = SolveState.from_arrays(self.chart, u, F)
        du, dF = dn.hessian_diagonal(st, self.beta, lam)
        i = self.idx
        return np.concatenate([du[i], dF[i], dF[i]])


def _pcg(P: _Packed, apply, rhs, diag, tol, maxit, truncate=False):
    """Jacobi-preconditioned CG in the weighted inner product.

    Returns ``(x, iterations, converged, rayleigh)``.  On a direction of
    non-positive curvature it raises :class:`CGBreakdown`, or with
    ``truncate`` stops and returns the iterate so far (the preconditioned
    residual if that is still zero) together with the offending Rayleigh
    quotient; ``rayleigh`` is ``None`` otherwise.
    """
    dinv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    x = np.zeros_like(rhs)
    r = rhs.copy()
    bn = P.norm(rhs)
    if bn == 0.0:
        return x, 0, True, None
    z = P.proj(dinv * r)
    p = z.copy()
    rz = P.dot(r, z)
    for k in range(maxit):
        Ap = apply(p)
        pAp = P.dot(p, Ap)
        if not pAp > 0.0:
            rq = pAp / max(P.dot(p, p), 1e-300)
            if truncate:
                return (x if k else p), k, False, rq
            raise CGBreakdown(
                f"CG breakdown at iteration {k}: Rayleigh quotient {rq:.3e} <= 0; "
                "the Hessian is not positive definite (lambda >= 0?)", rq)
        a = rz / pAp
        x += a * p
        r -= a * Ap
        if P.norm(r) <= tol * bn:
            return x, k + 1, True, None
        z = P.proj(dinv * r)
        rz_new = P.dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, maxit, False, None


def _check_volume(chart, u, vol0, cfg):
    vol = float(np.dot(chart.w, np.exp(2.0 * u)))
    if vol < cfg.vol_collapse * vol0:
        hint = ""
        if chart.closed and np.all(chart.K == 0.0):
            hint = ("; no critical point exists: by Gauss-Bonnet a closed surface with "
                    "lambda < 0 needs negative Euler characteristic, the torus has chi = 0")
        raise DivergingIterate(
            f"diverging iterate: volume collapse, vol/vol0 = {vol / vol0:.3e}{hint}")


def _initial_arrays(chart, init):
    if init is None:
        return np.zeros(chart.size), np.zeros(chart.size, dtype=complex)
    if init.chart is not chart:
        raise ValueError("initial state lives on a different chart")
    F = init.F.values.astype(complex)
    if chart.closed:
        F = dn.project_F(chart, F)
    return init.u.values.astype(float).copy(), F.copy()


# ---------------------------------------------------------------------------
# Newton
# ---------------------------------------------------------------------------


def newton_solve(chart: Chart, beta: BetaClass, params, init: SolveState | None = None,
                 config: SolverConfig | None = None, *, source=None, C: float = 0.0,
                 g_ref: float | None = None) -> Solution:
    """Damped Newton-CG minimization of the energy.

    Dirichlet nodes keep the values of ``init``.  On charts with a gauge
    kernel the initial ``F`` is projected off it.  The stopping test is
    ``|grad| <= tol_grad * g_ref + tol_abs`` with ``g_ref`` the initial
    gradient norm unless given.
    """
    cfg = config or SolverConfig()
    lam = dn._lam(params)
    if lam > 0:
        raise ValueError(f"unconstrained solve needs lambda <= 0, got {lam}")
    if beta.b.chart is not chart:
        raise ValueError("beta lives on a different chart")
    P = _Packed(chart, beta, lam, source)
    u, F = _initial_arrays(chart, init)
    old_guard = dn.EXP_GUARD
    dn.EXP_GUARD = cfg.guard
    try:
        vol0 = float(np.dot(chart.w, dn._exp2u(u)))
        g = P.grad(u, F)
        gnorm = P.norm(g)
        ref = gnorm if g_ref is None else g_ref
        tol = cfg.tol_grad * ref + cfg.tol_abs
        st = SolveState.from_arrays(chart, u, F)
        energy = dn.functional(st, beta, lam, C=C, source=source).total
        trace = [{"step": 0, "energy": energy, "grad_norm": gnorm, "step_length": 0.0,
                  "cg_iterations": 0, "negative_curvature": None, "ratio": None}]
        it = 0
        while gnorm > tol:
            if it >= cfg.max_newton:
                raise NewtonFailure(
                    f"Newton reached max_newton={cfg.max_newton} with |grad| = {gnorm:.3e} "
                    f"(target {tol:.3e})")
            # positivity is only guaranteed near a critical point; away from one a
            # truncated step is still a descent direction when lambda < 0
            d, cg_its, cg_ok, neg = _pcg(P, P.hess(u, F), -g, P.diag(u, F), cfg.cg_tol,
                                         cfg.cg_max, truncate=lam < 0)
            slope = P.dot(g, d)
            if not slope < 0:
                raise NewtonFailure(f"Newton direction is not a descent direction (slope {slope:.3e})")
            du, dF = P.unpack(d)
            t = 1.0
            for _ in range(cfg.max_backtrack):
                try:
                    dE = dn.energy_difference(st, beta, lam, t * du, t * dF, source=source)
                except DivergingIterate:
                    dE = math.inf
                if dE <= cfg.armijo * t * slope and dE < 0:
                    break
                t *= cfg.backtrack
            else:
                raise NewtonFailure(
                    f"line search failed after {cfg.max_backtrack} backtracks at |grad| = {gnorm:.3e}")
            u = u + t * du
            F = F + t * dF
            _check_volume(chart, u, vol0, cfg)
            st = SolveState.from_arrays(chart, u, F)
            energy += dE
            g_prev = gnorm
            g = P.grad(u, F)
            gnorm = P.norm(g)
            it += 1
            trace.append({"step": it, "energy": energy, "grad_norm": gnorm, "step_length": t,
                          "cg_iterations": cg_its, "cg_converged": cg_ok,
                          "negative_curvature": neg,
                          "ratio": gnorm / g_prev ** 2 if g_prev > 0 else None})
        sol = dn.assemble_solution(st, beta, lam, source=source, trace=trace, C=C)
    finally:
        dn.EXP_GUARD = old_guard
    sol.converged = True
    return sol


# ---------------------------------------------------------------------------
# Continuation
# ---------------------------------------------------------------------------


def continuation_solve(chart: Chart, beta: BetaClass, params, config: SolverConfig | None = None,
                       *, init: SolveState | None = None, steps: int | None = None):
    """Solve for ``t * beta`` with ``t`` ramping to 1, warm-starting each step.

    A failed step is retried with half the increment, at most ``max_halvings``
    times in a row.
    """
    cfg = config or SolverConfig()
    steps = cfg.steps if steps is None else int(steps)
    if steps < 1:
        raise ValueError("steps must be positive")
    trace = ContinuationTrace()
    if not np.any(beta.b.values):
        sol = newton_solve(chart, beta, params, init, cfg)
        trace.add(1.0, len(sol.trace) - 1, sol.grad_norm, _probe(sol, cfg))
        return sol, trace
    lam = dn._lam(params)
    g_ref = _Packed(chart, beta, lam).norm(
        _Packed(chart, beta, lam).grad(*_initial_arrays(chart, init)))
    state = init
    t, dt = 0.0, 1.0 / steps
    min_dt = dt / 2 ** cfg.max_halvings
    sol = None
    while t < 1.0:
        t_next = min(1.0, t + dt)
        if 1.0 - t_next < 1e-12:
            t_next = 1.0
        try:
            sol = newton_solve(chart, beta.scaled(t_next), params, state, cfg, g_ref=g_ref)
        except (DivergingIterate, SolverError) as exc:
            dt *= 0.5
            trace.halvings += 1
            if dt < min_dt:
                raise ContinuationFailure(
                    f"continuation stalled at t = {t:.6g}: {exc}", t) from exc
            continue
        t = t_next
        state = sol.state
        trace.add(t, len(sol.trace) - 1, sol.grad_norm, _probe(sol, cfg))
    sol.beta = beta
    return sol, trace


def _probe(sol, cfg):
    if not cfg.probe_eigs:
        return None
    return min_eig_estimate(sol, probes=1, steps=40).value


# ---------------------------------------------------------------------------
# Volume constraint
# ---------------------------------------------------------------------------


def constrained_solve(chart: Chart, beta: BetaClass, T: float, config: SolverConfig | None = None,
                      *, init: SolveState | None = None, vol_tol: float = 1e-12):
    """Critical point of the volume-free energy on ``{vol = T}``.

    Bordered Newton on ``(u, F, lambda)``; each step eliminates ``lambda``
    through two CG solves with the same Hessian.  Returns the solution and the
    recovered multiplier.
    """
    cfg = config or SolverConfig()
    if not T > 0:
        raise ValueError(f"target volume must be positive, got {T}")
    if not chart.closed:
        raise ValueError("the volume constraint needs a closed chart")
    if init is None:
        u = np.full(chart.size, 0.5 * math.log(T / chart.area))
        F = np.zeros(chart.size, dtype=complex)
    else:
        u, F = _initial_arrays(chart, init)
    o = dn.ops(chart)
    b = beta.b.values

    def multiplier(u, F):
        # integrated u-equation on a closed surface
        E = np.exp(2.0 * u)
        s = o.rho_m4 * np.abs(b + o.P @ F) ** 2
        return float((np.dot(o.w, o.K) + 2.0 * np.dot(o.w, E * s)) / np.dot(o.w, E))

    lam = multiplier(u, F) if init is None else multiplier(u, F)
    P = _Packed(chart, beta, lam)
    g = P.grad(u, F, lam)
    ref = max(P.norm(g), 1.0)
    trace = []
    for it in range(cfg.max_newton + 1):
        E = dn._exp2u(u)
        vol = float(np.dot(o.w, E))
        c = vol - T
        gnorm = P.norm(g)
        trace.append({"step": it, "lambda": lam, "grad_norm": gnorm, "vol_defect": c / T})
        if gnorm <= cfg.tol_grad * ref + cfg.tol_abs and abs(c) <= vol_tol * T:
            break
        if it == cfg.max_newton:
            raise NewtonFailure(f"constrained Newton did not converge: |grad| = {gnorm:.3e}, "
                                f"vol defect = {c / T:.3e}")
        H = P.hess(u, F, lam)
        D = P.diag(u, F, lam)
        try:
            d1, *_ = _pcg(P, H, -g, D, cfg.cg_tol * 1e-2, cfg.cg_max)
            e = P.pack(E, np.zeros(chart.size))
            d2, *_ = _pcg(P, H, e, D, cfg.cg_tol * 1e-2, cfg.cg_max)
        except CGBreakdown as exc:
            raise KKTError(f"degenerate KKT system at lambda = {lam:.6g}: {exc}") from exc
        m = P.m
        denom = 2.0 * float(np.dot(P.wt[:m], E[P.idx] * d2[:m]))
        if not denom > 1e-14 * vol:
            raise KKTError(f"degenerate KKT system: bordered pivot {denom:.3e}")
        dlam = (-c - 2.0 * float(np.dot(P.wt[:m], E[P.idx] * d1[:m]))) / denom
        d = d1 + dlam * d2
        du, dF = P.unpack(d)

        def merit(gv, cv):
            return P.dot(gv, gv) + cv * cv / T

        phi0 = merit(g, c)
        t = 1.0
        for _ in range(cfg.max_backtrack):
            try:
                un, Fn, ln = u + t * du, F + t * dF, lam + t * dlam
                gn = P.grad(un, Fn, ln)
                cn = float(np.dot(o.w, dn._exp2u(un))) - T
                if merit(gn, cn) <= (1.0 - cfg.armijo * t) * phi0 or phi0 < 1e-28:
                    break
            except DivergingIterate:
                pass
            t *= cfg.backtrack
        else:
            raise KKTError("bordered Newton line search failed; constraint may be infeasible")
        u, F, lam, g = un, Fn, ln, gn
    st = SolveState.from_arrays(chart, u, F)
    sol = dn.assemble_solution(st, beta, lam, trace=trace)
    sol.converged = True
    return sol, lam


# ---------------------------------------------------------------------------
# Spectral probe
# ---------------------------------------------------------------------------


def _lanczos(P: _Packed, apply, q0, steps, tol):
    Q = np.zeros((steps, q0.size))
    alpha, beta = [], []
    q = q0 / P.norm(q0)
    b_prev = 0.0
    theta, resid = math.nan, math.inf
    for j in range(steps):
        Q[j] = q
        z = apply(q)
        a = P.dot(q, z)
        z -= a * q
        if j:
            z -= b_prev * Q[j - 1]
        for _ in range(2):
            # rounding feeds the gauge kernel back in once the space is nearly exhausted
            z = P.proj(z)
            z -= Q[:j + 1].T @ (Q[:j + 1] @ (P.wt * z))
        b = P.norm(z)
        alpha.append(a)
        if j % 5 == 4 or j == steps - 1 or b <= 1e-13 * abs(a):
            ev, vec = eigh_tridiagonal(np.array(alpha), np.array(beta), select="i",
                                       select_range=(0, 0))
            theta, resid = float(ev[0]), abs(b * vec[-1, 0])
            if resid <= tol * max(1.0, abs(theta)) or b <= 1e-13 * abs(a):
                return theta, resid, j + 1
        beta.append(b)
        b_prev = b
        q = z / b
    return theta, resid, steps


def min_eig_estimate(solution: Solution, probes: int = 3, *, steps: int | None = None,
                     seed: int = 0, tol: float = 1e-9, params=None) -> EigenEstimate:
    """Smallest eigenvalue of the Hessian at ``solution`` by Lanczos.

    Each probe starts from a seeded random vector; Ritz values bound the
    minimum from above and the residual gives the lower end.  The result is
    meaningful as a positivity statement only at a critical point.
    """
    chart = solution.chart
    lam = solution.lam if params is None else dn._lam(params)
    P = _Packed(chart, solution.beta, lam)
    apply = P.hess(solution.u, solution.F)
    dim = P.wt.size
    steps = min(dim, 300 if steps is None else int(steps))
    rng = np.random.default_rng(seed)
    vals, res, used = [], [], 0
    for _ in range(max(1, probes)):
        q0 = P.proj(rng.standard_normal(dim))
        th, r, n = _lanczos(P, apply, q0, steps, tol)
        vals.append(th)
        res.append(r)
        used = max(used, n)
    k = int(np.argmin(vals))
    value = vals[k]
    spread = float(max(vals) - min(vals))
    return EigenEstimate(value=value, lower=value - max(res[k], spread), upper=value,
                         spread=spread, steps=used)


def dense_hessian_eigenvalues(solution: Solution, params=None) -> np.ndarray:
    """All eigenvalues of the Hessian by a dense generalized eigensolve (small charts only)."""
    from scipy.linalg import eigh

    lam = solution.lam if params is None else dn._lam(params)
    P = _Packed(solution.chart, solution.beta, lam)
    apply = P.hess(solution.u, solution.F)
    dim = P.wt.size
    if dim > 6000:
        raise ValueError(f"dense eigensolve refused for {dim} unknowns")
    H = np.empty((dim, dim))
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = 1.0
        H[:, j] = P.wt * apply(e)
    H = 0.5 * (H + H.T)
    if P.G is not None:
        # lift the gauge kernel far above the spectrum of interest
        K = np.column_stack([P.pack(np.zeros(P.chart.size), g) for g in P.o.kernel.T]
                            + [P.pack(np.zeros(P.chart.size), 1j * g) for g in P.o.kernel.T])
        WK = P.wt[:, None] * K
        H = H + 1e6 * (WK @ WK.T)
    return eigh(H, np.diag(P.wt), eigvals_only=True)
