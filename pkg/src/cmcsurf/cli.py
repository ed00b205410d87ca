"""Command-line front end.

Exit codes: 0 ok, 2 configuration error, 3 solver divergence or failure,
4 residual threshold violated, 5 audit failure.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import math
import os
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import donaldson as dn
from . import solver as sv
from . import storage
from . import verify as vf
from .fields import (BETA, BetaClass, WeightedField, bolza_beta, bolza_gauge_function,
                     constant_beta, zero_beta)
from .geometry import BACKENDS, ChartError, Params

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_RESIDUAL, EXIT_AUDIT = 0, 2, 3, 4, 5
EXIT_CODES = {EXIT_OK: "ok", EXIT_CONFIG: "configuration error",
              EXIT_DIVERGED: "solver divergence or failure (Gauss-Bonnet hint on the torus)",
              EXIT_RESIDUAL: "residual threshold violated", EXIT_AUDIT: "audit failure"}
CHECKS = ("gradient", "hessian", "mms", "gauge", "gauss-bonnet", "bochner", "all")
AXES = ("c", "beta-scale")


class ConfigError(ValueError):
    pass


@dataclass
class ProblemConfig:
    backend: str = "disk-patch"
    n: int = 32
    r0: float = 0.5
    k: int = -1
    c: float = 0.0
    beta: str = "zero"
    gauge: str = "none"
    T: float | None = None
    seed: int = 0
    init: str = "zero"
    init_amplitude: float = 0.1
    out: str = "cmc_out"
    continuation: bool = False
    steps: int = 10
    tol_grad: float = 1e-10
    tol_abs: float = 1e-13
    max_newton: int = 50
    cg_tol: float = 1e-8
    cg_max: int = 2000
    max_r_gauss: float = 1e-8
    max_r_codazzi: float = 0.1
    min_eig: bool = True
    axis: str = "c"
    start: float = 0.0
    stop: float = 0.9
    points: int = 10
    which: str = "all"
    trials: int = 5
    mutant: str = "none"
    timing: bool = False

    @property
    def params(self) -> Params:
        return Params(self.k, self.c, self.T)

    def solver_config(self) -> sv.SolverConfig:
        return sv.SolverConfig(tol_grad=self.tol_grad, tol_abs=self.tol_abs,
                               max_newton=self.max_newton, cg_tol=self.cg_tol,
                               cg_max=self.cg_max, steps=self.steps)

    def canonical(self) -> str:
        """Sorted ``key = value`` lines; equal configs give identical text."""
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            v = getattr(self, f.name)
            if v is None:
                continue
            lines.append(f"{f.name} = {_emit(v)}")
        return "\n".join(lines) + "\n"

    def as_dict(self):
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}


_TYPES = {f.name: f.type for f in fields(ProblemConfig)}


def _emit(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return storage.fmt_float(v)
    return str(v)


def _coerce(key: str, raw: str, where: str = ""):
    if key not in _TYPES:
        raise ConfigError(f"{where}unknown key {key!r}")
    typ = _TYPES[key]
    raw = raw.strip()
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            val = float(raw)
        elif typ == "float | None":
            if raw.lower() in ("", "none"):
                return None
            val = float(raw)
        elif typ == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        else:
            return raw
    except ValueError:
        kind = typ.split(" ")[0]
        raise ConfigError(f"{where}key {key!r}: expected {kind}, got {raw!r}") from None
    if not math.isfinite(val):
        raise ConfigError(f"{where}key {key!r}: value must be finite")
    return val


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}: "
        if "=" not in line:
            raise ConfigError(f"{where}expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key in out:
            raise ConfigError(f"{where}duplicate key {key!r}")
        out[key] = _coerce(key, raw, where)
    return out


def parse_config(path=None, overrides: dict | None = None) -> ProblemConfig:
    """Config file (optional) with flag overrides applied on top."""
    values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {str(p)!r} not found")
        values.update(parse_config_text(p.read_text(), str(p)))
    for key, raw in (overrides or {}).items():
        values[key] = _coerce(key, raw, "flag --" + key.replace("_", "-") + ": ")
    return ProblemConfig(**values)


def _complex(text: str, key: str) -> complex:
    try:
        return complex(text.strip().replace("i", "j").replace(" ", ""))
    except ValueError:
        raise ConfigError(f"{key}: malformed complex number {text!r}") from None


def parse_beta_spec(spec: str) -> tuple:
    """``zero`` | ``constant:Z`` | ``file:PATH`` | ``basis:IDX:COEF[,basis:IDX:COEF...]``."""
    spec = spec.strip()
    if spec == "zero":
        return ("zero",)
    if spec.startswith("constant:"):
        return ("constant", _complex(spec.split(":", 1)[1], "beta"))
    if spec.startswith("file:"):
        return ("file", spec.split(":", 1)[1])
    if spec.startswith("basis:"):
        coeffs = {}
        for part in spec.split(","):
            bits = part.strip().split(":")
            if len(bits) != 3 or bits[0] != "basis":
                raise ConfigError(f"beta: malformed basis term {part!r} (want basis:IDX:COEF)")
            try:
                idx = int(bits[1])
            except ValueError:
                raise ConfigError(f"beta: basis index {bits[1]!r} is not an integer") from None
            if idx not in (0, 1, 2):
                raise ConfigError(f"beta: basis index must be 0, 1 or 2, got {idx}")
            coeffs[idx] = coeffs.get(idx, 0) + _complex(bits[2], "beta")
        return ("basis", coeffs)
    raise ConfigError(f"beta: unrecognised spec {spec!r} "
                      "(zero | constant:Z | file:PATH | basis:IDX:COEF)")


def parse_gauge_spec(spec: str) -> tuple:
    """``none`` | ``basis:IDX:SCALE`` (bolza) | ``smooth:AMP`` (patches, seeded)."""
    spec = spec.strip()
    if spec == "none":
        return ("none",)
    bits = spec.split(":")
    try:
        if bits[0] == "basis" and len(bits) == 3:
            return ("basis", int(bits[1]), float(bits[2]))
        if bits[0] == "smooth" and len(bits) == 2:
            return ("smooth", float(bits[1]))
    except ValueError:
        pass
    raise ConfigError(f"gauge: unrecognised spec {spec!r} (none | basis:IDX:SCALE | smooth:AMP)")


def validate(cfg: ProblemConfig, command: str):
    if cfg.backend not in BACKENDS:
        raise ConfigError(f"backend: must be one of {', '.join(BACKENDS)}, got {cfg.backend!r}")
    try:
        params = Params(cfg.k, cfg.c, cfg.T)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    parse_beta_spec(cfg.beta)
    parse_gauge_spec(cfg.gauge)
    if cfg.init not in ("zero", "random"):
        raise ConfigError(f"init: must be 'zero' or 'random', got {cfg.init!r}")
    if cfg.mutant != "none" and cfg.mutant not in vf.MUTANTS:
        raise ConfigError(f"mutant: must be none or one of {', '.join(vf.MUTANTS)}")
    for key in ("trials", "points", "steps"):
        if getattr(cfg, key) < 1:
            raise ConfigError(f"{key}: must be positive")
    if command == "solve-constrained":
        if cfg.T is None:
            raise ConfigError("T: solve-constrained needs a target volume T > 0")
        if cfg.backend != "bolza":
            raise ConfigError("backend: the volume constraint needs a closed surface (bolza)")
        return
    if command in ("solve", "sweep", "check"):
        if command == "sweep" and cfg.axis == "c":
            for c in np.linspace(cfg.start, cfg.stop, cfg.points):
                lam = cfg.k + c * c
                if not lam < 0:
                    raise ConfigError(f"sweep: lambda = k + c^2 = {lam:.6g} >= 0 at c = {c:.6g}; "
                                      "the unconstrained problem needs lambda < 0 on the whole axis")
        else:
            try:
                params.require_negative()
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
    if command == "sweep" and cfg.axis not in AXES:
        raise ConfigError(f"axis: must be one of {', '.join(AXES)}, got {cfg.axis!r}")
    if command == "check":
        if cfg.which not in CHECKS:
            raise ConfigError(f"which: must be one of {', '.join(CHECKS)}, got {cfg.which!r}")
        if cfg.which == "gauss-bonnet" and cfg.backend != "bolza":
            raise ConfigError("check gauss-bonnet needs a closed surface of negative Euler "
                              "characteristic (backend bolza)")
        if cfg.which == "bochner" and cfg.backend == "disk-patch":
            raise ConfigError("check bochner needs a closed surface (torus-patch or bolza)")
        if cfg.which == "mms" and cfg.backend != "disk-patch":
            raise ConfigError("check mms runs on the disk patch")
        if cfg.which == "gauge" and cfg.backend == "torus-patch":
            raise ConfigError("check gauge needs a solvable problem; the torus has none for lambda < 0")


# ---------------------------------------------------------------------------
# Problem construction
# ---------------------------------------------------------------------------


def build_problem(cfg: ProblemConfig):
    try:
        chart = storage.build_chart(cfg.backend, cfg.n, cfg.r0)
    except ChartError as exc:
        raise ConfigError(f"chart: {exc}") from None
    kind = parse_beta_spec(cfg.beta)
    try:
        if kind[0] == "zero":
            beta = zero_beta(chart)
        elif kind[0] == "constant":
            beta = constant_beta(chart, kind[1])
        elif kind[0] == "file":
            f = storage.load_field(kind[1], chart)
            if f.weight != BETA:
                raise ConfigError(f"beta: field in {kind[1]!r} has weight {f.weight}, need (0, 2)")
            beta = BetaClass(f, f"file {kind[1]}")
        else:
            if cfg.backend != "bolza":
                raise ConfigError("beta: basis classes exist only on the bolza backend")
            beta = bolza_beta(chart, kind[1])
    except (ChartError, storage.FormatError, OSError) as exc:
        raise ConfigError(f"beta: {exc}") from None
    g = parse_gauge_spec(cfg.gauge)
    if g[0] == "basis":
        if cfg.backend != "bolza":
            raise ConfigError("gauge: basis gauge fields exist only on the bolza backend")
        beta = vf.gauge_representative(beta, bolza_gauge_function(chart, g[1], g[2])(chart.z))
    elif g[0] == "smooth":
        if cfg.backend == "bolza":
            raise ConfigError("gauge: smooth patch fields are not automorphic; use basis:IDX:SCALE")
        rng = np.random.default_rng(cfg.seed + 7919)
        beta = vf.gauge_representative(beta, g[1] * vf.smooth_field(chart, rng, True))
    return chart, beta


def initial_state(cfg: ProblemConfig, chart):
    if cfg.init == "zero":
        return None
    rng = np.random.default_rng(cfg.seed)
    return dn.SolveState.from_arrays(chart, cfg.init_amplitude * vf.smooth_field(chart, rng),
                                     0.5 * cfg.init_amplitude * vf.smooth_field(chart, rng, True))


def out_dir(cfg: ProblemConfig) -> Path:
    path = Path(os.environ.get("CMC_OUT_DIR") or cfg.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


SUMMARY_KEYS = ("total", "dirichlet", "linear", "volume", "coupling", "C",
                "grad_norm", "r_gauss", "r_codazzi")


def summary(sol) -> dict:
    d = sol.residual_dict()
    return {k: d[k] for k in SUMMARY_KEYS}


def write_solution(out: Path, sol, chart, extra: dict) -> list:
    paths = []
    for name, field in (("u", sol.state.u), ("F", sol.state.F), ("B", sol.B),
                        ("alpha", sol.alpha),
                        ("rho_h", WeightedField(sol.rho_h, (0, 0), chart, real=True))):
        paths.append(storage.dump_field(field, out / f"{name}.fld", name))
    header, rows = storage.field_table(chart, {"u": sol.u, "F": sol.F, "B": sol.B.values,
                                               "alpha": sol.alpha.values, "rho_h": sol.rho_h})
    paths.append(storage.write_csv(out / "fields.csv", header, rows))
    if sol.trace and "energy" in sol.trace[0]:
        keys = ["step", "energy", "grad_norm", "step_length", "cg_iterations",
                "negative_curvature"]
        paths.append(storage.write_csv(out / "trace.csv", keys,
                                       [[r.get(k) for k in keys] for r in sol.trace]))
    paths.extend(storage.save_chart(chart, out / "chart.cmc"))
    return paths


def write_manifest(out: Path, cfg: ProblemConfig, paths: list, extra: dict | None = None):
    files = {p.name: {"sha256": storage.sha256_file(p), "bytes": p.stat().st_size}
             for p in sorted(paths, key=lambda p: p.name)}
    data = {"version": __version__, "config": cfg.canonical(), "files": files}
    data.update(extra or {})
    storage.write_json(out / "manifest.json", data)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _eig(sol, cfg):
    if not cfg.min_eig:
        return None
    return sv.min_eig_estimate(sol, probes=2, seed=cfg.seed).as_dict()


def cmd_solve(cfg: ProblemConfig, constrained: bool = False) -> int:
    chart, beta = build_problem(cfg)
    out = out_dir(cfg)
    scfg = cfg.solver_config()
    init = initial_state(cfg, chart)
    t0 = time.perf_counter()
    report = {"command": "solve-constrained" if constrained else "solve",
              "config": cfg.as_dict(), "chart": storage.chart_metadata(chart),
              "beta": beta.note}
    cont = None
    try:
        if constrained:
            sol, lam = sv.constrained_solve(chart, beta, cfg.T, scfg, init=init)
            report["lambda_recovered"] = lam
        elif cfg.continuation:
            sol, cont = sv.continuation_solve(chart, beta, cfg.params, scfg, init=init)
            report["continuation"] = cont.as_dict()
        else:
            sol = sv.newton_solve(chart, beta, cfg.params, init, scfg)
    except (dn.DivergingIterate, sv.SolverError) as exc:
        report.update(status="diverged", error=str(exc))
        storage.write_json(out / "report.json", report)
        write_manifest(out, cfg, [out / "report.json"])
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    if not constrained:
        # energy relative to the reference state u = 0, F = 0 with this representative
        C = dn.normalization_constant(chart, beta, cfg.params)
        sol.energy = dn.functional(sol.state, beta, cfg.params, C=C)
    report["lambda"] = sol.lam
    report["summary"] = summary(sol)
    report["trace"] = sol.trace
    report["min_eig"] = _eig(sol, cfg)
    ok = sol.r_gauss <= cfg.max_r_gauss and sol.r_codazzi <= cfg.max_r_codazzi
    report["status"] = "ok" if ok else "residual-threshold"
    report["thresholds"] = {"r_gauss": cfg.max_r_gauss, "r_codazzi": cfg.max_r_codazzi}
    if cfg.timing:
        report["wall_time"] = time.perf_counter() - t0
    paths = write_solution(out, sol, chart, report)
    paths.append(storage.write_json(out / "report.json", report))
    write_manifest(out, cfg, paths)
    s = report["summary"]
    print(f"lambda = {sol.lam:.10g}  |grad| = {s['grad_norm']:.3e}  r_gauss = {s['r_gauss']:.3e}"
          f"  r_codazzi = {s['r_codazzi']:.3e}  energy = {s['total']:.12g}")
    if report["min_eig"] is not None:
        print(f"min eigenvalue estimate = {report['min_eig']['value']:.6g}")
    if not ok:
        print("error: residual threshold violated", file=sys.stderr)
        return EXIT_RESIDUAL
    return EXIT_OK


def cmd_sweep(cfg: ProblemConfig) -> int:
    chart, beta = build_problem(cfg)
    out = out_dir(cfg)
    scfg = cfg.solver_config()
    values = np.linspace(cfg.start, cfg.stop, cfg.points)
    header = ["param", "lambda", "converged", "newton_iterations", "total", "dirichlet",
              "linear", "volume", "coupling", "grad_norm", "r_gauss", "r_codazzi", "min_eig",
              "K_min", "K_max", "error"]
    rows, state, failures = [], initial_state(cfg, chart), 0
    for val in values:
        val = float(val)
        if cfg.axis == "c":
            params, b = Params(cfg.k, val), beta
        else:
            params, b = cfg.params, beta.scaled(val)
        try:
            sol = sv.newton_solve(chart, b, params, state, scfg)
        except (dn.DivergingIterate, sv.SolverError) as exc:
            failures += 1
            rows.append([val, params.lam, False, None] + [None] * 11 + [str(exc)])
            continue
        state = sol.state
        s = summary(sol)
        Kh = dn.gauss_curvature_h(sol)[chart.free]
        eig = _eig(sol, cfg)
        rows.append([val, params.lam, True, len(sol.trace) - 1] + [s[k] for k in SUMMARY_KEYS
                    if k != "C"] + [None if eig is None else eig["value"],
                                    float(Kh.min()), float(Kh.max()), ""])
    paths = [storage.write_csv(out / "sweep.csv", header, rows)]
    report = {"command": "sweep", "config": cfg.as_dict(), "axis": cfg.axis,
              "points": len(rows), "failures": failures}
    paths.append(storage.write_json(out / "report.json", report))
    write_manifest(out, cfg, paths)
    print(f"sweep over {cfg.axis}: {len(rows)} points, {failures} failures")
    return EXIT_OK if failures == 0 else EXIT_DIVERGED


def _check_reports(cfg: ProblemConfig, chart, beta) -> list:
    which = cfg.which
    closed_neg = cfg.backend == "bolza"
    reports = []
    rng = np.random.default_rng(cfg.seed)
    lam = cfg.params.lam
    if which in ("gradient", "all", "hessian"):
        g_worst, h_worst = None, None
        for trial in range(cfg.trials):
            st = vf.smooth_state(chart, rng)
            b = beta
            if cfg.backend != "bolza" and not np.any(beta.b.values):
                b = BetaClass(WeightedField(0.1 * vf.smooth_field(chart, rng, True), BETA, chart))
            if which in ("gradient", "all"):
                r = vf.check_gradient(st, b, lam, trials=2, seed=cfg.seed + trial)
                g_worst = r if g_worst is None or r.error > g_worst.error else g_worst
            if which in ("hessian", "all"):
                r = vf.check_hessian(st, b, lam, trials=2, seed=cfg.seed + trial)
                h_worst = r if h_worst is None or r.error > h_worst.error else h_worst
        reports += [r for r in (g_worst, h_worst) if r is not None]
    if which in ("mms", "all") and cfg.backend == "disk-patch":
        for name, recipe in (("mms_scalar", {"a": 0.1, "b": 0.0}),
                             ("mms_coupled", {"a": 0.1, "b": 0.05})):
            sizes = (max(16, cfg.n // 2), max(32, cfg.n))
            res = vf.mms_convergence(lambda m: storage.build_chart("disk-patch", m, cfg.r0),
                                     lam, recipe, sizes, cfg.solver_config())
            ratios = [r for key in ("ratio_u", "ratio_F", "ratio_B_interior")
                      for r in res.get(key, []) if math.isfinite(r)]
            err = max(abs(r - 4.0) for r in ratios)
            reports.append(vf.CheckReport(name, err, 0.5, "manufactured solution, |ratio - 4|",
                                          res))
    solvable = cfg.backend != "torus-patch"
    if which in ("gauge", "all") and solvable:
        if closed_neg:
            psi0 = bolza_gauge_function(chart, 1, 0.3)
        else:
            psi0 = 0.05 * vf.smooth_field(chart, rng, True)
        reports.append(vf.gauge_invariance_audit(chart, beta, psi0, lam, cfg.solver_config()))
    sol = None
    if which == "all" and solvable or which == "gauss-bonnet":
        sol = sv.newton_solve(chart, beta, lam, None, cfg.solver_config())
    if which in ("gauss-bonnet", "all") and closed_neg:
        reports.append(vf.gauss_bonnet_audit(sol))
    if which in ("bochner", "all") and chart.closed:
        reports.append(vf.bochner_identity_audit(chart, seed=cfg.seed))
    if which == "all" and sol is not None:
        reports.append(vf.hessian_formula_audit(sol, seed=cfg.seed))
        reports.append(vf.hessian_lower_bound_audit(sol, seed=cfg.seed))
        est = sv.min_eig_estimate(sol, probes=2, seed=cfg.seed)
        reports.append(vf.CheckReport("hessian_positivity", max(0.0, -est.lower), 0.0,
                                      "Lanczos lower end of the smallest eigenvalue",
                                      est.as_dict()))
    return reports


def cmd_check(cfg: ProblemConfig) -> int:
    chart, beta = build_problem(cfg)
    out = out_dir(cfg)
    ctx = vf.mutant(cfg.mutant) if cfg.mutant != "none" else contextlib.nullcontext()
    with ctx:
        try:
            reports = _check_reports(cfg, chart, beta)
        except (dn.DivergingIterate, sv.SolverError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DIVERGED
    for r in reports:
        print(r.line())
    data = {"version": __version__, "config": cfg.canonical(),
            "passed": all(r.passed for r in reports),
            "checks": [r.as_dict() for r in reports]}
    storage.write_json(out / "manifest.json", data)
    return EXIT_OK if data["passed"] else EXIT_AUDIT


def cmd_info(cfg: ProblemConfig) -> int:
    info = {"version": __version__, "backends": list(BACKENDS),
            "problem_defaults": ProblemConfig().as_dict(),
            "solver_defaults": sv.SolverConfig().as_dict(),
            "exit_codes": {str(k): v for k, v in EXIT_CODES.items()},
            "beta_specs": ["zero", "constant:Z", "file:PATH", "basis:IDX:COEF[,...]"],
            "gauge_specs": ["none", "basis:IDX:SCALE", "smooth:AMP"],
            "checks": list(CHECKS), "mutants": list(vf.MUTANTS),
            "env": {"CMC_OUT_DIR": "overrides the output directory"}}
    sys.stdout.write(storage.to_json(info))
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "solve-constrained": lambda c: cmd_solve(c, constrained=True),
            "sweep": cmd_sweep, "check": cmd_check, "info": cmd_info}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cmcsurf", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value configuration file")
        if name == "check":
            p.add_argument("which_pos", nargs="?", choices=CHECKS, metavar="WHICH",
                           help="audit to run: " + ", ".join(CHECKS))
        p.add_argument("--print-config", action="store_true",
                       help="print the canonical configuration and exit")
        for f in fields(ProblemConfig):
            p.add_argument("--" + f.name.replace("_", "-"), dest="opt_" + f.name, metavar="VALUE")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("opt_") and v is not None}
    if getattr(args, "which_pos", None):
        overrides["which"] = args.which_pos
    try:
        cfg = parse_config(args.config, overrides)
        validate(cfg, args.command)
        if args.print_config:
            sys.stdout.write(cfg.canonical())
            return EXIT_OK
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
