"""Command-line front end: ``oscillate <command> [--config run.yaml] [overrides]``.

Run files are YAML with ``schema: oscillate.run/1``; every key is optional and
command-line flags win over the file. Exit status: 0 when every requested check
passes, 1 on a failed check or a numerical failure, 2 on invalid input.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import builtins as bi
from .bench import (ROUNDOFF_FLOOR, SweepConfig, campanato_fit, cascade_ok, environment_stamp,
                    homogenization_sweep, regularity_certificate)
from .boundary_layer import (BoundaryLayerProblem, aligned_grid, decay_csv, decay_profile,
                             fit_band_constant, solve_boundary_layer)
from .cell import (DEFAULT_CELL_TOL, CheckReport, cached_cell, check_effective_ellipticity,
                   check_key_equality, check_min_monotonicity, check_scaling_identity,
                   corrector_hessian_floor, solve_cell, tabulate_effective)
from .config import load_yaml_lines
from .errors import (AuditInapplicable, DomainError, NonConvergenceError, OscillateError,
                     SpecSchemaError, TabulationError)
from .grid import BoxGrid, as_sym, frobenius, to_bytes, to_csv
from .operators import DEFAULT_SEED, spec_from_yaml
from .solver import DirichletProblem, solve_dirichlet

RUN_SCHEMA = "oscillate.run/1"
COMMANDS = ("cell", "effective", "check", "solve", "blayer", "sweep", "campanato", "certify")
LEMMAS = ("ellipticity", "scaling", "floor", "mono", "key")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# run configuration


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_matrix(v):
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        return False
    return arr.ndim <= 2 and arr.size in (1, 3, 4) and np.all(np.isfinite(arr))


def _num_list(v):
    return isinstance(v, list) and bool(v) and all(_is_num(x) for x in v)


def _axes(v):
    return isinstance(v, dict) and set(v) <= {"lo", "hi", "step"} and \
        all(_is_num(x) for x in v.values())


def _centers(v):
    return isinstance(v, list) and bool(v) and all(_num_list(c) for c in v)


def _pair(v):
    return isinstance(v, str) or (isinstance(v, list) and len(v) == 2 and
                                  all(isinstance(s, str) for s in v))


# key -> (validator, description)
FIELDS = {
    "schema": (lambda v: v == RUN_SCHEMA, f"the string {RUN_SCHEMA!r}"),
    "command": (lambda v: v in COMMANDS, f"one of {', '.join(COMMANDS)}"),
    "spec": (lambda v: isinstance(v, str), "a built-in name or a spec file path"),
    "pair": (_pair, "a built-in pair name or a list of two spec references"),
    "M": (_check_matrix, "a number, [m11, m22, m12] or a 2x2 list"),
    "resolution": (lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 2,
                   "an integer >= 2"),
    "cell_resolution": (lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 8,
                        "an integer >= 8"),
    "epsilon": (lambda v: _is_num(v) and v > 0, "a positive number"),
    "epsilons": (lambda v: _num_list(v) and all(x > 0 for x in v), "a list of positive numbers"),
    "tol": (lambda v: _is_num(v) and v > 0, "a positive number"),
    "solve_tol": (lambda v: _is_num(v) and v > 0, "a positive number"),
    "method": (lambda v: v in ("vanishing-discount", "mean-correction"),
               "'vanishing-discount' or 'mean-correction'"),
    "alpha": (lambda v: _is_num(v) and 0 < v < 1, "a number in (0, 1)"),
    "mu": (lambda v: _is_num(v) and 0 < v < 1, "a number in (0, 1)"),
    "p": (lambda v: _is_num(v) and v >= 1, "a number >= 1"),
    "depth": (lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 0,
              "a nonnegative integer"),
    "seed": (lambda v: isinstance(v, int) and not isinstance(v, bool), "an integer"),
    "trials": (lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 1,
               "a positive integer"),
    "samples": (lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 1,
                "a positive integer"),
    "rhs": (_is_num, "a number"),
    "boundary": (_is_num, "a number"),
    "delta": (lambda v: _is_num(v) and v >= 0, "a nonnegative number"),
    "template": (lambda v: v in ("model", "quadratic"), "'model' or 'quadratic'"),
    "axes": (_axes, "a mapping with numeric lo, hi, step"),
    "lemmas": (lambda v: isinstance(v, list) and bool(v) and all(x in LEMMAS for x in v),
               f"a list drawn from {', '.join(LEMMAS)}"),
    "centers": (_centers, "a list of coordinate lists"),
    "center": (_num_list, "a coordinate list"),
    "margin": (lambda v: _is_num(v) and v >= 0, "a nonnegative number"),
    "radius": (lambda v: _is_num(v) and v > 0, "a positive number"),
    "floor_threshold": (lambda v: _is_num(v) and v >= 0, "a nonnegative number"),
    "output": (lambda v: isinstance(v, str), "a directory path"),
    "jobs": (lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 1,
             "a positive integer"),
}


def load_run_file(path: Path) -> dict:
    """Validated run-file mapping; every problem raises :class:`SpecSchemaError` with a line."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    doc = load_yaml_lines(text)
    if not isinstance(doc, dict):
        raise SpecSchemaError("run file must be a mapping", getattr(doc, "line", 1))
    out = {}
    for key, value in doc.items():
        line = doc.lines.get(key)
        if key not in FIELDS:
            raise SpecSchemaError(f"unknown key {key!r}", line)
        ok, what = FIELDS[key]
        try:
            valid = ok(value)
        except Exception:
            valid = False
        if not valid:
            raise SpecSchemaError(f"{key!r} must be {what}, got {value!r}", line)
        out[key] = value
    # paths in a run file are relative to the file itself
    def rel(ref):
        return ref if ref in bi.BUILTINS or Path(ref).is_absolute() else str(path.parent / ref)

    if "spec" in out:
        out["spec"] = rel(out["spec"])
    if "output" in out:
        out["output"] = rel(out["output"])
    if isinstance(out.get("pair"), list):
        out["pair"] = [rel(s) for s in out["pair"]]
    return out


def resolve_spec(ref: str):
    if ref in bi.BUILTINS:
        return bi.get_builtin(ref)
    p = Path(ref)
    if not p.is_file():
        raise UsageError(f"spec {ref!r} is neither a built-in ({', '.join(sorted(bi.BUILTINS))}) "
                         "nor a readable file")
    return spec_from_yaml(p.read_text(encoding="utf-8"))


def resolve_pair(ref):
    if isinstance(ref, str):
        if ref not in bi.PAIRS:
            raise UsageError(f"unknown pair {ref!r}; known: {', '.join(sorted(bi.PAIRS))}")
        return bi.get_pair(ref)
    return tuple(resolve_spec(r) for r in ref)


# ---------------------------------------------------------------------------
# argument parsing


def _matrix_arg(text):
    import yaml

    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError:
        raise argparse.ArgumentTypeError(f"cannot parse matrix {text!r}") from None
    if not _check_matrix(value):
        raise argparse.ArgumentTypeError("M must be a number, [m11, m22, m12] or [[..],[..]]")
    return value


def _float_list(text):
    try:
        vals = [float(eval_fraction(t)) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") \
            from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("values must be positive")
    return vals


def eval_fraction(t: str) -> float:
    """``"1/16"`` or ``"0.0625"``."""
    t = t.strip()
    if "/" in t:
        a, b = t.split("/", 1)
        return float(a) / float(b)
    return float(t)


def _positive_fraction(text):
    try:
        v = eval_fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oscillate", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run file (schema oscillate.run/1)")
    common.add_argument("--spec", help="built-in spec name or spec YAML path")
    common.add_argument("--out", dest="output", help="output directory")
    common.add_argument("--force", action="store_true", help="overwrite a non-empty output dir")
    common.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    common.add_argument("--seed", type=int)
    common.add_argument("--M", type=_matrix_arg, help="anchor matrix, e.g. 1 or '[1, 1, 0]'")
    common.add_argument("--resolution", type=int)
    common.add_argument("--cell-resolution", dest="cell_resolution", type=int)
    common.add_argument("--tol", type=float)
    common.add_argument("--method", choices=("vanishing-discount", "mean-correction"))
    common.add_argument("--epsilon", type=_positive_fraction)
    common.add_argument("--epsilons", type=_float_list, help="comma list, e.g. 1/8,1/16,1/32")
    common.add_argument("--alpha", type=float)
    common.add_argument("--mu", type=float)
    common.add_argument("--p", type=float)
    common.add_argument("--depth", type=int)
    common.add_argument("--rhs", type=float)
    common.add_argument("--boundary", type=float)
    common.add_argument("--template", choices=("model", "quadratic"))
    helps = {
        "cell": "solve one cell problem and print the effective value",
        "effective": "tabulate the effective operator on a matrix grid",
        "check": "run the effective-operator property checks",
        "solve": "single Dirichlet solve on the unit box",
        "blayer": "boundary-layer corrector sweep with decay tables",
        "sweep": "homogenization error sweep in epsilon",
        "campanato": "decomposition fit on shrinking balls",
        "certify": "regularity certificates across an epsilon sweep",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "check":
            p.add_argument("--lemma", dest="lemmas", action="append", choices=LEMMAS,
                           help="repeatable; default runs all")
            p.add_argument("--pair", help="built-in pair for mono/key (remark, cc2d, key1d)")
            p.add_argument("--trials", type=int)
            p.add_argument("--samples", type=int)
    return parser


DEFAULTS = {
    "M": 1.0, "tol": DEFAULT_CELL_TOL, "method": None, "alpha": 0.5, "mu": 0.5, "p": 4.0,
    "depth": 4, "seed": DEFAULT_SEED, "rhs": None, "boundary": 0.0, "delta": 0.0,
    "template": "model", "trials": 100, "samples": 10, "floor_threshold": 0.2,
    "radius": 0.25, "margin": 0.25,
}


def merge_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config is not None:
        cfg.update(load_run_file(args.config))
        if cfg.get("command", args.command) != args.command:
            raise UsageError(f"run file is for {cfg['command']!r}, not {args.command!r}")
    for key, value in vars(args).items():
        if key in ("config", "command", "force") or value is None:
            continue
        if key in FIELDS and key not in ("jobs", "output"):
            ok, what = FIELDS[key]
            if not ok(value):
                raise UsageError(f"--{key.replace('_', '-')} must be {what}")
        cfg[key] = value
    cfg["command"] = args.command
    cfg.setdefault("jobs", os.cpu_count() or 1)
    cfg.setdefault("output", f"oscillate_{args.command}")
    return cfg


# ---------------------------------------------------------------------------
# artifact writing


class Artifacts:
    def __init__(self, out: Path):
        self.out = out
        self.files = {}

    def text(self, name: str, content: str):
        path = self.out / name
        path.write_text(content, encoding="utf-8")
        self.files[name] = hashlib.sha256(path.read_bytes()).hexdigest()

    def blob(self, name: str, content: bytes):
        path = self.out / name
        path.write_bytes(content)
        self.files[name] = hashlib.sha256(content).hexdigest()

    def json(self, name: str, obj):
        self.text(name, json.dumps(_plain(obj), indent=1, sort_keys=True) + "\n")

    def adopt(self, paths):
        for p in paths:
            p = Path(p)
            self.files[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()

    def manifest(self, cfg):
        doc = {"config": {k: v for k, v in cfg.items() if k not in ("jobs", "output")},
               "environment": environment_stamp(),
               "files": dict(sorted(self.files.items()))}
        (self.out / "manifest.json").write_text(
            json.dumps(_plain(doc), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return _plain(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def prepare_output(cfg, force: bool) -> Path:
    out = Path(cfg["output"])
    if out.exists() and not out.is_dir():
        raise UsageError(f"output path {out} is not a directory")
    if out.exists() and any(out.iterdir()) and not force:
        raise UsageError(f"output directory {out} is not empty (pass --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands; each returns True when its checks pass


def _spec(cfg):
    return resolve_spec(cfg.get("spec", "cos1d"))


def _anchor(cfg, dim):
    M = np.asarray(cfg["M"], dtype=float)
    if M.size == 1:  # a scalar means that multiple of the identity
        return float(M.reshape(-1)[0]) * np.eye(dim)
    return as_sym(M, dim)


def cmd_cell(cfg, art: Artifacts):
    spec = _spec(cfg)
    method = cfg["method"] or "vanishing-discount"
    cell = solve_cell(spec, _anchor(cfg, spec.dim), cfg.get("resolution"), method, cfg["tol"])
    print(f"effective_value {cell.effective_value:.10g}")
    print(f"residual {cell.residual:.3e}")
    print(f"method {cell.method}")
    art.json("cell.json", {"spec": spec.name, **cell.to_dict()})
    art.text("corrector.csv", to_csv(cell.corrector))
    return True


def cmd_effective(cfg, art: Artifacts):
    spec = _spec(cfg)
    ax = cfg.get("axes", {})
    lo, hi, step = ax.get("lo", -4.0), ax.get("hi", 4.0), ax.get("step", 0.5)
    if not hi > lo or not step > 0:
        raise UsageError("axes need hi > lo and step > 0")
    axis = np.round(np.arange(lo, hi + step / 2, step), 12)
    axes = [axis] * (1 if spec.dim == 1 else 3)
    try:
        table = tabulate_effective(spec, axes, cfg.get("cell_resolution") or cfg.get("resolution"),
                                   cfg["method"] or "mean-correction", cfg["tol"], cfg["jobs"])
    except TabulationError as exc:
        art.text("effective_partial.csv", exc.partial.to_csv())
        raise
    art.text("effective.csv", table.to_csv())
    art.text("effective.json", table.to_json() + "\n")
    print(f"tabulated {table.values.size} nodes; max residual {np.nanmax(table.residuals):.3e}")
    return True


def _floor_check(spec, cfg) -> CheckReport:
    M0 = _anchor(cfg, spec.dim)
    n = frobenius(M0)
    if n == 0:
        raise UsageError("floor check needs a nonzero M")
    rows = []
    for t in (2.0, 4.0, 8.0, 16.0):
        cell = solve_cell(spec, t * M0 / n, cfg.get("cell_resolution"), "mean-correction",
                          cfg["tol"])
        m, ratio = corrector_hessian_floor(cell)
        rows.append({"normM": t, "floor": m, "ratio": ratio})
    worst = min(r["ratio"] for r in rows)
    return CheckReport("corrector_floor", "pass" if worst >= cfg["floor_threshold"] else "fail",
                       {"min_ratio": worst, "threshold": cfg["floor_threshold"]}, rows)


def _matrix_samples(dim, values):
    if dim == 1:
        return [np.array([[v]]) for v in values]
    return [v * np.eye(2) / math.sqrt(2) for v in values]


def cmd_check(cfg, art: Artifacts):
    lemmas = cfg.get("lemmas") or list(LEMMAS)
    results = {}
    spec = None
    for lemma in lemmas:
        if lemma in ("ellipticity", "scaling", "floor"):
            spec = spec or _spec(cfg)
        res = cfg.get("cell_resolution")
        if lemma == "ellipticity":
            rep = check_effective_ellipticity(spec, cfg["trials"], cfg["seed"], res, cfg["tol"])
        elif lemma == "scaling":
            rep = check_scaling_identity(spec, _anchor(cfg, spec.dim), cfg["mu"], cfg["samples"],
                                         res, cfg["tol"], cfg["seed"])
        elif lemma == "floor":
            rep = _floor_check(spec, cfg)
        elif lemma == "mono":
            s1, s2 = resolve_pair(cfg.get("pair", "remark"))
            grid = _matrix_samples(s1.dim, np.arange(-3.0, 3.01, 0.5))
            anchor = _anchor(cfg, s1.dim)
            rep = check_min_monotonicity(s1, s2, [anchor] + grid, res, cfg["tol"])
            rep.metrics["gap_at_M"] = rep.rows[0]["gap"]
        else:
            concave, convex = resolve_pair(cfg.get("pair", "key1d"))
            grid = _matrix_samples(concave.dim, np.arange(-3.0, 3.01, 0.25))
            try:
                rep = check_key_equality(concave, convex, grid, res, cfg["tol"])
            except AuditInapplicable as exc:
                rep = CheckReport("key_equality", "inapplicable", {"reason": str(exc)})
        results[lemma] = rep
        shown = " ".join(f"{k}={_short(v)}" for k, v in rep.metrics.items())
        print(f"{lemma}={rep.status.upper()} {shown}".rstrip())
    art.json("checks.json", {k: r.to_dict() for k, r in results.items()})
    return all(r.passed for r in results.values())


def _short(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return json.dumps(_plain(v))


def cmd_solve(cfg, art: Artifacts):
    spec = _spec(cfg)
    N = cfg.get("resolution", 64)
    grid = BoxGrid.unit(spec.dim, N)
    eps = cfg.get("epsilon", math.inf)
    rhs = cfg["rhs"] if cfg["rhs"] is not None else 0.0
    problem = DirichletProblem(spec, grid, rhs, cfg["boundary"], epsilon=eps, delta=cfg["delta"])
    u, report = solve_dirichlet(problem, tol=cfg.get("solve_tol", 1e-8))
    print(f"residual {report.residual:.3e}")
    print(f"iterations {report.iterations}")
    print(f"sup_abs {u.sup():.10g}")
    art.text("solution.csv", to_csv(u))
    art.blob("solution.bin", to_bytes(u))
    doc = report.to_dict()
    doc.pop("wall_time")
    art.json("solve.json", {"spec": spec.name, "resolution": N, "epsilon": eps, **doc})
    return True


def cmd_blayer(cfg, art: Artifacts):
    spec = _spec(cfg)
    M = _anchor(cfg, spec.dim)
    m = cfg.get("cell_resolution") or (16 if spec.dim == 1 else 8)
    epsilons = cfg.get("epsilons") or [1 / 8, 1 / 16, 1 / 32]
    cell = cached_cell(spec, M, m, "mean-correction", cfg["tol"])
    sols, rows = [], []
    for k, eps in enumerate(sorted(epsilons, reverse=True)):
        sol = solve_boundary_layer(BoundaryLayerProblem(spec, M, cell, eps),
                                   tol=cfg.get("solve_tol", 1e-8), lp_exponents=(cfg["p"],))
        sols.append(sol)
        art.text(f"decay_{k}.csv", decay_csv(sol))
        rows.append({"epsilon": eps, "sup_abs": sol.sup_abs, "scaled": sol.sup_abs / eps**2,
                     "profile": decay_profile(sol)})
    scaled = [r["scaled"] for r in rows]
    fit = fit_band_constant(sols)
    floor = ROUNDOFF_FLOOR
    stable = max(scaled) <= 2 * min(scaled) or max(scaled) <= floor
    # an affine zeta (the 1-D case) satisfies every decay bound trivially
    affine = all(r["sup_hessian"] <= floor for sol in sols for r in sol.bands)
    ok = bool(stable and (fit["uniform"] or affine))
    for r in rows:
        print(f"epsilon {r['epsilon']:.6g} sup_abs/eps^2 {r['scaled']:.6g}")
    print(f"band_constant {fit['constant']:.6g} uniform={fit['uniform']} affine={affine}")
    art.json("blayer.json", {"spec": spec.name, "M": M, "rows": rows, "fit": fit,
                             "stable_within_2x": stable, "affine": affine})
    return ok


def _sweep_config(cfg, spec):
    kwargs = {}
    if cfg["rhs"] is not None:
        kwargs["rhs"] = cfg["rhs"]
    if "solve_tol" in cfg:
        kwargs["solve_tol"] = cfg["solve_tol"]
    if "centers" in cfg:
        kwargs["centers"] = tuple(tuple(c) for c in cfg["centers"])
    return SweepConfig(spec, tuple(cfg.get("epsilons") or (1 / 8, 1 / 16, 1 / 32)),
                       cfg.get("cell_resolution"), cfg["template"], anchor=_anchor(cfg, spec.dim),
                       alpha=cfg["alpha"], tol=cfg["tol"], interior_margin=cfg["margin"],
                       **kwargs)


def _emit_report(report, art: Artifacts):
    art.adopt(report.write(art.out))
    for k, v in report.flags.items():
        print(f"{k}={'PASS' if v else 'FAIL'}")
    for note in report.notes:
        print(f"note: {note}")
    return report.passed


def cmd_sweep(cfg, art: Artifacts):
    spec = _spec(cfg)
    report = homogenization_sweep(_sweep_config(cfg, spec))
    for r in report.tables.get("errors", []):
        print(f"epsilon {r['epsilon']:.6g} sup_error {r['sup_error']:.6e}")
    return _emit_report(report, art)


def cmd_certify(cfg, art: Artifacts):
    spec = _spec(cfg)
    report = regularity_certificate(_sweep_config(cfg, spec), cfg["radius"], cfg["p"])
    return _emit_report(report, art)


def cmd_campanato(cfg, art: Artifacts):
    spec = _spec(cfg)
    eps = cfg.get("epsilon", 1 / 128)
    m = cfg.get("cell_resolution") or (32 if spec.dim == 1 else 8)
    grid = aligned_grid(spec.dim, eps, m)
    rhs = cfg["rhs"] if cfg["rhs"] is not None else 1.0
    u, _ = solve_dirichlet(DirichletProblem(spec, grid, rhs, cfg["boundary"], epsilon=eps),
                           tol=cfg.get("solve_tol", 1e-8))
    center = tuple(cfg.get("center") or [0.5] * spec.dim)
    from .bench import CorrectorField
    fit = campanato_fit(u, center, cfg["mu"], cfg["depth"], spec, eps, rhs,
                        CorrectorField(spec, m, cfg["tol"]))
    ok = cascade_ok(fit)
    lines = ["k,radius,remainder,ratio,clipped"]
    for lv in fit.levels:
        lines.append(f"{lv['k']},{lv['radius']:.10g},{lv['remainder']:.10e},"
                     f"{lv['ratio']:.10g},{int(lv['clipped'])}")
        print(f"k {lv['k']} radius {lv['radius']:.6g} remainder {lv['remainder']:.3e}")
    for note in fit.notes:
        print(f"note: {note}")
    print(f"cascade={'PASS' if ok else 'FAIL'}")
    art.text("campanato.csv", "\n".join(lines) + "\n")
    art.json("campanato.json", {"spec": spec.name, "epsilon": eps, "center": center,
                                "mu": fit.mu, "levels": fit.levels, "notes": fit.notes,
                                "cascade_ok": ok})
    return ok


HANDLERS = {"cell": cmd_cell, "effective": cmd_effective, "check": cmd_check, "solve": cmd_solve,
            "blayer": cmd_blayer, "sweep": cmd_sweep, "campanato": cmd_campanato,
            "certify": cmd_certify}


def _failure_doc(exc) -> dict:
    doc = {"error": type(exc).__name__, "message": str(exc), "module": type(exc).__module__}
    if isinstance(exc, NonConvergenceError):
        doc["residual"] = exc.residual
        doc["history"] = list(exc.history or [])[-20:]
    return doc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = merge_config(args)
        if "spec" in cfg and cfg["spec"] not in bi.BUILTINS and not Path(cfg["spec"]).is_file():
            raise UsageError(f"spec file {cfg['spec']!r} not found")
        out = prepare_output(cfg, args.force)
    except SpecSchemaError as exc:
        print(f"{args.config}:{exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    art = Artifacts(out)
    try:
        ok = HANDLERS[args.command](cfg, art)
    except SpecSchemaError as exc:
        print(f"{cfg.get('spec')}:{exc}", file=sys.stderr)
        return 2
    except (UsageError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OscillateError as exc:
        doc = _failure_doc(exc)
        art.json("failure.json", doc)
        art.manifest(cfg)
        print(f"numerical failure in {args.command}: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 1
    art.manifest(cfg)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
