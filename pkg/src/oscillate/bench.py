"""End-to-end experiments: homogenization sweeps, two-scale errors, Campanato fits and
regularity certificates, all emitting :class:`ExperimentReport` records.

Every oscillating solve uses a grid aligned with the cell grid (``h = eps/m``),
so ``eps^2`` times the cell's discrete Hessian of ``w`` is exactly the
physical discrete Hessian of ``eps^2 w(x/eps)``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .boundary_layer import aligned_grid
from .cell import (DEFAULT_CELL_TOL, EffectiveTable, TabulatedOperator, cached_cell,
                   default_axes, effective_value, tabulate_effective)
from .errors import DomainError, ExtrapolationError, OscillateError
from .grid import (BoxGrid, GridFunction, as_sym, best_affine, frobenius, hessian_field,
                   holder_quotient, lp_norm, node_of, second_difference_sup, sym_coords)
from .solver import DirichletProblem, solve_dirichlet

UNIFORMITY_FACTOR = 2.0
ROUNDOFF_FLOOR = 1e-9


# ---------------------------------------------------------------------------
# reports


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12e}"
    return str(v)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def environment_stamp() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


@dataclass
class ExperimentReport:
    name: str
    inputs: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)  # table name -> list of row dicts
    rates: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)  # criterion name -> bool
    notes: list = field(default_factory=list)
    environment: dict = field(default_factory=environment_stamp)

    @property
    def passed(self) -> bool:
        return all(self.flags.values())

    def to_dict(self) -> dict:
        return _plain({"name": self.name, "inputs": self.inputs, "rates": self.rates,
                       "flags": self.flags, "notes": self.notes, "tables": self.tables,
                       "environment": self.environment})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def table_csv(self, name: str) -> str:
        rows = self.tables[name]
        if not rows:
            return ""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        keys = list(rows[0])
        writer.writerow(keys)
        for r in rows:
            writer.writerow([_fmt(r.get(k, "")) for k in keys])
        return buf.getvalue()

    def table_dat(self, name: str) -> str:
        """Gnuplot-ready two columns: the first two numeric columns of the table."""
        rows = self.tables[name]
        if not rows:
            return ""
        keys = [k for k in rows[0] if isinstance(rows[0][k], (int, float, np.number))][:2]
        lines = [f"# {' '.join(keys)}"]
        for r in rows:
            lines.append(" ".join(_fmt(r[k]) for k in keys))
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> list:
        """Write ``<name>.json`` plus one CSV and one ``.dat`` per table; returns the paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{self.name}.json"]
        paths[0].write_text(self.to_json() + "\n", encoding="utf-8")
        for tname in sorted(self.tables):
            p = out / f"{self.name}_{tname}.csv"
            p.write_text(self.table_csv(tname), encoding="utf-8")
            q = out / f"{self.name}_{tname}.dat"
            q.write_text(self.table_dat(tname), encoding="utf-8")
            paths += [p, q]
        return paths


def log_log_slope(xs, ys) -> float:
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def pairwise_log2_ratios(errors) -> list:
    e = np.asarray(errors, float)
    return [float(np.log2(a / b)) for a, b in zip(e[:-1], e[1:])]


# ---------------------------------------------------------------------------
# correctors on demand


class CorrectorField:
    """``w_F(M, .)`` for arbitrary anchors, cell solves cached per rounded anchor.

    ``bounds`` (per matrix coordinate ``(lo, hi)``) turns out-of-range anchors into
    :class:`ExtrapolationError`, matching a tabulated field.
    """

    def __init__(self, spec, resolution: int, tol=DEFAULT_CELL_TOL, bounds=None,
                 method="mean-correction"):
        self.spec = spec
        self.resolution = resolution
        self.tol = tol
        self.bounds = bounds
        self.method = method

    def cell(self, M):
        M = as_sym(M, self.spec.dim)
        if self.bounds is not None:
            for c, (lo, hi) in zip(sym_coords(M), self.bounds):
                if c < lo - 1e-12 or c > hi + 1e-12:
                    raise ExtrapolationError(f"anchor coordinate {c:.4g} outside [{lo}, {hi}]")
        return cached_cell(self.spec, np.round(M, 12), self.resolution, self.method, self.tol)

    def corrector(self, M) -> np.ndarray:
        return self.cell(M).corrector.values

    def effective(self, M) -> float:
        return self.cell(M).effective_value


def _corrector_values(cell_field, M):
    if isinstance(cell_field, EffectiveTable):
        return cell_field.corrector_at(M)
    return cell_field.corrector(M)


def _sample(values_cell, x, epsilon):
    """Cell array sampled at ``x / eps`` (aligned nodes only)."""
    m = values_cell.shape[0]
    y = np.asarray(x, float) / epsilon * m
    iy = np.round(y)
    if np.max(np.abs(y - iy)) > 1e-6:
        raise DomainError("grid not aligned with the corrector's cell grid")
    iy = iy.astype(int) % m
    return values_cell[tuple(iy[..., k] for k in range(iy.shape[-1]))]


def corrector_term(u_bar: GridFunction, cell_field, epsilon: float):
    """``eps^2 w_F(D_h^2 ubar(x), x/eps)`` at interior nodes (NaN on the boundary)."""
    grid = u_bar.grid
    H, mask = hessian_field(u_bar)
    x = grid.coordinates()
    out = np.full(grid.shape, np.nan)
    Hm = np.round(H[mask], 9)
    xm = x[mask]
    keys, inverse = np.unique(Hm.reshape(len(Hm), -1), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    vals = np.empty(len(Hm))
    n = grid.dim
    for k, key in enumerate(keys):
        sel = inverse == k
        w = _corrector_values(cell_field, key.reshape(n, n))
        vals[sel] = epsilon**2 * _sample(w, xm[sel], epsilon)
    out[mask] = vals
    return out


def two_scale_error(u_eps: GridFunction, u_bar: GridFunction, cell_field, epsilon: float,
                    interior_margin: float) -> tuple:
    """``(raw, corrected)`` sup errors over nodes at distance >= margin from the boundary."""
    if u_eps.grid != u_bar.grid:
        raise DomainError("u_eps and u_bar must share a grid")
    grid = u_eps.grid
    interior = grid.distance_to_boundary(grid.coordinates()) >= interior_margin - 1e-12
    if not np.any(interior):
        raise DomainError("interior margin leaves no nodes")
    corr = corrector_term(u_bar, cell_field, epsilon)
    diff = u_eps.values - u_bar.values
    raw = float(np.max(np.abs(diff[interior])))
    corrected = float(np.max(np.abs((diff - corr)[interior])))
    return raw, corrected


# ---------------------------------------------------------------------------
# homogenization sweep


@dataclass
class SweepConfig:
    """Inputs for :func:`homogenization_sweep` and :func:`regularity_certificate`.

    ``template`` is ``"model"`` (``f = rhs``, ``g = 0``) or ``"quadratic"``
    (``g = x.M0 x / 2`` and ``f = Fbar(M0)``, so the effective solution is that
    quadratic).
    """

    spec: object
    epsilons: tuple
    cell_resolution: int | None = None
    template: str = "model"
    rhs: float = 1.0
    anchor: object = None
    alpha: float = 0.5
    tol: float = DEFAULT_CELL_TOL
    solve_tol: float = 1e-8
    interior_margin: float = 0.25
    centers: tuple | None = None
    table_axes: list | None = None

    def __post_init__(self):
        if self.cell_resolution is None:
            self.cell_resolution = 32 if self.spec.dim == 1 else 8
        if self.cell_resolution < 8:
            raise DomainError("need at least 8 nodes per period (eps >= 8 h)")
        if self.template not in ("model", "quadratic"):
            raise DomainError(f"unknown template {self.template!r}")
        self.epsilons = tuple(sorted((float(e) for e in self.epsilons), reverse=True))
        if self.anchor is None:
            self.anchor = np.eye(self.spec.dim)
        self.anchor = as_sym(self.anchor, self.spec.dim)

    def grid(self, epsilon) -> BoxGrid:
        return aligned_grid(self.spec.dim, epsilon, self.cell_resolution)

    def echo(self) -> dict:
        return {"spec": self.spec.name, "epsilons": list(self.epsilons),
                "cell_resolution": self.cell_resolution, "template": self.template,
                "rhs": self.rhs, "anchor": self.anchor.tolist(), "alpha": self.alpha,
                "tol": self.tol, "interior_margin": self.interior_margin}


def _problem_data(config: SweepConfig, fbar=None):
    if config.template == "model":
        return config.rhs, 0.0
    M0 = config.anchor
    f = fbar if fbar is not None else effective_value(config.spec, M0, config.cell_resolution,
                                                      tol=config.tol)

    def g(x):
        return 0.5 * np.einsum("...i,ij,...j->...", x, M0, x)
    return f, g


def _initial(config: SweepConfig, grid, g):
    """Quadratic template: start from the boundary quadratic (keeps Hessians in the table)."""
    if config.template != "quadratic":
        return None
    return g(grid.coordinates())


def _effective_table(config: SweepConfig) -> EffectiveTable:
    if config.table_axes is not None:
        axes = config.table_axes
    elif config.template == "quadratic":
        # the anchor sits on a table node, so Fbar(M0) is a cell value, not an interpolant
        axes = [np.array([c - 0.5, c, c + 0.5]) for c in sym_coords(config.anchor)]
    else:
        axes = default_axes(config.spec.dim)
    return tabulate_effective(config.spec, axes, config.cell_resolution, tol=config.tol,
                              keep_correctors=True)


def homogenization_sweep(config: SweepConfig) -> ExperimentReport:
    """Oscillating solves per epsilon against one effective solve on the finest grid."""
    spec = config.spec
    report = ExperimentReport(f"sweep_{spec.name}", config.echo())
    table = _effective_table(config)
    if config.template == "quadratic":
        f, g = _problem_data(config, table.interpolate(config.anchor))
    else:
        f, g = _problem_data(config)
    fine = config.grid(config.epsilons[-1])
    u_bar, rep_bar = solve_dirichlet(DirichletProblem(TabulatedOperator(table), fine, f, g),
                                     tol=config.solve_tol, initial=_initial(config, fine, g))
    report.inputs["effective_solve"] = rep_bar.to_dict() | {"wall_time": None}
    rows = []
    for eps in config.epsilons:
        grid = config.grid(eps)
        stride = fine.resolution[0] // grid.resolution[0]
        try:
            u, rep = solve_dirichlet(DirichletProblem(spec, grid, f, g, epsilon=eps),
                                     tol=config.solve_tol, initial=_initial(config, grid, g))
        except OscillateError as exc:
            report.notes.append(f"eps={eps:g}: {type(exc).__name__}: {exc}")
            continue
        ub = u_bar.values[tuple(slice(None, None, stride) for _ in range(spec.dim))]
        err = float(np.max(np.abs(u.values - ub)))
        rows.append({"epsilon": eps, "resolution": grid.resolution[0], "sup_error": err,
                     "iterations": rep.iterations, "residual": rep.residual})
    for a, b in zip(rows[:-1], rows[1:]):
        b["ratio"] = a["sup_error"] / b["sup_error"] if b["sup_error"] > 0 else math.inf
    if rows:
        rows[0]["ratio"] = math.nan
    report.tables["errors"] = rows
    errs = [r["sup_error"] for r in rows]
    if len(rows) >= 2 and all(e > 0 for e in errs):
        report.rates["slope"] = log_log_slope([r["epsilon"] for r in rows], errs)
        report.rates["log2_ratios"] = pairwise_log2_ratios(errs)
    # errors at the solver's round-off floor count as converged (exact effective problems)
    floor = ROUNDOFF_FLOOR * max(1.0, float(np.max(np.abs(u_bar.values))))
    report.flags["monotone_decrease"] = bool(
        len(rows) == len(config.epsilons) and
        all(b < a or max(a, b) <= floor for a, b in zip(errs[:-1], errs[1:])))
    report.flags["ratios_at_least_1.5"] = bool(
        len(rows) == len(config.epsilons) and all(r["ratio"] >= 1.5 for r in rows[1:]))
    return report


def sweep_solutions(config: SweepConfig, epsilon: float):
    """``(u_eps, u_bar, table)`` on the grid of ``epsilon`` (helper for two-scale studies)."""
    table = _effective_table(config)
    if config.template == "quadratic":
        f, g = _problem_data(config, table.interpolate(config.anchor))
    else:
        f, g = _problem_data(config)
    grid = config.grid(epsilon)
    start = _initial(config, grid, g)
    u, _ = solve_dirichlet(DirichletProblem(config.spec, grid, f, g, epsilon=epsilon),
                           tol=config.solve_tol, initial=start)
    ub, _ = solve_dirichlet(DirichletProblem(TabulatedOperator(table), grid, f, g),
                            tol=config.solve_tol, initial=start)
    return u, ub, table


# ---------------------------------------------------------------------------
# Campanato decomposition


@dataclass
class DecompositionFit:
    center: tuple
    mu: float
    levels: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    scale: float = 0.0  # sup |u - u(c)|, sets the round-off floor of the remainders

    def ratios(self) -> list:
        return [lv["ratio"] for lv in self.levels[1:]]


def _project_constraint(M, target, field_, rounds=30, tol=1e-10):
    """Move ``M`` along ``grad Fbar`` until ``Fbar(M) = target`` (1-D Newton)."""
    n = M.shape[0]
    basis = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            basis.append(E)
    for _ in range(rounds):
        val = field_.effective(M)
        if abs(val - target) <= tol:
            return M, abs(val - target)
        step = 1e-4 * max(1.0, frobenius(M))
        grad = np.array([(field_.effective(M + step * E) - field_.effective(M - step * E)) /
                         (2 * step) for E in basis])
        direction = sum(g * E for g, E in zip(grad, basis))
        slope = float(np.sum(direction * direction))
        if slope <= 0:
            break
        M = M + (target - val) / slope * direction
    val = field_.effective(M)
    return M, abs(val - target)


def campanato_fit(u_eps: GridFunction, center, mu: float, depth: int, spec, epsilon: float,
                  f_center: float, cell_field: CorrectorField | None = None,
                  rounds: int = 20) -> DecompositionFit:
    """Fit ``u(x) - u(c) ~ a.(x-c) + (x-c).M(x-c)/2 + eps^2 (w(M, x/eps) - w(M, c/eps))``
    on ``B_{mu^k}(c)`` for ``k = 0..depth`` with ``Fbar(M) = f_center`` enforced.

    Levels with ``mu^k < 8 max(h, eps)`` are not fitted; a note records the truncation.
    """
    if not 0 < mu < 1:
        raise DomainError("mu must lie in (0, 1)")
    grid = u_eps.grid
    n = grid.dim
    cell_field = cell_field or CorrectorField(spec, 32 if n == 1 else 8)
    node = node_of(grid, np.atleast_1d(center))
    x = grid.coordinates()
    c = x[node]
    d = x - c
    r = np.sqrt(np.sum(d * d, axis=-1))
    du = u_eps.values - u_eps.values[node]
    h = max(grid.spacings)
    fit = DecompositionFit(tuple(np.atleast_1d(center).tolist()), mu,
                           scale=float(np.max(np.abs(du))))
    iu = [(i, j) for i in range(n) for j in range(i, n)]
    prev = None
    for k in range(depth + 1):
        radius = mu**k
        if radius < 8 * max(h, epsilon):
            fit.notes.append(f"depth truncated at k={k}: radius {radius:g} below 8 max(h, eps)")
            break
        sel = r <= radius + 1e-12
        D = d[sel]
        quad = np.stack([(0.5 if i == j else 1.0) * D[:, i] * D[:, j] for i, j in iu], -1)
        A = np.hstack([D, quad])
        xs = x[sel]
        M = np.zeros((n, n))
        corr = np.zeros(len(D))
        constraint = math.nan
        for _ in range(rounds):
            coef, *_ = np.linalg.lstsq(A, du[sel] - corr, rcond=None)
            Mn = np.zeros((n, n))
            for (i, j), v in zip(iu, coef[n:]):
                Mn[i, j] = Mn[j, i] = v
            Mn, constraint = _project_constraint(Mn, f_center, cell_field)
            w = cell_field.corrector(Mn)
            corr = epsilon**2 * (_sample(w, xs, epsilon) - _sample(w, c[None], epsilon)[0])
            done = np.max(np.abs(Mn - M)) <= 1e-12
            M = Mn
            if done:
                break
        # final gradient with M fixed
        quad_part = np.einsum("ki,ij,kj->k", D, M, D) * 0.5
        a, *_ = np.linalg.lstsq(D, du[sel] - corr - quad_part, rcond=None)
        E = float(np.max(np.abs(du[sel] - corr - quad_part - D @ a)))
        ratio = E / prev if prev not in (None, 0.0) else math.nan
        clipped = bool(radius > float(grid.distance_to_boundary(c[None])[0]) + 1e-12)
        fit.levels.append({"k": k, "radius": radius, "a": a.tolist(), "M": M.tolist(),
                           "remainder": E, "ratio": ratio, "constraint_residual": constraint,
                           "clipped": clipped})
        prev = E
    return fit


def cascade_ok(fit: DecompositionFit, slack: float = 1.5, floor: float | None = None) -> bool:
    """``E_{k+1} <= slack mu^2 E_k + floor`` for consecutive levels.

    Pairs whose larger ball sticks out of the domain are skipped (both balls
    then see the same nodes). ``floor`` defaults to ``1e-10 * scale``.
    """
    if floor is None:
        floor = ROUNDOFF_FLOOR * 0.1 * fit.scale
    lv = fit.levels
    pairs = [(a, b) for a, b in zip(lv[:-1], lv[1:]) if not a.get("clipped", False)]
    return bool(pairs) and all(b["remainder"] <= slack * fit.mu**2 * a["remainder"] + floor
                               for a, b in pairs)


# ---------------------------------------------------------------------------
# regularity certificates


def default_centers(dim: int) -> list:
    if dim == 1:
        return [(0.5,), (0.375,), (0.625,)]
    return [(0.5, 0.5), (0.375, 0.375), (0.625, 0.375), (0.375, 0.625), (0.625, 0.625)]


def _ball_mask(grid, center, radius):
    d = grid.coordinates() - np.asarray(center, float)
    return np.sqrt(np.sum(d * d, axis=-1)) <= radius + 1e-12


def regularity_certificate(config: SweepConfig, radius: float = 0.25, p: float = 4.0
                           ) -> ExperimentReport:
    """Holder quotients and deleted-neighbourhood Hessian sups across the epsilon sweep."""
    spec = config.spec
    report = ExperimentReport(f"certify_{spec.name}", config.echo())
    centers = list(config.centers or default_centers(spec.dim))
    boundary_center = (0.0,) if spec.dim == 1 else (0.5, 0.0)
    f, g = _problem_data(config)
    rows = []
    for eps in config.epsilons:
        grid = config.grid(eps)
        u, _ = solve_dirichlet(DirichletProblem(spec, grid, f, g, epsilon=eps),
                               tol=config.solve_tol)
        for cen in centers:
            node = node_of(grid, cen)
            affine = best_affine(u, node, config.alpha, eps, radius)
            q = holder_quotient(u, node, affine, config.alpha, eps, radius)
            hs = second_difference_sup(u, [cen], eps, _ball_mask(grid, cen, radius))
            rows.append({"epsilon": eps, "center": str(tuple(cen)), "holder": q,
                         "hessian_sup": hs})
        H, mask = hessian_field(u)
        norm = np.where(mask, np.sqrt(np.sum(H * H, axis=(-1, -2))), np.nan)
        region = _ball_mask(grid, boundary_center, radius)
        rows.append({"epsilon": eps, "center": f"boundary{tuple(boundary_center)}",
                     "holder": math.nan, "hessian_sup": math.nan,
                     "lp_hessian": lp_norm(norm, p, region=region, grid=grid)})
    for r in rows:
        r.setdefault("lp_hessian", math.nan)
    report.tables["certificates"] = rows
    uniform = True
    spreads = {}
    for cen in sorted({r["center"] for r in rows}):
        sel = [r for r in rows if r["center"] == cen]
        for key in ("holder", "hessian_sup", "lp_hessian"):
            vals = np.array([r[key] for r in sel], float)
            if np.all(np.isnan(vals)):
                continue
            lo, hi = float(np.min(vals)), float(np.max(vals))
            ok = hi <= UNIFORMITY_FACTOR * lo if lo > 0 else hi <= 1e-10
            spreads[f"{cen}:{key}"] = hi / lo if lo > 0 else (1.0 if hi <= 1e-10 else math.inf)
            uniform &= ok
    report.rates["max_over_min"] = spreads
    report.flags["uniform_across_epsilon"] = bool(uniform)
    return report
