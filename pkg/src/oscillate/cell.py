"""Cell problems, effective functionals and the structural property checks.

The discrete cell problem on the torus is ``F(M + D_h^2 w, y) = c`` with
``w(0) = 0``. Two routes compute ``c``:

``mean-correction``
    Newton on the bordered system in ``(w[1:], c)``; the unknown ``w(0)`` is
    pinned to zero so the Jacobian is square and nonsingular. If Newton
    stalls, the damped iteration ``w <- w + tau (F - mean F)`` takes over.
``vanishing-discount``
    Solve ``F(M + D_h^2 w) - delta w = 0`` for ``delta = 2^-3 .. 2^-12``,
    extrapolate ``delta w(0)`` to ``delta -> 0`` (Richardson, exponents 1
    and 2), then polish with the bordered Newton. The two values must agree.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator

from .errors import (AuditInapplicable, CrossMethodDisagreement, DomainError,
                     ExtrapolationError, NonConvergenceError, TabulationError)
from .grid import GridFunction, TorusGrid, as_sym, frobenius, hessian_field, sym_coords
from .operators import (DEFAULT_SEED, Min, OperatorSpec, _audit_points, holder_modulus,
                        quadruple_from_matrices, random_psd_unit, random_symmetric,
                        translate_scale)
from .scheme import assemble, differences
from .solver import newton

DEFAULT_CELL_TOL = 1e-6
DISCOUNTS = tuple(2.0 ** -k for k in range(3, 13))


def default_resolution(dim: int) -> int:
    return 256 if dim == 1 else 128


@dataclass
class CellSolution:
    spec: object
    anchor: np.ndarray
    effective_value: float
    corrector: GridFunction
    residual: float
    method: str
    trail: list = field(default_factory=list)  # (delta, delta * w_delta(0))
    extrapolated: float | None = None
    iterations: int = 0

    def to_dict(self) -> dict:
        return {"anchor": np.asarray(self.anchor).tolist(), "effective_value": self.effective_value,
                "residual": self.residual, "method": self.method,
                "trail": [list(t) for t in self.trail], "extrapolated": self.extrapolated,
                "resolution": self.corrector.grid.resolution}


# ---------------------------------------------------------------------------
# solvers


class _CellSystem:
    def __init__(self, spec, M, grid):
        self.grid = grid
        self.op = spec.bind_cell(grid)
        self.size = int(np.prod(grid.shape))
        self.anchor_H = quadruple_from_matrices(np.broadcast_to(M, (self.size,) + M.shape))

    def apply(self, w):
        D = {k: v.reshape(-1) for k, v in differences(w.reshape(self.grid.shape), self.grid).items()}
        for k in D:
            D[k] = D[k] + self.anchor_H[k]
        return self.op.apply(D)

    def frozen(self):
        """``F(M, y)`` at every node."""
        return self.op.apply({k: v.copy() for k, v in self.anchor_H.items()})[0]

    def jac(self, coeffs):
        return assemble(self.grid, coeffs)


def _bordered(system, w0, c0, tol, max_iter):
    n = system.size

    def unpack(x):
        return np.concatenate([[0.0], x[:-1]]), x[-1]

    def res_fn(x):
        w, c = unpack(x)
        val, coeffs = system.apply(w)
        return val - c, coeffs

    def jac_fn(coeffs):
        L = system.jac(coeffs).tocsc()
        return sp.hstack([L[:, 1:], sp.csc_matrix(-np.ones((n, 1)))]).tocsr()

    tau = None

    def fallback(x, r):
        nonlocal tau
        w, c = unpack(x)
        val, coeffs = system.apply(w)
        if tau is None:
            tau = 0.5 / float(np.max(np.abs(system.jac(coeffs).diagonal())))
        w = w + tau * (val - val.mean())
        w = w - w[0]
        val, _ = system.apply(w)
        return np.concatenate([w[1:], [val.mean()]])

    x0 = np.concatenate([w0[1:] - w0[0], [c0]])
    x, report = newton(res_fn, jac_fn, x0, tol, max_iter, fallback)
    w, c = unpack(x)
    return w, float(c), report


def _discounted(system, delta, v0, c0, tol, max_iter):
    """Solve ``F(M + D^2 v) - delta v = c0`` (i.e. ``w = c0/delta + v``)."""
    n = system.size

    def res_fn(v):
        val, coeffs = system.apply(v)
        return val - delta * v - c0, coeffs

    def jac_fn(coeffs):
        return system.jac(coeffs) - delta * sp.identity(n, format="csr")

    tau = None

    def fallback(v, r):
        nonlocal tau
        if tau is None:
            _, coeffs = system.apply(v)
            tau = 0.5 / (float(np.max(np.abs(system.jac(coeffs).diagonal()))) + delta)
        return v + tau * r

    return newton(res_fn, jac_fn, v0, tol, max_iter, fallback)


def richardson(trail) -> float:
    """Two-level Richardson extrapolation (exponents 1, 2) on the last three halvings."""
    if len(trail) < 3:
        raise DomainError("need at least three discount levels")
    (d0, t0), (d1, t1), (d2, t2) = trail[-3:]
    if not (math.isclose(d1, d0 / 2) and math.isclose(d2, d1 / 2)):
        raise DomainError("extrapolation needs successive halvings")
    r01 = 2 * t1 - t0
    r12 = 2 * t2 - t1
    return (4 * r12 - r01) / 3


def solve_cell(spec, M, resolution: int | None = None, method: str = "vanishing-discount",
               tol: float = DEFAULT_CELL_TOL, max_iter: int = 200) -> CellSolution:
    """Effective value and normalized corrector of ``spec`` at anchor ``M``."""
    if method not in ("vanishing-discount", "mean-correction"):
        raise DomainError(f"unknown method {method!r}")
    M = as_sym(M, spec.dim)
    resolution = resolution or default_resolution(spec.dim)
    grid = TorusGrid(spec.dim, resolution)
    if resolution < 8 * max(1, spec.max_frequency):
        raise DomainError(f"resolution {resolution} does not resolve frequency "
                          f"{spec.max_frequency} with 8 points")
    system = _CellSystem(spec, M, grid)
    frozen = system.frozen()
    inner_tol = tol * 1e-2
    if spec.y_independent:
        c = float(frozen[0])
        w = np.zeros(grid.shape)
        return CellSolution(spec, M, c, GridFunction(grid, w), 0.0, method)

    trail, extrapolated, iterations = [], None, 0
    w0, c0 = np.zeros(system.size), float(frozen.mean())
    if method == "vanishing-discount":
        # w_delta = shift/delta + v with the shift re-centred at every level keeps v = O(1)
        v = np.zeros(system.size)
        shift = c0
        for delta in DISCOUNTS:
            v, rep = _discounted(system, delta, v, shift, inner_tol, max_iter)
            iterations += rep.iterations
            t = shift + delta * v[0]
            trail.append((delta, float(t)))
            v = v - v[0]
            shift = float(t)
        extrapolated = float(richardson(trail))
        w0, c0 = v, extrapolated
    w, c, rep = _bordered(system, w0, c0, inner_tol, max_iter)
    iterations += rep.iterations
    if extrapolated is not None and abs(extrapolated - c) > 10 * tol:
        raise CrossMethodDisagreement(
            f"discount extrapolation {extrapolated:.10g} vs cell equation {c:.10g}")
    val, _ = system.apply(w)
    res = float(np.max(np.abs(val - c)))
    return CellSolution(spec, M, c, GridFunction(grid, w.reshape(grid.shape)), res, method,
                        trail, extrapolated, iterations)


# ---------------------------------------------------------------------------
# cached effective values

_MEMO: dict = {}


def _cache_dir():
    path = os.environ.get("OSCILLATE_CACHE_DIR")
    return Path(path) if path else None


def _cache_key(spec, M, resolution, method, tol) -> str:
    payload = json.dumps([spec.key, np.round(np.asarray(M), 12).tolist(), resolution, method, tol])
    return hashlib.sha256(payload.encode()).hexdigest()[:24]


def cached_cell(spec, M, resolution=None, method="mean-correction", tol=DEFAULT_CELL_TOL):
    """:func:`solve_cell` behind an in-process map and the optional on-disk cache."""
    M = as_sym(M, spec.dim)
    resolution = resolution or default_resolution(spec.dim)
    if not isinstance(spec, OperatorSpec):
        return solve_cell(spec, M, resolution, method, tol)
    key = _cache_key(spec, M, resolution, method, tol)
    if key in _MEMO:
        return _MEMO[key]
    cdir = _cache_dir()
    if cdir is not None:
        path = cdir / f"cell-{key}.npz"
        if path.exists():
            data = np.load(path)
            grid = TorusGrid(spec.dim, resolution)
            cell = CellSolution(spec, M, float(data["value"]), GridFunction(grid, data["w"]),
                                float(data["residual"]), method)
            _MEMO[key] = cell
            return cell
    cell = solve_cell(spec, M, resolution, method, tol)
    _MEMO[key] = cell
    if cdir is not None:
        cdir.mkdir(parents=True, exist_ok=True)
        tmp = cdir / f".cell-{key}.{os.getpid()}.npz"
        np.savez(tmp, value=cell.effective_value, w=cell.corrector.values, residual=cell.residual)
        os.replace(tmp, cdir / f"cell-{key}.npz")
    return cell


def effective_value(spec, M, resolution=None, method="mean-correction",
                    tol=DEFAULT_CELL_TOL) -> float:
    return cached_cell(spec, M, resolution, method, tol).effective_value


# ---------------------------------------------------------------------------
# tables


def coords_to_matrix(coords, dim):
    if dim == 1:
        return np.array([[coords[0]]], dtype=float)
    m11, m22, m12 = coords
    return np.array([[m11, m12], [m12, m22]], dtype=float)


def default_axes(dim, lo=-4.0, hi=4.0, step=0.5):
    axis = np.round(np.arange(lo, hi + step / 2, step), 12)
    return [axis] * (1 if dim == 1 else 3)


@dataclass
class EffectiveTable:
    """Effective values on a tensor grid of matrix coordinates ``(m)`` or ``(m11, m22, m12)``.

    Interpolation between nodes is multilinear and therefore approximate.
    """

    spec_name: str
    spec_key: str
    dim: int
    axes: list
    values: np.ndarray
    residuals: np.ndarray
    lam: float
    Lam: float
    resolution: int
    correctors: np.ndarray | None = None

    def __post_init__(self):
        self.axes = [np.asarray(a, dtype=float) for a in self.axes]
        self._interp = None
        self._corr = None

    def nodes(self):
        for idx in product(*(range(len(a)) for a in self.axes)):
            yield idx, coords_to_matrix([a[i] for a, i in zip(self.axes, idx)], self.dim)

    def _point(self, M):
        return np.array(sym_coords(as_sym(M, self.dim)), dtype=float)

    def _check_range(self, pts):
        pts = np.atleast_2d(pts)
        for k, a in enumerate(self.axes):
            if np.any(pts[:, k] < a[0] - 1e-12) or np.any(pts[:, k] > a[-1] + 1e-12):
                raise ExtrapolationError(f"matrix coordinate outside table axis {k} "
                                         f"[{a[0]}, {a[-1]}]")

    def interpolate_coords(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        self._check_range(pts)
        if self._interp is None:
            self._interp = RegularGridInterpolator(self.axes, self.values)
        clipped = np.clip(pts, [a[0] for a in self.axes], [a[-1] for a in self.axes])
        return self._interp(clipped)

    def interpolate(self, M) -> float:
        return float(self.interpolate_coords(self._point(M))[0])

    def corrector_at(self, M) -> np.ndarray:
        if self.correctors is None:
            raise DomainError("table was built without stored correctors")
        p = self._point(M)
        self._check_range(p)
        if self._corr is None:
            self._corr = RegularGridInterpolator(self.axes, self.correctors)
        return self._corr(np.clip(p, [a[0] for a in self.axes], [a[-1] for a in self.axes])[None])[0]

    def to_csv(self) -> str:
        names = ["m"] if self.dim == 1 else ["m11", "m22", "m12"]
        lines = [",".join(names + ["value", "residual"])]
        for idx, _ in self.nodes():
            coords = [f"{a[i]:.12g}" for a, i in zip(self.axes, idx)]
            lines.append(",".join(coords + [f"{self.values[idx]:.15g}",
                                            f"{self.residuals[idx]:.3e}"]))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        doc = {"schema": "oscillate.table/1", "spec": self.spec_name, "spec_key": self.spec_key,
               "dim": self.dim, "lambda": self.lam, "Lambda": self.Lam,
               "resolution": self.resolution,
               "grid": [{"lo": float(a[0]), "hi": float(a[-1]), "count": int(len(a)),
                         "nodes": a.tolist()} for a in self.axes],
               "values": self.values.reshape(-1).tolist(),
               "residuals": self.residuals.reshape(-1).tolist()}
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EffectiveTable":
        doc = json.loads(text)
        axes = [np.asarray(g["nodes"]) for g in doc["grid"]]
        shape = tuple(len(a) for a in axes)
        return cls(doc["spec"], doc["spec_key"], doc["dim"], axes,
                   np.asarray(doc["values"]).reshape(shape),
                   np.asarray(doc["residuals"]).reshape(shape), doc["lambda"], doc["Lambda"],
                   doc["resolution"])


def _table_job(args):
    spec, M, resolution, method, tol = args
    try:
        cell = solve_cell(spec, M, resolution, method, tol)
    except Exception as exc:  # reported with the partial table
        return None, repr(exc)
    return (cell.effective_value, cell.residual, cell.corrector.values), None


def tabulate_effective(spec: OperatorSpec, axes=None, resolution=None, method="mean-correction",
                       tol=DEFAULT_CELL_TOL, jobs: int = 1,
                       keep_correctors: bool = False) -> EffectiveTable:
    """Effective value at every node of a matrix-coordinate grid (default [-4, 4], step 0.5)."""
    axes = default_axes(spec.dim) if axes is None else [np.asarray(a, float) for a in axes]
    if len(axes) != (1 if spec.dim == 1 else 3):
        raise DomainError("wrong number of matrix-coordinate axes")
    resolution = resolution or default_resolution(spec.dim)
    shape = tuple(len(a) for a in axes)
    values = np.full(shape, np.nan)
    residuals = np.full(shape, np.nan)
    grid_shape = (resolution,) * spec.dim
    correctors = np.full(shape + grid_shape, np.nan) if keep_correctors else None
    table = EffectiveTable(spec.name, spec.key, spec.dim, axes, values, residuals, spec.lam,
                           spec.Lam, resolution, correctors)
    node_list = list(table.nodes())
    tasks = [(spec, M, resolution, method, tol) for _, M in node_list]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_table_job, tasks))
    else:
        results = [_table_job(t) for t in tasks]
    failure = None
    for (idx, _), (out, err) in zip(node_list, results):
        if out is None:
            failure = failure or (idx, err)
            continue
        values[idx], residuals[idx] = out[0], out[1]
        if keep_correctors:
            correctors[idx] = out[2]
    if failure is not None:
        raise TabulationError(f"node {failure[0]} failed: {failure[1]}", partial=table)
    return table


class TabulatedOperator:
    """A y-independent operator ``Fbar`` read from an :class:`EffectiveTable`.

    The linearization uses the gradient of the multilinear interpolant, and
    the mixed difference is chosen by the sign of ``dFbar/dm12``.
    """

    y_independent = True
    max_frequency = 0

    def __init__(self, table: EffectiveTable, step: float = 1e-6):
        self.table = table
        self.dim = table.dim
        self.lam, self.Lam = table.lam, table.Lam
        self.step = step
        self.name = f"tabulated({table.spec_name})"

    def monotonicity_violation(self):
        return None

    def _grad(self, pts):
        g = np.empty_like(pts)
        lo = np.array([a[0] for a in self.table.axes])
        hi = np.array([a[-1] for a in self.table.axes])
        for k in range(pts.shape[1]):
            e = np.zeros(pts.shape[1])
            e[k] = self.step
            a = np.clip(pts + e, lo, hi)
            b = np.clip(pts - e, lo, hi)
            g[:, k] = (self.table.interpolate_coords(a) - self.table.interpolate_coords(b)) / \
                np.maximum(a[:, k] - b[:, k], 1e-300)
        return g

    def apply(self, D):
        if self.dim == 1:
            pts = D["p"][:, None]
            return self.table.interpolate_coords(pts), {"a11": self._grad(pts)[:, 0]}
        pts = np.stack([D["p"], D["q"], D["rp"]], -1)
        g = self._grad(pts)
        neg = g[:, 2] < 0
        if np.any(neg):
            alt = pts.copy()
            alt[:, 2] = D["rm"]
            ga = self._grad(alt)
            use = neg & (ga[:, 2] < 0)
            pts[use] = alt[use]
            g[use] = ga[use]
        val = self.table.interpolate_coords(pts)
        return val, {"a11": g[:, 0], "a22": g[:, 1], "a12": 0.5 * g[:, 2]}

    def bind_nodes(self, x, epsilon):
        return self

    def evaluate_batch(self, Ms, ys=None):
        Ms = np.asarray(Ms, dtype=float)
        return self.table.interpolate_coords(np.array([sym_coords(m) for m in Ms]))


# ---------------------------------------------------------------------------
# property checks


@dataclass
class CheckReport:
    name: str
    status: str  # "pass" | "fail" | "inapplicable"
    metrics: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "metrics": self.metrics,
                "rows": self.rows}


def check_effective_ellipticity(obj, trials: int = 100, seed: int = DEFAULT_SEED,
                                resolution=None, tol=DEFAULT_CELL_TOL) -> CheckReport:
    """Sandwich ``lam|N| - s <= Fbar(M+N) - Fbar(M) <= Lam|N| + s`` with ``s = 4 tol (1+|N|)``."""
    if trials < 50:
        raise DomainError("trials must be at least 50")
    rng = np.random.default_rng(seed)
    pairs = []
    if isinstance(obj, EffectiveTable):
        lam, Lam = obj.lam, obj.Lam
        nodes = [M for _, M in obj.nodes()]
        vals = {i: obj.values[idx] for i, (idx, _) in enumerate(obj.nodes())}
        attempts = 0
        while len(pairs) < trials and attempts < 200 * trials:
            attempts += 1
            i, j = rng.integers(0, len(nodes), size=2)
            N = nodes[j] - nodes[i]
            if frobenius(N) > 0 and np.linalg.eigvalsh(N).min() >= -1e-12:
                pairs.append((nodes[i], N, vals[i], vals[j]))
        if len(pairs) < trials:
            raise DomainError("table too small to draw the requested PSD pairs")
        tol = max(tol, float(np.nanmax(obj.residuals)))
    else:
        spec = obj
        lam, Lam = spec.lam, spec.Lam
        Ms = random_symmetric(rng, spec.dim, trials, scale=1.5)
        Ns = random_psd_unit(rng, spec.dim, trials) * rng.uniform(0.25, 2.0, (trials, 1, 1))
        for M, N in zip(Ms, Ns):
            a = effective_value(spec, M, resolution, tol=tol)
            b = effective_value(spec, M + N, resolution, tol=tol)
            pairs.append((M, N, a, b))
    worst_lo = worst_hi = math.inf
    violations = 0
    rows = []
    for M, N, a, b in pairs:
        n = frobenius(N)
        slack = 4 * tol * (1 + n)
        d = b - a
        lo_margin = d - (lam * n - slack)
        hi_margin = (Lam * n + slack) - d
        worst_lo, worst_hi = min(worst_lo, lo_margin), min(worst_hi, hi_margin)
        if lo_margin < 0 or hi_margin < 0:
            violations += 1
        rows.append({"normN": n, "quotient": d / n})
    return CheckReport("effective_ellipticity", "pass" if violations == 0 else "fail",
                       {"violations": violations, "worst_lower_margin": worst_lo,
                        "worst_upper_margin": worst_hi, "trials": len(pairs)}, rows)


def check_scaling_identity(spec, M, mu, N_samples, resolution=None,
                           tol=DEFAULT_CELL_TOL, seed=DEFAULT_SEED) -> CheckReport:
    """Compare ``Fbar_{M,mu}(N)`` with ``(Fbar(mu N + M) - Fbar(M)) / mu`` and the correctors."""
    M = as_sym(M, spec.dim)
    if isinstance(N_samples, int):
        rng = np.random.default_rng(seed)
        N_samples = list(random_symmetric(rng, spec.dim, N_samples, scale=1.0))
    base = solve_cell(spec, M, resolution, "mean-correction", tol)
    scaled = translate_scale(spec, M, mu, base)
    worst_val = worst_cor = 0.0
    rows = []
    for N in N_samples:
        N = as_sym(N, spec.dim)
        lhs = solve_cell(scaled, N, base.corrector.grid.resolution, "mean-correction", tol)
        top = solve_cell(spec, mu * N + M, base.corrector.grid.resolution, "mean-correction", tol)
        rhs = (top.effective_value - base.effective_value) / mu
        cor = (top.corrector.values - base.corrector.values) / mu
        dv = abs(lhs.effective_value - rhs)
        dc = float(np.max(np.abs(lhs.corrector.values - cor)))
        worst_val, worst_cor = max(worst_val, dv), max(worst_cor, dc)
        rows.append({"N": N.tolist(), "scaled": lhs.effective_value, "difference": rhs,
                     "value_gap": dv, "corrector_gap": dc})
    ok = worst_val <= 10 * tol and worst_cor <= 10 * tol
    return CheckReport("scaling_identity", "pass" if ok else "fail",
                       {"worst_value_gap": worst_val, "worst_corrector_gap": worst_cor,
                        "mu": mu, "samples": len(rows)}, rows)


def _min_spec(spec1, spec2):
    return OperatorSpec(spec1.dim, Min(spec1.dim, (spec1.root, spec2.root)),
                        min(spec1.lam, spec2.lam), max(spec1.Lam, spec2.Lam), None,
                        min(spec1.gamma, spec2.gamma), f"min({spec1.name},{spec2.name})")


def check_min_monotonicity(spec1, spec2, M_samples, resolution=None,
                           tol=DEFAULT_CELL_TOL) -> CheckReport:
    """``eff(min(F1, F2)) <= min(eff F1, eff F2) + 2 tol`` at every sample; reports the gap."""
    if spec1.dim != spec2.dim:
        raise DomainError("dimension mismatch")
    both = _min_spec(spec1, spec2)
    rows, ok, min_gap, max_gap = [], True, math.inf, -math.inf
    for M in M_samples:
        M = as_sym(M, spec1.dim)
        e1 = effective_value(spec1, M, resolution, tol=tol)
        e2 = effective_value(spec2, M, resolution, tol=tol)
        em = effective_value(both, M, resolution, tol=tol)
        gap = min(e1, e2) - em
        ok &= gap >= -2 * tol
        min_gap, max_gap = min(min_gap, gap), max(max_gap, gap)
        rows.append({"M": M.tolist(), "eff1": e1, "eff2": e2, "eff_min": em, "gap": gap})
    return CheckReport("min_monotonicity", "pass" if ok else "fail",
                       {"min_gap": min_gap, "max_gap": max_gap}, rows)


def _sample_matrices(dim, rng, count, radius_lo, radius_hi):
    if dim == 1:
        r = np.linspace(radius_lo, radius_hi, count)
        return np.concatenate([r, -r])[:, None, None]
    G = random_symmetric(rng, 2, count)
    G /= np.sqrt(np.sum(G * G, axis=(-1, -2)))[:, None, None]
    r = rng.uniform(radius_lo, radius_hi, count)
    return G * r[:, None, None]


def audit_key_hypotheses(concave, convex, R=None, L=None, samples=400, seed=DEFAULT_SEED):
    """Dense-sampling audit of the two key-lemma hypotheses; raises :class:`AuditInapplicable`."""
    R = R if R is not None else concave.meta.get("R", 1.0)
    L = L if L is not None else concave.meta.get("L", 1.0)
    dim = concave.dim
    rng = np.random.default_rng(seed)
    y = _audit_points(dim, 64 if dim == 1 else 24)
    k = len(y)
    small = _sample_matrices(dim, rng, samples, 0.0, L * R) if math.isfinite(L * R) else None
    if small is not None:
        for spec in (concave, convex):
            for M in small:
                v = spec.evaluate_batch(np.broadcast_to(M, (k, dim, dim)), y)
                spread = v.max() - v.min()
                if spread > 1e-10 * (1 + frobenius(M)):
                    raise AuditInapplicable(
                        f"{spec.name} depends on y at |M|={frobenius(M):.3g} <= L R "
                        f"(spread {spread:.3g})")
    if math.isfinite(R):
        kappa = max(s.kappa if s.kappa is not None else holder_modulus(s) for s in (concave, convex))
        gamma = min(concave.gamma, convex.gamma)
        need = kappa * dim ** (gamma / 2)
        for M in _sample_matrices(dim, rng, samples, R, 4 * R):
            Ms = np.broadcast_to(M, (k, dim, dim))
            gap = convex.evaluate_batch(Ms, y) - concave.evaluate_batch(Ms, y)
            if gap.min() < need * frobenius(M) - 1e-12:
                raise AuditInapplicable(
                    f"gap {gap.min():.3g} below kappa n^(gamma/2) |M| = "
                    f"{need * frobenius(M):.3g} at |M|={frobenius(M):.3g}")
    return {"R": R, "L": L}


def check_key_equality(concave, convex, M_grid, resolution=None, tol=DEFAULT_CELL_TOL,
                       R=None, L=None) -> CheckReport:
    """``eff(min(concave, convex)) = min(eff concave, eff convex)`` within ``3 tol``."""
    audit = audit_key_hypotheses(concave, convex, R, L)
    both = _min_spec(concave, convex)
    worst, worst_M, rows = 0.0, None, []
    for M in M_grid:
        M = as_sym(M, concave.dim)
        ec = effective_value(concave, M, resolution, tol=tol)
        ev = effective_value(convex, M, resolution, tol=tol)
        em = effective_value(both, M, resolution, tol=tol)
        d = abs(em - min(ec, ev))
        if d >= worst:
            worst, worst_M = d, M.tolist()
        rows.append({"M": M.tolist(), "concave": ec, "convex": ev, "min": em, "discrepancy": d})
    return CheckReport("key_equality", "pass" if worst <= 3 * tol else "fail",
                       {"worst": worst, "worst_M": worst_M, **audit}, rows)


def corrector_hessian_floor(cell: CellSolution) -> tuple:
    """``(min_y |M + D_h^2 w|, that minimum / |M|)``."""
    H, _ = hessian_field(cell.corrector)
    X = H + cell.anchor
    norms = np.sqrt(np.sum(X * X, axis=(-1, -2)))
    m = float(norms.min())
    nM = frobenius(cell.anchor)
    if nM == 0:
        raise DomainError("corrector floor ratio undefined at M = 0")
    return m, m / nM
