"""Boundary-layer correctors.

``zeta`` solves ``F(M + D^2 w(x/eps) + D^2 zeta, x/eps) = Fbar(M)`` in the unit
interval / unit square with ``zeta = -eps^2 w(x/eps)`` on the boundary. The
physical grid is aligned with the cell grid (``h = eps / m`` for a cell
resolution ``m``) so the corrector Hessian is available at every node
without interpolation; ``Gamma`` is ``{x = 0}`` in 1-D and ``{x2 = 0}`` in 2-D.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .grid import BoxGrid, GridFunction, hessian_norm_field, lp_norm
from .operators import translate_scale
from .solver import DirichletProblem, SolveReport, solve_dirichlet


def aligned_grid(dim: int, epsilon: float, cell_resolution: int) -> BoxGrid:
    """Unit box whose spacing is ``epsilon / cell_resolution``."""
    n = cell_resolution / epsilon
    N = int(round(n))
    if abs(n - N) > 1e-9 * n:
        raise DomainError(f"1/h = {n:.6g} is not an integer; choose epsilon so that "
                          "cell_resolution / epsilon is integral")
    return BoxGrid.unit(dim, N)


def sample_corrector(cell, grid: BoxGrid, epsilon: float) -> np.ndarray:
    """``w(x / eps)`` at every node of an aligned grid."""
    m = cell.corrector.grid.resolution
    y = grid.coordinates() / epsilon * m
    iy = np.round(y)
    if np.max(np.abs(y - iy)) > 1e-6:
        raise DomainError("grid is not aligned with the cell grid")
    iy = iy.astype(int) % m
    return cell.corrector.values[tuple(iy[..., k] for k in range(grid.dim))]


def distance_to_gamma(grid: BoxGrid) -> np.ndarray:
    x = grid.coordinates()
    return x[..., -1] if grid.dim == 2 else x[..., 0]


@dataclass
class BoundaryLayerProblem:
    spec: object
    anchor: np.ndarray
    cell: object
    epsilon: float

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=float).reshape(self.spec.dim, self.spec.dim)
        if self.cell.spec.key != self.spec.key or \
                not np.allclose(self.cell.anchor, self.anchor, atol=1e-12):
            raise DomainError("cell solution does not match (spec, M)")
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")
        self.grid = aligned_grid(self.spec.dim, self.epsilon, self.cell.corrector.grid.resolution)


@dataclass
class BoundaryLayerSolution:
    zeta: GridFunction
    epsilon: float
    sup_abs: float
    boundary_sup: float
    bands: list = field(default_factory=list)
    lp: dict = field(default_factory=dict)
    report: SolveReport | None = None


def _band_table(zeta: GridFunction, epsilon: float) -> list:
    grid = zeta.grid
    norm, mask = hessian_norm_field(zeta)
    d = distance_to_gamma(grid)
    keep = mask.copy()
    if grid.dim == 2:
        x1 = grid.coordinates()[..., 0]
        keep &= (x1 >= 0.25) & (x1 <= 0.75)
    keep &= d < 0.5
    h = max(grid.spacings)
    rows = []
    k = 1
    while 2.0 ** -k >= h:
        lo, hi = 2.0 ** -k, 2.0 ** (-k + 1)
        sel = keep & (d >= lo) & (d < hi)
        if np.any(sel):
            sup = float(np.max(norm[sel]))
            ratio = float(np.max(norm[sel] * d[sel] ** 2)) / epsilon**2
            rows.append({"band": k, "d_lo": lo, "d_hi": hi, "d_mid": 0.5 * (lo + hi),
                         "sup_hessian": sup, "reference": epsilon**2 / lo**2, "ratio": ratio})
        k += 1
    return rows


def solve_boundary_layer(problem: BoundaryLayerProblem, tol: float = 1e-8,
                         lp_exponents=(4, 8)) -> BoundaryLayerSolution:
    spec, eps, grid = problem.spec, problem.epsilon, problem.grid
    scaled = translate_scale(spec, problem.anchor, 1.0, problem.cell)
    w = sample_corrector(problem.cell, grid, eps)
    g = -eps**2 * w
    x = grid.coordinates().reshape(-1, grid.dim)
    idx = scaled.cell_indices(x, eps)
    # Fbar(M) - F(M + D^2 w, y): zero up to the cell residual
    rhs = (problem.cell.effective_value - scaled.baseline[idx]).reshape(grid.shape)
    dp = DirichletProblem(scaled, grid, rhs, g, epsilon=eps)
    zeta, report = solve_dirichlet(dp, tol=tol)
    bmask = grid.boundary_mask()
    norm, mask = hessian_norm_field(zeta)
    lp = {p: lp_norm(np.where(mask, norm, np.nan), p, grid=grid) for p in lp_exponents}
    return BoundaryLayerSolution(zeta, eps, zeta.sup(), float(np.max(np.abs(g[bmask]))),
                                 _band_table(zeta, eps), lp, report)


def decay_profile(sol: BoundaryLayerSolution) -> dict:
    """Band table with the reference curve ``eps^2/d^2`` and the ``L^p`` Hessian norms."""
    return {"epsilon": sol.epsilon, "bands": [dict(r) for r in sol.bands],
            "lp": {str(p): v for p, v in sol.lp.items()}}


def decay_csv(sol: BoundaryLayerSolution) -> str:
    lines = ["band,d_lo,d_mid,sup_hessian,reference,ratio," +
             ",".join(f"L{p}" for p in sol.lp)]
    lp = ",".join(f"{v:.10e}" for v in sol.lp.values())
    for r in sol.bands:
        lines.append(f"{r['band']},{r['d_lo']:.10g},{r['d_mid']:.10g},{r['sup_hessian']:.10e},"
                     f"{r['reference']:.10e},{r['ratio']:.10e},{lp}")
    return "\n".join(lines) + "\n"


def fit_band_constant(solutions, min_distance_factor: float = 4.0) -> dict:
    """Fit one decay constant across an epsilon sweep.

    ``R(eps)`` is the largest band ratio among bands with ``d_lo >= 4 eps``;
    the fitted constant is the geometric mean of the ``R(eps)`` and the sweep
    is uniform when every ``R(eps) <= 2 C``.
    """
    per_eps = []
    for sol in solutions:
        vals = [r["ratio"] for r in sol.bands if r["d_lo"] >= min_distance_factor * sol.epsilon]
        if vals:
            per_eps.append((sol.epsilon, max(vals)))
    if not per_eps:
        return {"constant": math.nan, "per_epsilon": [], "uniform": False}
    ratios = np.array([r for _, r in per_eps])
    positive = ratios[ratios > 0]
    C = float(np.exp(np.mean(np.log(positive)))) if positive.size else 0.0
    uniform = bool(np.all(ratios <= 2 * C + 1e-300)) if C > 0 else bool(np.all(ratios == 0))
    return {"constant": C, "per_epsilon": per_eps, "uniform": uniform}
