"""Dirichlet solver for ``F(D^2 u, x/eps) - delta u = f`` on box grids.

The discrete operator is piecewise linear in ``u``: at every node one leaf
(or one Pucci control) is active and contributes a linear stencil plus a
constant. Newton's method on this structure is Howard's policy iteration;
each step solves one sparse linear system. The first step evaluates the
initial policy; after it a backtracking line search keeps the sup residual
from increasing, and a repeated policy or a failed line search hands over to
a damped explicit fixed-point iteration.
"""
from __future__ import annotations

import hashlib
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AuditInapplicable, DomainError, MonotonicityError, NonConvergenceError
from .grid import BoxGrid, GridFunction
from .scheme import assemble, differences, unknown_index

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200
DEFAULT_SWEEPS = 100_000


@dataclass
class SolveReport:
    iterations: int
    residual: float
    method: str  # "policy-iteration" | "damped-fixed-point"
    wall_time: float
    history: list = field(default_factory=list)
    policies: int = 0

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "residual": self.residual, "method": self.method,
                "wall_time": self.wall_time, "policies": self.policies}


def _policy_hash(coeffs: dict) -> str:
    h = hashlib.blake2b(digest_size=16)
    for key in sorted(coeffs):
        h.update(np.round(np.asarray(coeffs[key], dtype=float), 12).tobytes())
    return h.hexdigest()


def newton(residual_fn, jacobian_fn, x0, tol, max_iter, fallback_fn=None,
           fallback_sweeps=DEFAULT_SWEEPS):
    """Policy iteration on ``residual_fn(x) -> (r, coeffs)`` with sup-residual backtracking.

    ``jacobian_fn(coeffs)`` returns the sparse derivative of ``r`` for the
    active policy. ``fallback_fn(x, r) -> x`` is one damped explicit sweep.
    """
    start = time.perf_counter()
    x = np.array(x0, dtype=float)
    r, coeffs = residual_fn(x)
    res = float(np.max(np.abs(r))) if r.size else 0.0
    history = [res]
    seen = set()
    it = 0
    method = "policy-iteration"
    stalled = False
    while res > tol:
        if it >= max_iter:
            stalled = True
            break
        key = _policy_hash(coeffs)
        if key in seen:
            stalled = True
            break
        seen.add(key)
        it += 1
        J = jacobian_fn(coeffs)
        try:
            with warnings.catch_warnings():
                # a singular policy matrix yields NaNs, handled as a stall below
                warnings.simplefilter("ignore", spla.MatrixRankWarning)
                dx = spla.spsolve(J.tocsc(), -r)
        except RuntimeError:
            stalled = True
            break
        if not np.all(np.isfinite(dx)):
            stalled = True
            break
        if it == 1:
            # policy evaluation of the initial policy; the merit is tracked from here on
            x = x + dx
            r, coeffs = residual_fn(x)
            res = float(np.max(np.abs(r)))
            history = [res]
            continue
        t = 1.0
        accepted = False
        while t >= 1.0 / 64:
            xn = x + t * dx
            rn, cn = residual_fn(xn)
            resn = float(np.max(np.abs(rn)))
            if resn <= res:
                accepted = True
                break
            t /= 2
        if not accepted:
            stalled = True
            break
        x, r, coeffs, res = xn, rn, cn, resn
        history.append(res)
    if stalled and res > tol:
        if fallback_fn is None:
            raise NonConvergenceError("policy iteration stalled", res, history)
        method = "damped-fixed-point"
        sweeps = 0
        checkpoint = res
        while res > tol and sweeps < fallback_sweeps:
            x = fallback_fn(x, r)
            r, coeffs = residual_fn(x)
            res = float(np.max(np.abs(r)))
            sweeps += 1
            if sweeps % 1000 == 0:
                history.append(res)
                if sweeps % 5000 == 0:
                    # stagnation (typically the round-off floor of the residual)
                    if res > 0.99 * checkpoint:
                        break
                    checkpoint = res
        it += sweeps
        if res > tol:
            raise NonConvergenceError(
                f"no convergence after {max_iter} policies and {sweeps} damped sweeps", res,
                history)
        history.append(res)
    report = SolveReport(it, res, method, time.perf_counter() - start, history, len(seen))
    return x, report


def _as_field(grid, data, name):
    if isinstance(data, GridFunction):
        if data.grid != grid:
            raise DomainError(f"{name} lives on a different grid")
        vals = data.values
    elif callable(data):
        vals = np.asarray(data(grid.coordinates()), dtype=float) * np.ones(grid.shape)
    else:
        try:
            vals = np.asarray(data, dtype=float) * np.ones(grid.shape)
        except ValueError:
            raise DomainError(f"{name} cannot be broadcast to the grid shape {grid.shape}") \
                from None
    if vals.shape != grid.shape:
        raise DomainError(f"{name} has shape {vals.shape}, expected {grid.shape}")
    if not np.all(np.isfinite(vals)):
        raise DomainError(f"{name} is not finite")
    return np.array(vals, dtype=float)


@dataclass
class DirichletProblem:
    """``F(D^2 u, x/eps) - delta u = f`` in the box, ``u = g`` on its boundary.

    ``rhs`` and ``boundary`` accept a :class:`GridFunction`, an array, a
    scalar or a callable of node coordinates (only boundary values of
    ``boundary`` are used).
    """

    spec: object
    grid: BoxGrid
    rhs: object = 0.0
    boundary: object = 0.0
    epsilon: float = math.inf
    delta: float = 0.0
    allow_underresolved: bool = False

    def __post_init__(self):
        if not isinstance(self.grid, BoxGrid):
            raise DomainError("Dirichlet problems need a BoxGrid")
        if getattr(self.spec, "dim", None) != self.grid.dim:
            raise DomainError("operator and grid dimension differ")
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")
        if self.delta < 0:
            raise DomainError("delta must be nonnegative")
        self.f = _as_field(self.grid, self.rhs, "rhs")
        self.g = _as_field(self.grid, self.boundary, "boundary")
        h = max(self.grid.spacings)
        oscillating = not getattr(self.spec, "y_independent", False)
        if oscillating and not math.isinf(self.epsilon) and self.epsilon <= 2 * h \
                and not self.allow_underresolved:
            raise DomainError(f"epsilon={self.epsilon:g} is not resolved by spacing {h:g} "
                              "(needs epsilon > 2h; set allow_underresolved to override)")
        check = getattr(self.spec, "monotonicity_violation", None)
        if check is None and hasattr(self.spec, "base"):
            check = self.spec.base.monotonicity_violation
        bad = check() if check else None
        if bad is not None:
            y, leaf, a11, a22, a12 = bad
            raise MonotonicityError(
                f"leaf {leaf} at y={y}: |a12|={abs(a12):.4g} exceeds min(a11, a22)="
                f"{min(a11, a22):.4g}", node=y, entry=(leaf, a11, a22, a12))

    # internal plumbing shared by solve/residual

    def _setup(self):
        grid = self.grid
        idx = unknown_index(grid)
        x = grid.coordinates().reshape(-1, grid.dim)[idx]
        op = self.spec.bind_nodes(x, self.epsilon)
        return idx, op

    def _residual_full(self, u_full, idx, op):
        D = {k: v.reshape(-1) for k, v in differences(u_full, self.grid).items()}
        val, coeffs = op.apply(D)
        ui = u_full.reshape(-1)[idx]
        return val - self.delta * ui - self.f.reshape(-1)[idx], coeffs


def residual(problem: DirichletProblem, u: GridFunction) -> float:
    """Sup over interior nodes of ``|F(D_h^2 u, x/eps) - delta u - f|``."""
    idx, op = problem._setup()
    r, _ = problem._residual_full(np.asarray(u.values if isinstance(u, GridFunction) else u),
                                  idx, op)
    return float(np.max(np.abs(r))) if r.size else 0.0


def residual_field(problem: DirichletProblem, u: GridFunction) -> np.ndarray:
    """Signed residual on the full grid (zero on the boundary)."""
    idx, op = problem._setup()
    r, _ = problem._residual_full(np.asarray(u.values), idx, op)
    out = np.zeros(int(np.prod(problem.grid.shape)))
    out[idx] = r
    return out.reshape(problem.grid.shape)


def solve_dirichlet(problem: DirichletProblem, tol: float = DEFAULT_TOL,
                    max_iter: int = DEFAULT_MAX_ITER, initial=None,
                    fallback_sweeps: int = DEFAULT_SWEEPS):
    """Solve ``problem``; returns ``(GridFunction, SolveReport)``."""
    grid = problem.grid
    idx, op = problem._setup()
    bmask = grid.boundary_mask().reshape(-1)
    base = np.zeros(int(np.prod(grid.shape)))
    if initial is not None:
        base[:] = np.asarray(initial.values if isinstance(initial, GridFunction) else initial,
                             dtype=float).reshape(-1)
    base[bmask] = problem.g.reshape(-1)[bmask]
    n = idx.size
    delta = problem.delta

    def full(xi):
        u = base.copy()
        u[idx] = xi
        return u.reshape(grid.shape)

    def res_fn(xi):
        return problem._residual_full(full(xi), idx, op)

    def jac_fn(coeffs):
        L = assemble(grid, coeffs)[:, idx]
        return L - delta * sp.identity(n, format="csr")

    diag_bound = None

    def fallback(xi, r):
        nonlocal diag_bound
        if diag_bound is None:
            _, c = res_fn(xi)
            diag_bound = float(np.max(np.abs(jac_fn(c).diagonal())))
            # Pucci controls can reach the full spectral bound; leave headroom
            diag_bound *= 2.0
        return xi + r / diag_bound

    xi, report = newton(res_fn, jac_fn, base[idx], tol, max_iter, fallback, fallback_sweeps)
    return GridFunction(grid, full(xi)), report


def comparison_audit(problem: DirichletProblem, u_sub: GridFunction, u_super: GridFunction,
                     slack: float = 1e-7) -> bool:
    """``True`` iff ``u_sub <= u_super`` everywhere.

    ``u_sub`` must satisfy ``F(D^2 u) - delta u >= f`` and ``u_super`` the
    reverse inequality at every interior node (up to ``slack``), otherwise
    :class:`AuditInapplicable` is raised.
    """
    idx, op = problem._setup()
    r_sub, _ = problem._residual_full(np.asarray(u_sub.values), idx, op)
    r_sup, _ = problem._residual_full(np.asarray(u_super.values), idx, op)
    if r_sub.size and r_sub.min() < -slack:
        raise AuditInapplicable(f"u_sub is not a subsolution (residual {r_sub.min():.3g})")
    if r_sup.size and r_sup.max() > slack:
        raise AuditInapplicable(f"u_super is not a supersolution (residual {r_sup.max():.3g})")
    return bool(np.all(u_sub.values <= u_super.values + slack))
