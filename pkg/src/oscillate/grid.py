"""Uniform grids, grid functions and discrete seminorms.

Two grid families are supported, both axis aligned with ``dim`` in {1, 2}:

* :class:`TorusGrid` -- the unit periodic cell, ``resolution`` points per axis,
  node ``i`` sitting at ``i / resolution``. The origin is node ``(0, ..., 0)``.
* :class:`BoxGrid` -- a closed box with ``resolution`` intervals per axis, so
  ``resolution + 1`` nodes per axis; nodes on the box faces are Dirichlet nodes.

Symmetric matrices are plain ``(n, n)`` numpy arrays; :func:`frobenius` is the
matrix norm used everywhere.
"""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, StencilUnavailableError

_MAGIC = b"OSCG"
_HEADER = struct.Struct("<4sHHII")  # magic, dim, kind, resolution, reserved
_KIND_TORUS = 0
_KIND_BOX = 1


def frobenius(N) -> float:
    N = np.asarray(N, dtype=float)
    return float(np.sqrt(np.sum(N * N)))


def as_sym(M, dim: int | None = None) -> np.ndarray:
    """Coerce scalars, flat triples ``(m11, m22, m12)`` or matrices to a symmetric array."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    elif M.ndim == 1 and M.size == 1:
        M = M.reshape(1, 1)
    elif M.ndim == 1 and M.size == 3:
        M = np.array([[M[0], M[2]], [M[2], M[1]]])
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DomainError(f"not a square matrix: shape {M.shape}")
    if dim is not None and M.shape[0] != dim:
        raise DomainError(f"matrix dimension {M.shape[0]} does not match {dim}")
    if not np.allclose(M, M.T, rtol=0, atol=1e-12 * (1 + np.abs(M).max())):
        raise DomainError("matrix is not symmetric")
    return 0.5 * (M + M.T)


def sym_coords(M) -> tuple:
    """Inverse of :func:`as_sym`: ``(m,)`` in 1-D, ``(m11, m22, m12)`` in 2-D."""
    M = np.asarray(M, dtype=float)
    if M.shape == (1, 1):
        return (float(M[0, 0]),)
    return (float(M[0, 0]), float(M[1, 1]), float(M[0, 1]))


@dataclass(frozen=True)
class TorusGrid:
    dim: int
    resolution: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DomainError("dim must be 1 or 2")
        if self.resolution < 8:
            raise DomainError("torus resolution must be at least 8")

    @property
    def spacing(self) -> float:
        return 1.0 / self.resolution

    @property
    def shape(self) -> tuple:
        return (self.resolution,) * self.dim

    @property
    def periodic(self) -> bool:
        return True

    def axes(self) -> list[np.ndarray]:
        return [np.arange(self.resolution) / self.resolution for _ in range(self.dim)]

    def coordinates(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (dim,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def interior_mask(self) -> np.ndarray:
        return np.ones(self.shape, dtype=bool)

    def displacement(self, x, center) -> np.ndarray:
        d = np.asarray(x, dtype=float) - np.asarray(center, dtype=float)
        return d - np.round(d)


@dataclass(frozen=True)
class BoxGrid:
    dim: int
    bounds: tuple
    resolution: tuple

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DomainError("dim must be 1 or 2")
        bounds = tuple(tuple(float(v) for v in b) for b in self.bounds)
        res = self.resolution
        if np.isscalar(res):
            res = (int(res),) * self.dim
        res = tuple(int(r) for r in res)
        if len(bounds) != self.dim or len(res) != self.dim:
            raise DomainError("bounds/resolution length must equal dim")
        if any(b[1] <= b[0] for b in bounds):
            raise DomainError("empty box")
        if any(r < 2 for r in res):
            raise DomainError("box needs at least two intervals per axis")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "resolution", res)

    @classmethod
    def unit(cls, dim: int, resolution: int) -> "BoxGrid":
        return cls(dim, ((0.0, 1.0),) * dim, (resolution,) * dim)

    @property
    def spacings(self) -> tuple:
        return tuple((b[1] - b[0]) / r for b, r in zip(self.bounds, self.resolution))

    @property
    def spacing(self) -> float:
        hs = self.spacings
        if not np.allclose(hs, hs[0], rtol=1e-12):
            raise DomainError("grid spacing differs between axes")
        return hs[0]

    @property
    def shape(self) -> tuple:
        return tuple(r + 1 for r in self.resolution)

    @property
    def periodic(self) -> bool:
        return False

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(b[0], b[1], r + 1) for b, r in zip(self.bounds, self.resolution)]

    def coordinates(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        return mask

    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask()

    def displacement(self, x, center) -> np.ndarray:
        return np.asarray(x, dtype=float) - np.asarray(center, dtype=float)

    def distance_to_boundary(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = np.full(x.shape[:-1], np.inf)
        for ax, (lo, hi) in enumerate(self.bounds):
            d = np.minimum(d, np.minimum(x[..., ax] - lo, hi - x[..., ax]))
        return d


@dataclass(frozen=True)
class GridFunction:
    """Values on the nodes of a grid. The value array is frozen on construction."""

    grid: TorusGrid | BoxGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.shape != self.grid.shape:
            raise DomainError(f"values shape {vals.shape} != grid shape {self.grid.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_callable(cls, grid, func) -> "GridFunction":
        x = grid.coordinates()
        return cls(grid, np.asarray(func(x), dtype=float) * np.ones(grid.shape))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


# ---------------------------------------------------------------------------
# discrete Hessians


def _normalize_node(grid, node) -> tuple:
    node = tuple(int(i) for i in np.atleast_1d(node))
    if len(node) != grid.dim:
        raise DomainError("node index has wrong length")
    return node


def hessian_at(u: GridFunction, node) -> np.ndarray:
    """Centered second differences of ``u`` at one node.

    The mixed derivative uses the four diagonal neighbours. Box nodes need a
    full 3^n neighbourhood; torus nodes wrap around.
    """
    grid = u.grid
    node = _normalize_node(grid, node)
    shape = grid.shape
    if not grid.periodic:
        for i, n in zip(node, shape):
            if i < 1 or i > n - 2:
                raise StencilUnavailableError(f"node {node} has no central stencil")
        hs = grid.spacings
    else:
        hs = (grid.spacing,) * grid.dim
    U = u.values

    def at(offset):
        idx = tuple((i + o) % n for i, o, n in zip(node, offset, shape))
        return U[idx]

    dim = grid.dim
    H = np.zeros((dim, dim))
    zero = (0,) * dim
    for a in range(dim):
        e = [0] * dim
        e[a] = 1
        ep, em = tuple(e), tuple(-v for v in e)
        H[a, a] = (at(ep) - 2 * at(zero) + at(em)) / hs[a] ** 2
    if dim == 2:
        cross = (at((1, 1)) - at((1, -1)) - at((-1, 1)) + at((-1, -1))) / (4 * hs[0] * hs[1])
        H[0, 1] = H[1, 0] = cross
    return H


def hessian_field(u: GridFunction) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`hessian_at` over every node with a stencil.

    Returns ``(H, mask)`` with ``H`` of shape ``grid.shape + (n, n)``; entries
    outside ``mask`` are NaN.
    """
    grid = u.grid
    U = u.values
    dim = grid.dim
    H = np.full(grid.shape + (dim, dim), np.nan)
    if grid.periodic:
        h = grid.spacing

        def sh(*offs):
            return np.roll(U, shift=tuple(-o for o in offs), axis=tuple(range(dim)))

        for a in range(dim):
            e = [0] * dim
            e[a] = 1
            H[..., a, a] = (sh(*e) - 2 * U + sh(*[-v for v in e])) / h**2
        if dim == 2:
            c = (sh(1, 1) - sh(1, -1) - sh(-1, 1) + sh(-1, -1)) / (4 * h * h)
            H[..., 0, 1] = H[..., 1, 0] = c
        return H, np.ones(grid.shape, dtype=bool)

    hs = grid.spacings
    inner = tuple(slice(1, -1) for _ in range(dim))

    def sl(*offs):
        return U[tuple(slice(1 + o, U.shape[k] - 1 + o) for k, o in enumerate(offs))]

    for a in range(dim):
        e = [0] * dim
        e[a] = 1
        H[inner + (a, a)] = (sl(*e) - 2 * sl(*([0] * dim)) + sl(*[-v for v in e])) / hs[a] ** 2
    if dim == 2:
        c = (sl(1, 1) - sl(1, -1) - sl(-1, 1) + sl(-1, -1)) / (4 * hs[0] * hs[1])
        H[inner + (0, 1)] = c
        H[inner + (1, 0)] = c
    return H, grid.interior_mask()


def hessian_norm_field(u: GridFunction) -> tuple[np.ndarray, np.ndarray]:
    H, mask = hessian_field(u)
    return np.sqrt(np.sum(H * H, axis=(-1, -2))), mask


# ---------------------------------------------------------------------------
# regions and seminorms


def region_mask(grid, region=None) -> np.ndarray:
    """Boolean node mask from ``None`` (all nodes), a mask, or per-axis ``(lo, hi)`` bounds."""
    if region is None:
        return np.ones(grid.shape, dtype=bool)
    region_arr = np.asarray(region)
    if region_arr.dtype == bool:
        if region_arr.shape != grid.shape:
            raise DomainError("region mask has wrong shape")
        return region_arr
    bounds = np.asarray(region, dtype=float).reshape(grid.dim, 2)
    x = grid.coordinates()
    mask = np.ones(grid.shape, dtype=bool)
    for ax in range(grid.dim):
        lo, hi = bounds[ax]
        mask &= (x[..., ax] >= lo - 1e-12) & (x[..., ax] <= hi + 1e-12)
    return mask


def holder_quotient(u: GridFunction, center, affine, alpha: float, exclusion: float,
                    radius: float) -> float:
    """Sup of ``|u(x) - l(x)| / |x - c|^(1+alpha)`` over ``exclusion < |x - c| <= radius``.

    ``affine = (value, gradient)`` defines ``l(x) = value + gradient . (x - c)``.
    """
    if not 0 < alpha <= 1:
        raise DomainError("alpha must lie in (0, 1]")
    if exclusion < 0 or exclusion >= radius:
        raise DomainError("empty annulus: need 0 <= exclusion < radius")
    grid = u.grid
    node = _normalize_node(grid, center)
    x = grid.coordinates()
    c = x[node]
    if not grid.periodic:
        if radius > float(grid.distance_to_boundary(c)) + 1e-12:
            raise DomainError("radius exceeds distance from center to boundary")
    d = grid.displacement(x, c)
    r = np.sqrt(np.sum(d * d, axis=-1))
    sel = (r > exclusion + 1e-14) & (r <= radius + 1e-12)
    if not np.any(sel):
        raise DomainError("no grid nodes inside the annulus")
    value, grad = affine
    grad = np.atleast_1d(np.asarray(grad, dtype=float))
    l = value + d @ grad
    q = np.abs(u.values - l)[sel] / r[sel] ** (1 + alpha)
    return float(q.max())


def best_affine(u: GridFunction, center, alpha: float, exclusion: float,
                radius: float) -> tuple[float, np.ndarray]:
    """Gradient minimizing :func:`holder_quotient` for ``l`` anchored at ``u(center)``.

    Solved as a small linear program in ``(gradient, t)``.
    """
    from scipy.optimize import linprog

    grid = u.grid
    node = _normalize_node(grid, center)
    x = grid.coordinates()
    c = x[node]
    d = grid.displacement(x, c)
    r = np.sqrt(np.sum(d * d, axis=-1))
    sel = (r > exclusion + 1e-14) & (r <= radius + 1e-12)
    if not np.any(sel):
        raise DomainError("no grid nodes inside the annulus")
    D = d[sel]
    w = 1.0 / r[sel] ** (1 + alpha)
    du = (u.values - u.values[node])[sel]
    n = grid.dim
    # |du - g.D| * w <= t  <=>  -g.D w - t <= -du w  and  g.D w - t <= du w
    A = np.vstack([np.hstack([-D * w[:, None], -np.ones((len(w), 1))]),
                   np.hstack([D * w[:, None], -np.ones((len(w), 1))])])
    b = np.concatenate([-du * w, du * w])
    cost = np.zeros(n + 1)
    cost[-1] = 1.0
    res = linprog(cost, A_ub=A, b_ub=b, bounds=[(None, None)] * n + [(0, None)], method="highs")
    if not res.success:
        raise DomainError(f"best affine fit failed: {res.message}")
    return float(u.values[node]), res.x[:n]


def second_difference_sup(u: GridFunction, exclusion_centers=None, exclusion_radius: float = 0.0,
                          region=None) -> float:
    """Sup of the Frobenius norm of the discrete Hessian, away from excluded balls."""
    grid = u.grid
    norms, mask = hessian_norm_field(u)
    mask = mask & region_mask(grid, region)
    if exclusion_centers is not None and len(exclusion_centers) and exclusion_radius > 0:
        x = grid.coordinates()
        for c in exclusion_centers:
            # centers are physical coordinates
            d = grid.displacement(x, np.asarray(c, dtype=float))
            mask &= np.sqrt(np.sum(d * d, axis=-1)) > exclusion_radius
    if not np.any(mask):
        return 0.0
    return float(norms[mask].max())


def quadrature_weights(grid) -> np.ndarray:
    """Trapezoid weights (box) or uniform cell weights (torus)."""
    if grid.periodic:
        return np.full(grid.shape, grid.spacing ** grid.dim)
    w = np.ones(grid.shape)
    for ax, h in enumerate(grid.spacings):
        wa = np.full(grid.shape[ax], h)
        wa[0] = wa[-1] = h / 2
        shape = [1] * grid.dim
        shape[ax] = -1
        w = w * wa.reshape(shape)
    return w


def lp_norm(u, p: float, region=None, grid=None) -> float:
    """Discrete ``L^p`` norm with trapezoid weights; ``p = inf`` gives the sup.

    ``u`` may be a :class:`GridFunction` or a raw array together with ``grid``.
    NaN entries (nodes without a stencil) are skipped.
    """
    if p < 1:
        raise DomainError("p must be >= 1")
    if isinstance(u, GridFunction):
        grid, vals = u.grid, u.values
    else:
        vals = np.asarray(u, dtype=float)
    mask = region_mask(grid, region) & np.isfinite(vals)
    if not np.any(mask):
        raise DomainError("empty region")
    a = np.abs(vals[mask])
    if np.isinf(p):
        return float(a.max())
    w = quadrature_weights(grid)[mask]
    return float(np.sum(w * a**p) ** (1.0 / p))


# ---------------------------------------------------------------------------
# serialization


def to_csv(u: GridFunction) -> str:
    """One row per node: index columns ``i0[, i1]`` then ``value``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"i{k}" for k in range(u.grid.dim)] + ["value"])
    for idx in np.ndindex(u.grid.shape):
        writer.writerow(list(idx) + [repr(float(u.values[idx]))])
    return buf.getvalue()


def from_csv(text: str, grid) -> GridFunction:
    vals = np.full(grid.shape, np.nan)
    reader = csv.reader(io.StringIO(text))
    next(reader)
    for row in reader:
        idx = tuple(int(v) for v in row[:-1])
        vals[idx] = float(row[-1])
    return GridFunction(grid, vals)


def to_bytes(u: GridFunction) -> bytes:
    """Binary dump: 16-byte header, box bounds (box grids only), float64 values.

    Header layout (little endian): magic ``OSCG``, uint16 dim, uint16 kind
    (0 torus, 1 box), uint32 resolution, uint32 reserved (0).
    """
    grid = u.grid
    if grid.periodic:
        head = _HEADER.pack(_MAGIC, grid.dim, _KIND_TORUS, grid.resolution, 0)
        extra = b""
    else:
        if len(set(grid.resolution)) != 1:
            raise DomainError("binary format needs equal resolution on every axis")
        head = _HEADER.pack(_MAGIC, grid.dim, _KIND_BOX, grid.resolution[0], 0)
        extra = np.asarray(grid.bounds, dtype="<f8").tobytes()
    return head + extra + np.ascontiguousarray(u.values, dtype="<f8").tobytes()


def from_bytes(data: bytes) -> GridFunction:
    magic, dim, kind, res, _ = _HEADER.unpack_from(data, 0)
    if magic != _MAGIC:
        raise DomainError("bad magic in grid dump")
    off = _HEADER.size
    if kind == _KIND_TORUS:
        grid = TorusGrid(dim, res)
    elif kind == _KIND_BOX:
        bounds = np.frombuffer(data, dtype="<f8", count=2 * dim, offset=off).reshape(dim, 2)
        off += 16 * dim
        grid = BoxGrid(dim, tuple(map(tuple, bounds)), (res,) * dim)
    else:
        raise DomainError(f"unknown grid kind {kind}")
    vals = np.frombuffer(data, dtype="<f8", offset=off).reshape(grid.shape)
    return GridFunction(grid, vals)


def node_of(grid, point: Sequence[float]) -> tuple:
    """Index of the grid node nearest to ``point``."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    idx = []
    for ax, a in enumerate(grid.axes()):
        idx.append(int(np.argmin(np.abs(a - point[ax]))))
    return tuple(idx)
