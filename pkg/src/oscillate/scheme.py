"""Monotone nine-point differences and sparse assembly.

In 2-D the mixed derivative is approximated by one of two one-sided
formulas chosen by the sign of the mixed coefficient::

    rp = [u(++) + u(--) - u(+0) - u(-0) - u(0+) - u(0-) + 2u] / (2 h1 h2)
    rm = -[u(+-) + u(-+) - u(+0) - u(-0) - u(0+) - u(0-) + 2u] / (2 h1 h2)

Both are exact on quadratics. With ``a12 >= 0`` paired with ``rp`` (and
``a12 < 0`` with ``rm``) every off-centre weight is nonnegative as long as
``|a12| <= min(a11, a22)``.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .grid import TorusGrid


def _spacings(grid):
    if isinstance(grid, TorusGrid):
        return (grid.spacing,) * grid.dim
    return grid.spacings


def _shifter(values, grid):
    """Return ``sh(*offsets)`` giving the neighbour values aligned with the unknown nodes."""
    if grid.periodic:
        def sh(*offs):
            return np.roll(values, shift=tuple(-o for o in offs), axis=tuple(range(grid.dim)))
        return sh

    def sh(*offs):
        idx = tuple(slice(1 + o, n - 1 + o) for o, n in zip(offs, values.shape))
        return values[idx]
    return sh


def differences(values, grid) -> dict:
    """Difference quadruple of ``values``.

    On a torus the arrays have the grid's shape; on a box they cover the
    interior block ``[1:-1]`` along every axis.
    """
    values = np.asarray(values, dtype=float)
    sh = _shifter(values, grid)
    h = _spacings(grid)
    if grid.dim == 1:
        c = sh(0)
        return {"p": (sh(1) - 2 * c + sh(-1)) / h[0] ** 2}
    c = sh(0, 0)
    e, w, n, s = sh(1, 0), sh(-1, 0), sh(0, 1), sh(0, -1)
    axis = e + w + n + s
    return {
        "p": (e - 2 * c + w) / h[0] ** 2,
        "q": (n - 2 * c + s) / h[1] ** 2,
        "rp": (sh(1, 1) + sh(-1, -1) - axis + 2 * c) / (2 * h[0] * h[1]),
        "rm": -(sh(1, -1) + sh(-1, 1) - axis + 2 * c) / (2 * h[0] * h[1]),
    }


def unknown_index(grid) -> np.ndarray:
    """Flat node indices of the unknowns in the order used by :func:`differences`."""
    flat = np.arange(int(np.prod(grid.shape))).reshape(grid.shape)
    if grid.periodic:
        return flat.reshape(-1)
    return flat[tuple(slice(1, -1) for _ in range(grid.dim))].reshape(-1)


def stencil_weights(coeffs: dict, h) -> list:
    """``[(offset, weight array)]`` of the active linear operator."""
    if "a22" not in coeffs:
        a = coeffs["a11"] / h[0] ** 2
        return [((0,), -2 * a), ((1,), a), ((-1,), a)]
    a11, a22, a12 = coeffs["a11"], coeffs["a22"], coeffs["a12"]
    s = np.abs(a12) / (h[0] * h[1])
    pos = a12 >= 0
    b11 = a11 / h[0] ** 2
    b22 = a22 / h[1] ** 2
    sp_ = np.where(pos, s, 0.0)
    sm_ = np.where(pos, 0.0, s)
    return [
        ((0, 0), -2 * b11 - 2 * b22 + 2 * s),
        ((1, 0), b11 - s), ((-1, 0), b11 - s),
        ((0, 1), b22 - s), ((0, -1), b22 - s),
        ((1, 1), sp_), ((-1, -1), sp_),
        ((1, -1), sm_), ((-1, 1), sm_),
    ]


def assemble(grid, coeffs: dict) -> sp.csr_matrix:
    """Sparse ``L`` with ``(L u)[unknowns] = linear_part(coeffs, differences(u))``.

    Rows follow :func:`unknown_index`; columns index every grid node.
    """
    shape = grid.shape
    size = int(np.prod(shape))
    flat = np.arange(size).reshape(shape)
    rows_local = np.arange(unknown_index(grid).size)
    sh = _shifter(flat, grid)
    rows, cols, vals = [], [], []
    for off, w in stencil_weights(coeffs, _spacings(grid)):
        w = np.broadcast_to(w, rows_local.shape)
        keep = w != 0
        rows.append(rows_local[keep])
        cols.append(np.asarray(sh(*off)).reshape(-1)[keep])
        vals.append(w[keep])
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(rows_local.size, size))
