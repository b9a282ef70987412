import math

import numpy as np
import pytest

from oscillate.errors import DomainError, StencilUnavailableError
from oscillate.grid import (BoxGrid, GridFunction, TorusGrid, as_sym, best_affine, from_bytes,
                            from_csv, frobenius, hessian_at, hessian_field, holder_quotient,
                            lp_norm, node_of, quadrature_weights, region_mask,
                            second_difference_sup, sym_coords, to_bytes, to_csv)


def quadratic(grid, M, b=(0.3, -0.2), c=0.7):
    def f(x):
        M_ = np.asarray(M, float)
        bb = np.asarray(b[: grid.dim])
        return 0.5 * np.einsum("...i,ij,...j->...", x, M_, x) + x @ bb + c
    return GridFunction.from_callable(grid, f)


def test_as_sym_forms():
    assert as_sym(2.0).shape == (1, 1)
    np.testing.assert_allclose(as_sym([1, 2, 0.5], 2), [[1, 0.5], [0.5, 2]])
    assert sym_coords(as_sym([1, 2, 0.5], 2)) == (1.0, 2.0, 0.5)
    with pytest.raises(DomainError):
        as_sym([[1, 2], [3, 4]])
    assert frobenius(np.eye(2)) == pytest.approx(math.sqrt(2))


def test_grid_validation():
    with pytest.raises(DomainError):
        TorusGrid(2, 4)
    with pytest.raises(DomainError):
        TorusGrid(3, 16)
    g = BoxGrid.unit(2, 10)
    assert g.shape == (11, 11)
    assert g.spacing == pytest.approx(0.1)
    assert g.boundary_mask().sum() == 40
    t = TorusGrid(1, 16)
    assert t.shape == (16,) and t.periodic


def test_hessian_exact_on_quadratics():
    M = [[1.5, -0.25], [-0.25, 0.5]]
    u = quadratic(BoxGrid.unit(2, 12), M)
    H, mask = hessian_field(u)
    np.testing.assert_allclose(H[mask], np.broadcast_to(M, H[mask].shape), atol=1e-9)
    assert np.all(np.isnan(H[~mask]))
    np.testing.assert_allclose(hessian_at(u, (5, 6)), M, atol=1e-9)
    with pytest.raises(StencilUnavailableError):
        hessian_at(u, (0, 3))


def test_torus_hessian_wraps():
    g = TorusGrid(1, 32)
    u = GridFunction.from_callable(g, lambda y: np.cos(2 * np.pi * y[..., 0]))
    H, mask = hessian_field(u)
    assert mask.all()
    exact = -(2 * np.pi) ** 2 * np.cos(2 * np.pi * g.coordinates()[..., 0])
    assert np.max(np.abs(H[..., 0, 0] - exact)) < 0.05 * (2 * np.pi) ** 2


def test_holder_quotient_of_affine_is_zero():
    u = quadratic(BoxGrid.unit(2, 16), np.zeros((2, 2)))
    node = (8, 8)
    val, grad = best_affine(u, node, 0.5, 0.0, 0.4)
    assert holder_quotient(u, node, (val, grad), 0.5, 0.0, 0.4) < 1e-9
    np.testing.assert_allclose(grad, [0.3, -0.2], atol=1e-8)


def test_best_affine_beats_tangent_plane():
    u = quadratic(BoxGrid.unit(1, 64), [[2.0]], b=(0.0,))
    node = (32,)
    val, grad = best_affine(u, node, 0.5, 0.0, 0.25)
    x = u.grid.coordinates()[..., 0]
    tangent = (u.values[32], np.array([2.0 * x[32]]))
    q_best = holder_quotient(u, node, (val, grad), 0.5, 0.0, 0.25)
    assert q_best <= holder_quotient(u, node, tangent, 0.5, 0.0, 0.25) + 1e-12


def test_second_difference_sup_and_exclusion():
    g = BoxGrid.unit(1, 64)
    x = g.coordinates()[..., 0]
    u = GridFunction(g, np.abs(x - 0.5) * 0.1 + x**2)
    full = second_difference_sup(u)
    outside = second_difference_sup(u, [(0.5,)], 0.05)
    assert full > 10
    assert outside == pytest.approx(2.0, abs=1e-8)


def test_lp_norm_and_weights():
    g = BoxGrid.unit(2, 8)
    w = quadrature_weights(g)
    assert w.sum() == pytest.approx(1.0)
    assert lp_norm(np.full(g.shape, 3.0), 4, grid=g) == pytest.approx(3.0)
    half = region_mask(g, [(0, 1), (0, 0.5)])
    # masked quadrature keeps the full-grid trapezoid weights
    area = w[half].sum()
    assert lp_norm(np.full(g.shape, 2.0), 2, region=half, grid=g) == pytest.approx(2 * math.sqrt(area))
    assert lp_norm(np.where(half, np.nan, 1.0), 1, grid=g) == pytest.approx(w[~half].sum())


def test_serialization_roundtrips():
    g = BoxGrid.unit(2, 5)
    u = GridFunction(g, np.random.default_rng(0).normal(size=g.shape))
    assert np.array_equal(from_csv(to_csv(u), g).values, u.values)
    back = from_bytes(to_bytes(u))
    assert back.grid == g and np.array_equal(back.values, u.values)
    assert to_bytes(u)[:4] == b"OSCG"
    t = GridFunction(TorusGrid(1, 8), np.arange(8.0))
    assert np.array_equal(from_bytes(to_bytes(t)).values, t.values)


def test_node_of():
    g = BoxGrid.unit(2, 8)
    assert node_of(g, (0.5, 0.25)) == (4, 2)
    assert node_of(g, (0.51, 0.26)) == (4, 2)  # nearest node
