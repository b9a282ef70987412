from types import SimpleNamespace

import numpy as np
import pytest

from oscillate.boundary_layer import (BoundaryLayerProblem, aligned_grid, decay_csv,
                                      decay_profile, fit_band_constant, sample_corrector,
                                      solve_boundary_layer)
from oscillate.builtins import get_builtin
from oscillate.cell import solve_cell
from oscillate.errors import DomainError


def test_aligned_grid():
    assert aligned_grid(1, 1 / 8, 16).resolution == (128,)
    assert aligned_grid(2, 2 / 15, 8).resolution == (60, 60)
    with pytest.raises(DomainError):
        aligned_grid(1, 0.3, 16)


def test_sample_corrector_is_periodic_copy():
    cell = solve_cell(get_builtin("cos1d"), 1.0, 16)
    grid = aligned_grid(1, 0.25, 16)
    w = sample_corrector(cell, grid, 0.25)
    np.testing.assert_array_equal(w[:16], cell.corrector.values)
    np.testing.assert_array_equal(w[16:32], cell.corrector.values)


def test_mismatched_cell_rejected():
    spec = get_builtin("cos1d")
    cell = solve_cell(spec, 1.0, 16)
    with pytest.raises(DomainError):
        BoundaryLayerProblem(spec, 2.0, cell, 0.125)
    with pytest.raises(DomainError):
        BoundaryLayerProblem(get_builtin("sin1d"), 1.0, cell, 0.125)
    with pytest.raises(DomainError):
        BoundaryLayerProblem(spec, 1.0, cell, 0.0)


def test_1d_layer_is_affine():
    spec = get_builtin("cos1d")
    cell = solve_cell(spec, 1.0, 16)
    eps = 2 / 15  # x = 1 lands mid-period, so the boundary data is not zero
    sol = solve_boundary_layer(BoundaryLayerProblem(spec, 1.0, cell, eps))
    z = sol.zeta.values
    assert sol.boundary_sup > 1e-4
    assert np.max(np.abs(np.diff(z, 2))) < 1e-10
    assert sol.sup_abs == pytest.approx(sol.boundary_sup, rel=1e-9)
    prof = decay_profile(sol)
    assert prof["epsilon"] == eps and set(prof["lp"]) == {"4", "8"}
    assert decay_csv(sol).startswith("band,d_lo,d_mid,sup_hessian,reference,ratio,L4,L8\n")


def _fake(eps, ratios):
    bands = [{"d_lo": 2.0 ** -k, "ratio": r} for k, r in enumerate(ratios, start=1)]
    return SimpleNamespace(epsilon=eps, bands=bands)


def test_fit_band_constant_synthetic():
    sols = [_fake(1 / 64, [1.0, 2.0, 0.5]), _fake(1 / 128, [4.0, 0.1, 0.1])]
    fit = fit_band_constant(sols)
    assert fit["constant"] == pytest.approx(np.sqrt(2.0 * 4.0))
    assert fit["uniform"]
    sols.append(_fake(1 / 256, [100.0, 1.0, 1.0]))
    assert not fit_band_constant(sols)["uniform"]
    # no band far enough from the boundary
    assert fit_band_constant([_fake(0.25, [1.0])])["uniform"] is False
