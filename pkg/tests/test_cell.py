import math

import numpy as np
import pytest

from oscillate import cell as cellmod
from oscillate.builtins import get_builtin, get_pair
from oscillate.cell import (DEFAULT_CELL_TOL, EffectiveTable, TabulatedOperator, cached_cell,
                            check_effective_ellipticity, check_key_equality,
                            check_min_monotonicity, corrector_hessian_floor, effective_value,
                            richardson, solve_cell, tabulate_effective)
from oscillate.errors import (AuditInapplicable, DomainError, ExtrapolationError,
                              TabulationError)
from oscillate.operators import Linear, OperatorSpec, TrigPoly

SQRT3 = math.sqrt(3)


@pytest.mark.parametrize("method", ["vanishing-discount", "mean-correction"])
def test_harmonic_mean(method):
    cell = solve_cell(get_builtin("cos1d"), 1.0, 128, method)
    assert cell.effective_value == pytest.approx(SQRT3, abs=1e-10)
    assert cell.residual < 1e-8
    assert abs(cell.corrector.values[0]) < 1e-14  # normalization w(0) = 0


def test_negative_anchor_and_linearity():
    spec = get_builtin("sin1d")
    assert effective_value(spec, -2.0, 64) == pytest.approx(-2 * SQRT3, abs=1e-9)


def test_separable_2d_sum_of_harmonic_means():
    cell = solve_cell(get_builtin("separable2d"), [[1, 0], [0, 2]], 32, "mean-correction")
    assert cell.effective_value == pytest.approx(3 * SQRT3, abs=1e-9)


def test_y_independent_shortcut():
    cell = solve_cell(get_builtin("pucci2d"), [[1, 0.5], [0.5, -1]], 16)
    assert np.all(cell.corrector.values == 0)
    assert cell.effective_value == pytest.approx(
        float(get_builtin("pucci2d").evaluate_batch(np.array([[[1, 0.5], [0.5, -1]]]),
                                                    np.zeros((1, 2)))[0]))


def test_richardson_exact_for_linear_trails():
    trail = [(d, 2.0 + 3.0 * d) for d in (0.25, 0.125, 0.0625)]
    assert richardson(trail) == pytest.approx(2.0)


def test_resolution_must_resolve_frequency():
    spec = OperatorSpec(1, Linear(1, TrigPoly(2, (((3,), 0.5, 0.0),))), 1.0, 3.0)
    with pytest.raises(DomainError):
        solve_cell(spec, 1.0, 16)
    with pytest.raises(DomainError):
        solve_cell(spec, 1.0, 32, method="newton")


def test_floor_ratio_and_zero_anchor():
    cell = solve_cell(get_builtin("cos1d"), 1.0, 256)
    assert corrector_hessian_floor(cell)[1] == pytest.approx(1 / SQRT3, abs=1e-3)
    with pytest.raises(DomainError):
        corrector_hessian_floor(solve_cell(get_builtin("cos1d"), 0.0, 32))


def test_disk_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("OSCILLATE_CACHE_DIR", str(tmp_path))
    monkeypatch.setattr(cellmod, "_MEMO", {})
    spec = get_builtin("cos1d")
    a = cached_cell(spec, 1.5, 32)
    files = list(tmp_path.glob("cell-*.npz"))
    assert len(files) == 1
    monkeypatch.setattr(cellmod, "_MEMO", {})
    b = cached_cell(spec, 1.5, 32)
    assert b.effective_value == a.effective_value
    np.testing.assert_array_equal(a.corrector.values, b.corrector.values)


def test_table_roundtrip_and_interpolation():
    spec = get_builtin("cos1d")
    axes = [np.arange(-2.0, 2.01, 0.5)]
    table = tabulate_effective(spec, axes, 32)
    assert table.interpolate(1.25) == pytest.approx(1.25 * SQRT3, abs=1e-9)  # linear in M
    with pytest.raises(ExtrapolationError):
        table.interpolate(2.5)
    back = EffectiveTable.from_json(table.to_json())
    np.testing.assert_array_equal(back.values, table.values)
    assert table.to_csv().splitlines()[0] == "m,value,residual"


def test_table_independent_of_jobs():
    spec = get_builtin("cc2d")
    axes = [np.array([0.0, 1.0])] * 2 + [np.array([-0.25, 0.25])]
    a = tabulate_effective(spec, axes, 16, jobs=1)
    b = tabulate_effective(spec, axes, 16, jobs=2)
    np.testing.assert_array_equal(a.values, b.values)


def test_tabulation_error_keeps_partial(monkeypatch):
    spec = get_builtin("cos1d")
    real = cellmod.solve_cell

    def flaky(spec_, M, *args, **kwargs):
        if float(np.asarray(M).reshape(-1)[0]) > 0.9:
            raise RuntimeError("boom")
        return real(spec_, M, *args, **kwargs)
    monkeypatch.setattr(cellmod, "solve_cell", flaky)
    with pytest.raises(TabulationError) as exc:
        tabulate_effective(spec, [np.array([0.0, 0.5, 1.0])], 32)
    partial = exc.value.partial
    assert np.isfinite(partial.values[:2]).all() and np.isnan(partial.values[2])


def test_tabulated_operator_matches_table():
    spec = get_builtin("separable2d")
    axes = [np.array([0.0, 1.0, 2.0])] * 2 + [np.array([-0.5, 0.0, 0.5])]
    table = tabulate_effective(spec, axes, 16)
    op = TabulatedOperator(table)
    M = np.array([[[1.0, 0.2], [0.2, 1.5]]])
    assert op.evaluate_batch(M)[0] == pytest.approx(2.5 * SQRT3, abs=2 * DEFAULT_CELL_TOL)


def test_ellipticity_check_on_table_and_spec():
    spec = get_builtin("cos1d")
    rep = check_effective_ellipticity(spec, 50, resolution=64)
    assert rep.passed and rep.metrics["violations"] == 0
    table = tabulate_effective(spec, [np.arange(-2.0, 2.01, 0.25)], 64)
    assert check_effective_ellipticity(table, 50).passed
    with pytest.raises(DomainError):
        check_effective_ellipticity(spec, 10)


def test_min_monotonicity_gap():
    a, b = get_pair("remark")
    rep = check_min_monotonicity(a, b, [1.0, -1.0], 256)
    assert rep.passed
    assert rep.rows[0]["gap"] == pytest.approx(0.3428, abs=1e-3)


def test_key_equality_requires_audit():
    a, b = get_pair("remark")
    with pytest.raises(AuditInapplicable):
        check_key_equality(a, b, [1.0])
    concave, convex = get_pair("key1d")
    rep = check_key_equality(concave, convex, [-2.0, 0.5, 2.0], 128)
    assert rep.passed
