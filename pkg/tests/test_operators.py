import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oscillate.builtins import BUILTINS, get_builtin, get_pair
from oscillate.cell import solve_cell
from oscillate.errors import (ConstructionError, DegeneracyError, DomainError, SpecSchemaError)
from oscillate.operators import (Linear, Max, Min, OperatorSpec, Pucci, TrigPoly,
                                 build_cabre_caffarelli, build_key_example, ellipticity_margin,
                                 evaluate, holder_modulus, spec_from_yaml, translate_scale)

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
sym2 = st.tuples(finite, finite, finite).map(
    lambda t: np.array([[t[0], t[2]], [t[2], t[1]]]))
psd2 = st.tuples(st.floats(0, 3), st.floats(-math.pi, math.pi), st.floats(0, 3)).map(
    lambda t: t[0] * np.outer([math.cos(t[1]), math.sin(t[1])], [math.cos(t[1]), math.sin(t[1])])
    + t[2] * np.eye(2) / 2)
point2 = st.tuples(st.floats(0, 1), st.floats(0, 1))

SPECS2 = [get_builtin(n) for n in ("separable2d", "pucci2d", "cc2d")]


def test_pucci_values():
    spec = get_builtin("pucci2d")
    assert evaluate(spec, np.diag([1.0, -1.0]), (0, 0)) == pytest.approx(1 - 2)
    assert evaluate(spec, np.eye(2), (0.3, 0.1)) == pytest.approx(2.0)
    plus = OperatorSpec(2, Pucci(2, "plus", 1.0, 2.0), 1.0, 2 * math.sqrt(2))
    assert evaluate(plus, np.diag([1.0, -1.0]), (0, 0)) == pytest.approx(2 - 1)


def test_cos1d_pointwise():
    spec = get_builtin("cos1d")
    assert evaluate(spec, 2.0, 0.0) == pytest.approx(6.0)
    assert evaluate(spec, 2.0, 0.5) == pytest.approx(2.0)
    assert spec.max_frequency == 1 and not spec.y_independent and spec.is_homogeneous


@settings(max_examples=60, deadline=None)
@given(M=sym2, P=psd2, y=point2, which=st.integers(0, 2))
def test_monotone_and_lipschitz_in_M(M, P, y, which):
    spec = SPECS2[which]
    a = evaluate(spec, M, y)
    b = evaluate(spec, M + P, y)
    n = float(np.linalg.norm(P))
    assert b - a >= spec.lam * n * (1 - 1e-9) - 1e-9
    assert b - a <= spec.Lam * n * (1 + 1e-9) + 1e-9


@settings(max_examples=40, deadline=None)
@given(M=sym2, t=st.floats(0.01, 10), y=point2)
def test_positive_homogeneity(M, t, y):
    for spec in SPECS2:
        assert evaluate(spec, t * M, y) == pytest.approx(t * evaluate(spec, M, y),
                                                        rel=1e-9, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(y=point2, z=st.tuples(st.integers(-2, 2), st.integers(-2, 2)), M=sym2)
def test_periodicity(y, z, M):
    spec = get_builtin("cc2d")
    shifted = (y[0] + z[0], y[1] + z[1])
    assert evaluate(spec, M, y) == pytest.approx(evaluate(spec, M, shifted), abs=1e-9)


def test_builtin_margins_within_declared_bounds():
    for name in BUILTINS:
        spec = get_builtin(name)
        lo, hi = ellipticity_margin(spec)
        assert spec.lam - 1e-9 <= lo <= hi <= spec.Lam + 1e-9, name


def test_audit_rejects_bad_bounds():
    with pytest.raises(DegeneracyError):
        OperatorSpec(1, Linear(1, TrigPoly(2, (((1,), 1.5, 0.0),))), 1.0, 4.0)
    with pytest.raises(DegeneracyError):
        OperatorSpec(1, Linear(1, 5.0), 1.0, 4.0)
    with pytest.raises(DegeneracyError):  # F(0, y) != 0
        OperatorSpec(1, Linear(1, 2.0, offset=1.0), 1.0, 4.0)
    with pytest.raises(DegeneracyError):  # Pucci ratio too wide for the 9-point stencil
        OperatorSpec(2, Pucci(2, "minus", 1.0, 6.0), 1.0, 9.0)
    with pytest.raises(DomainError):
        OperatorSpec(1, Linear(1, 2.0), 3.0, 2.0)


def test_monotonicity_violation_reported():
    spec = OperatorSpec(2, Linear(2, 2.0, 1.0, 1.2), 0.2, 4.0)
    bad = spec.monotonicity_violation()
    assert bad is not None and bad[1] == 0


def test_holder_modulus():
    assert holder_modulus(get_builtin("pucci2d")) == 0.0
    k = holder_modulus(get_builtin("cos1d"))
    assert 0 < k <= 2 * math.pi + 1e-6


YAML = """\
schema: oscillate.operator/1
name: demo
dim: 2
lambda: 1.0
Lambda: 4.3
root:
  min:
    - linear:
        a11: {const: 2, terms: [{freq: [1, 0], cos: 0.5}]}
        a22: 2
        a12: 0.25
    - pucci_minus: {lo: 1.0, hi: 2.0}
"""


def test_yaml_roundtrip():
    spec = spec_from_yaml(YAML)
    again = spec_from_yaml(spec.to_yaml())
    assert again.key == spec.key
    assert isinstance(again.root, Min) and isinstance(again.root.children[1], Pucci)
    M = np.array([[1.0, 0.3], [0.3, -2.0]])
    assert evaluate(spec, M, (0.2, 0.7)) == pytest.approx(evaluate(again, M, (0.2, 0.7)))


@pytest.mark.parametrize("text,line", [
    (YAML.replace("a22: 2", "a22: 2\n        a33: 1"), 11),
    (YAML.replace("pucci_minus", "pucci_middle"), 12),
    (YAML.replace("dim: 2", "dim: 2\ndim: 1"), 4),
    (YAML.replace("lambda: 1.0\n", ""), 1),
    ("schema: oscillate.operator/1\n  bad: [\n", 2),
])
def test_yaml_errors_carry_lines(text, line):
    with pytest.raises(SpecSchemaError) as exc:
        spec_from_yaml(text)
    assert exc.value.line == line
    assert str(exc.value).startswith(f"line {line}: ")


def test_translate_scale_consistency():
    spec = get_builtin("cc2d")
    M = np.array([[1.0, 0.2], [0.2, -0.5]])
    cell = solve_cell(spec, M, 16, "mean-correction")
    scaled = translate_scale(spec, M, 0.5, cell)
    # at N = 0 the scaled operator vanishes identically
    assert np.max(np.abs(scaled.evaluate_batch(np.zeros((256, 2, 2)), np.arange(256)))) < 1e-12
    with pytest.raises(DomainError):
        translate_scale(spec, M + 1, 0.5, cell)
    with pytest.raises(DomainError):
        translate_scale(spec, M, 0.0, cell)


def test_cabre_caffarelli_validation():
    concave, convex = get_pair("cc2d")
    spec = build_cabre_caffarelli(concave, convex)
    assert isinstance(spec.root, Min)
    with pytest.raises(DomainError):
        build_cabre_caffarelli(convex, concave)
    with pytest.raises(DomainError):
        build_cabre_caffarelli(concave, get_builtin("cos1d"))
    wrong = OperatorSpec(2, Max(2, convex.root.children), convex.lam, convex.Lam + 1)
    with pytest.raises(DomainError):
        build_cabre_caffarelli(concave, wrong)


def test_key_example_variants():
    cave, vex = build_key_example(math.inf)
    assert cave.y_independent and vex.y_independent
    concave, convex = get_pair("key1d")
    assert not concave.y_independent
    # gated leaves are inactive near M = 0
    ys = np.linspace(0, 1, 33)[:, None]
    for spec in (concave, convex):
        v = spec.evaluate_batch(np.full((33, 1, 1), 0.5), ys)
        assert np.ptp(v) < 1e-12
    with pytest.raises(ConstructionError):
        build_key_example(1.0, lam=1.0, Lam=1.05)
    with pytest.raises(DomainError):
        build_key_example(0.0)
