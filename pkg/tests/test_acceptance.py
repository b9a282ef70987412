"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (lines appear in the
output) or directly with ``python3 tests/test_acceptance.py``.
"""
from __future__ import annotations

import contextlib
import io
import math
import sys
import time

import numpy as np
import pytest
from scipy.integrate import quad

from oscillate import (AuditInapplicable, DirichletProblem, SweepConfig,
                       audit_key_hypotheses, build_key_example, campanato_fit, cascade_ok,
                       check_effective_ellipticity, check_key_equality, check_min_monotonicity,
                       check_scaling_identity, comparison_audit, corrector_hessian_floor,
                       fit_band_constant, get_builtin, get_pair, homogenization_sweep,
                       regularity_certificate, solve_boundary_layer, solve_cell,
                       solve_dirichlet, two_scale_error)
from oscillate.bench import CorrectorField, sweep_solutions
from oscillate.boundary_layer import BoundaryLayerProblem, aligned_grid
from oscillate.builtins import BUILTINS
from oscillate.cell import cached_cell
from oscillate.cli import main as cli_main
from oscillate.grid import BoxGrid

SQRT3 = math.sqrt(3.0)
TOL = 1e-6


@pytest.fixture
def verdict(capsys, request):
    """``verdict(ok, detail)`` prints the criterion line and asserts ``ok``."""
    label = request.node.get_closest_marker("criterion").args[0]

    def emit(ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {label} {detail}".rstrip())
        assert ok, detail
    return emit


def harmonic_mean(a, points=None):
    inv, _ = quad(lambda y: 1.0 / a(y), 0.0, 1.0, points=points, limit=200, epsabs=1e-13)
    return 1.0 / inv


def cos_coef(y):
    return 2.0 + math.cos(2 * math.pi * y)


def sin_coef(y):
    return 2.0 + math.sin(2 * math.pi * y)


# ---------------------------------------------------------------------------


@pytest.mark.criterion("1 harmonic-mean oracle")
def test_c01_harmonic_mean(verdict):
    oracle = harmonic_mean(cos_coef)
    buf = io.StringIO()
    start = time.perf_counter()
    with contextlib.redirect_stdout(buf):
        code = cli_main(["cell", "--spec", "cos1d", "--M", "1", "--resolution", "256",
                         "--out", str(_tmp("c01")), "--force"])
    elapsed = time.perf_counter() - start
    line = next(l for l in buf.getvalue().splitlines() if l.startswith("effective_value "))
    value = float(line.split()[1])
    rel = abs(value - oracle) / oracle
    ok = code == 0 and rel <= 1e-4 and abs(oracle - SQRT3) < 1e-10 and elapsed < 5.0
    verdict(ok, f"value={value:.8f} oracle={oracle:.8f} rel={rel:.1e} time={elapsed:.2f}s")


@pytest.mark.criterion("2 cross-method agreement")
def test_c02_cross_method(verdict):
    start = time.perf_counter()
    worst, where = 0.0, None
    for name in BUILTINS:
        spec = get_builtin(name)
        anchors = [1.0, -2.0, 0.5] if spec.dim == 1 else \
            [[1, 1, 0], [1, -0.5, 0.25], [-1, 2, 0.5]]
        for M in anchors:
            a = solve_cell(spec, M, method="vanishing-discount").effective_value
            b = solve_cell(spec, M, method="mean-correction").effective_value
            if abs(a - b) >= worst:
                worst, where = abs(a - b), (name, M)
    elapsed = time.perf_counter() - start
    verdict(worst <= 1e-5 and elapsed < 60,
            f"worst gap {worst:.1e} at {where}; {elapsed:.1f}s for {len(BUILTINS)} specs")


@pytest.mark.criterion("3 effective ellipticity sandwich")
def test_c03_ellipticity(verdict):
    failures, detail = [], []
    for name in BUILTINS:
        spec = get_builtin(name)
        res = 256 if spec.dim == 1 else 32
        rep = check_effective_ellipticity(spec, trials=100, resolution=res, tol=TOL)
        detail.append(f"{name}:{rep.metrics['violations']}")
        if not rep.passed or rep.metrics["trials"] != 100:
            failures.append(name)
    verdict(not failures, "violations " + " ".join(detail))


@pytest.mark.criterion("4 scaling identity")
def test_c04_scaling(verdict):
    rng = np.random.default_rng(7)
    worst, count = 0.0, 0
    ok = True
    for name in ("cos1d", "separable2d", "cc2d", "key1d"):
        spec = get_builtin(name)
        res = 128 if spec.dim == 1 else 32
        for _ in range(5):  # 5 anchors x 2 directions = 10 triples per spec
            M = rng.normal(size=(spec.dim, spec.dim)) * 1.5
            M = 0.5 * (M + M.T)
            mu = float(rng.uniform(0.2, 1.0))
            rep = check_scaling_identity(spec, M, mu, 2, resolution=res, tol=TOL,
                                         seed=int(rng.integers(1 << 30)))
            count += rep.metrics["samples"]
            worst = max(worst, rep.metrics["worst_value_gap"], rep.metrics["worst_corrector_gap"])
            ok &= rep.passed
    verdict(ok and count >= 10 and worst <= 10 * TOL,
            f"{count} (M, mu, N) triples, worst discrepancy {worst:.1e} (bound {10 * TOL:g})")


@pytest.mark.criterion("5 min-monotonicity and strict gap")
def test_c05_monotonicity(verdict):
    ok = True
    for pair in ("remark", "cc2d", "key1d"):
        s1, s2 = get_pair(pair)
        if s1.dim == 1:
            Ms = list(np.arange(-3.0, 3.01, 0.5))
            res = 256
        else:
            rng = np.random.default_rng(3)
            Ms = [0.5 * (A + A.T) for A in rng.normal(size=(8, 2, 2)) * 2]
            res = 32
        ok &= check_min_monotonicity(s1, s2, Ms, res, TOL).passed
    cos_, sin_ = get_pair("remark")
    rep = check_min_monotonicity(cos_, sin_, [1.0], 256, TOL)
    gap = rep.rows[0]["gap"]
    oracle = min(harmonic_mean(cos_coef), harmonic_mean(sin_coef)) - \
        harmonic_mean(lambda y: min(cos_coef(y), sin_coef(y)), points=[0.125, 0.625])
    verdict(ok and gap >= 0.01 and abs(gap - oracle) <= 1e-3,
            f"monotone on all pairs={ok}; gap at M=1 {gap:.6f} vs oracle {oracle:.6f}")


@pytest.mark.criterion("6 key equality and applicability")
def test_c06_key_lemma(verdict):
    concave, convex = build_key_example(1.0, dim=1)
    audit = audit_key_hypotheses(concave, convex)
    grid = [np.array([[m]]) for m in np.arange(-3.0, 3.001, 0.25)]
    rep = check_key_equality(concave, convex, grid, resolution=256, tol=TOL)
    cos_, sin_ = get_pair("remark")
    try:
        audit_key_hypotheses(cos_, sin_)
        remark_flagged = False
    except AuditInapplicable:
        remark_flagged = True
    ok = rep.passed and rep.metrics["worst"] <= 3 * TOL and remark_flagged
    verdict(ok, f"audit L={audit['L']:.4f}; worst |eff(min) - min(eff)| = "
                f"{rep.metrics['worst']:.1e} over {len(grid)} anchors; remark pair "
                f"{'inapplicable' if remark_flagged else 'NOT flagged'}")


@pytest.mark.criterion("7 corrector Hessian floor")
def test_c07_floor(verdict):
    direction = np.array([[1.0, 0.25], [0.25, -0.5]])
    direction /= np.linalg.norm(direction)
    ratios = []
    for t in (2.0, 4.0, 8.0, 16.0):
        cell = solve_cell(get_builtin("cc2d"), t * direction, 64, "mean-correction", TOL)
        ratios.append(corrector_hessian_floor(cell)[1])
    _, cos_ratio = corrector_hessian_floor(solve_cell(get_builtin("cos1d"), 1.0, 256))
    ok = min(ratios) >= 0.2 and abs(cos_ratio - 1 / SQRT3) <= 1e-3
    verdict(ok, f"cc2d ratios {[round(r, 4) for r in ratios]}; cos1d {cos_ratio:.6f} "
                f"vs 1/sqrt3 {1 / SQRT3:.6f}")


def _exact_model(eps, x):
    """Closed form of ``a(x/eps) u'' = 1`` on (0, 1), ``u(0) = u(1) = 0`` by quadrature."""
    def inv(s):
        return 1.0 / cos_coef(s / eps)

    def u_free(t):  # int_0^t (t - s)/a ds
        return quad(lambda s: (t - s) * inv(s), 0.0, t, limit=400, epsabs=1e-13)[0]
    slope = -u_free(1.0)
    return np.array([u_free(t) + slope * t for t in x])


@pytest.mark.criterion("8 homogenization convergence")
def test_c08_sweep(verdict):
    start = time.perf_counter()
    eps1 = (1 / 8, 1 / 16, 1 / 32, 1 / 64, 1 / 128)
    rep1 = homogenization_sweep(SweepConfig(get_builtin("cos1d"), eps1))
    ratios = [r["ratio"] for r in rep1.tables["errors"][1:]]
    # the oscillating solve against the quadrature closed form
    cfg = SweepConfig(get_builtin("cos1d"), (1 / 16,))
    u, ubar, _ = sweep_solutions(cfg, 1 / 16)
    x = u.grid.coordinates()[::16, 0]
    oracle_gap = float(np.max(np.abs(u.values[::16] - _exact_model(1 / 16, x))))
    bar_gap = float(np.max(np.abs(ubar.values - (x := u.grid.coordinates()[..., 0]) *
                                  (x - 1) / (2 * SQRT3))))
    two_d = {}
    for name, M in (("separable2d", np.eye(2)), ("cc2d", [[1, 0.25], [0.25, -0.5]]),
                    ("pucci2d", [[1, 0.25], [0.25, -0.5]])):
        rep = homogenization_sweep(SweepConfig(get_builtin(name), (1 / 8, 1 / 16, 1 / 32),
                                               template="quadratic", anchor=M))
        two_d[name] = (rep.flags["monotone_decrease"],
                       [f"{r['sup_error']:.2e}" for r in rep.tables["errors"]])
    elapsed = time.perf_counter() - start
    ok = (rep1.flags["ratios_at_least_1.5"] and len(ratios) == 4 and oracle_gap < 1e-5
          and bar_gap < 1e-8 and all(v[0] for v in two_d.values()) and elapsed < 600)
    verdict(ok, f"1-D ratios {[round(r, 3) for r in ratios]} (slope "
                f"{rep1.rates['slope']:.2f}); |u_h - quadrature| {oracle_gap:.1e}; "
                f"|ubar_h - exact| {bar_gap:.1e}; 2-D "
                f"{ {k: v[1] for k, v in two_d.items()} }; {elapsed:.0f}s")


@pytest.mark.criterion("9 two-scale correction")
def test_c09_two_scale(verdict):
    cfg = SweepConfig(get_builtin("cos1d"), (1 / 16, 1 / 32, 1 / 64, 1 / 128))
    rows = []
    for eps in cfg.epsilons:
        u, ubar, table = sweep_solutions(cfg, eps)
        rows.append((eps, *two_scale_error(u, ubar, table, eps, 0.25)))
    ok = all(c < r for _, r, c in rows)
    verdict(ok, "; ".join(f"eps={e:g} raw={r:.2e} corrected={c:.2e}" for e, r, c in rows))


@pytest.mark.criterion("10 Campanato cascade")
def test_c10_campanato(verdict):
    spec = get_builtin("cos1d")
    eps = 1 / 128
    grid = aligned_grid(1, eps, 32)
    field = CorrectorField(spec, 32)
    u, _ = solve_dirichlet(DirichletProblem(spec, grid, 1.0, 0.0, epsilon=eps))
    fit = campanato_fit(u, (0.5,), 0.5, 4, spec, eps, 1.0, field)
    resolved = [lv for lv in fit.levels if lv["radius"] >= 8 * eps]
    # a genuinely non-decomposable datum: f = 1 + x
    u2, _ = solve_dirichlet(DirichletProblem(spec, grid, lambda x: 1 + x[..., 0], 0.0,
                                             epsilon=eps))
    fit2 = campanato_fit(u2, (0.5,), 0.5, 4, spec, eps, 1.5, field)
    lv2 = [lv for lv in fit2.levels if not lv["clipped"]]
    literal = all(b["remainder"] <= 1.5 * 0.25 * a["remainder"] for a, b in zip(lv2, lv2[1:]))
    ok = len(resolved) == 5 and cascade_ok(fit) and cascade_ok(fit2) and literal
    rems = ["%.1e" % lv["remainder"] for lv in fit.levels]
    verdict(ok, f"f=1 remainders {rems} "
                f"(round-off, scale {fit.scale:.2e}); f=1+x ratios "
                f"{[round(lv['ratio'], 4) for lv in fit2.levels[1:]]}")


@pytest.mark.criterion("11 regularity certificates")
def test_c11_certificates(verdict):
    bad, spreads = [], {}
    for name in BUILTINS:
        rep = regularity_certificate(SweepConfig(get_builtin(name), (1 / 8, 1 / 16, 1 / 32)))
        worst = max(v for v in rep.rates["max_over_min"].values())
        spreads[name] = round(worst, 3)
        if not rep.flags["uniform_across_epsilon"]:
            bad.append(name)
    verdict(not bad, f"worst max/min per spec {spreads}; failing {bad}")


@pytest.mark.criterion("12 boundary layer")
def test_c12_boundary_layer(verdict):
    details, ok = [], True
    for name, M in (("separable2d", np.eye(2)), ("cc2d", [[1, 0.25], [0.25, -0.5]])):
        spec = get_builtin(name)
        cell = cached_cell(spec, M, 8, "mean-correction", TOL)
        sols = [solve_boundary_layer(BoundaryLayerProblem(spec, M, cell, e))
                for e in (1 / 8, 1 / 16, 1 / 32)]
        scaled = [s.sup_abs / s.epsilon**2 for s in sols]
        fit = fit_band_constant(sols)
        ok &= max(scaled) <= 2 * min(scaled) and fit["uniform"]
        shown = ["%.3e" % v for v in scaled]
        details.append(f"{name}: sup/eps^2 {shown} C={fit['constant']:.3e}")
    cos_ = get_builtin("cos1d")
    cell = cached_cell(cos_, 1.0, 16, "mean-correction", TOL)
    sol = solve_boundary_layer(BoundaryLayerProblem(cos_, 1.0, cell, 2 / 15))
    z = sol.zeta.values
    x = sol.zeta.grid.coordinates()[..., 0]
    affine = z[0] + (z[-1] - z[0]) * x
    hess = max(r["sup_hessian"] for r in sol.bands)
    one_d = float(np.max(np.abs(z - affine))) < 1e-12 and hess < 1e-8
    ok &= one_d
    details.append(f"1-D affine={one_d} (max Hessian {hess:.1e})")
    verdict(ok, "; ".join(details))


@pytest.mark.criterion("13 solver hygiene")
def test_c13_solver(verdict):
    rng = np.random.default_rng(11)
    zero_ok = True
    for name in BUILTINS:
        spec = get_builtin(name)
        grid = BoxGrid.unit(spec.dim, 32 if spec.dim == 1 else 16)
        u, _ = solve_dirichlet(DirichletProblem(spec, grid, 0.0, 0.0, epsilon=0.25))
        zero_ok &= u.sup() == 0.0
    names = list(BUILTINS)
    comparisons = 0
    monotone = True
    for k in range(50):
        spec = get_builtin(names[k % len(names)])
        grid = BoxGrid.unit(spec.dim, 32 if spec.dim == 1 else 16)
        f2 = rng.normal(size=grid.shape)
        f1 = f2 + rng.uniform(0, 1, size=grid.shape)  # f1 >= f2
        g = rng.normal()
        p1 = DirichletProblem(spec, grid, f1, g, epsilon=0.25)
        p2 = DirichletProblem(spec, grid, f2, g, epsilon=0.25)
        u1, r1 = solve_dirichlet(p1)
        u2, r2 = solve_dirichlet(p2)
        for rep in (r1, r2):
            monotone &= all(b <= a for a, b in zip(rep.history, rep.history[1:]))
        comparisons += comparison_audit(p2, u1, u2)
    ok = zero_ok and comparisons == 50 and monotone
    verdict(ok, f"zero data -> zero: {zero_ok}; comparison held {comparisons}/50; "
                f"residual histories non-increasing: {monotone}")


# ---------------------------------------------------------------------------


def _tmp(name):
    import tempfile
    from pathlib import Path

    path = Path(tempfile.gettempdir()) / "oscillate-acceptance" / name
    path.mkdir(parents=True, exist_ok=True)
    return path


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
