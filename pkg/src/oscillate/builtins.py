"""Named operator specs shipped with the package."""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .errors import DomainError
from .operators import (Linear, Max, Min, OperatorSpec, Pucci, TrigPoly, _audit_points,
                        build_cabre_caffarelli, build_key_example)


def _cos(const, amp, freq):
    return TrigPoly(const, ((freq, amp, 0.0),))


def _sin(const, amp, freq):
    return TrigPoly(const, ((freq, 0.0, amp),))


def scan_bounds(leaves, dim, digits=2):
    """Outward-rounded ``(min eigenvalue, max Frobenius norm)`` over linear leaves."""
    y = _audit_points(dim, 64)
    lo, hi = math.inf, 0.0
    for leaf in leaves:
        coeffs = [np.broadcast_to(a, y.shape[:1]) for a in leaf.coefficients(y)]
        if dim == 1:
            A = coeffs[0][:, None, None]
        else:
            a11, a22, a12 = coeffs
            A = np.stack([np.stack([a11, a12], -1), np.stack([a12, a22], -1)], -2)
        lo = min(lo, float(np.linalg.eigvalsh(A).min()))
        hi = max(hi, float(np.sqrt(np.sum(A * A, axis=(-1, -2))).max()))
    scale = 10 ** digits
    return math.floor(lo * scale) / scale, math.ceil(hi * scale) / scale


def cos1d():
    return OperatorSpec(1, Linear(1, _cos(2, 1, (1,))), 1.0, 3.0, 2 * math.pi, 1.0, "cos1d")


def sin1d():
    return OperatorSpec(1, Linear(1, _sin(2, 1, (1,))), 1.0, 3.0, 2 * math.pi, 1.0, "sin1d")


def remark_min1d():
    a, b = cos1d(), sin1d()
    return OperatorSpec(1, Min(1, (a.root, b.root)), 1.0, 3.0, 2 * math.pi, 1.0, "remark_min1d")


def separable2d():
    root = Linear(2, _cos(2, 1, (1, 0)), _cos(2, 1, (0, 1)), 0.0)
    return OperatorSpec(2, root, 1.0, 3 * math.sqrt(2), 2 * math.pi, 1.0, "separable2d")


def pucci2d():
    return OperatorSpec(2, Pucci(2, "minus", 1.0, 2.0), 1.0, 2 * math.sqrt(2), 0.0, 1.0, "pucci2d")


def _cc2d_operands():
    concave_leaves = (
        Linear(2, _cos(2, 0.5, (1, 0)), _cos(2, 0.5, (0, 1)), 0.0),
        Linear(2, 2.5, _sin(1.5, 0.3, (1, 0)), _sin(0.0, 0.5, (0, 1))),
    )
    convex_leaves = (
        Linear(2, 1.5, 3.0, _cos(0.0, 0.5, (1, 0))),
        Linear(2, _sin(3.0, 0.5, (0, 1)), _sin(3.0, 0.5, (0, 1)), 0.0),
    )
    lam, Lam = scan_bounds(concave_leaves + convex_leaves, 2)
    concave = OperatorSpec(2, Min(2, concave_leaves), lam, Lam, None, 1.0, "cc2d_concave")
    convex = OperatorSpec(2, Max(2, convex_leaves), lam, Lam, None, 1.0, "cc2d_convex")
    return concave, convex


def cc2d():
    concave, convex = _cc2d_operands()
    return build_cabre_caffarelli(concave, convex, name="cc2d")


@lru_cache(maxsize=None)
def key_pair_1d():
    return build_key_example(1.0, dim=1, lam=1.0, Lam=6.0)


def key1d():
    concave, convex = key_pair_1d()
    return build_cabre_caffarelli(concave, convex, name="key1d")


BUILTINS = {
    "cos1d": cos1d,
    "sin1d": sin1d,
    "remark_min1d": remark_min1d,
    "separable2d": separable2d,
    "pucci2d": pucci2d,
    "cc2d": cc2d,
    "key1d": key1d,
}

PAIRS = {
    "remark": lambda: (cos1d(), sin1d()),
    "cc2d": _cc2d_operands,
    "key1d": key_pair_1d,
}


def get_builtin(name: str) -> OperatorSpec:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise DomainError(f"unknown built-in spec {name!r}; known: {sorted(BUILTINS)}") from None


def get_pair(name: str):
    try:
        return PAIRS[name]()
    except KeyError:
        raise DomainError(f"unknown built-in pair {name!r}; known: {sorted(PAIRS)}") from None
