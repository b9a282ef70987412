"""Periodic fully nonlinear functionals ``F(M, y)`` as min/max lattices.

An operator is a tree whose leaves are

* :class:`Linear` -- ``tr(A(y) M) + b(y)`` with trigonometric-polynomial
  coefficients (the offset ``b`` defaults to zero and only appears in gated
  constructions),
* :class:`Pucci` -- the extremal operators with spectral bounds ``(lo, hi)``,

and whose inner nodes are :class:`Min` / :class:`Max`.

Evaluation works on *difference quadruples*: in 2-D a Hessian is passed as
``(p, q, rp, rm)`` where ``p ~ u_11``, ``q ~ u_22`` and ``rp`` / ``rm`` are the
two one-sided approximations of ``u_12`` used by the monotone nine-point
stencil (``rp`` for nonnegative mixed coefficients, ``rm`` otherwise). For an
exact symmetric matrix ``rp == rm == M_12``. Every leaf returns, besides its
value, the coefficient triple ``(a11, a22, a12)`` of the linear operator that
is active at that node; the solvers assemble their linear systems from it.

Ellipticity constants ``lam``/``Lam`` are always meant in the Frobenius sense
``lam |N| <= F(M + N) - F(M) <= Lam |N|`` for ``N >= 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConstructionError, DegeneracyError, DomainError, SpecSchemaError
from .grid import as_sym, frobenius

TWO_PI = 2.0 * math.pi
AUDIT_RESOLUTION = 64
DEFAULT_SEED = 20240601


# ---------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True)
class TrigPoly:
    """``const + sum_k c_k cos(2 pi k.y) + s_k sin(2 pi k.y)`` with integer ``k``."""

    const: float = 0.0
    terms: tuple = ()  # ((freq tuple), cos weight, sin weight)

    def __post_init__(self):
        terms = []
        for freq, c, s in self.terms:
            freq = tuple(int(f) for f in np.atleast_1d(freq))
            terms.append((freq, float(c), float(s)))
        object.__setattr__(self, "terms", tuple(terms))
        object.__setattr__(self, "const", float(self.const))

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = np.full(y.shape[:-1], self.const)
        for freq, c, s in self.terms:
            phase = TWO_PI * (y[..., : len(freq)] @ np.asarray(freq, dtype=float))
            if c:
                out = out + c * np.cos(phase)
            if s:
                out = out + s * np.sin(phase)
        return out

    @property
    def is_constant(self) -> bool:
        return all((c == 0 and s == 0) or not any(freq) for freq, c, s in self.terms)

    @property
    def max_frequency(self) -> int:
        return max((max(abs(f) for f in freq) for freq, c, s in self.terms if c or s), default=0)

    @property
    def amplitude(self) -> float:
        return sum(abs(c) + abs(s) for freq, c, s in self.terms if any(freq))

    def to_dict(self) -> dict:
        d = {"const": self.const}
        if self.terms:
            d["terms"] = [{"freq": list(f), "cos": c, "sin": s} for f, c, s in self.terms]
        return d


def trig(value) -> TrigPoly:
    """Build a :class:`TrigPoly` from a number, an existing polynomial or a mapping."""
    if isinstance(value, TrigPoly):
        return value
    if isinstance(value, (int, float, np.floating)):
        return TrigPoly(float(value))
    if isinstance(value, dict):
        terms = [(t["freq"], t.get("cos", 0.0), t.get("sin", 0.0)) for t in value.get("terms", [])]
        return TrigPoly(value.get("const", 0.0), tuple(terms))
    raise DomainError(f"cannot interpret {value!r} as a trigonometric polynomial")


# ---------------------------------------------------------------------------
# tree nodes


class Node:
    dim: int

    def leaves(self):
        raise NotImplementedError

    def eval(self, H: dict, y: np.ndarray):
        """Return ``(value, coeffs)`` for difference quadruple ``H`` at points ``y``."""
        raise NotImplementedError


@dataclass(frozen=True)
class Linear(Node):
    """``tr(A(y) M) + offset(y)``; in 1-D only ``a11`` is used."""

    dim: int
    a11: TrigPoly
    a22: TrigPoly | None = None
    a12: TrigPoly | None = None
    offset: TrigPoly | None = None

    def __post_init__(self):
        object.__setattr__(self, "a11", trig(self.a11))
        if self.dim == 2:
            object.__setattr__(self, "a22", trig(self.a22 if self.a22 is not None else self.a11))
            object.__setattr__(self, "a12", trig(self.a12 if self.a12 is not None else 0.0))
        if self.offset is not None:
            object.__setattr__(self, "offset", trig(self.offset))

    def leaves(self):
        yield self

    @property
    def y_independent(self) -> bool:
        polys = [self.a11, self.a22, self.a12, self.offset]
        return all(p is None or p.is_constant for p in polys)

    def coefficients(self, y) -> tuple:
        a11 = self.a11(y)
        if self.dim == 1:
            return (a11,)
        return a11, self.a22(y), self.a12(y)

    def eval(self, H, y):
        b = self.offset(y) if self.offset is not None else 0.0
        if self.dim == 1:
            a11 = self.a11(y) * np.ones_like(H["p"])
            return a11 * H["p"] + b, {"a11": a11}
        ones = np.ones_like(H["p"])
        a11, a22, a12 = self.a11(y) * ones, self.a22(y) * ones, self.a12(y) * ones
        r = np.where(a12 >= 0, H["rp"], H["rm"])
        val = a11 * H["p"] + a22 * H["q"] + 2 * a12 * r + b
        return val, {"a11": a11, "a22": a22, "a12": a12}

    def to_dict(self) -> dict:
        d = {"a11": self.a11.to_dict()}
        if self.dim == 2:
            d["a22"] = self.a22.to_dict()
            d["a12"] = self.a12.to_dict()
        if self.offset is not None:
            d["offset"] = self.offset.to_dict()
        return {"linear": d}


def _sym2_eig(p, q, r):
    """Eigen-decomposition of stacked 2x2 symmetric matrices ``[[p, r], [r, q]]``."""
    mats = np.stack([np.stack([p, r], -1), np.stack([r, q], -1)], -2)
    return np.linalg.eigh(mats)


@dataclass(frozen=True)
class Pucci(Node):
    """Extremal operator: ``minus`` -> ``lo*sum(e+) + hi*sum(e-)``, ``plus`` -> the reverse."""

    dim: int
    kind: str
    lo: float
    hi: float

    def __post_init__(self):
        if self.kind not in ("minus", "plus"):
            raise DomainError("Pucci kind must be 'minus' or 'plus'")
        if not 0 < self.lo <= self.hi:
            raise DomainError("Pucci bounds need 0 < lo <= hi")

    def leaves(self):
        yield self

    y_independent = True

    def _scalar(self, x):
        pos, neg = np.maximum(x, 0), np.minimum(x, 0)
        if self.kind == "minus":
            return self.lo * pos + self.hi * neg, np.where(x >= 0, self.lo, self.hi)
        return self.hi * pos + self.lo * neg, np.where(x >= 0, self.hi, self.lo)

    def eval(self, H, y):
        if self.dim == 1:
            val, a = self._scalar(H["p"])
            return val, {"a11": a}
        p, q = H["p"], H["q"]
        # diagonal-control value used when the unconstrained optimizer has the wrong sign
        vp, ap = self._scalar(p)
        vq, aq = self._scalar(q)
        diag_val = vp + vq
        best_val = best = None
        for sign, r in ((1, H["rp"]), (-1, H["rm"])):
            e, v = _sym2_eig(p, q, r)
            if self.kind == "minus":
                weights = np.where(e < 0, self.hi, self.lo)
            else:
                weights = np.where(e > 0, self.hi, self.lo)
            A = np.einsum("...ik,...k,...jk->...ij", v, weights, v)
            val = np.sum(weights * e, axis=-1)
            a11, a22, a12 = A[..., 0, 0], A[..., 1, 1], A[..., 0, 1]
            ok = (sign * a12 >= 0)
            val = np.where(ok, val, diag_val)
            a11 = np.where(ok, a11, ap)
            a22 = np.where(ok, a22, aq)
            a12 = np.where(ok, a12, 0.0)
            if best_val is None:
                best_val, best = val, (a11, a22, a12)
            else:
                pick = val < best_val if self.kind == "minus" else val > best_val
                best_val = np.where(pick, val, best_val)
                best = tuple(np.where(pick, n, o) for n, o in zip((a11, a22, a12), best))
        return best_val, {"a11": best[0], "a22": best[1], "a12": best[2]}

    def to_dict(self) -> dict:
        return {f"pucci_{self.kind}": {"lo": self.lo, "hi": self.hi}}


@dataclass(frozen=True)
class _Lattice(Node):
    dim: int
    children: tuple

    def __post_init__(self):
        children = tuple(self.children)
        if not children:
            raise DomainError("lattice node needs at least one child")
        if any(c.dim != self.dim for c in children):
            raise DomainError("children have mismatched dimension")
        object.__setattr__(self, "children", children)

    def leaves(self):
        for c in self.children:
            yield from c.leaves()

    _reduce = None

    def eval(self, H, y):
        results = [c.eval(H, y) for c in self.children]
        vals = np.stack([v for v, _ in results])
        k = self._reduce(vals, axis=0)
        val = np.take_along_axis(vals, k[None], axis=0)[0]
        coeffs = {}
        for key in results[0][1]:
            stack = np.stack([c[key] for _, c in results])
            coeffs[key] = np.take_along_axis(stack, k[None], axis=0)[0]
        return val, coeffs


class Min(_Lattice):
    _reduce = staticmethod(np.argmin)

    def to_dict(self):
        return {"min": [c.to_dict() for c in self.children]}


class Max(_Lattice):
    _reduce = staticmethod(np.argmax)

    def to_dict(self):
        return {"max": [c.to_dict() for c in self.children]}


# ---------------------------------------------------------------------------
# difference quadruples


def quadruple_from_matrices(Ms) -> dict:
    """Difference quadruple of exact symmetric matrices, shape ``(..., n, n)``."""
    Ms = np.asarray(Ms, dtype=float)
    if Ms.shape[-1] == 1:
        return {"p": Ms[..., 0, 0]}
    return {"p": Ms[..., 0, 0], "q": Ms[..., 1, 1], "rp": Ms[..., 0, 1], "rm": Ms[..., 0, 1]}


def combine(H: dict, scale: float = 1.0, offset: dict | None = None) -> dict:
    out = {k: scale * v for k, v in H.items()}
    if offset is not None:
        for k in out:
            out[k] = out[k] + offset[k]
    return out


def linear_part(coeffs: dict, H: dict) -> np.ndarray:
    """Value of the active linear operator on ``H`` (offsets excluded)."""
    if "a22" not in coeffs:
        return coeffs["a11"] * H["p"]
    a12 = coeffs["a12"]
    r = np.where(a12 >= 0, H["rp"], H["rm"])
    return coeffs["a11"] * H["p"] + coeffs["a22"] * H["q"] + 2 * a12 * r


# ---------------------------------------------------------------------------
# operator specification


def _audit_points(dim: int, resolution: int = AUDIT_RESOLUTION) -> np.ndarray:
    axes = [np.arange(resolution) / resolution] * dim
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, dim)


@dataclass(frozen=True)
class OperatorSpec:
    """A periodic functional with declared class data.

    Construction audits every linear leaf on a 64-per-axis grid of the cell
    (smallest eigenvalue ``>= lam``, Frobenius norm ``<= Lam``), every Pucci
    leaf against the declared bounds, and checks ``F(0, y) = 0``.
    """

    dim: int
    root: Node
    lam: float
    Lam: float
    kappa: float | None = None
    gamma: float = 1.0
    name: str = "anonymous"
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DomainError("dim must be 1 or 2")
        if self.root.dim != self.dim:
            raise DomainError("root dimension mismatch")
        if not 0 < self.lam <= self.Lam:
            raise DomainError("need 0 < lam <= Lam")
        if not 0 < self.gamma <= 1:
            raise DomainError("gamma must lie in (0, 1]")
        self._audit()

    # -- audits ------------------------------------------------------------

    def _audit(self):
        y = _audit_points(self.dim)
        tol = 1e-10
        for leaf in self.root.leaves():
            if isinstance(leaf, Linear):
                if self.dim == 1:
                    a = leaf.a11(y)
                    lo, fro = a.min(), np.abs(a).max()
                else:
                    a11, a22, a12 = leaf.coefficients(y)
                    tr, det = a11 + a22, a11 * a22 - a12**2
                    disc = np.sqrt(np.maximum((a11 - a22) ** 2 / 4 + a12**2, 0))
                    lo = (tr / 2 - disc).min()
                    fro = np.sqrt(a11**2 + a22**2 + 2 * a12**2).max()
                    del det
                if lo < self.lam - tol:
                    raise DegeneracyError(
                        f"{self.name}: leaf eigenvalue {lo:.6g} below declared lam {self.lam}")
                if fro > self.Lam + tol:
                    raise DegeneracyError(
                        f"{self.name}: leaf Frobenius norm {fro:.6g} above declared Lam {self.Lam}")
            else:
                if leaf.lo < self.lam - tol or leaf.hi * math.sqrt(self.dim) > self.Lam + tol:
                    raise DegeneracyError(f"{self.name}: Pucci bounds exceed declared constants")
                if self.dim == 2 and leaf.lo < (leaf.hi - leaf.lo) * (math.sqrt(2) - 1) / 2:
                    raise DegeneracyError(
                        f"{self.name}: Pucci ratio hi/lo too large for a monotone nine-point stencil")
        zero = quadruple_from_matrices(np.zeros((len(y), self.dim, self.dim)))
        f0, _ = self.root.eval(zero, y)
        if np.max(np.abs(f0)) > 1e-12:
            raise DegeneracyError(f"{self.name}: F(0, y) != 0 (max {np.max(np.abs(f0)):.3g})")

    def monotonicity_violation(self, y=None):
        """First ``(point, leaf index, a11, a22, a12)`` violating ``|a12| <= min(a11, a22)``."""
        if self.dim == 1:
            return None
        y = _audit_points(2) if y is None else np.asarray(y).reshape(-1, 2)
        for k, leaf in enumerate(self.root.leaves()):
            if not isinstance(leaf, Linear):
                continue
            a11, a22, a12 = (np.broadcast_to(a, y.shape[:1]) for a in leaf.coefficients(y))
            bad = np.abs(a12) > np.minimum(a11, a22) + 1e-12
            if np.any(bad):
                i = int(np.argmax(bad))
                return tuple(y[i]), k, float(a11[i]), float(a22[i]), float(a12[i])
        return None

    # -- metadata ----------------------------------------------------------

    @property
    def y_independent(self) -> bool:
        return all(leaf.y_independent for leaf in self.root.leaves())

    @property
    def max_frequency(self) -> int:
        freq = 0
        for leaf in self.root.leaves():
            if isinstance(leaf, Linear):
                for p in (leaf.a11, leaf.a22, leaf.a12, leaf.offset):
                    if p is not None:
                        freq = max(freq, p.max_frequency)
        return freq

    @property
    def in_r1(self) -> bool:
        """``D_M F`` Lipschitz: asserted only for a single linear leaf."""
        return isinstance(self.root, Linear)

    @property
    def is_homogeneous(self) -> bool:
        return all(not (isinstance(l, Linear) and l.offset is not None) for l in self.root.leaves())

    # -- evaluation --------------------------------------------------------

    def evaluate_batch(self, Ms, ys) -> np.ndarray:
        Ms = np.asarray(Ms, dtype=float)
        ys = np.asarray(ys, dtype=float).reshape(-1, self.dim)
        val, _ = self.root.eval(quadruple_from_matrices(Ms), ys)
        return val

    def random_points(self, rng, k: int) -> np.ndarray:
        return rng.random((k, self.dim))

    def bind(self, y, offset=None, scale: float = 1.0, baseline=0.0) -> "BoundOperator":
        return BoundOperator(self.root, np.asarray(y, dtype=float).reshape(-1, self.dim),
                             offset, scale, baseline)

    def bind_cell(self, grid) -> "BoundOperator":
        return self.bind(grid.coordinates().reshape(-1, self.dim))

    def bind_nodes(self, x, epsilon: float) -> "BoundOperator":
        """Attach to physical nodes ``x``; ``epsilon = inf`` freezes ``y`` at 0."""
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        y = np.zeros_like(x) if math.isinf(epsilon) else x / epsilon
        return self.bind(y)

    def to_dict(self) -> dict:
        d = {"schema": SCHEMA_VERSION, "name": self.name, "dim": self.dim, "lambda": self.lam,
             "Lambda": self.Lam, "gamma": self.gamma, "root": self.root.to_dict()}
        if self.kappa is not None:
            d["kappa"] = self.kappa
        if self.meta:
            d["meta"] = dict(self.meta)
        return d

    def to_yaml(self) -> str:
        import yaml

        return yaml.safe_dump(_plain(self.to_dict()), sort_keys=False)

    @property
    def key(self) -> str:
        """Stable content hash used by caches."""
        import hashlib

        return hashlib.sha256(self.to_yaml().encode()).hexdigest()[:16]


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


class BoundOperator:
    """An operator attached to a fixed list of nodes.

    ``apply(D)`` returns ``((F(scale*D + offset, y) - baseline) / scale, coeffs)``.
    """

    def __init__(self, root, y, offset=None, scale=1.0, baseline=0.0):
        self.root = root
        self.y = y
        self.offset = offset
        self.scale = float(scale)
        self.baseline = baseline

    def apply(self, D: dict):
        H = combine(D, self.scale, self.offset)
        val, coeffs = self.root.eval(H, self.y)
        return (val - self.baseline) / self.scale, coeffs


def evaluate(spec: OperatorSpec, M, y) -> float:
    """``F(M, y)`` for one symmetric matrix and one point."""
    M = as_sym(M, spec.dim)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.size != spec.dim:
        raise DomainError("point dimension mismatch")
    return float(spec.evaluate_batch(M[None], y[None])[0])


# ---------------------------------------------------------------------------
# sampled class diagnostics


def random_psd_unit(rng, dim: int, k: int) -> np.ndarray:
    """Unit-Frobenius PSD matrices: a mix of rank-one, isotropic and random full-rank draws."""
    if dim == 1:
        return np.ones((k, 1, 1))
    out = np.empty((k, dim, dim))
    for i in range(k):
        mode = i % 4
        if mode in (0, 1):
            v = rng.normal(size=dim)
            N = np.outer(v, v)
        elif mode == 2:
            N = np.eye(dim)
        else:
            G = rng.normal(size=(dim, dim))
            N = G @ G.T
        out[i] = N / frobenius(N)
    return out


def random_symmetric(rng, dim: int, k: int, scale: float = 3.0) -> np.ndarray:
    G = rng.normal(scale=scale, size=(k, dim, dim))
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def ellipticity_margin(spec, sample_count: int = 400, seed: int = DEFAULT_SEED) -> tuple:
    """Observed ``(min, max)`` of ``(F(M+N, y) - F(M, y)) / |N|`` over random samples."""
    if sample_count < 100:
        raise DomainError("sample_count must be at least 100")
    rng = np.random.default_rng(seed)
    dim = spec.dim
    M = random_symmetric(rng, dim, sample_count)
    N = random_psd_unit(rng, dim, sample_count) * rng.uniform(0.1, 3.0, size=(sample_count, 1, 1))
    y = spec.random_points(rng, sample_count)
    diff = spec.evaluate_batch(M + N, y) - spec.evaluate_batch(M, y)
    q = diff / np.sqrt(np.sum(N * N, axis=(-1, -2)))
    lo, hi = float(q.min()), float(q.max())
    if lo <= 0:
        raise DegeneracyError(f"observed lower ellipticity estimate {lo:.3g} <= 0")
    return lo, hi


def holder_modulus(spec: OperatorSpec, sample_count: int = 2000, seed: int = DEFAULT_SEED,
                   gamma: float | None = None) -> float:
    """Empirical sup of ``|F(M,y1) - F(M,y2)| / (|M| |y1 - y2|^gamma)``."""
    if spec.y_independent:
        return 0.0
    gamma = spec.gamma if gamma is None else gamma
    rng = np.random.default_rng(seed)
    k = sample_count
    M = random_symmetric(rng, spec.dim, k)
    y1 = rng.random((k, spec.dim))
    # half the pairs are close together, to resolve the local modulus
    step = np.where(rng.random((k, 1)) < 0.5, rng.random((k, spec.dim)) - 0.5,
                    (rng.random((k, spec.dim)) - 0.5) * 10.0 ** rng.uniform(-4, -1, size=(k, 1)))
    y2 = y1 + step
    diff = np.abs(spec.evaluate_batch(M, y1) - spec.evaluate_batch(M, y2))
    dist = np.sqrt(np.sum(step * step, axis=-1))
    normM = np.sqrt(np.sum(M * M, axis=(-1, -2)))
    ok = (dist > 0) & (normM > 0)
    return float(np.max(diff[ok] / (normM[ok] * dist[ok] ** gamma)))


# ---------------------------------------------------------------------------
# scaled / translated operator


@dataclass
class ScaledOperator:
    """``F_{M,mu}(N, y) = (F(mu N + M + D^2 w(M, y), y) - F(M + D^2 w(M, y), y)) / mu``.

    The corrector Hessian enters through the discrete difference quadruple of
    the cell solution, so the operator lives on the cell's torus nodes (or on
    any grid whose nodes land on them after division by ``epsilon``).
    """

    base: OperatorSpec
    anchor: np.ndarray
    mu: float
    offset: dict  # difference quadruple of M + D^2 w on the cell torus
    baseline: np.ndarray  # F(M + D^2 w, y) on the cell torus
    cell_resolution: int

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def lam(self):
        return self.base.lam

    @property
    def Lam(self):
        return self.base.Lam

    @property
    def y_independent(self) -> bool:
        return False

    @property
    def name(self) -> str:
        return f"{self.base.name}|M,mu={self.mu:g}"

    def _cell_points(self):
        return _audit_points(self.dim, self.cell_resolution)

    def random_points(self, rng, k):
        n = self.cell_resolution ** self.dim
        return rng.integers(0, n, size=k)

    def evaluate_batch(self, Ns, idx) -> np.ndarray:
        """Evaluate at matrices ``Ns`` and flat cell-node indices ``idx``."""
        idx = np.asarray(idx, dtype=int)
        y = self._cell_points()[idx]
        off = {k: v.reshape(-1)[idx] for k, v in self.offset.items()}
        H = combine(quadruple_from_matrices(Ns), self.mu, off)
        val, _ = self.base.root.eval(H, y)
        return (val - self.baseline.reshape(-1)[idx]) / self.mu

    def cell_indices(self, x, epsilon: float) -> np.ndarray:
        """Flat cell-node index hit by physical points ``x`` (must be grid aligned)."""
        m = self.cell_resolution
        y = np.asarray(x, dtype=float).reshape(-1, self.dim) / epsilon * m
        iy = np.round(y)
        if np.max(np.abs(y - iy)) > 1e-6:
            raise DomainError("grid is not aligned with the corrector's cell grid")
        iy = iy.astype(int) % m
        if self.dim == 1:
            return iy[:, 0]
        return iy[:, 0] * m + iy[:, 1]

    def bind_nodes(self, x, epsilon: float) -> BoundOperator:
        return self.bind(self.cell_indices(x, epsilon))

    def bind_cell(self, grid) -> BoundOperator:
        if grid.resolution != self.cell_resolution or grid.dim != self.dim:
            raise DomainError("scaled operator lives on its corrector's cell grid")
        return self.bind(np.arange(self.cell_resolution ** self.dim))

    def monotonicity_violation(self):
        return self.base.monotonicity_violation()

    @property
    def max_frequency(self) -> int:
        return self.base.max_frequency

    def bind(self, y_flat_idx) -> BoundOperator:
        idx = np.asarray(y_flat_idx, dtype=int)
        y = self._cell_points()[idx]
        off = {k: v.reshape(-1)[idx] for k, v in self.offset.items()}
        return BoundOperator(self.base.root, y, off, self.mu, self.baseline.reshape(-1)[idx])


def translate_scale(spec: OperatorSpec, M, mu: float, cell) -> ScaledOperator:
    """Build ``F_{M,mu}`` from a cell solution computed for ``(spec, M)``."""
    from .scheme import differences

    if mu <= 0:
        raise DomainError("mu must be positive")
    M = as_sym(M, spec.dim)
    if cell.spec.key != spec.key or not np.allclose(cell.anchor, M, atol=1e-12):
        raise DomainError("cell solution was computed for a different (spec, M)")
    grid = cell.corrector.grid
    D = differences(cell.corrector.values, grid)
    H = combine(D, 1.0, quadruple_from_matrices(np.broadcast_to(M, grid.shape + M.shape)))
    y = grid.coordinates().reshape(-1, spec.dim)
    base, _ = spec.root.eval({k: v.reshape(-1) for k, v in H.items()}, y)
    return ScaledOperator(spec, M, float(mu), {k: v.reshape(-1) for k, v in H.items()},
                          base, grid.resolution)


# ---------------------------------------------------------------------------
# section-7 constructions


def _is_lattice_of_linear(node, cls) -> bool:
    if isinstance(node, Linear):
        return True
    return isinstance(node, cls) and all(isinstance(c, Linear) for c in node.children)


def build_cabre_caffarelli(concave: OperatorSpec, convex: OperatorSpec,
                           name: str | None = None) -> OperatorSpec:
    """``min(concave, convex)`` with shared constants and ``F(0, .) = 0`` verified."""
    if concave.dim != convex.dim:
        raise DomainError("operands have different dimensions")
    if not _is_lattice_of_linear(concave.root, Min):
        raise DomainError("concave operand must be a MIN of LINEAR leaves")
    if not _is_lattice_of_linear(convex.root, Max):
        raise DomainError("convex operand must be a MAX of LINEAR leaves")
    if not (math.isclose(concave.lam, convex.lam) and math.isclose(concave.Lam, convex.Lam)):
        raise DomainError("operands must share (lambda, Lambda)")
    kappas = [k for k in (concave.kappa, convex.kappa) if k is not None]
    return OperatorSpec(concave.dim, Min(concave.dim, (concave.root, convex.root)),
                        concave.lam, concave.Lam, max(kappas) if kappas else None,
                        min(concave.gamma, convex.gamma),
                        name or f"min({concave.name},{convex.name})",
                        {**convex.meta, **concave.meta})


def _key_leaves(dim: int, lam: float, Lam: float, amplitude: float):
    """Ungated leaf families of the key example, plus the gated (y-dependent) leaves.

    1-D, scalar slopes: concave ``min(s1 M, s2 M, c(y) M + beta)``, convex
    ``max(s1 M, s3 M, d(y) M - beta')``. The gated leaves win only for
    ``M << 0`` (concave) and ``M >> 0`` (convex).
    """
    if dim == 1:
        span = Lam - lam
        s1 = lam
        s2 = lam + 0.4 * span
        s3 = lam + 0.8 * span
        # c(y) in (s2, Lam]; d(y) in (s3, Lam]
        cmid = s2 + 0.75 * (Lam - s2)
        camp = min(amplitude, 0.9 * (Lam - cmid))
        dmid = s3 + 0.6 * (Lam - s3)
        damp = min(amplitude, 0.9 * (Lam - dmid))
        if camp <= 0 or damp <= 0 or s2 - s1 <= 0:
            raise ConstructionError("ellipticity band too narrow to separate the leaf slopes")
        concave = [Linear(1, s1), Linear(1, s2)]
        convex = [Linear(1, s1), Linear(1, s3)]
        gated_cave = Linear(1, TrigPoly(cmid, (((1,), camp, 0.0),)))
        gated_vex = Linear(1, TrigPoly(dmid, (((1,), 0.0, damp),)))
        gap = min(s3 - s1, s2 - s1)
        return concave, convex, gated_cave, gated_vex, (cmid + camp, s2), (dmid + damp, s3), gap
    # 2-D: spectral bounds lo..hi with hi*sqrt(2) <= Lam
    hi = Lam / math.sqrt(2)
    lo = lam
    if hi - lo <= 0:
        raise ConstructionError("ellipticity band too narrow for a 2-D key example")
    p = lo + 0.45 * (hi - lo)
    s = 0.35 * (hi - lo)
    if s > p:
        raise ConstructionError("off-diagonal leaf would violate stencil monotonicity")
    fam = [Linear(2, p, p, 0.0), Linear(2, p + s, p + s, 0.0), Linear(2, p + s, p - s, 0.0),
           Linear(2, p, p, s)]
    top = p + s + 0.5 * (hi - p - s)
    amp = min(amplitude, 0.9 * (hi - top))
    if amp <= 0:
        raise ConstructionError("no room above the leaf family for gated leaves")
    gated_cave = Linear(2, TrigPoly(top, (((1, 0), amp, 0.0),)), TrigPoly(top, (((0, 1), amp, 0.0),)))
    gated_vex = Linear(2, TrigPoly(top, (((0, 1), 0.0, amp),)), TrigPoly(top, (((1, 0), 0.0, amp),)))
    # sup over unit M of max_{B} tr(B M) - min_{A} tr(A M) is at least s * sqrt(2)/sqrt(3)
    gap = s * math.sqrt(2.0 / 3.0)
    return fam, fam, gated_cave, gated_vex, (2 * (top + amp), 2 * (p + s)), \
        (2 * (top + amp), 2 * (p + s)), gap


def build_key_example(R: float, dim: int = 1, lam: float = 1.0, Lam: float = 6.0,
                      L: float | None = None, gamma: float = 0.5, amplitude: float = 0.4,
                      resolution: int | None = None):
    """Concave/convex pair meeting the hypotheses of the key-equality lemma.

    The y-dependence sits in one gated leaf per operand whose constant offset
    keeps it inactive on ``|M| <= L R``. ``L`` defaults to an estimate from
    :func:`oscillate.cell.corrector_hessian_floor` applied to the ungated
    (fully oscillating) operators. Returns ``(concave, convex)``; both carry
    ``meta = {"R": R, "L": L}``.
    """
    if not R > 0:
        raise DomainError("R must be positive")
    cave, vex, g_cave, g_vex, cave_slopes, vex_slopes, gap = _key_leaves(dim, lam, Lam, amplitude)

    if math.isinf(R):
        concave = OperatorSpec(dim, Min(dim, tuple(cave)), lam, Lam, 0.0, gamma, "key_concave",
                               {"R": R, "L": 1.0})
        convex = OperatorSpec(dim, Max(dim, tuple(vex)), lam, Lam, 0.0, gamma, "key_convex",
                              {"R": R, "L": 1.0})
        return concave, convex

    if L is None:
        L = _estimate_key_L(dim, lam, Lam, cave, vex, g_cave, g_vex, gamma, resolution)

    # gating offsets: the gated leaf cannot undercut (overshoot) the family while |M| <= L R
    if dim == 1:
        beta_cave = (cave_slopes[0] - cave_slopes[1]) * L * R
        beta_vex = (vex_slopes[0] - vex_slopes[1]) * L * R
    else:
        beta_cave = _gate_offset_2d(g_cave, cave, L * R, concave=True)
        beta_vex = _gate_offset_2d(g_vex, vex, L * R, concave=False)
    gated_cave = Linear(dim, g_cave.a11, g_cave.a22, g_cave.a12, TrigPoly(beta_cave))
    gated_vex = Linear(dim, g_vex.a11, g_vex.a22, g_vex.a12, TrigPoly(-beta_vex))
    meta = {"R": float(R), "L": float(L)}
    concave = OperatorSpec(dim, Min(dim, tuple(cave) + (gated_cave,)), lam, Lam, None, gamma,
                           "key_concave", dict(meta))
    convex = OperatorSpec(dim, Max(dim, tuple(vex) + (gated_vex,)), lam, Lam, None, gamma,
                          "key_convex", dict(meta))
    kappa = max(holder_modulus(concave, gamma=gamma), holder_modulus(convex, gamma=gamma))
    need = kappa * dim ** (gamma / 2)
    if need > gap + 1e-12:
        raise ConstructionError(
            f"band separation {gap:.4g} cannot dominate kappa n^(gamma/2) = {need:.4g}; "
            "lower the amplitude or widen [lambda, Lambda]")
    concave = OperatorSpec(dim, concave.root, lam, Lam, kappa, gamma, "key_concave", dict(meta))
    convex = OperatorSpec(dim, convex.root, lam, Lam, kappa, gamma, "key_convex", dict(meta))
    return concave, convex


def _gate_offset_2d(gated: Linear, family, radius: float, concave: bool) -> float:
    """Smallest offset keeping ``gated`` inactive on ``|M| <= radius`` (dense sampling)."""
    rng = np.random.default_rng(DEFAULT_SEED)
    M = random_symmetric(rng, 2, 4000)
    M /= np.sqrt(np.sum(M * M, axis=(-1, -2)))[:, None, None]
    y = _audit_points(2, 16)
    worst = 0.0
    Hs = quadruple_from_matrices(M)
    for yy in y:
        Y = np.broadcast_to(yy, (len(M), 2))
        g, _ = gated.eval(Hs, Y)
        fam = np.stack([leaf.eval(Hs, Y)[0] for leaf in family])
        if concave:
            worst = max(worst, float(np.max(fam.min(0) - g)))
        else:
            worst = max(worst, float(np.max(g - fam.max(0))))
    return worst * radius * 1.01


def _estimate_key_L(dim, lam, Lam, cave, vex, g_cave, g_vex, gamma, resolution) -> float:
    """``1 / min ratio`` of the corrector Hessian floor over unit anchors of the ungated operators."""
    from .cell import corrector_hessian_floor, solve_cell

    specs = [
        OperatorSpec(dim, Min(dim, tuple(cave) + (g_cave,)), lam, Lam, None, gamma, "probe_cave"),
        OperatorSpec(dim, Max(dim, tuple(vex) + (g_vex,)), lam, Lam, None, gamma, "probe_vex"),
    ]
    specs.append(OperatorSpec(dim, Min(dim, (specs[0].root, specs[1].root)), lam, Lam, None,
                              gamma, "probe_min"))
    if dim == 1:
        anchors = [np.array([[1.0]]), np.array([[-1.0]])]
        res = resolution or 128
    else:
        anchors = [np.eye(2) / math.sqrt(2), -np.eye(2) / math.sqrt(2),
                   np.diag([1.0, -1.0]) / math.sqrt(2), np.diag([1.0, 0.0])]
        res = resolution or 16
    ratio = 1.0
    for spec in specs:
        for M in anchors:
            cell = solve_cell(spec, M, res, method="mean-correction")
            ratio = min(ratio, corrector_hessian_floor(cell)[1])
    if ratio <= 0:
        raise ConstructionError("corrector Hessian floor vanished; no finite L")
    return max(1.0 / ratio, 1.0)


# ---------------------------------------------------------------------------
# structured text format

SCHEMA_VERSION = "oscillate.operator/1"


def _poly_from(node, where):
    if isinstance(node, (int, float)):
        return TrigPoly(float(node))
    if not isinstance(node, dict):
        raise SpecSchemaError("coefficient must be a number or a mapping", _line(where))
    unknown = set(node) - {"const", "terms"}
    if unknown:
        raise SpecSchemaError(f"unknown coefficient keys {sorted(unknown)}",
                              _key_line(node, sorted(unknown)[0]))
    terms = []
    for t in node.get("terms", []) or []:
        if not isinstance(t, dict) or "freq" not in t:
            raise SpecSchemaError("each term needs 'freq'", _line(t if isinstance(t, dict) else node))
        try:
            freq = [int(v) for v in t["freq"]]
        except (TypeError, ValueError):
            raise SpecSchemaError("'freq' must be a list of integers", _line(t)) from None
        terms.append((freq, float(t.get("cos", 0.0)), float(t.get("sin", 0.0))))
    return TrigPoly(float(node.get("const", 0.0)), tuple(terms))


def _line(node):
    return getattr(node, "line", None)


def _key_line(mapping, key):
    return getattr(mapping, "lines", {}).get(key, _line(mapping))


def _node_from(obj, dim):
    if not isinstance(obj, dict) or len(obj) != 1:
        raise SpecSchemaError("operator node must be a single-key mapping", _line(obj))
    (kind, body), = obj.items()
    if kind == "linear":
        if not isinstance(body, dict) or "a11" not in body:
            raise SpecSchemaError("linear node needs 'a11'", _line(obj))
        unknown = set(body) - {"a11", "a22", "a12", "offset"}
        if unknown:
            raise SpecSchemaError(f"unknown linear keys {sorted(unknown)}",
                                  _key_line(body, sorted(unknown)[0]))
        polys = {k: _poly_from(body[k], body) for k in body}
        return Linear(dim, polys["a11"], polys.get("a22"), polys.get("a12"), polys.get("offset"))
    if kind in ("min", "max"):
        if not isinstance(body, list) or not body:
            raise SpecSchemaError(f"'{kind}' needs a non-empty list", _line(obj))
        children = tuple(_node_from(c, dim) for c in body)
        return (Min if kind == "min" else Max)(dim, children)
    if kind in ("pucci_minus", "pucci_plus"):
        if not isinstance(body, dict) or {"lo", "hi"} - set(body):
            raise SpecSchemaError(f"'{kind}' needs 'lo' and 'hi'", _line(obj))
        return Pucci(dim, kind.split("_")[1], float(body["lo"]), float(body["hi"]))
    raise SpecSchemaError(f"unknown operator node '{kind}'", _line(obj))


def spec_from_dict(doc) -> OperatorSpec:
    if not isinstance(doc, dict):
        raise SpecSchemaError("operator document must be a mapping", _line(doc))
    if doc.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise SpecSchemaError(f"unsupported schema {doc.get('schema')!r}", _line(doc))
    for req in ("dim", "lambda", "Lambda", "root"):
        if req not in doc:
            raise SpecSchemaError(f"missing key '{req}'", _line(doc))
    dim = doc["dim"]
    if dim not in (1, 2):
        raise SpecSchemaError("dim must be 1 or 2", doc.lines.get("dim") if hasattr(doc, "lines") else None)
    root = _node_from(doc["root"], dim)
    meta = doc.get("meta") or {}
    try:
        return OperatorSpec(dim, root, float(doc["lambda"]), float(doc["Lambda"]),
                            None if doc.get("kappa") is None else float(doc["kappa"]),
                            float(doc.get("gamma", 1.0)), str(doc.get("name", "anonymous")),
                            dict(meta))
    except (DomainError, DegeneracyError) as exc:
        raise SpecSchemaError(str(exc), _line(doc)) from exc


def spec_from_yaml(text: str) -> OperatorSpec:
    from .config import load_yaml_lines

    return spec_from_dict(load_yaml_lines(text))


def linear_1d(a, name="linear", lam=None, Lam=None) -> OperatorSpec:
    """Convenience: 1-D linear spec with bounds read off a dense scan."""
    a = trig(a)
    y = _audit_points(1, 4096)
    vals = a(y)
    return OperatorSpec(1, Linear(1, a), lam or float(vals.min()), Lam or float(vals.max()),
                        None, 1.0, name)


def spectral_bounds(A_list: Sequence) -> tuple:
    lo = min(np.linalg.eigvalsh(np.asarray(A)).min() for A in A_list)
    hi = max(frobenius(A) for A in A_list)
    return float(lo), float(hi)
