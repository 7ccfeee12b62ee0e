"""Charts and coordinate fields: scalars, one-forms, two-forms, vector fields.

A single global chart covers each model; circle factors are emulated with a
periodic flag per coordinate (period 2*pi).  Raw fields carry expression
components and therefore exact derivatives; derived fields (anything produced
by a linear solve) expose only point evaluation, and their Jacobians are taken
with the five-point stencil in :func:`fd_jacobian`.

Index conventions, fixed once for the whole package (see docs/CONVENTIONS.md):

* a two-form evaluates to the matrix ``W[i, j] = w(d_i, d_j)``;
* the contraction of a vector ``X`` with ``w`` is ``(i_X w)_j = sum_i X_i W[i, j]``;
* ``(d theta)[i, j] = d_i theta_j - d_j theta_i`` for a one-form ``theta``;
* ``(d W)[i, j, k] = d_i W[j, k] + d_j W[k, i] + d_k W[i, j]`` for a two-form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import exprlang
from .exprlang import Expr, parse

__all__ = [
    "TWO_PI",
    "ChartSpec",
    "Point",
    "ScalarField",
    "NumericScalarField",
    "OneFormField",
    "TwoFormField",
    "VectorFieldExpr",
    "sample_box",
    "fd_steps",
    "fd_jacobian",
    "scalar_fd_gradient",
    "lie_bracket",
]

TWO_PI = 2.0 * math.pi

#: Points are plain float arrays in chart coordinates.
Point = np.ndarray

_RESERVED = set(exprlang.FUNCTIONS) | {"pi"}


@dataclass(frozen=True)
class ChartSpec:
    """A single global chart: ordered coordinate names plus periodicity mask.

    The dimension must be odd (2n+1).  Periodic coordinates live on a circle
    of circumference 2*pi; :meth:`normalize` folds them into [0, 2*pi).
    """

    names: tuple[str, ...]
    periodic: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "periodic", tuple(bool(b) for b in self.periodic))
        if len(self.names) != len(self.periodic):
            raise ValueError("names and periodic mask must have equal length")
        if len(self.names) % 2 == 0 or len(self.names) == 0:
            raise ValueError(f"chart dimension must be odd, got {len(self.names)}")
        if len(set(self.names)) != len(self.names):
            raise ValueError("coordinate names must be unique")
        for name in self.names:
            if name in _RESERVED:
                raise ValueError(f"coordinate name '{name}' is reserved")

    @property
    def dim(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def normalize(self, x: Point) -> Point:
        """Fold periodic coordinates into [0, 2*pi); other coordinates pass."""
        out = np.array(x, dtype=float)
        for i, per in enumerate(self.periodic):
            if per:
                out[i] = np.mod(out[i], TWO_PI)
        return out

    def wrap_difference(self, a: Point, b: Point) -> Point:
        """Componentwise a - b using the shortest periodic image."""
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        for i, per in enumerate(self.periodic):
            if per:
                d[i] = (d[i] + math.pi) % TWO_PI - math.pi
        return d

    def distance(self, a: Point, b: Point) -> float:
        return float(np.linalg.norm(self.wrap_difference(a, b)))


def sample_box(box, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` uniform points from a per-coordinate interval box, one per row."""
    box = np.asarray(box, dtype=float)
    lo, hi = box[:, 0], box[:, 1]
    if np.any(hi < lo):
        raise ValueError("box intervals must satisfy lo <= hi")
    return lo + rng.random((n, len(lo))) * (hi - lo)


@dataclass(frozen=True)
class ScalarField:
    """A named scalar function on a chart, backed by a parsed expression."""

    chart: ChartSpec
    expr: Expr
    name: str = "f"

    @classmethod
    def from_source(cls, src: str, chart: ChartSpec, name: str = "f") -> "ScalarField":
        return cls(chart, parse(src, chart), name)

    def value(self, x: Point) -> float:
        return self.expr.value(x)

    def jet1(self, x: Point) -> tuple[float, np.ndarray]:
        return self.expr.jet1(np.asarray(x, dtype=float))

    def gradient(self, x: Point) -> np.ndarray:
        return self.expr.gradient(x)

    def hessian(self, x: Point) -> np.ndarray:
        return self.expr.jet2(np.asarray(x, dtype=float))[2]

    def eval_jet2(self, x: Point):
        return self.expr.eval_jet2(x)

    def differentiated(self, index: int) -> Expr:
        return exprlang.differentiate(self.expr, index)

    def __call__(self, x: Point) -> float:
        return self.expr.value(x)


class NumericScalarField:
    """Scalar field given only by a point evaluator (no expression).

    Gradients come from the five-point stencil, so quantities built from
    linear solves (bracket values, directional derivatives) can be fed back
    through the same machinery as parsed fields.
    """

    def __init__(self, func, name: str = "g", base_step: float = 1e-4):
        self._func = func
        self.name = name
        self.base_step = base_step

    def value(self, x: Point) -> float:
        return float(self._func(np.asarray(x, dtype=float)))

    def gradient(self, x: Point) -> np.ndarray:
        return scalar_fd_gradient(self._func, x, self.base_step)

    def jet1(self, x: Point) -> tuple[float, np.ndarray]:
        return self.value(x), self.gradient(x)

    def __call__(self, x: Point) -> float:
        return self.value(x)


@dataclass(frozen=True)
class OneFormField:
    """Covector field with one expression component per coordinate."""

    chart: ChartSpec
    components: tuple[Expr, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if len(self.components) != self.chart.dim:
            raise ValueError("component count must equal chart dimension")

    @classmethod
    def from_sources(cls, sources, chart: ChartSpec) -> "OneFormField":
        return cls(chart, tuple(parse(s, chart) for s in sources))

    def at(self, x: Point) -> np.ndarray:
        return np.array([c.value(x) for c in self.components])

    def exterior_derivative(self, x: Point) -> np.ndarray:
        """Matrix ``(d theta)[i, j] = d_i theta_j - d_j theta_i`` (exact)."""
        x = np.asarray(x, dtype=float)
        grads = np.array([c.jet1(x)[1] for c in self.components])  # grads[j, i]
        return grads.T - grads

    def is_constant(self) -> bool:
        return all(exprlang.is_constant(c) for c in self.components)


@dataclass(frozen=True)
class TwoFormField:
    """Antisymmetric two-form stored as upper-triangle expression components.

    ``upper`` maps index pairs (i, j) with i < j to expressions; missing pairs
    are zero and the lower triangle is filled by antisymmetry.
    """

    chart: ChartSpec
    upper: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for (i, j), e in self.upper.items():
            if not (0 <= i < j < self.chart.dim):
                raise ValueError(f"upper-triangle index pair ({i}, {j}) out of range")
            clean[(int(i), int(j))] = e
        object.__setattr__(self, "upper", clean)

    @classmethod
    def from_upper_sources(cls, sources: dict, chart: ChartSpec) -> "TwoFormField":
        """Build from a mapping of '<name_i>,<name_j>' keys to expression text."""
        upper = {}
        for key, src in sources.items():
            a, b = (part.strip() for part in key.split(","))
            i, j = chart.index(a), chart.index(b)
            if i >= j:
                raise ValueError(f"component key '{key}' must be upper-triangle")
            upper[(i, j)] = parse(src, chart)
        return cls(chart, upper)

    def at(self, x: Point) -> np.ndarray:
        d = self.chart.dim
        W = np.zeros((d, d))
        for (i, j), e in self.upper.items():
            v = e.value(x)
            W[i, j] = v
            W[j, i] = -v
        return W

    def component_gradient(self, i: int, j: int, x: Point) -> np.ndarray:
        """Exact gradient of the (i, j) component, using antisymmetry."""
        if i == j:
            return np.zeros(self.chart.dim)
        sign = 1.0
        if i > j:
            i, j, sign = j, i, -1.0
        e = self.upper.get((i, j))
        if e is None:
            return np.zeros(self.chart.dim)
        return sign * e.jet1(np.asarray(x, dtype=float))[1]

    def exterior_derivative(self, x: Point) -> np.ndarray:
        """Fully antisymmetric tensor ``(dW)[i,j,k]`` (exact derivatives)."""
        d = self.chart.dim
        x = np.asarray(x, dtype=float)
        grads = {}
        for (i, j), e in self.upper.items():
            grads[(i, j)] = e.jet1(x)[1]

        def grad_of(i, j):
            if i == j:
                return np.zeros(d)
            if i < j:
                g = grads.get((i, j))
                return g if g is not None else np.zeros(d)
            g = grads.get((j, i))
            return -g if g is not None else np.zeros(d)

        T = np.zeros((d, d, d))
        for i in range(d):
            for j in range(i + 1, d):
                for k in range(j + 1, d):
                    v = grad_of(j, k)[i] + grad_of(k, i)[j] + grad_of(i, j)[k]
                    T[i, j, k] = v
                    T[j, k, i] = v
                    T[k, i, j] = v
                    T[j, i, k] = -v
                    T[i, k, j] = -v
                    T[k, j, i] = -v
        return T

    def is_constant(self) -> bool:
        return all(exprlang.is_constant(e) for e in self.upper.values())


@dataclass(frozen=True)
class VectorFieldExpr:
    """Vector field with expression components and exact Jacobian."""

    chart: ChartSpec
    components: tuple[Expr, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if len(self.components) != self.chart.dim:
            raise ValueError("component count must equal chart dimension")

    @classmethod
    def from_sources(cls, sources, chart: ChartSpec) -> "VectorFieldExpr":
        return cls(chart, tuple(parse(s, chart) for s in sources))

    def __call__(self, x: Point) -> np.ndarray:
        return np.array([c.value(x) for c in self.components])

    def jacobian(self, x: Point) -> np.ndarray:
        """J[i, j] = d_j X_i, exact."""
        x = np.asarray(x, dtype=float)
        return np.array([c.jet1(x)[1] for c in self.components])


# --- finite differences for derived fields ----------------------------------

def fd_steps(x: Point, base_step: float = 1e-4) -> np.ndarray:
    """Per-coordinate stencil steps ``h_i = max(base, base * |x_i|)``."""
    x = np.asarray(x, dtype=float)
    return np.maximum(base_step, base_step * np.abs(x))


def fd_jacobian(field, x: Point, base_step: float = 1e-4) -> np.ndarray:
    """Five-point central-difference Jacobian of a point-evaluable field.

    Fourth-order accurate; used for fields produced by linear solves, which
    have no expression representation.
    """
    x = np.asarray(x, dtype=float)
    h = fd_steps(x, base_step)
    d = len(x)
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = h[j]
        fm2 = np.asarray(field(x - 2 * e))
        fm1 = np.asarray(field(x - e))
        fp1 = np.asarray(field(x + e))
        fp2 = np.asarray(field(x + 2 * e))
        cols.append((fm2 - 8 * fm1 + 8 * fp1 - fp2) / (12 * h[j]))
    return np.stack(cols, axis=1)


def scalar_fd_gradient(func, x: Point, base_step: float = 1e-4) -> np.ndarray:
    """Five-point central-difference gradient of a scalar callable."""
    x = np.asarray(x, dtype=float)
    h = fd_steps(x, base_step)
    d = len(x)
    g = np.zeros(d)
    for j in range(d):
        e = np.zeros(d)
        e[j] = h[j]
        g[j] = (
            func(x - 2 * e) - 8 * func(x - e) + 8 * func(x + e) - func(x + 2 * e)
        ) / (12 * h[j])
    return g


def lie_bracket(X, Y, x: Point, base_step: float = 1e-4) -> np.ndarray:
    """Commutator ``[X, Y]`` at ``x``: ``J_Y X - J_X Y``.

    Fields carrying a ``jacobian`` method (expression-backed fields) use exact
    derivatives; everything else falls back to the five-point stencil.  The
    result is exactly antisymmetric under swapping X and Y because both
    orders reuse the same two Jacobian evaluations.
    """
    x = np.asarray(x, dtype=float)
    JX = X.jacobian(x) if hasattr(X, "jacobian") else fd_jacobian(X, x, base_step)
    JY = Y.jacobian(x) if hasattr(Y, "jacobian") else fd_jacobian(Y, x, base_step)
    return JY @ np.asarray(X(x)) - JX @ np.asarray(Y(x))
