"""Multiscale stored-energy densities.

An integrand is a map ``f(x, y, z; xi)`` where ``x`` is the macroscopic
point, ``y`` and ``z`` are the two fast variables (unit-periodic) and ``xi``
is a ``d x N`` gradient matrix.  Every built-in integrand factors as

    f(x, y, z; xi) = a(x, y, z) * g(xi)

with a positive coefficient field ``a`` and a base density ``g`` that carries
the xi-dependence (quadratic form, p-norm or double well).  Both factors are
evaluated on whole batches of points at once; all the solvers work on arrays
of quadrature points.

Thin-film integrands ``W(x, y, z_alpha; xi)`` use the same machinery with
``x`` and ``y`` in R^3, ``z_alpha`` in R^2 and ``xi`` a 3x3 matrix.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, IntegrandError

__all__ = [
    "GrowthSpec", "Coefficient", "Constant", "Laminate", "Checkerboard",
    "Trigonometric", "Product", "AffineX", "StepX", "coefficient_from_json",
    "QuadraticForm", "PNorm", "DoubleWell",
    "CellIntegrand", "Integrand", "MultiscaleIntegrand", "FilmIntegrand",
    "CallableIntegrand", "FrozenIntegrand",
    "quadratic", "pnorm", "double_well", "from_json",
    "eval_integrand", "eval_stress", "validate_hypotheses",
    "HypothesisReport", "CheckResult", "wrap_unit", "fd_stress",
]

# Fast coordinates are snapped to a dyadic lattice after reduction mod 1 so
# that y and y + k land on bit-identical floats.
_WRAP_SCALE = 2.0 ** 32
FD_REL_STEP = 1e-6


def wrap_unit(t):
    """Reduce ``t`` into [0, 1) on a 2**-32 lattice (exact under integer shifts)."""
    t = np.asarray(t, dtype=float)
    frac = np.round(np.mod(t, 1.0) * _WRAP_SCALE) / _WRAP_SCALE
    return np.where(frac >= 1.0, frac - 1.0, frac)


def frob(F):
    """Frobenius norm over the trailing two axes."""
    F = np.asarray(F, dtype=float)
    return np.sqrt(np.sum(F * F, axis=(-2, -1)))


@dataclass(frozen=True)
class GrowthSpec:
    """Two-sided p-growth bounds ``|xi|^p / beta - beta <= f <= beta (1 + |xi|^p)``."""

    p: float
    beta: float

    def __post_init__(self):
        if not (np.isfinite(self.p) and 1.0 < self.p < np.inf):
            raise ContractViolation(f"growth exponent must satisfy 1 < p < inf, got p={self.p}")
        if not (np.isfinite(self.beta) and self.beta > 0.0):
            raise ContractViolation(f"growth constant must satisfy beta > 0, got beta={self.beta}")

    def lower(self, norm):
        return np.asarray(norm, dtype=float) ** self.p / self.beta - self.beta

    def upper(self, norm):
        return self.beta * (1.0 + np.asarray(norm, dtype=float) ** self.p)

    def margins(self, value, norm):
        """Return (value - lower, upper - value); both must be >= 0."""
        value = np.asarray(value, dtype=float)
        return value - self.lower(norm), self.upper(norm) - value

    def contains(self, value, norm, rtol=1e-12):
        lo, hi = self.margins(value, norm)
        slack = rtol * (1.0 + np.abs(value))
        return bool(np.all(lo >= -slack) and np.all(hi >= -slack))


# ---------------------------------------------------------------------------
# coefficient fields


_VARIABLES = ("x", "y", "z")


class Coefficient:
    """Positive scalar field ``a(x, y, z)``; ``y`` and ``z`` arrive already wrapped."""

    def __call__(self, x, y, z):
        raise NotImplementedError

    def bounds(self):
        raise NotImplementedError

    def dependencies(self):
        """Set of ``(variable, axis)`` pairs the field actually reads."""
        raise NotImplementedError

    def to_json(self):
        raise NotImplementedError


def _batch_shape(x, y, z):
    return np.broadcast_shapes(x.shape[:-1], y.shape[:-1], z.shape[:-1])


def _pick(var, x, y, z):
    return {"x": x, "y": y, "z": z}[var]


def _check_var(var):
    if var not in _VARIABLES:
        raise ContractViolation(f"coefficient variable must be one of {_VARIABLES}, got {var!r}")


@dataclass(frozen=True)
class Constant(Coefficient):
    value: float = 1.0

    def __post_init__(self):
        if not self.value > 0:
            raise ContractViolation(f"constant coefficient must be positive, got {self.value}")

    def __call__(self, x, y, z):
        return np.full(_batch_shape(x, y, z), float(self.value))

    def bounds(self):
        return float(self.value), float(self.value)

    def dependencies(self):
        return frozenset()

    def to_json(self):
        return {"type": "constant", "value": self.value}


@dataclass(frozen=True)
class Laminate(Coefficient):
    """Layered field: phase ``values[k]`` on the k-th slab of ``variable[axis] mod 1``."""

    variable: str
    axis: int
    values: tuple
    fractions: tuple = None

    def __post_init__(self):
        _check_var(self.variable)
        values = tuple(float(v) for v in self.values)
        if not values or min(values) <= 0:
            raise ContractViolation("laminate values must be a nonempty list of positive numbers")
        fractions = self.fractions
        if fractions is None:
            fractions = (1.0 / len(values),) * len(values)
        fractions = tuple(float(t) for t in fractions)
        if len(fractions) != len(values) or min(fractions) <= 0 or abs(sum(fractions) - 1.0) > 1e-12:
            raise ContractViolation("laminate fractions must be positive, match values and sum to 1")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "fractions", fractions)
        if self.variable == "x":
            raise ContractViolation("laminate coefficients are periodic; use variable 'y' or 'z'")

    def __call__(self, x, y, z):
        t = _pick(self.variable, x, y, z)[..., self.axis]
        edges = np.cumsum(self.fractions)[:-1]
        idx = np.searchsorted(edges, t, side="right")
        out = np.asarray(self.values)[idx]
        return np.broadcast_to(out, _batch_shape(x, y, z)).copy()

    def bounds(self):
        return min(self.values), max(self.values)

    def dependencies(self):
        return frozenset({(self.variable, self.axis)})

    def to_json(self):
        return {"type": "laminate", "variable": self.variable, "axis": self.axis,
                "values": list(self.values), "fractions": list(self.fractions)}


@dataclass(frozen=True)
class Checkerboard(Coefficient):
    """Two-phase checkerboard on the half-cells of ``variable`` along ``axes``."""

    variable: str
    values: tuple
    axes: tuple = (0, 1)

    def __post_init__(self):
        _check_var(self.variable)
        if self.variable == "x":
            raise ContractViolation("checkerboard coefficients are periodic; use 'y' or 'z'")
        values = tuple(float(v) for v in self.values)
        if len(values) != 2 or min(values) <= 0:
            raise ContractViolation("checkerboard needs exactly two positive values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "axes", tuple(int(a) for a in self.axes))

    def __call__(self, x, y, z):
        t = _pick(self.variable, x, y, z)
        parity = sum(np.floor(2.0 * t[..., a]).astype(int) for a in self.axes) % 2
        out = np.asarray(self.values)[parity]
        return np.broadcast_to(out, _batch_shape(x, y, z)).copy()

    def bounds(self):
        return min(self.values), max(self.values)

    def dependencies(self):
        return frozenset((self.variable, a) for a in self.axes)

    def to_json(self):
        return {"type": "checkerboard", "variable": self.variable,
                "values": list(self.values), "axes": list(self.axes)}


@dataclass(frozen=True)
class Trigonometric(Coefficient):
    """``mean + amplitude * cos(2 pi k t)`` with ``t = variable[axis]``."""

    variable: str
    axis: int
    mean: float
    amplitude: float
    frequency: int = 1

    def __post_init__(self):
        _check_var(self.variable)
        if self.variable == "x":
            raise ContractViolation("trigonometric coefficients are periodic; use 'y' or 'z'")
        if not self.mean > abs(self.amplitude):
            raise ContractViolation("trigonometric coefficient needs mean > |amplitude|")
        if int(self.frequency) != self.frequency or self.frequency < 1:
            raise ContractViolation("frequency must be a positive integer (unit periodicity)")

    def __call__(self, x, y, z):
        t = _pick(self.variable, x, y, z)[..., self.axis]
        out = self.mean + self.amplitude * np.cos(2.0 * np.pi * self.frequency * t)
        return np.broadcast_to(out, _batch_shape(x, y, z)).copy()

    def bounds(self):
        return self.mean - abs(self.amplitude), self.mean + abs(self.amplitude)

    def dependencies(self):
        return frozenset({(self.variable, self.axis)})

    def to_json(self):
        return {"type": "trig", "variable": self.variable, "axis": self.axis,
                "mean": self.mean, "amplitude": self.amplitude, "frequency": self.frequency}


@dataclass(frozen=True)
class Product(Coefficient):
    """Separable field, e.g. ``alpha(y) * beta(z)``."""

    factors: tuple

    def __post_init__(self):
        if not self.factors:
            raise ContractViolation("product needs at least one factor")
        object.__setattr__(self, "factors", tuple(self.factors))

    def __call__(self, x, y, z):
        out = np.ones(_batch_shape(x, y, z))
        for c in self.factors:
            out = out * c(x, y, z)
        return out

    def bounds(self):
        lo = hi = 1.0
        for c in self.factors:
            a, b = c.bounds()
            lo, hi = lo * a, hi * b
        return lo, hi

    def dependencies(self):
        return frozenset().union(*(c.dependencies() for c in self.factors))

    def to_json(self):
        return {"type": "product", "factors": [c.to_json() for c in self.factors]}


@dataclass(frozen=True)
class AffineX(Coefficient):
    """Slowly varying ``c0 + c1 * x[axis]``; bounds assume ``x`` in the unit cube."""

    axis: int
    c0: float
    c1: float

    def __post_init__(self):
        if not (self.c0 > 0 and self.c0 + self.c1 > 0):
            raise ContractViolation("affine_x coefficient must stay positive on [0, 1]")

    def __call__(self, x, y, z):
        out = self.c0 + self.c1 * x[..., self.axis]
        return np.broadcast_to(out, _batch_shape(x, y, z)).copy()

    def bounds(self):
        ends = (self.c0, self.c0 + self.c1)
        return min(ends), max(ends)

    def dependencies(self):
        return frozenset({("x", self.axis)})

    def to_json(self):
        return {"type": "affine_x", "axis": self.axis, "c0": self.c0, "c1": self.c1}


@dataclass(frozen=True)
class StepX(Coefficient):
    """Piecewise-constant slow field: ``values[k]`` between ``edges[k-1]`` and ``edges[k]`` of ``x[axis]``.

    Used for layered plates, e.g. ``StepX(2, (0.0,), (1.0, 4.0))`` is a
    two-layer film through the thickness interval (-1, 1).
    """

    axis: int
    edges: tuple
    values: tuple

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        values = tuple(float(v) for v in self.values)
        if len(values) != len(edges) + 1 or not values or min(values) <= 0:
            raise ContractViolation("step_x needs len(edges) + 1 positive values")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ContractViolation("step_x edges must be strictly increasing")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "values", values)

    def __call__(self, x, y, z):
        idx = np.searchsorted(np.asarray(self.edges), x[..., self.axis], side="right")
        out = np.asarray(self.values)[idx]
        return np.broadcast_to(out, _batch_shape(x, y, z)).copy()

    def bounds(self):
        return min(self.values), max(self.values)

    def dependencies(self):
        return frozenset({("x", self.axis)})

    def to_json(self):
        return {"type": "step_x", "axis": self.axis, "edges": list(self.edges), "values": list(self.values)}


_COEFFICIENT_KEYS = {
    "constant": {"value"},
    "laminate": {"variable", "axis", "values", "fractions"},
    "checkerboard": {"variable", "values", "axes"},
    "trig": {"variable", "axis", "mean", "amplitude", "frequency"},
    "product": {"factors"},
    "affine_x": {"axis", "c0", "c1"},
    "step_x": {"axis", "edges", "values"},
}


def coefficient_from_json(desc):
    """Build a coefficient field from its JSON description (numbers mean constants)."""
    if isinstance(desc, Coefficient):
        return desc
    if isinstance(desc, (int, float)) and not isinstance(desc, bool):
        return Constant(float(desc))
    if not isinstance(desc, dict) or "type" not in desc:
        raise ContractViolation(f"coefficient description must be a number or an object with 'type': {desc!r}")
    kind = desc["type"]
    if kind not in _COEFFICIENT_KEYS:
        raise ContractViolation(f"unknown coefficient type {kind!r}")
    extra = set(desc) - _COEFFICIENT_KEYS[kind] - {"type"}
    if extra:
        raise ContractViolation(f"unknown keys for coefficient {kind!r}: {sorted(extra)}")
    args = {k: v for k, v in desc.items() if k != "type"}
    try:
        if kind == "constant":
            return Constant(float(args.get("value", 1.0)))
        if kind == "laminate":
            return Laminate(args["variable"], int(args.get("axis", 0)), tuple(args["values"]),
                            tuple(args["fractions"]) if "fractions" in args else None)
        if kind == "checkerboard":
            return Checkerboard(args["variable"], tuple(args["values"]), tuple(args.get("axes", (0, 1))))
        if kind == "trig":
            return Trigonometric(args["variable"], int(args.get("axis", 0)), float(args["mean"]),
                                 float(args["amplitude"]), int(args.get("frequency", 1)))
        if kind == "product":
            return Product(tuple(coefficient_from_json(c) for c in args["factors"]))
        if kind == "step_x":
            return StepX(int(args.get("axis", 0)), tuple(args["edges"]), tuple(args["values"]))
        return AffineX(int(args.get("axis", 0)), float(args["c0"]), float(args["c1"]))
    except KeyError as exc:
        raise ContractViolation(f"coefficient {kind!r} is missing key {exc}") from None


# ---------------------------------------------------------------------------
# base densities g(xi)


class QuadraticForm:
    """``g(F) = <C F, F>`` with ``C`` symmetric positive definite on flattened F."""

    convex = True
    exponent = 2.0
    has_tangent = True

    def __init__(self, matrix):
        C = np.asarray(matrix, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ContractViolation("quadratic form matrix must be square")
        if not np.allclose(C, C.T, rtol=0, atol=1e-12 * max(1.0, np.abs(C).max())):
            raise ContractViolation("quadratic form matrix must be symmetric")
        lam = np.linalg.eigvalsh(C)
        if lam[0] <= 0:
            raise ContractViolation("quadratic form matrix must be positive definite")
        self.matrix = 0.5 * (C + C.T)
        self.lam_min, self.lam_max = float(lam[0]), float(lam[-1])

    def value(self, F):
        m = self.matrix.shape[0]
        v = F.reshape(F.shape[:-2] + (m,))
        return np.einsum("...i,ij,...j->...", v, self.matrix, v)

    def grad(self, F):
        m = self.matrix.shape[0]
        v = F.reshape(F.shape[:-2] + (m,))
        return (2.0 * v @ self.matrix).reshape(F.shape)

    def hess(self, F):
        d, N = F.shape[-2:]
        H = (2.0 * self.matrix).reshape(d, N, d, N)
        return np.broadcast_to(H, F.shape[:-2] + H.shape)

    def beta(self, a_lo, a_hi):
        return max(a_hi * self.lam_max, 1.0 / (a_lo * self.lam_min))

    def to_json(self):
        return self.matrix.tolist()


class PNorm:
    """``g(F) = |F|^p``; an analytic tangent is provided only for p >= 2."""

    convex = True

    def __init__(self, p):
        if not 1.0 < p < np.inf:
            raise ContractViolation(f"p-norm exponent must satisfy 1 < p < inf, got {p}")
        self.exponent = float(p)
        self.has_tangent = self.exponent >= 2.0

    def value(self, F):
        return frob(F) ** self.exponent

    def grad(self, F):
        p = self.exponent
        r = frob(F)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(r > 0, p * r ** (p - 2.0), 0.0 if p > 2 else p)
        return s[..., None, None] * F

    def hess(self, F):
        p = self.exponent
        if p < 2.0:
            raise NotImplementedError("p-norm tangent is singular for p < 2")
        d, N = F.shape[-2:]
        r = frob(F)
        eye = np.eye(d * N).reshape(d, N, d, N)
        with np.errstate(divide="ignore", invalid="ignore"):
            s1 = np.where(r > 0, p * r ** (p - 2.0), 2.0 if p == 2 else 0.0)
            s2 = np.where(r > 0, p * (p - 2.0) * r ** (p - 4.0), 0.0)
        return (s1[..., None, None, None, None] * eye
                + s2[..., None, None, None, None] * np.einsum("...ij,...kl->...ijkl", F, F))

    def beta(self, a_lo, a_hi):
        return max(a_hi, 1.0 / a_lo)


class DoubleWell:
    """Nonconvex ``g(F) = (|F|^2 - 1)^2 + c |F|^2`` (``c = 0.1`` keeps it coercive)."""

    convex = False
    exponent = 4.0
    has_tangent = True

    def __init__(self, c=0.1):
        if not 0 <= c < 2:
            raise ContractViolation("double-well quadratic weight must lie in [0, 2)")
        self.c = float(c)

    def value(self, F):
        s = np.sum(F * F, axis=(-2, -1))
        return (s - 1.0) ** 2 + self.c * s

    def grad(self, F):
        s = np.sum(F * F, axis=(-2, -1))
        return (4.0 * (s - 1.0) + 2.0 * self.c)[..., None, None] * F

    def hess(self, F):
        d, N = F.shape[-2:]
        s = np.sum(F * F, axis=(-2, -1))
        eye = np.eye(d * N).reshape(d, N, d, N)
        return ((4.0 * (s - 1.0) + 2.0 * self.c)[..., None, None, None, None] * eye
                + 8.0 * np.einsum("...ij,...kl->...ijkl", F, F))

    def beta(self, a_lo, a_hi):
        # a*g <= a_hi (1 + s^2); and (1/beta) s^2 - beta <= a_lo g once 1/beta <= a_lo/2 and beta >= a_lo
        return max(2.0, a_hi, 2.0 / a_lo, a_lo)


# ---------------------------------------------------------------------------
# single-scale view used by the cell solvers


def fd_stress(energy, F, rel_step=FD_REL_STEP):
    """Central-difference derivative of ``energy(F)`` with respect to ``F``.

    The step is ``rel_step * (1 + |F|)`` per entry.
    """
    F = np.asarray(F, dtype=float)
    h = rel_step * (1.0 + frob(F))
    d, N = F.shape[-2:]
    cols = {}
    for i, j in itertools.product(range(d), range(N)):
        E = np.zeros((d, N))
        E[i, j] = 1.0
        step = h[..., None, None] * E
        cols[i, j] = (energy(F + step) - energy(F - step)) / (2.0 * h)
    shape = np.broadcast(*cols.values()).shape
    out = np.empty(shape + (d, N))
    for (i, j), col in cols.items():
        out[..., i, j] = col
    return out


class CellIntegrand:
    """A density ``g(t; F)`` of one periodic variable, as consumed by cell solvers.

    Subclasses set ``dim`` (number of cell coordinates), ``d`` (field
    components), ``convex``, ``growth`` and implement :meth:`energy`.
    """

    dim: int
    d: int
    convex: bool = True
    growth: GrowthSpec = None
    has_tangent = False
    is_quadratic = False

    def energy(self, pts, F):
        raise NotImplementedError

    def stress(self, pts, F):
        return fd_stress(lambda G: self.energy(pts, G), F)

    def tangent(self, pts, F):
        raise NotImplementedError(f"{type(self).__name__} has no analytic tangent")

    def tensor(self, pts):
        raise NotImplementedError(f"{type(self).__name__} is not quadratic")


class Integrand:
    """Multiscale density ``a(x, y, z) * g(xi)`` with unit periodicity in ``y`` and ``z``.

    Parameters
    ----------
    base : QuadraticForm, PNorm or DoubleWell
        The xi-dependence.
    coefficient : Coefficient
        Positive field multiplying the base density.
    d, N : int
        Shape of the gradient matrix ``xi``.
    dims : tuple of int
        Dimensions of ``(x, y, z)``.  Bulk integrands use ``(N, N, N)``; thin
        films use ``(3, 3, 2)``.
    growth : GrowthSpec, optional
        Declared bounds; derived from the coefficient range when omitted.
    convex : bool, optional
        Declared convexity in ``xi``; defaults to the base density's.
    """

    def __init__(self, base, coefficient, d, N, dims, growth=None, convex=None,
                 family=None, kind="bulk"):
        self.base = base
        self.coefficient = coefficient_from_json(coefficient)
        self.d, self.N = int(d), int(N)
        self.x_dim, self.y_dim, self.z_dim = (int(k) for k in dims)
        if self.d < 1 or self.N < 1:
            raise ContractViolation("integrand dimensions d and N must be positive")
        for var, axis in self.coefficient.dependencies():
            if axis >= {"x": self.x_dim, "y": self.y_dim, "z": self.z_dim}[var]:
                raise ContractViolation(f"coefficient reads {var}[{axis}] beyond the dimension of {var}")
        if isinstance(base, QuadraticForm) and base.matrix.shape[0] != self.d * self.N:
            raise ContractViolation("quadratic form matrix must be (d*N) x (d*N)")
        if growth is None:
            a_lo, a_hi = self.coefficient.bounds()
            growth = GrowthSpec(base.exponent, base.beta(a_lo, a_hi))
        self.growth = growth
        self.convex = base.convex if convex is None else bool(convex)
        self.family = family
        self.kind = kind

    # -- metadata -------------------------------------------------------

    @property
    def is_quadratic(self):
        return isinstance(self.base, QuadraticForm)

    @property
    def has_tangent(self):
        return self.base.has_tangent

    def dependencies(self):
        return self.coefficient.dependencies()

    def depends_on(self, var, axis=None):
        return any(v == var and (axis is None or a == axis) for v, a in self.dependencies())

    def to_json(self):
        params = {"N": self.N, "d": self.d, "coefficient": self.coefficient.to_json()}
        if isinstance(self.base, QuadraticForm):
            params["matrix"] = self.base.to_json()
        elif isinstance(self.base, PNorm):
            params["exponent"] = self.base.exponent
        elif isinstance(self.base, DoubleWell):
            params["weight"] = self.base.c
        return {"family": self.family, "kind": self.kind, "params": params,
                "p": self.growth.p, "beta": self.growth.beta, "convex": self.convex}

    # -- evaluation -----------------------------------------------------

    def _coords(self, x, y, z):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        for name, arr, n in (("x", x, self.x_dim), ("y", y, self.y_dim), ("z", z, self.z_dim)):
            if arr.ndim == 0 or arr.shape[-1] != n:
                raise ContractViolation(f"{name} must have trailing dimension {n}, got shape {arr.shape}")
        return x, wrap_unit(y), wrap_unit(z)

    def _xi(self, F):
        F = np.asarray(F, dtype=float)
        if F.ndim < 2 or F.shape[-2:] != (self.d, self.N):
            raise ContractViolation(f"xi must have shape (..., {self.d}, {self.N}), got {F.shape}")
        return F

    def coefficient_at(self, x, y, z):
        return self.coefficient(*self._coords(x, y, z))

    def energy(self, x, y, z, F):
        F = self._xi(F)
        out = self.coefficient_at(x, y, z) * self.base.value(F)
        if not np.all(np.isfinite(out)):
            _raise_nonfinite(out, x, y, z, F)
        return out

    def stress(self, x, y, z, F):
        F = self._xi(F)
        a = self.coefficient_at(x, y, z)
        return a[..., None, None] * self.base.grad(F)

    def tangent(self, x, y, z, F):
        F = self._xi(F)
        a = self.coefficient_at(x, y, z)
        return a[..., None, None, None, None] * self.base.hess(F)

    def tensor(self, x, y, z):
        """Coefficient tensor ``A`` with ``f = <A xi, xi>`` (quadratic family only)."""
        if not self.is_quadratic:
            raise ContractViolation("tensor() is only defined for quadratic integrands")
        a = self.coefficient_at(x, y, z)
        C = self.base.matrix.reshape(self.d, self.N, self.d, self.N)
        return a[..., None, None, None, None] * C

    def frozen(self, x, y):
        """Single-scale density ``z -> f(x, y, z; .)`` (bulk integrands)."""
        return FrozenIntegrand(self, x, y)


def _raise_nonfinite(out, x, y, z, F):
    out = np.asarray(out)
    idx = np.unravel_index(int(np.argmax(~np.isfinite(out))), out.shape)

    def at(a, nd=1):
        a = np.asarray(a, dtype=float)
        return np.broadcast_to(a, out.shape + a.shape[a.ndim - nd:])[idx].tolist()

    point = {"x": at(x), "y": at(y), "z": at(z), "xi": at(F, 2)}
    raise IntegrandError(f"integrand returned a non-finite value at {point}", point=point)


class MultiscaleIntegrand(Integrand):
    """Bulk integrand ``f(x, y, z; xi)`` with ``x, y, z`` in R^N and ``xi`` in R^{d x N}."""

    def __init__(self, base, coefficient, d, N, growth=None, convex=None, family=None):
        super().__init__(base, coefficient, d, N, (N, N, N), growth=growth,
                         convex=convex, family=family, kind="bulk")


class FilmIntegrand(Integrand):
    """Thin-film integrand ``W(x, y, z_alpha; xi)``.

    ``x`` is a point of the rescaled plate (x_alpha, x_3), ``y = (y_alpha, y_3)``
    and ``z_alpha`` are the fast variables, ``xi`` is 3x3.  Periodicity is unit
    in ``y_alpha`` and in ``(z_alpha, y_3)``.
    """

    def __init__(self, base, coefficient, growth=None, convex=None, family=None):
        super().__init__(base, coefficient, 3, 3, (3, 3, 2), growth=growth,
                         convex=convex, family=family, kind="film")


class CallableIntegrand(Integrand):
    """Integrand from a user function ``energy(x, y, z, xi)`` (vectorized).

    Coordinates are passed through unwrapped: periodicity is the caller's
    contract and :func:`validate_hypotheses` checks it.  The stress falls
    back to central differences when ``stress`` is None.
    No coefficient structure is assumed, so every variable is treated as a
    dependency.
    """

    def __init__(self, energy, d, N, dims, growth, convex=True, stress=None, kind="bulk"):
        self._energy_fn = energy
        self._stress_fn = stress
        self.base = None
        self.coefficient = None
        self.d, self.N = int(d), int(N)
        self.x_dim, self.y_dim, self.z_dim = (int(k) for k in dims)
        self.growth = growth
        self.convex = bool(convex)
        self.family = "callable"
        self.kind = kind

    is_quadratic = False
    has_tangent = False

    def dependencies(self):
        return frozenset([("x", a) for a in range(self.x_dim)]
                         + [("y", a) for a in range(self.y_dim)]
                         + [("z", a) for a in range(self.z_dim)])

    def _raw(self, x, y, z):
        # user functions see unwrapped coordinates, so periodicity stays checkable
        self._coords(x, y, z)
        return tuple(np.asarray(v, dtype=float) for v in (x, y, z))

    def energy(self, x, y, z, F):
        F = self._xi(F)
        x, y, z = self._raw(x, y, z)
        out = np.asarray(self._energy_fn(x, y, z, F), dtype=float)
        if not np.all(np.isfinite(out)):
            _raise_nonfinite(out, x, y, z, F)
        return out

    def stress(self, x, y, z, F):
        F = self._xi(F)
        if self._stress_fn is not None:
            x, y, z = self._raw(x, y, z)
            return np.asarray(self._stress_fn(x, y, z, F), dtype=float)
        return fd_stress(lambda G: self.energy(x, y, z, G), F)

    def tangent(self, x, y, z, F):
        raise NotImplementedError("callable integrands have no analytic tangent")

    def to_json(self):
        raise ContractViolation("callable integrands have no JSON description")


class FrozenIntegrand(CellIntegrand):
    """``z -> f(x, y, z; .)`` with the slow variables held fixed."""

    def __init__(self, f, x, y):
        self.f = f
        self.x = np.asarray(x, dtype=float).reshape(f.x_dim)
        self.y = np.asarray(y, dtype=float).reshape(f.y_dim)
        self.dim = f.z_dim
        self.d = f.d
        if f.N != self.dim:
            raise ContractViolation("frozen cell integrand needs z in R^N")
        self.convex = f.convex
        self.growth = f.growth
        self.has_tangent = f.has_tangent
        self.is_quadratic = f.is_quadratic

    @property
    def zero_point(self):
        return np.zeros(self.dim)

    def energy(self, pts, F):
        return self.f.energy(self.x, self.y, pts, F)

    def stress(self, pts, F):
        return self.f.stress(self.x, self.y, pts, F)

    def tangent(self, pts, F):
        return self.f.tangent(self.x, self.y, pts, F)

    def tensor(self, pts):
        return self.f.tensor(self.x, self.y, pts)


# ---------------------------------------------------------------------------
# constructors


def _film_or_bulk(base, coefficient, d, N, kind, growth, convex, family):
    if kind == "film":
        if (d, N) not in ((3, 3), (None, None)):
            raise ContractViolation("film integrands have d = N = 3")
        return FilmIntegrand(base, coefficient, growth=growth, convex=convex, family=family)
    if kind != "bulk":
        raise ContractViolation(f"integrand kind must be 'bulk' or 'film', got {kind!r}")
    return MultiscaleIntegrand(base, coefficient, d, N, growth=growth, convex=convex, family=family)


def _growth(p, beta, default_p):
    if p is None and beta is None:
        return None
    if beta is None:
        raise ContractViolation("'beta' is required when 'p' is given")
    return GrowthSpec(float(default_p if p is None else p), float(beta))


def quadratic(N=1, d=1, coefficient=1.0, matrix=None, kind="bulk", p=None, beta=None, convex=None):
    """``a(x, y, z) <C xi, xi>``; ``C`` defaults to the identity (so ``a |xi|^2``)."""
    if kind == "film":
        N = d = 3
    C = np.eye(d * N) if matrix is None else matrix
    return _film_or_bulk(QuadraticForm(C), coefficient, d, N, kind, _growth(p, beta, 2.0),
                         convex, "quadratic")


def pnorm(exponent=2.0, N=1, d=1, coefficient=1.0, kind="bulk", p=None, beta=None, convex=None):
    """``a(x, y, z) |xi|^exponent``."""
    if kind == "film":
        N = d = 3
    return _film_or_bulk(PNorm(float(exponent)), coefficient, d, N, kind,
                         _growth(p, beta, exponent), convex, "pnorm")


def double_well(N=1, d=1, coefficient=1.0, weight=0.1, kind="bulk", p=None, beta=None, convex=None):
    """``a(x, y, z) ((|xi|^2 - 1)^2 + weight |xi|^2)`` (nonconvex, 4-growth)."""
    if kind == "film":
        N = d = 3
    return _film_or_bulk(DoubleWell(weight), coefficient, d, N, kind, _growth(p, beta, 4.0),
                         convex, "double_well")


_FAMILIES = {
    "quadratic": (quadratic, {"N", "d", "coefficient", "matrix"}),
    "pnorm": (pnorm, {"N", "d", "coefficient", "exponent"}),
    "double_well": (double_well, {"N", "d", "coefficient", "weight"}),
}
_TOP_KEYS = {"family", "kind", "params", "p", "beta", "convex"}


def from_json(desc):
    """Build an integrand from ``{"family", "params", "p", "beta", ...}``.

    Families and their ``params``:

    ``quadratic``   N, d, coefficient, matrix (optional (dN)x(dN) SPD)
    ``pnorm``       N, d, coefficient, exponent
    ``double_well`` N, d, coefficient, weight (default 0.1)

    ``kind`` is ``"bulk"`` (default) or ``"film"``; film integrands ignore N, d.
    ``p``/``beta`` override the derived growth bounds; ``convex`` overrides
    the declared convexity.
    """
    if not isinstance(desc, dict):
        raise ContractViolation("integrand description must be a JSON object")
    extra = set(desc) - _TOP_KEYS
    if extra:
        raise ContractViolation(f"unknown integrand keys: {sorted(extra)}")
    family = desc.get("family")
    if family not in _FAMILIES:
        raise ContractViolation(f"unknown integrand family {family!r}; expected one of {sorted(_FAMILIES)}")
    build, allowed = _FAMILIES[family]
    params = dict(desc.get("params", {}))
    extra = set(params) - allowed
    if extra:
        raise ContractViolation(f"unknown params for family {family!r}: {sorted(extra)}")
    if "beta" in desc and not (isinstance(desc["beta"], (int, float)) and desc["beta"] > 0):
        raise ContractViolation(f"growth constant must satisfy beta > 0, got beta={desc['beta']}")
    return build(kind=desc.get("kind", "bulk"), p=desc.get("p"), beta=desc.get("beta"),
                 convex=desc.get("convex"), **params)


# ---------------------------------------------------------------------------
# pointwise API and hypothesis checks


def _as_point(f, x, y, z, xi):
    x, y, z = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (x, y, z))
    xi = np.asarray(xi, dtype=float)
    if xi.ndim < 2 and f.d * f.N == xi.size:
        xi = xi.reshape(f.d, f.N)
    for name, arr, n in (("x", x, f.x_dim), ("y", y, f.y_dim), ("z", z, f.z_dim)):
        if arr.shape != (n,):
            raise ContractViolation(f"{name} must have dimension {n}, got shape {arr.shape}")
    if xi.shape != (f.d, f.N):
        raise ContractViolation(f"xi must have shape ({f.d}, {f.N}), got {xi.shape}")
    return x, y, z, xi


def eval_integrand(f, x, y, z, xi):
    """Evaluate ``f(x, wrap(y), wrap(z); xi)`` at a single point."""
    x, y, z, xi = _as_point(f, x, y, z, xi)
    return float(f.energy(x, y, z, xi))


def eval_stress(f, x, y, z, xi):
    """``d f / d xi`` at a single point, as a ``d x N`` array."""
    x, y, z, xi = _as_point(f, x, y, z, xi)
    out = np.asarray(f.stress(x, y, z, xi), dtype=float).reshape(f.d, f.N)
    if not np.all(np.isfinite(out)):
        raise IntegrandError("stress is not finite", point={"x": x.tolist(), "y": y.tolist(),
                                                            "z": z.tolist(), "xi": xi.tolist()})
    return out


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    sample: dict = field(default_factory=dict)


@dataclass
class HypothesisReport:
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def rows(self):
        return [{"check": c.name, "passed": c.passed, "worst": c.worst} for c in self.checks]


def _sample_xi(rng, m, d, N, rmin=1e-2, rmax=1e2):
    G = rng.standard_normal((m, d, N))
    G /= frob(G)[:, None, None]
    r = np.exp(rng.uniform(math.log(rmin), math.log(rmax), m))
    r[0] = 0.0
    return G * r[:, None, None]


def validate_hypotheses(f, sample_count=200, seed=0, stress_tol=1e-4, periodicity_tol=1e-12):
    """Sample the periodicity, growth, stress and (declared) convexity contracts.

    Periodicity is compared relative to ``1 + |f|`` (built-in integrands wrap
    their fast coordinates and agree bit for bit).

    Returns a :class:`HypothesisReport` with one check per contract and the
    worst offending sample of each.  Nothing is raised: the caller decides.
    """
    if sample_count < 1:
        raise ContractViolation("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    m = int(sample_count)
    x = rng.uniform(0.0, 1.0, (m, f.x_dim))
    y = rng.uniform(-2.0, 3.0, (m, f.y_dim))
    z = rng.uniform(-2.0, 3.0, (m, f.z_dim))
    xi = _sample_xi(rng, m, f.d, f.N)
    checks = []

    k = rng.integers(-3, 4, (m, f.y_dim)).astype(float)
    j = rng.integers(-3, 4, (m, f.z_dim)).astype(float)
    base = f.energy(x, y, z, xi)
    shifted = f.energy(x, y + k, z + j, xi)
    res = np.abs(shifted - base) / (1.0 + np.abs(base))
    i = int(np.argmax(res))
    checks.append(CheckResult("periodicity", bool(res[i] <= periodicity_tol), float(res[i]),
                              {"y": y[i].tolist(), "z": z[i].tolist(), "shift_y": k[i].tolist(),
                               "shift_z": j[i].tolist()}))

    norm = frob(xi)
    lo, hi = f.growth.margins(base, norm)
    for name, margin in (("growth_lower", lo), ("growth_upper", hi)):
        slack = 1e-12 * (1.0 + np.abs(base))
        i = int(np.argmin(margin + slack))
        checks.append(CheckResult(name, bool(margin[i] >= -slack[i]), float(margin[i]),
                                  {"xi": xi[i].tolist(), "value": float(base[i])}))

    xs = _sample_xi(rng, m, f.d, f.N, rmin=1e-2, rmax=10.0)
    S = f.stress(x, y, z, xs)
    h = 1e-5 * (1.0 + frob(xs))
    fd = np.empty_like(S)
    for a, b in itertools.product(range(f.d), range(f.N)):
        E = np.zeros((f.d, f.N))
        E[a, b] = 1.0
        step = h[:, None, None] * E
        fd[:, a, b] = (f.energy(x, y, z, xs + step) - f.energy(x, y, z, xs - step)) / (2.0 * h)
    err = frob(S - fd) / np.maximum(frob(S), 1e-6)
    i = int(np.argmax(err))
    checks.append(CheckResult("stress_consistency", bool(err[i] <= stress_tol), float(err[i]),
                              {"xi": xs[i].tolist()}))

    if f.convex:
        A = _sample_xi(rng, m, f.d, f.N, rmax=10.0)
        B = _sample_xi(rng, m, f.d, f.N, rmax=10.0)
        e1 = np.zeros((f.d, f.N))
        e1[0, 0] = 1.0
        A[0], B[0] = e1, -e1
        fa, fb = f.energy(x, y, z, A), f.energy(x, y, z, B)
        fm = f.energy(x, y, z, 0.5 * (A + B))
        res = fm - 0.5 * (fa + fb)
        slack = 1e-12 * (1.0 + np.abs(fa) + np.abs(fb))
        i = int(np.argmax(res - slack))
        checks.append(CheckResult("midpoint_convexity", bool(np.all(res <= slack)), float(res[i]),
                                  {"a": A[i].tolist(), "b": B[i].tolist()}))
    return HypothesisReport(checks)
