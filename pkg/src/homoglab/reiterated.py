"""Two-level (reiterated) homogenization of bulk integrands.

``f_hom(x, y; xi)`` homogenizes ``f`` in the fastest variable ``z`` with
``(x, y)`` frozen; ``fbar_hom(x; xi)`` then homogenizes ``f_hom`` in ``y``.

Two evaluation paths are provided:

``quadratic``
    For ``f = <A(x, y, z) xi, xi>`` the inner density is the quadratic form of
    the corrector tensor ``A_hom(x, y)``; the outer problem is again
    quadratic.  Exact up to the discretization.
``nested``
    The outer cell solver sees an integrand whose value at ``(y, eta)`` is an
    inner cell solve.  Inner solves are memoized, the outer gradient is the
    inner average stress, and the outer Newton tangent is the linearized
    inner tangent.
"""
from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cell import (DensityEstimate, EffectiveTensor, SolverConfig, effective_tangent,
                   quadratic_corrector_tensor, standard_basis, t_extrapolate)
from .errors import BudgetExhausted, ContractViolation, HomoglabError, SolverError
from .grid import CellGrid
from .integrand import CellIntegrand, Integrand, frob, wrap_unit

__all__ = [
    "CellConfig", "NestedConfig", "ReiterationConfig", "InnerDensityCache", "DensityEstimate",
    "inner_density", "outer_density", "reiterated_tensor", "density_sweep", "SweepRow",
    "laminate_oracle",
]


@dataclass
class CellConfig:
    """Resolution and boundary treatment of one cell level.

    ``bc`` and ``T_list`` default by convexity: convex integrands use one
    periodic cell, nonconvex ones a Dirichlet chain ``T = 1, 2, 4``.
    """

    n: int = 16
    T_list: tuple = None
    bc: str = None

    def resolve(self, convex):
        bc = self.bc or ("periodic_mean_zero" if convex else "dirichlet_zero")
        T_list = tuple(self.T_list) if self.T_list else ((1,) if bc == "periodic_mean_zero" else (1, 2, 4))
        return bc, T_list

    def template(self, N, convex):
        bc, T_list = self.resolve(convex)
        return CellGrid(N, T_list[0], self.n, bc), T_list


@dataclass
class NestedConfig:
    """Settings shared by the two-level drivers.

    ``path`` is ``"auto"`` (quadratic fast path for quadratic integrands),
    ``"quadratic"`` or ``"nested"``.  ``quantization`` is the relative step
    used to round ``xi`` in cache keys (``0`` keys on the exact bits).
    ``max_inner_solves`` bounds the inner cell solves of one evaluation.
    """

    path: str = "auto"
    solver: SolverConfig = field(default_factory=SolverConfig)
    max_inner_solves: int = 200_000
    quantization: float = 0.0
    threads: int = 1

    def __post_init__(self):
        if self.path not in ("auto", "quadratic", "nested"):
            raise ContractViolation(f"unknown evaluation path {self.path!r}")
        if self.quantization < 0:
            raise ContractViolation("quantization step must be >= 0")
        if int(self.threads) != self.threads or self.threads < 1:
            raise ContractViolation("threads must be a positive integer")

    def resolve_path(self, f):
        if self.path == "auto":
            return "quadratic" if f.is_quadratic else "nested"
        if self.path == "quadratic" and not f.is_quadratic:
            raise ContractViolation("the quadratic path needs a quadratic integrand")
        return self.path


@dataclass
class ReiterationConfig(NestedConfig):
    """:class:`NestedConfig` plus the inner (z) and outer (y) cell settings."""

    inner: CellConfig = field(default_factory=CellConfig)
    outer: CellConfig = field(default_factory=CellConfig)


class InnerDensityCache:
    """Memo of inner results; concurrent readers, first writer wins."""

    def __init__(self, quantization=0.0):
        self.quantization = float(quantization)
        self._data = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def xi_key(self, xi):
        xi = np.asarray(xi, dtype=float)
        if self.quantization == 0.0:
            return xi.tobytes()
        step = self.quantization * (1.0 + float(np.linalg.norm(xi)))
        return tuple(np.round(xi.ravel() / step).astype(np.int64).tolist())

    def get(self, key):
        with self._lock:
            out = self._data.get(key)
            if out is not None:
                self.hits += 1
            return out

    def put(self, key, value):
        with self._lock:
            if key in self._data:
                return self._data[key]
            self.misses += 1
            self._data[key] = value
            return value

    def __len__(self):
        return len(self._data)


def _slow_key(f, var, point, frame):
    """Hashable key built from the coordinates of ``point`` that ``f`` reads."""
    point = np.asarray(point, dtype=float)
    axes = sorted(a for v, a in f.dependencies() if v == var)
    vals = point[axes] if axes else np.zeros(0)
    if frame == "periodic":
        vals = np.round(wrap_unit(vals) * 2.0 ** 32).astype(np.int64)
    return (var, tuple(axes), vals.tobytes())


@dataclass
class _InnerResult:
    value: float
    stress: np.ndarray
    tangent: np.ndarray = None


class _InnerEvaluator:
    """Memoized inner densities at slow points.

    Subclasses say how a slow point freezes the integrand into a cell
    integrand (:meth:`frozen`), which coordinates enter the cache key
    (:meth:`point_key`) and which grid the inner cell uses (:meth:`template`).
    ``trivial`` marks convex integrands without fast oscillation, whose
    inner density is the integrand itself.
    """

    trivial = False

    def __init__(self, f, config, cache=None):
        self.f = f
        self.config = config
        self.path = config.resolve_path(f)
        self.cache = cache if cache is not None else InnerDensityCache(config.quantization)
        self.solves = 0
        self._lock = threading.Lock()

    def frozen(self, pt):
        raise NotImplementedError

    def point_key(self, pt):
        raise NotImplementedError

    def template(self, convex):
        raise NotImplementedError

    def _reserve(self, k):
        with self._lock:
            if self.solves + k > self.config.max_inner_solves:
                raise BudgetExhausted(f"inner solve budget of {self.config.max_inner_solves} exhausted")
            self.solves += k

    def _shape(self):
        return self.f.d, self.f.N

    def tensor(self, pt):
        key = ("tensor", self.point_key(pt))
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        g = self.frozen(pt)
        if self.trivial:
            A = np.asarray(g.tensor(np.zeros((1, len(g.zero_point)))))[0]
            d, N = self._shape()
            E = EffectiveTensor(matrix=A.reshape(d * N, d * N), basis=standard_basis(d, N))
        else:
            self._reserve(1)
            grid, _ = self.template(True)
            E = quadratic_corrector_tensor(g, grid, self.config.solver)
        return self.cache.put(key, E)

    def _solve(self, g, xi, want_tangent):
        grid, T_list = self.template(self.f.convex)
        self._reserve(len(T_list))
        est = t_extrapolate(g, xi, T_list, grid, self.config.solver)
        tangent = None
        if want_tangent and self.f.convex and self.f.has_tangent:
            tangent = effective_tangent(g, est.solution, self.config.solver)
        return _InnerResult(est.value, est.stress, tangent)

    def at(self, pt, xi, want_tangent=False):
        d, N = self._shape()
        xi = np.asarray(xi, dtype=float).reshape(d, N)
        if self.path == "quadratic":
            E = self.tensor(pt)
            A = E.matrix.reshape(d, N, d, N)
            return _InnerResult(E.energy(xi), E.stress(xi), 2.0 * A)
        key = ("nested", self.point_key(pt), self.cache.xi_key(xi))
        hit = self.cache.get(key)
        if hit is not None and (hit.tangent is not None or not want_tangent):
            return hit
        g = self.frozen(pt)
        if self.trivial:
            z0 = g.zero_point[None]
            tangent = g.tangent(z0, xi[None])[0] if self.f.has_tangent else None
            res = _InnerResult(float(g.energy(z0, xi[None])[0]), np.asarray(g.stress(z0, xi[None])[0]), tangent)
            return self.cache.put(key, res) if hit is None else res
        try:
            res = self._solve(g, xi, want_tangent)
        except SolverError as exc:
            if isinstance(exc, BudgetExhausted):
                raise
            raise SolverError(f"inner solve failed at slow point {np.asarray(pt).tolist()}, "
                              f"xi={xi.tolist()}: {exc}", residual=exc.residual) from exc
        if hit is not None:
            hit.tangent = res.tangent
            return hit
        stored = self.cache.put(key, res)
        if stored.tangent is None and res.tangent is not None:
            stored.tangent = res.tangent
        return stored


class _BulkInner(_InnerEvaluator):
    """Inner densities ``y -> f_hom(x, y; .)`` of a bulk integrand at fixed ``x``."""

    def __init__(self, f, x, config, cache=None):
        if not isinstance(f, Integrand) or f.kind != "bulk":
            raise ContractViolation("reiterated homogenization needs a bulk MultiscaleIntegrand")
        super().__init__(f, config, cache)
        self.x = np.asarray(x, dtype=float).reshape(f.x_dim)
        self.x_key = _slow_key(f, "x", self.x, "absolute")
        self.trivial = f.convex and not f.depends_on("z")

    def frozen(self, pt):
        return self.f.frozen(self.x, pt)

    def point_key(self, pt):
        return self.x_key, _slow_key(self.f, "y", pt, "periodic")

    def template(self, convex):
        return self.config.inner.template(self.f.N, convex)


def inner_density(f, x, y, xi, config=None, cache=None):
    """``f_hom(x, y; xi)`` and its derivative in ``xi``.

    Returns ``(value, stress)``; ``stress`` is the average stress of the inner
    corrector (or ``2 A_hom xi`` on the quadratic path).
    """
    config = config or ReiterationConfig()
    ev = _BulkInner(f, x, config, cache)
    r = ev.at(np.asarray(y, dtype=float).reshape(f.y_dim), xi)
    return float(r.value), np.asarray(r.stress).reshape(f.d, f.N)


class _OuterIntegrand(CellIntegrand):
    """``(y, eta) -> f_hom(x, y; eta)`` seen as a cell integrand in ``y``."""

    def __init__(self, ev):
        f = ev.f
        self.ev = ev
        self.dim, self.d = f.N, f.d
        self.convex = f.convex
        self.growth = f.growth
        self.is_quadratic = ev.path == "quadratic"
        self.has_tangent = self.is_quadratic or (f.convex and f.has_tangent)
        self._pool = ThreadPoolExecutor(ev.config.threads) if ev.config.threads > 1 else None

    def _rows(self, pts, F, want_tangent=False):
        F = np.broadcast_to(F, (len(pts),) + F.shape[-2:])
        args = [(pts[m], F[m], want_tangent) for m in range(len(pts))]
        if self._pool is None:
            return [self.ev.at(*a) for a in args]
        return list(self._pool.map(lambda a: self.ev.at(*a), args))

    def energy(self, pts, F):
        return np.array([r.value for r in self._rows(pts, F)])

    def stress(self, pts, F):
        return np.stack([np.asarray(r.stress).reshape(self.d, self.dim) for r in self._rows(pts, F)])

    def tangent(self, pts, F):
        return np.stack([r.tangent for r in self._rows(pts, F, want_tangent=True)])

    def tensor(self, pts):
        f = self.ev.f
        return np.stack([self.ev.tensor(p).matrix.reshape(f.d, f.N, f.d, f.N) for p in pts])

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()


def outer_density(f, x, xi, config=None, cache=None):
    """Reiterated density ``fbar_hom(x; xi)`` as a :class:`DensityEstimate`.

    The outer integrand is sampled at the outer quadrature points only.
    When the inner-solve budget runs out the best value seen is returned with
    ``converged=False``.
    """
    config = config or ReiterationConfig()
    ev = _BulkInner(f, x, config, cache)
    xi = np.asarray(xi, dtype=float).reshape(f.d, f.N)
    g = _OuterIntegrand(ev)
    grid, T_list = config.outer.template(f.N, f.convex)
    try:
        est = t_extrapolate(g, xi, T_list, grid, config.solver)
    except BudgetExhausted as exc:
        est = DensityEstimate(value=np.nan if exc.best_value is None else exc.best_value,
                              converged=False, errors=[str(exc)])
    finally:
        g.close()
    est.inner_solve_count = ev.solves
    est.cache_hits = ev.cache.hits
    est.upper_bound_only = not f.convex
    est.growth_ok = bool(np.isnan(est.value) or f.growth.contains(est.value, frob(xi)))
    return est


def reiterated_tensor(f, x=None, config=None):
    """Quadratic fast path: homogenize ``A(x, y, z)`` in ``z``, then in ``y``.

    Returns the outer :class:`EffectiveTensor`; its ``matrix`` is the flattened
    ``(dN) x (dN)`` form of ``Abar_hom(x)``.
    """
    config = config or ReiterationConfig()
    if not f.is_quadratic:
        raise ContractViolation("reiterated_tensor needs a quadratic integrand")
    x = np.zeros(f.x_dim) if x is None else x
    ev = _BulkInner(f, x, config)
    ev.path = "quadratic"
    g = _OuterIntegrand(ev)
    grid, _ = config.outer.template(f.N, True)
    return quadratic_corrector_tensor(g, grid, config.solver)


@dataclass
class SweepRow:
    index: int
    xi: np.ndarray
    value: float
    converged: bool
    upper_bound_only: bool
    error: str = ""


def density_sweep(f, x, xi_list, config=None):
    """Tabulate ``fbar_hom(x; xi)`` over ``xi_list``; rows keep input order.

    A failing row is recorded with its error message and the sweep goes on.
    """
    config = config or ReiterationConfig()
    xi_list = list(xi_list)
    if not xi_list:
        raise ContractViolation("xi_list must be nonempty")
    cache = InnerDensityCache(config.quantization)

    def row(item):
        k, xi = item
        xi = np.asarray(xi, dtype=float).reshape(f.d, f.N)
        try:
            est = outer_density(f, x, xi, config, cache)
            return SweepRow(k, xi, est.value, est.converged, est.upper_bound_only,
                            "; ".join(est.errors))
        except HomoglabError as exc:
            return SweepRow(k, xi, np.nan, False, not f.convex, str(exc))

    items = list(enumerate(xi_list))
    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            return list(pool.map(row, items))
    return [row(it) for it in items]


def _harmonic(phases, p):
    q = 1.0 / (p - 1.0)
    return sum(t * a ** (-q) for t, a in phases) ** (-(p - 1.0))


def _check_phases(phases):
    phases = [(float(t), float(a)) for t, a in phases]
    if not phases:
        raise ContractViolation("phases must be nonempty")
    if any(t <= 0 for t, _ in phases) or abs(sum(t for t, _ in phases) - 1.0) > 1e-12:
        raise ContractViolation("volume fractions must be positive and sum to 1")
    if any(a <= 0 for _, a in phases):
        raise ContractViolation("phase coefficients must be positive")
    return phases


def laminate_oracle(phases, mode="harmonic", inner=None, p=2.0):
    """Closed-form effective coefficient of a 1D laminate.

    ``phases`` is a list of ``(volume fraction, coefficient)``.  For energies
    ``a |u'|^p`` the harmonic mode is ``(sum t a^{-1/(p-1)})^{-(p-1)}``, which
    is the usual harmonic mean for ``p = 2``.  ``iterated`` multiplies the
    harmonic means of ``phases`` (outer) and ``inner`` (separable two-scale
    laminate ``alpha(y) beta(z)``).

    >>> laminate_oracle([(0.5, 1.0), (0.5, 4.0)])
    1.6
    """
    phases = _check_phases(phases)
    if not p > 1:
        raise ContractViolation("p must exceed 1")
    if mode == "harmonic":
        return _harmonic(phases, p)
    if mode == "arithmetic":
        return sum(t * a for t, a in phases)
    if mode == "iterated":
        inner = _check_phases(inner) if inner is not None else [(1.0, 1.0)]
        return _harmonic(phases, p) * _harmonic(inner, p)
    raise ContractViolation(f"unknown laminate mode {mode!r}")
