"""Thin-film effective densities.

A film integrand ``W(x, y, z_a; xi)`` lives on the rescaled plate
``omega x (-1, 1)`` with fast variables ``y = (y_a, y_3)`` and ``z_a``.
Two cell problems produce the membrane energy:

``W_hom(x, y_a; xi)``
    a 3D cell over ``z in (0, T)^3`` of ``W(x, (y_a, z_3), z_a; xi + grad phi)``
    (the thickness-fast variable ``y_3`` is sampled by ``z_3``);
``Wbar_hom(x_a; xi_bar)``
    a cell over ``(0, T)^2 x (-1, 1)`` of
    ``W_hom((x_a, t_3), (t_1, t_2); (xi_bar + grad_a phi | grad_3 phi))``,
    normalized by the cell measure ``2 T^2``, with ``phi`` pinned on the
    lateral faces and free on top and bottom.

The limit membrane functional is ``2 * integral over omega of Wbar_hom``;
the factor 2 (thickness measure) is not part of the density.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cell import (DensityEstimate, EffectiveTensor, quadratic_corrector_tensor, standard_basis,
                   t_extrapolate)
from .errors import BudgetExhausted, ContractViolation
from .grid import CellGrid, CorrectorField, FilmGrid, TransverseGrid
from .integrand import CellIntegrand, Integrand, frob
from .reiterated import (CellConfig, InnerDensityCache, NestedConfig, _InnerEvaluator,
                         _OuterIntegrand, _slow_key)

__all__ = [
    "MembraneConfig", "FilmConfig", "MembraneEstimate", "film_inner_density",
    "film_inner_tensor", "membrane_density", "schur_membrane_oracle", "schur_complement",
    "corollary_single_scale", "in_plane_basis",
]


@dataclass
class MembraneConfig:
    """Membrane cell ``(0, T)^2 x (-1, 1)``: ``n`` cells per unit in-plane, ``n3`` through the thickness.

    ``bc`` defaults to ``lateral_periodic`` with ``T = 1`` for convex
    integrands and to ``lateral_dirichlet`` with ``T = 1, 2`` otherwise.
    """

    n: int = 8
    n3: int = None
    T_list: tuple = None
    bc: str = None

    def template(self, convex):
        bc = self.bc or ("lateral_periodic" if convex else "lateral_dirichlet")
        T_list = tuple(self.T_list) if self.T_list else ((1,) if bc == "lateral_periodic" else (1, 2))
        return FilmGrid(T_list[0], self.n, self.n3, bc), T_list


@dataclass
class FilmConfig(NestedConfig):
    """:class:`NestedConfig` plus the inner 3D cell and the membrane cell settings."""

    inner: CellConfig = field(default_factory=lambda: CellConfig(n=8))
    membrane: MembraneConfig = field(default_factory=MembraneConfig)


@dataclass
class MembraneEstimate(DensityEstimate):
    """``Wbar_hom(x_a; xi_bar)`` with its history; ``stress`` is the 3x2 derivative."""

    xi_bar: np.ndarray = None
    tensor: EffectiveTensor = None
    path: str = ""


def in_plane_basis():
    """The six unit 3x3 matrices with a zero third column."""
    return [E for E in standard_basis(3, 3) if not E[:, 2].any()]


class _FilmCell(CellIntegrand):
    """``z -> W(x, (y_a, z_3), z_a; .)`` on the 3D inner cell."""

    def __init__(self, W, x, y_alpha):
        self.W = W
        self.x = np.asarray(x, dtype=float).reshape(3)
        self.y_alpha = np.asarray(y_alpha, dtype=float).reshape(2)
        self.dim = self.d = 3
        self.convex, self.growth = W.convex, W.growth
        self.has_tangent, self.is_quadratic = W.has_tangent, W.is_quadratic
        self.zero_point = np.zeros(3)

    def _yz(self, pts):
        pts = np.asarray(pts, dtype=float)
        y = np.concatenate([np.broadcast_to(self.y_alpha, pts.shape[:-1] + (2,)), pts[..., 2:3]], axis=-1)
        return y, pts[..., :2]

    def energy(self, pts, F):
        return self.W.energy(self.x, *self._yz(pts), F)

    def stress(self, pts, F):
        return self.W.stress(self.x, *self._yz(pts), F)

    def tangent(self, pts, F):
        return self.W.tangent(self.x, *self._yz(pts), F)

    def tensor(self, pts):
        return self.W.tensor(self.x, *self._yz(pts))


class _TransverseCell(_FilmCell):
    """``t -> W(x, (y_a, t), 0; .)`` on a 1D cell in the thickness-fast variable.

    Only the third gradient column is relaxed (the grid fills column 2).
    """

    def __init__(self, W, x, y_alpha):
        super().__init__(W, x, y_alpha)
        self.zero_point = np.zeros(1)

    def _yz(self, pts):
        pts = np.asarray(pts, dtype=float)
        y = np.concatenate([np.broadcast_to(self.y_alpha, pts.shape[:-1] + (2,)), pts[..., 0:1]], axis=-1)
        return y, np.zeros(pts.shape[:-1] + (2,))


class _FilmInner(_InnerEvaluator):
    """Inner densities at membrane points ``t = (y_1, y_2, x_3)`` for fixed ``x_a``."""

    def __init__(self, W, x_alpha, config, cache=None, transverse=False):
        if not isinstance(W, Integrand) or W.kind != "film":
            raise ContractViolation("thin-film densities need a FilmIntegrand")
        if transverse and W.depends_on("z"):
            raise ContractViolation("the single-scale film path needs W independent of z_a")
        super().__init__(W, config, cache)
        self.x_alpha = np.asarray(x_alpha, dtype=float).reshape(2)
        self.transverse = transverse
        self.trivial = W.convex and not W.depends_on("z") and not W.depends_on("y", 2)

    def _split(self, pt):
        pt = np.asarray(pt, dtype=float).reshape(3)
        return np.array([self.x_alpha[0], self.x_alpha[1], pt[2]]), pt[:2]

    def frozen(self, pt):
        x, y_alpha = self._split(pt)
        cls = _TransverseCell if self.transverse else _FilmCell
        return cls(self.f, x, y_alpha)

    def point_key(self, pt):
        x, y_alpha = self._split(pt)
        y = np.array([y_alpha[0], y_alpha[1], 0.0])
        return ("T" if self.transverse else "Z", _slow_key(self.f, "x", x, "absolute"),
                _slow_key(self.f, "y", y, "periodic"))

    def template(self, convex):
        bc, T_list = self.config.inner.resolve(convex)
        if self.transverse:
            return TransverseGrid(T_list[0], self.config.inner.n, bc), T_list
        return CellGrid(3, T_list[0], self.config.inner.n, bc), T_list


def _membrane_point(x, y_alpha):
    x = np.asarray(x, dtype=float).reshape(3)
    y_alpha = np.asarray(y_alpha, dtype=float).reshape(2)
    return x[:2], np.array([y_alpha[0], y_alpha[1], x[2]])


def film_inner_density(W, x, y_alpha, xi, config=None, cache=None):
    """``W_hom(x, y_a; xi)`` and its 3x3 derivative for a point ``x = (x_a, x_3)`` of the plate."""
    config = config or FilmConfig()
    x_alpha, pt = _membrane_point(x, y_alpha)
    ev = _FilmInner(W, x_alpha, config, cache)
    r = ev.at(pt, xi)
    return float(r.value), np.asarray(r.stress).reshape(3, 3)


def film_inner_tensor(W, x, y_alpha, config=None):
    """Quadratic fast path: the 9x9 tensor of ``W_hom(x, y_a; .)``."""
    config = config or FilmConfig()
    if not W.is_quadratic:
        raise ContractViolation("film_inner_tensor needs a quadratic integrand")
    x_alpha, pt = _membrane_point(x, y_alpha)
    return _FilmInner(W, x_alpha, config).tensor(pt)


def membrane_density(W, x_alpha, xi_bar, config=None, cache=None, transverse=False):
    """Membrane density ``Wbar_hom(x_a; xi_bar)`` as a :class:`MembraneEstimate`.

    ``xi_bar`` is the 3x2 in-plane gradient.  On the quadratic path the
    membrane tensor is assembled from six corrector solves and returned in
    ``tensor``.  ``transverse=True`` evaluates the inner density with 1D
    cells in the thickness-fast variable (valid when W has no ``z_a``).
    """
    config = config or FilmConfig()
    xi_bar = np.asarray(xi_bar, dtype=float)
    if xi_bar.shape != (3, 2):
        raise ContractViolation(f"xi_bar must be 3x2, got shape {xi_bar.shape}")
    ev = _FilmInner(W, x_alpha, config, cache, transverse=transverse)
    xi = np.hstack([xi_bar, np.zeros((3, 1))])
    g = _OuterIntegrand(ev)
    grid, T_list = config.membrane.template(W.convex)
    try:
        if ev.path == "quadratic":
            est = _quadratic_membrane(g, xi, grid, T_list, config)
        else:
            try:
                base = t_extrapolate(g, xi, T_list, grid, config.solver)
            except BudgetExhausted as exc:
                base = DensityEstimate(value=np.nan if exc.best_value is None else exc.best_value,
                                       converged=False, errors=[str(exc)])
            est = MembraneEstimate(**{k: getattr(base, k) for k in DensityEstimate.__dataclass_fields__})
    finally:
        g.close()
    est.xi_bar = xi_bar
    est.path = ev.path + ("/transverse" if transverse else "")
    if est.stress is not None:
        est.stress = np.asarray(est.stress).reshape(3, 3)[:, :2]
    est.inner_solve_count = ev.solves
    est.cache_hits = ev.cache.hits
    est.upper_bound_only = not W.convex
    est.growth_ok = bool(np.isnan(est.value) or W.growth.contains(est.value, frob(xi_bar)))
    return est


def _quadratic_membrane(g, xi, grid, T_list, config):
    basis = in_plane_basis()
    est = MembraneEstimate(value=np.nan)
    E = None
    for T in T_list:
        E = quadratic_corrector_tensor(g, grid.with_T(T), config.solver, basis=basis, keep_correctors=True)
        value = E.energy(xi)
        c = E.coords(xi)
        phi = sum(ck * chi.values for ck, chi in zip(c, E.correctors))
        est.per_T.append((T, value))
        est.residuals.append(E.residual)
        est.corrector_sup.append(CorrectorField(grid.with_T(T), phi).sup_norm())
    est.value = est.per_T[-1][1]
    est.stress = E.stress(xi)
    est.tensor = E
    if len(est.per_T) > 1:
        est.converged = abs(est.per_T[-1][1] - est.per_T[-2][1]) <= 0.01 * max(abs(est.value), 1e-12)
    return est


# transverse entries of a row-major flattened 3x3 matrix
_R = np.array([2, 5, 8])
_P = np.array([0, 1, 3, 4, 6, 7])


def _as_form(C):
    C = np.asarray(C, dtype=float)
    if C.shape == (3, 3, 3, 3):
        C = C.reshape(9, 9)
    if C.shape != (9, 9):
        raise ContractViolation(f"C must be a 9x9 form on 3x3 matrices, got shape {C.shape}")
    if not np.allclose(C, C.T, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(C).max())):
        raise ContractViolation("C must be symmetric")
    return 0.5 * (C + C.T)


def schur_complement(C):
    """6x6 in-plane form ``C_PP - C_PR C_RR^{-1} C_RP`` (row-major 3x2 coordinates)."""
    C = _as_form(C)
    CRR = C[np.ix_(_R, _R)]
    try:
        L = np.linalg.cholesky(CRR)
    except np.linalg.LinAlgError:
        raise ContractViolation("transverse block of C is not positive definite") from None
    CRP = C[np.ix_(_R, _P)]
    Y = np.linalg.solve(L, CRP)
    return C[np.ix_(_P, _P)] - Y.T @ Y


def schur_membrane_oracle(C, xi_bar):
    """``min over b in R^3 of <C (xi_bar | b), (xi_bar | b)>`` in closed form.

    >>> schur_membrane_oracle(np.eye(9), np.ones((3, 2)))
    6.0
    """
    xi_bar = np.asarray(xi_bar, dtype=float)
    if xi_bar.shape != (3, 2):
        raise ContractViolation(f"xi_bar must be 3x2, got shape {xi_bar.shape}")
    v = xi_bar.ravel()
    return float(v @ schur_complement(C) @ v)


def corollary_single_scale(W, x_alpha, xi_bar, config=None, path="direct"):
    """Membrane density of a film integrand without ``z_a`` dependence.

    ``path="direct"`` relaxes the inner problem along the thickness-fast
    variable only (1D cells); ``path="lifted"`` runs the general 3D inner
    cells on the same integrand.  Both must agree.
    """
    if W.depends_on("z"):
        raise ContractViolation("the single-scale film needs W independent of z_a")
    if path not in ("direct", "lifted"):
        raise ContractViolation(f"path must be 'direct' or 'lifted', got {path!r}")
    return membrane_density(W, x_alpha, xi_bar, config, transverse=(path == "direct"))


def film_cache(config=None):
    """A fresh inner cache honoring ``config.quantization``."""
    return InnerDensityCache((config or FilmConfig()).quantization)
