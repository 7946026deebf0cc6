"""Direct minimization of the epsilon-indexed functionals.

The bulk case is one-dimensional:

    F_eps(u) = integral over (0, 1) of f(x, x/eps, x/eps^2; u'(x)) dx,
    u(0) = 0, u(1) = xi,

and the film case is a 2D slice ``(0, 1) x (-1, 1)`` in ``(x_1, x_3)`` of the
rescaled plate energy with gradient ``(grad_1 v | xi_2 | grad_3 v / eps)``.
Meshes resolve the finest period with ``points_per_fine_period`` elements,
so every oscillation is sampled identically by the quadrature.

Minimum energies are compared with the homogenized minimum to measure the
gap as ``eps`` decreases.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .cell import SolverConfig, solve_cell
from .errors import ContractViolation, HomoglabError
from .grid import Axis, TensorGrid, interval_grid
from .integrand import CellIntegrand, Integrand
from .reiterated import ReiterationConfig, outer_density, reiterated_tensor
from .thinfilm import FilmConfig, membrane_density

__all__ = [
    "DirectSimConfig", "DirectResult", "GammaGapRow", "GammaGapReport",
    "minimize_F_eps_1d", "minimize_film_eps_strip", "homogenized_minimum_1d",
    "homogenized_minimum_strip", "gamma_gap_report",
]


def _inverse_integer(t, what):
    k = round(1.0 / t)
    if abs(k * t - 1.0) > 1e-9:
        raise ContractViolation(f"{what} = {t!r} is not commensurate: 1/{what} must be an integer")
    return int(k)


@dataclass
class DirectSimConfig:
    """Mesh and scale settings of one direct simulation.

    ``domain`` is ``"bulk"`` (the interval (0, 1)) or ``"strip"`` (the film
    slice (0, 1) x (-1, 1)).  Both ``1/eps`` and ``1/eps^2`` must be integers.
    """

    eps: float
    points_per_fine_period: int = 8
    domain: str = "bulk"
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise ContractViolation(f"eps must lie in (0, 1), got {self.eps}")
        if int(self.points_per_fine_period) != self.points_per_fine_period or self.points_per_fine_period < 4:
            raise ContractViolation("points_per_fine_period must be an integer >= 4")
        if self.domain not in ("bulk", "strip"):
            raise ContractViolation(f"domain must be 'bulk' or 'strip', got {self.domain!r}")
        self.inv_eps = _inverse_integer(self.eps, "eps")
        self.inv_eps2 = _inverse_integer(self.eps ** 2, "eps^2")

    @property
    def h(self):
        """Element size along ``x_1``: ``eps^2 / points_per_fine_period``."""
        return 1.0 / (self.inv_eps2 * self.points_per_fine_period)

    @property
    def h3(self):
        """Element size through the thickness: ``eps / points_per_fine_period``."""
        return 1.0 / (self.inv_eps * self.points_per_fine_period)


@dataclass
class DirectResult:
    energy: float
    dofs: int
    residual: float
    wall_time_ms: float
    upper_bound_only: bool = False

    def __float__(self):
        return float(self.energy)


class _Rescaled1D(CellIntegrand):
    """``x -> f(x, x/eps, x/eps^2; .)`` on (0, 1)."""

    def __init__(self, f, eps):
        self.f, self.eps = f, float(eps)
        self.dim, self.d = 1, 1
        self.convex, self.growth = f.convex, f.growth
        self.has_tangent, self.is_quadratic = f.has_tangent, f.is_quadratic

    def _args(self, pts):
        return pts, pts / self.eps, pts / self.eps ** 2

    def energy(self, pts, F):
        return self.f.energy(*self._args(pts), F)

    def stress(self, pts, F):
        return self.f.stress(*self._args(pts), F)

    def tangent(self, pts, F):
        return self.f.tangent(*self._args(pts), F)

    def tensor(self, pts):
        return self.f.tensor(*self._args(pts))


class _Strip(CellIntegrand):
    """Film slice: points ``(x_1, x_3)``, gradient columns scaled by ``(1, 1, 1/eps)``."""

    def __init__(self, W, eps):
        self.W, self.eps = W, float(eps)
        self.dim = self.d = 3
        self.convex, self.growth = W.convex, W.growth
        self.has_tangent, self.is_quadratic = W.has_tangent, W.is_quadratic
        self.s = np.array([1.0, 1.0, 1.0 / self.eps])

    def _args(self, pts):
        zero = np.zeros(pts.shape[:-1] + (1,))
        x = np.concatenate([pts[..., :1], zero, pts[..., 1:2]], axis=-1)
        z = np.concatenate([pts[..., :1] / self.eps ** 2, zero], axis=-1)
        return x, x / self.eps, z

    def energy(self, pts, F):
        return self.W.energy(*self._args(pts), F * self.s)

    def stress(self, pts, F):
        return self.W.stress(*self._args(pts), F * self.s) * self.s

    def tangent(self, pts, F):
        L = self.W.tangent(*self._args(pts), F * self.s)
        return L * self.s[:, None, None] * self.s

    def tensor(self, pts):
        A = self.W.tensor(*self._args(pts))
        return A * self.s[:, None, None] * self.s


def _check_bulk_1d(f):
    if not isinstance(f, Integrand) or f.kind != "bulk" or (f.d, f.N) != (1, 1):
        raise ContractViolation("the 1D direct simulation needs a bulk integrand with N = d = 1")


def minimize_F_eps_1d(f, xi, cfg):
    """Discrete minimum of ``F_eps`` with ``u(0) = 0``, ``u(1) = xi``.

    Returns a :class:`DirectResult`; ``dofs`` counts the interior unknowns.
    """
    _check_bulk_1d(f)
    if cfg.domain != "bulk":
        raise ContractViolation("minimize_F_eps_1d needs a bulk DirectSimConfig")
    start = time.perf_counter()
    grid = interval_grid(cfg.inv_eps2 * cfg.points_per_fine_period)
    sol = solve_cell(_Rescaled1D(f, cfg.eps), np.array([[float(xi)]]), grid, cfg.solver)
    return DirectResult(sol.value, grid.cells[0] - 1, sol.grad_norm,
                        1e3 * (time.perf_counter() - start), sol.upper_bound_only)


def _check_strip(W):
    if not isinstance(W, Integrand) or W.kind != "film":
        raise ContractViolation("the strip simulation needs a FilmIntegrand")
    for var, axis in (("x", 1), ("y", 1), ("z", 1)):
        if W.depends_on(var, axis):
            raise ContractViolation(f"the 2D strip slice needs W independent of {var}[{axis}]")


def _xi_bar(xi_bar):
    xi_bar = np.asarray(xi_bar, dtype=float)
    if xi_bar.shape == (3,) or xi_bar.shape == (3, 1):
        xi_bar = np.hstack([xi_bar.reshape(3, 1), np.zeros((3, 1))])
    if xi_bar.shape != (3, 2):
        raise ContractViolation(f"xi_bar must be 3x2 (or a 3-vector slope along x_1), got {xi_bar.shape}")
    return xi_bar


def minimize_film_eps_strip(W, xi_bar, cfg):
    """Discrete minimum of the rescaled film energy on ``(0, 1) x (-1, 1)``.

    ``v = xi_bar x_alpha`` on the lateral ends ``x_1 = 0, 1``; top and bottom
    are free.  The returned energy is the integral (not the average), so a
    homogeneous film gives ``2 W(xi_bar | 0)``-type values.
    """
    _check_strip(W)
    if cfg.domain != "strip":
        raise ContractViolation("minimize_film_eps_strip needs a strip DirectSimConfig")
    xi_bar = _xi_bar(xi_bar)
    start = time.perf_counter()
    n1 = cfg.inv_eps2 * cfg.points_per_fine_period
    n3 = 2 * cfg.inv_eps * cfg.points_per_fine_period
    grid = TensorGrid([Axis(1.0, n1, 0.0, "dirichlet"), Axis(2.0, n3, -1.0, "free")], columns=(0, 2))
    xi = np.hstack([xi_bar, np.zeros((3, 1))])
    sol = solve_cell(_Strip(W, cfg.eps), xi, grid, cfg.solver)
    dofs = 3 * (n1 - 1) * (n3 + 1)
    return DirectResult(grid.volume * sol.value, dofs, sol.grad_norm,
                        1e3 * (time.perf_counter() - start), sol.upper_bound_only)


def homogenized_minimum_1d(f, xi, config=None, quad_points=64):
    """Minimum of the homogenized 1D functional under the same boundary data.

    Without slow ``x`` dependence this is ``fbar_hom(xi)`` (the affine map
    is optimal).  For quadratic integrands with ``x`` dependence it is
    ``(integral of 1/abar(x))^{-1} xi^2``, integrated by Gauss-Legendre.
    """
    _check_bulk_1d(f)
    config = config or ReiterationConfig()
    xi = float(xi)
    if not f.depends_on("x"):
        est = outer_density(f, np.zeros(1), np.array([[xi]]), config)
        return float(est.value)
    if not f.is_quadratic:
        raise ContractViolation("x-dependent homogenized minima are only available for quadratic integrands")
    t, w = np.polynomial.legendre.leggauss(quad_points)
    x = 0.5 * (t + 1.0)
    abar = np.array([reiterated_tensor(f, np.array([xk]), config).matrix[0, 0] for xk in x])
    return float(xi * xi / (0.5 * np.sum(w / abar)))


def homogenized_minimum_strip(W, xi_bar, config=None):
    """``2 * Wbar_hom(xi_bar)`` for a film without in-plane slow dependence."""
    _check_strip(W)
    if W.depends_on("x", 0):
        raise ContractViolation("the strip prediction needs W independent of x_1")
    est = membrane_density(W, np.zeros(2), _xi_bar(xi_bar), config or FilmConfig())
    return 2.0 * float(est.value)


@dataclass
class GammaGapRow:
    eps: float
    min_F_eps: float
    min_F_hom: float
    gap: float
    dofs: int
    wall_time_ms: float


@dataclass
class GammaGapReport:
    rows: list
    tolerance: float
    final_relative_gap: float
    monotone: bool
    verdict: bool
    errors: list = field(default_factory=list)  # one message per row, "" when the row succeeded


def gamma_gap_report(f, xi, eps_list, template, tolerance=0.02, jitter=0.10,
                     homogenized=None, config=None):
    """Gap ``|min F_eps - min F_hom|`` over a decreasing list of ``eps``.

    ``template`` is a :class:`DirectSimConfig` whose ``eps`` is replaced per
    row.  The verdict requires the last relative gap below ``tolerance``
    and gaps that do not grow by more than ``jitter`` (relative) from one
    row to the next.  A failing row is recorded and the report continues.
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        raise ContractViolation("eps_list must be nonempty")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ContractViolation("eps_list must be strictly decreasing")
    cfgs = [replace(template, eps=e) for e in eps_list]
    strip = template.domain == "strip"
    if homogenized is None:
        homogenized = (homogenized_minimum_strip(f, xi, config) if strip
                       else homogenized_minimum_1d(f, xi, config))
    rows, errors = [], []
    for cfg in cfgs:
        try:
            res = minimize_film_eps_strip(f, xi, cfg) if strip else minimize_F_eps_1d(f, xi, cfg)
            rows.append(GammaGapRow(cfg.eps, res.energy, homogenized, abs(res.energy - homogenized),
                                    res.dofs, res.wall_time_ms))
            errors.append("")
        except HomoglabError as exc:
            rows.append(GammaGapRow(cfg.eps, np.nan, homogenized, np.nan, 0, 0.0))
            errors.append(str(exc))
    gaps = [r.gap for r in rows]
    floor = 1e-9 * (1.0 + abs(homogenized))
    monotone = all(np.isfinite(g) for g in gaps) and all(
        b <= (1.0 + jitter) * a + floor for a, b in zip(gaps, gaps[1:]))
    final = gaps[-1] / max(abs(homogenized), 1e-300)
    verdict = bool(monotone and np.isfinite(final) and final < tolerance)
    return GammaGapReport(rows, tolerance, float(final), bool(monotone), verdict, errors)
