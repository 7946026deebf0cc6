"""Discrete cell problems.

The basic kernel is

    min over phi of  (1/|Y|) * integral over Y of g(t; xi + grad phi(t)) dt

on a box ``Y`` meshed by a :class:`~homoglab.grid.TensorGrid`, with ``phi``
either zero on Dirichlet faces or periodic with zero mean.  ``phi`` is
continuous and multilinear per element (Q1), integrated with 2-point Gauss
quadrature per axis.

Three minimizers are used:

* quadratic or convex integrands with an analytic tangent: Newton's method
  with Armijo backtracking (one step is exact for quadratics);
* convex integrands without a tangent: L-BFGS;
* nonconvex integrands: L-BFGS from the zero corrector plus seeded random
  starts, each polished by Newton when the Hessian allows, best energy kept.
  Such results are only upper bounds of the cell infimum and are flagged so.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BudgetExhausted, ContractViolation, SolverError
from .grid import CellGrid, CorrectorField, TensorGrid
from .integrand import CellIntegrand, Integrand

__all__ = [
    "SolverConfig", "CellSolution", "DensityEstimate", "EffectiveTensor",
    "solve_cell", "t_extrapolate", "quadratic_corrector_tensor", "effective_tangent",
    "standard_basis", "CellProblem",
]

log = logging.getLogger(__name__)

_CHUNK = 4096


@dataclass
class SolverConfig:
    """Minimizer settings.

    ``method`` is ``"auto"``, ``"newton"``, ``"lbfgs"`` or ``"multistart"``.
    Tolerances apply to the stress-like residual (see
    :attr:`TensorGrid.residual_scale`); the general one is relative to
    ``1 + |value|``.  ``max_iter`` defaults to ten times the unknown count.
    """

    method: str = "auto"
    tol_quadratic: float = 1e-10
    tol_general: float = 1e-7
    max_iter: int = None
    restarts: int = 8
    seed: int = 0
    armijo: float = 1e-4

    def __post_init__(self):
        if self.method not in ("auto", "newton", "lbfgs", "multistart"):
            raise ContractViolation(f"unknown solver method {self.method!r}")
        if not (self.tol_quadratic > 0 and self.tol_general > 0):
            raise ContractViolation("solver tolerances must be positive")

    def tolerance(self, quadratic, value):
        if quadratic:
            return self.tol_quadratic
        return self.tol_general * (1.0 + abs(value))


@dataclass
class CellSolution:
    value: float
    corrector: CorrectorField
    grad_norm: float
    iterations: int
    avg_stress: np.ndarray
    zero_value: float
    xi: np.ndarray
    method: str
    upper_bound_only: bool = False
    converged: bool = True

    @property
    def grid(self):
        return self.corrector.grid


@dataclass
class DensityEstimate:
    """An effective-density value with its per-T history and diagnostics."""

    value: float
    per_T: list = field(default_factory=list)
    inner_solve_count: int = 0
    cache_hits: int = 0
    upper_bound_only: bool = False
    converged: bool = True
    residuals: list = field(default_factory=list)
    corrector_sup: list = field(default_factory=list)
    stress: np.ndarray = None
    errors: list = field(default_factory=list)
    growth_ok: bool = True
    solution: object = field(default=None, repr=False)

    @property
    def flags(self):
        return {"upper_bound_only": self.upper_bound_only, "converged": self.converged,
                "growth_ok": self.growth_ok}

    @property
    def differences(self):
        v = [val for _, val in self.per_T]
        return [b - a for a, b in zip(v, v[1:])]

    def to_dict(self):
        return {
            "value": self.value,
            "per_T": [[int(T), float(v)] for T, v in self.per_T],
            "differences": self.differences,
            "residuals": [float(r) for r in self.residuals],
            "corrector_sup": [float(s) for s in self.corrector_sup],
            "inner_solve_count": self.inner_solve_count,
            "cache_hits": self.cache_hits,
            "upper_bound_only": self.upper_bound_only,
            "converged": self.converged,
            "growth_ok": self.growth_ok,
            "stress": None if self.stress is None else np.asarray(self.stress).tolist(),
            "errors": list(self.errors),
        }


def standard_basis(d, N):
    """Unit matrices ``e_i (x) e_j`` in row-major order."""
    out = []
    for k in range(d * N):
        E = np.zeros((d, N))
        E.flat[k] = 1.0
        out.append(E)
    return out


@dataclass
class EffectiveTensor:
    """Symmetric quadratic form on the span of ``basis``.

    ``energy(xi) = c . matrix . c`` where ``c`` are the coordinates of ``xi``
    in the (orthonormal) basis.  ``voigt``/``reuss`` are the arithmetic and
    harmonic mean bounds when the basis is the full matrix space.
    """

    matrix: np.ndarray
    basis: list
    voigt: np.ndarray = None
    reuss: np.ndarray = None
    correctors: list = None
    residual: float = 0.0

    @property
    def shape(self):
        return self.basis[0].shape

    def coords(self, xi):
        xi = np.asarray(xi, dtype=float)
        return np.array([np.sum(E * xi) for E in self.basis])

    def energy(self, xi):
        c = self.coords(xi)
        return float(c @ self.matrix @ c)

    def stress(self, xi):
        g = 2.0 * self.matrix @ self.coords(xi)
        return sum(gk * E for gk, E in zip(g, self.basis))

    def as_tensor(self):
        d, N = self.shape
        if len(self.basis) != d * N:
            raise ContractViolation("as_tensor needs the full matrix basis")
        return self.matrix.reshape(d, N, d, N)


# ---------------------------------------------------------------------------
# discrete energy


class CellProblem:
    """Discrete energy, gradient and Hessian of one cell problem.

    The unknown vector holds every non-Dirichlet nodal value, component
    fastest.  With a gauge (no Dirichlet axis) the first node is held fixed
    in linear solves and fields are re-centered to zero mean afterwards.
    """

    def __init__(self, g, xi, grid):
        cols = getattr(grid, "columns", None)
        if cols is None:
            if g.dim != grid.dim:
                raise ContractViolation(f"integrand acts on R^{g.dim} but the grid is {grid.dim}-dimensional")
            cols = tuple(range(grid.dim))
        elif max(cols) >= g.dim:
            raise ContractViolation(f"grid fills gradient column {max(cols)} but the integrand has {g.dim}")
        self.cols = list(cols)
        self.full_cols = self.cols == list(range(g.dim))
        xi = np.asarray(xi, dtype=float)
        if xi.size != g.d * g.dim:
            raise ContractViolation(f"xi must have shape ({g.d}, {g.dim}), got {xi.shape}")
        self.g, self.grid = g, grid
        self.N = g.dim
        self.xi = xi.reshape(g.d, g.dim)
        self.d = g.d
        self.n_el, self.n_gp = grid.n_elements, len(grid.weights)
        self.pts = grid.points.reshape(-1, grid.dim)
        self.w = np.tile(grid.weights, self.n_el) / grid.volume
        d = self.d
        free_nodes = np.flatnonzero(~grid.fixed)
        self.free_dofs = (free_nodes[:, None] * d + np.arange(d)).ravel()
        self.n = self.free_dofs.size
        self.dofmap = -np.ones(grid.n_nodes * d, dtype=np.int64)
        self.dofmap[self.free_dofs] = np.arange(self.n)
        self.elem_dofs = grid.conn[:, :, None] * d + np.arange(d)
        self.keep = np.arange(self.n)
        if grid.gauge:
            self.keep = np.arange(d, self.n)
        self.scale = grid.residual_scale
        self.best = (np.inf, None)
        self.evaluations = 0

    # -- fields -----------------------------------------------------------

    def full(self, x):
        U = np.zeros(self.grid.n_nodes * self.d)
        U[self.free_dofs] = x
        return U.reshape(-1, self.d)

    def recenter(self, x):
        if not self.grid.gauge:
            return x
        U = x.reshape(-1, self.d)
        return (U - U.mean(axis=0)).ravel()

    def gradients(self, x, xi=None):
        """Total gradient ``xi + grad phi`` at every quadrature point, ``(M, d, N)``."""
        xi = self.xi if xi is None else xi
        U = self.full(x)[self.grid.conn]
        G = np.einsum("eai,gaj->egij", U, self.grid.dN).reshape(-1, self.d, self.grid.dim)
        if self.full_cols:
            return G + xi
        out = np.repeat(np.asarray(xi, dtype=float)[None], len(G), axis=0)
        out[:, :, self.cols] += G
        return out

    # -- energy -----------------------------------------------------------

    def energy(self, x):
        e = float(self.w @ self.g.energy(self.pts, self.gradients(x)))
        self.evaluations += 1
        if e < self.best[0]:
            self.best = (e, x.copy())
        return e

    def scatter(self, P):
        """Assemble ``sum w P : grad N_a`` into the unknown vector."""
        P = np.asarray(P)[:, :, self.cols]
        Pw = (P * self.w[:, None, None]).reshape(self.n_el, self.n_gp, self.d, self.grid.dim)
        R = np.einsum("egij,gaj->eai", Pw, self.grid.dN)
        full = np.bincount(self.elem_dofs.ravel(), weights=R.ravel(),
                           minlength=self.grid.n_nodes * self.d)
        return full[self.free_dofs]

    def energy_grad(self, x):
        G = self.gradients(x)
        e = float(self.w @ self.g.energy(self.pts, G))
        self.evaluations += 1
        if e < self.best[0]:
            self.best = (e, x.copy())
        return e, self.scatter(self.g.stress(self.pts, G))

    def average(self, x, values):
        return np.tensordot(self.w, values, axes=1)

    def assemble(self, L):
        """Sparse matrix of ``sum w grad N_a : L : grad N_b`` on the unknowns."""
        d, dim = self.d, self.grid.dim
        nc = self.grid.conn.shape[1]
        if not self.full_cols:
            L = np.asarray(L)[:, :, self.cols][:, :, :, :, self.cols]
        L = L.reshape(self.n_el, self.n_gp, d, dim, d, dim)
        w = self.w.reshape(self.n_el, self.n_gp)
        dN = self.grid.dN
        rows, cols, vals = [], [], []
        for s in range(0, self.n_el, _CHUNK):
            Lw = L[s:s + _CHUNK] * w[s:s + _CHUNK, :, None, None, None, None]
            Ke = np.einsum("gaj,egijkl,gbl->eaibk", dN, Lw, dN, optimize=True)
            dofs = self.dofmap[self.elem_dofs[s:s + _CHUNK]].reshape(-1, nc * d)
            r = np.repeat(dofs, nc * d, axis=1)
            c = np.tile(dofs, (1, nc * d))
            v = Ke.reshape(-1, nc * d * nc * d)
            mask = (r >= 0) & (c >= 0)
            rows.append(r[mask])
            cols.append(c[mask])
            vals.append(v[mask])
        K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(self.n, self.n))
        return K.tocsr()

    def factor(self, K):
        """LU factor of ``K`` restricted to the non-gauge unknowns."""
        Kr = K[self.keep][:, self.keep].tocsc()
        lu = spla.splu(Kr)
        keep, n = self.keep, self.n

        def solve(b):
            b = np.asarray(b)
            out = np.zeros((n,) + b.shape[1:])
            out[keep] = lu.solve(np.ascontiguousarray(b[keep]))
            return out

        return solve

    def residual(self, gvec):
        return float(np.abs(gvec).max()) / self.scale if gvec.size else 0.0


# ---------------------------------------------------------------------------
# minimizers


class _NewtonFailed(Exception):
    pass


def _newton(prob, x, cfg, quadratic, max_iter):
    e, gvec = prob.energy_grad(x)
    res = prob.residual(gvec)
    it = 0
    while res > cfg.tolerance(quadratic, e) and it < max_iter:
        L = prob.g.tangent(prob.pts, prob.gradients(x))
        try:
            solve = prob.factor(prob.assemble(L))
        except RuntimeError as exc:  # singular factor
            raise _NewtonFailed(str(exc)) from None
        p = solve(-gvec)
        if prob.grid.gauge:
            p = prob.recenter(p)
        slope = float(gvec @ p)
        if not np.isfinite(slope) or slope >= 0:
            raise _NewtonFailed("Newton direction is not a descent direction")
        t = 1.0
        noise = 64 * np.finfo(float).eps * (1.0 + abs(e))
        while True:
            xt = x + t * p
            et = prob.energy(xt)
            if et <= e + cfg.armijo * t * slope + noise:
                break
            t *= 0.5
            if t < 1e-10:
                raise _NewtonFailed("line search stalled")
        x = prob.recenter(xt)
        e, gvec = prob.energy_grad(x)
        res = prob.residual(gvec)
        it += 1
    return x, e, res, it


def _lbfgs(prob, x0, cfg, max_iter):
    tol_abs = cfg.tol_general * prob.scale

    def fun(x):
        return prob.energy_grad(x)

    out = scipy.optimize.minimize(
        fun, x0, jac=True, method="L-BFGS-B",
        options={"maxiter": max_iter, "maxfun": 4 * max_iter, "gtol": tol_abs,
                 "ftol": 1e-16, "maxcor": 30})
    x = prob.recenter(out.x)
    e, gvec = prob.energy_grad(x)
    return x, e, prob.residual(gvec), int(out.nit)


def _lbfgs_polished(prob, x0, cfg, max_iter):
    x, e, res, it = _lbfgs(prob, x0, cfg, max_iter)
    if res > cfg.tolerance(False, e) and prob.g.has_tangent:
        try:
            x2, e2, res2, it2 = _newton(prob, x, cfg, False, 50)
            if e2 <= e + 1e-12 * (1 + abs(e)):
                return x2, e2, res2, it + it2
        except _NewtonFailed:
            pass
    return x, e, res, it


def _as_cell_integrand(g):
    if isinstance(g, CellIntegrand):
        return g
    if isinstance(g, Integrand) and g.kind == "bulk":
        if g.depends_on("x") or g.depends_on("y"):
            raise ContractViolation("freeze x and y first (Integrand.frozen) for an x/y-dependent integrand")
        return g.frozen(np.zeros(g.x_dim), np.zeros(g.y_dim))
    raise ContractViolation(f"solve_cell needs a single-scale cell integrand, got {type(g).__name__}")


def solve_cell(g, xi, grid, solver=None, x0=None):
    """Minimize the discrete cell energy of ``g`` at macroscopic gradient ``xi``.

    Parameters
    ----------
    g : CellIntegrand
        Single-scale density ``g(t; F)``; a bulk :class:`Integrand` without
        x/y dependence is accepted as well.
    xi : array_like, shape (d, dim)
    grid : TensorGrid
        Usually a :class:`CellGrid`; films and direct simulations pass other
        boxes.
    solver : SolverConfig, optional
    x0 : ndarray, optional
        Initial unknown vector (defaults to the zero corrector).

    Returns
    -------
    CellSolution
        ``value`` is the energy divided by the cell volume.

    Raises
    ------
    SolverError
        When the residual tolerance is not met; the best iterate is attached.
    """
    g = _as_cell_integrand(g)
    cfg = solver or SolverConfig()
    prob = CellProblem(g, xi, grid)
    quadratic = bool(getattr(g, "is_quadratic", False))
    max_iter = cfg.max_iter or max(10 * prob.n, 50)
    method = cfg.method
    if method == "auto":
        if not g.convex:
            method = "multistart"
        elif g.has_tangent:
            method = "newton"
        else:
            method = "lbfgs"
    x_init = np.zeros(prob.n) if x0 is None else np.asarray(x0, dtype=float)
    zero_value = prob.energy(np.zeros(prob.n))
    try:
        if method == "newton":
            try:
                x, e, res, it = _newton(prob, x_init, cfg, quadratic, min(max_iter, 200))
            except _NewtonFailed as exc:
                log.debug("newton failed (%s); falling back to L-BFGS", exc)
                method = "lbfgs"
                x, e, res, it = _lbfgs(prob, prob.best[1] if prob.best[1] is not None else x_init,
                                       cfg, max_iter)
        elif method == "lbfgs":
            x, e, res, it = _lbfgs_polished(prob, x_init, cfg, max_iter)
        else:
            x, e, res, it = _multistart(prob, x_init, cfg, max_iter)
    except BudgetExhausted as exc:
        exc.best_value, best_x = prob.best
        if best_x is not None:
            exc.best_corrector = CorrectorField(grid, prob.full(best_x))
        raise
    tol = cfg.tolerance(quadratic, e)
    if not res <= tol:
        best_e, best_x = prob.best
        raise SolverError(
            f"cell solve ({method}) stopped at residual {res:.3e} > tol {tol:.3e} after {it} iterations",
            best_value=best_e,
            best_corrector=None if best_x is None else CorrectorField(grid, prob.full(best_x)),
            residual=res)
    G = prob.gradients(x)
    avg_stress = prob.average(x, g.stress(prob.pts, G))
    return CellSolution(
        value=e, corrector=CorrectorField(grid, prob.full(x)), grad_norm=res, iterations=it,
        avg_stress=np.asarray(avg_stress).reshape(g.d, g.dim), zero_value=zero_value,
        xi=prob.xi.copy(), method=method, upper_bound_only=not g.convex)


def _multistart(prob, x_init, cfg, max_iter):
    rng = np.random.default_rng(cfg.seed)
    amp = 0.5 * float(prob.grid.h.min()) * (1.0 + float(np.linalg.norm(prob.xi)))
    starts = [x_init] + [prob.recenter(amp * rng.standard_normal(prob.n)) for _ in range(cfg.restarts)]
    best = None
    for x0 in starts:
        x, e, res, it = _lbfgs_polished(prob, x0, cfg, max_iter)
        ok = res <= cfg.tolerance(False, e)
        key = (not ok, e)
        if best is None or key < best[0]:
            best = (key, (x, e, res, it))
    return best[1]


# ---------------------------------------------------------------------------
# T sweeps


def _check_T_list(T_list):
    T_list = [int(T) for T in T_list]
    if not T_list:
        raise ContractViolation("T_list must be nonempty")
    for a, b in zip(T_list, T_list[1:]):
        if not b > a:
            raise ContractViolation("T_list must be strictly increasing")
        if b % a:
            raise ContractViolation(f"T_list must be a divisor chain; {b} is not a multiple of {a}")
    return T_list


def t_extrapolate(g, xi, T_list, grid, solver=None, rel_stop=0.01):
    """Solve the cell problem for each ``T`` in a divisor chain.

    ``grid`` is a template (:class:`CellGrid` or :class:`FilmGrid`) whose
    ``with_T`` builds the grid for each period count.  The last value is the
    estimate; ``converged`` means the last successive difference is below
    ``rel_stop`` relative to the value.  On a solver failure the partial
    estimate is attached to the raised error as ``partial``.
    """
    T_list = _check_T_list(T_list)
    g = _as_cell_integrand(g)
    est = DensityEstimate(value=np.nan, upper_bound_only=not g.convex)
    sol = None
    for T in T_list:
        try:
            sol = solve_cell(g, xi, grid.with_T(T), solver)
        except SolverError as exc:
            est.errors.append(f"T={T}: {exc}")
            est.converged = False
            if est.per_T:
                est.value = est.per_T[-1][1]
            exc.partial = est
            raise
        est.per_T.append((T, sol.value))
        est.residuals.append(sol.grad_norm)
        est.corrector_sup.append(sol.corrector.sup_norm())
    est.value = sol.value
    est.stress = sol.avg_stress
    if len(est.per_T) > 1:
        diff = abs(est.per_T[-1][1] - est.per_T[-2][1])
        est.converged = diff <= rel_stop * max(abs(est.value), 1e-12)
    est.solution = sol
    return est


# ---------------------------------------------------------------------------
# quadratic fast path and tangents


def _check_spd(A):
    M, d, N = A.shape[0], A.shape[1], A.shape[2]
    S = A.reshape(M, d * N, d * N)
    if not np.allclose(S, np.swapaxes(S, 1, 2), rtol=1e-10, atol=1e-12):
        raise ContractViolation("coefficient tensor is not symmetric at some quadrature point")
    lam = np.linalg.eigvalsh(S)
    if lam[:, 0].min() <= 0:
        i = int(np.argmin(lam[:, 0]))
        raise ContractViolation(f"coefficient tensor is not positive definite at quadrature point {i} "
                                f"(smallest eigenvalue {lam[i, 0]:.3e})")


def quadratic_corrector_tensor(g, grid, solver=None, basis=None, keep_correctors=False):
    """Homogenized tensor of a quadratic density ``<A(t) F, F>``.

    One corrector ``chi_k`` is solved per basis matrix ``E_k`` (minimizing the
    cell average of ``<A (E_k + grad chi), E_k + grad chi>``) and

        A_hom[j, k] = average of <A (E_j + grad chi_j), E_k + grad chi_k>.

    ``basis`` defaults to all ``d x dim`` unit matrices; the membrane problem
    passes only the in-plane ones.
    """
    g = _as_cell_integrand(g)
    cfg = solver or SolverConfig()
    d, dim = g.d, g.dim
    basis = standard_basis(d, dim) if basis is None else [np.asarray(E, float).reshape(d, dim) for E in basis]
    prob = CellProblem(g, np.zeros((d, dim)), grid)
    A = np.asarray(g.tensor(prob.pts), dtype=float)
    A = np.broadcast_to(A, (prob.pts.shape[0], d, dim, d, dim))
    _check_spd(A)
    K = prob.assemble(2.0 * A)
    solve = prob.factor(K)
    fields, residual = [], 0.0
    rhs = np.stack([prob.scatter(np.einsum("mijkl,kl->mij", 2.0 * A, E)) for E in basis], axis=1)
    chi = solve(-rhs)
    for k, E in enumerate(basis):
        c = chi[:, k]
        # one step of iterative refinement
        r = K @ c + rhs[:, k]
        if np.abs(r).max() > 0:
            c = c - solve(r)
            if prob.grid.gauge:
                c = prob.recenter(c)
        r = K @ c + rhs[:, k]
        residual = max(residual, prob.residual(r))
        fields.append((c, prob.gradients(c, E)))
    AG = [np.einsum("mijkl,mkl->mij", A, G) for _, G in fields]
    m = len(basis)
    M = np.empty((m, m))
    for j in range(m):
        for k in range(m):
            M[j, k] = float(prob.w @ np.sum(AG[j] * fields[k][1], axis=(1, 2)))
    if residual > cfg.tol_quadratic * max(1.0, float(np.abs(M).max())):
        raise SolverError(f"corrector solves left residual {residual:.3e}", residual=residual)
    voigt = reuss = None
    if len(basis) == d * dim and all(np.array_equal(E, S) for E, S in zip(basis, standard_basis(d, dim))):
        S = A.reshape(-1, d * dim, d * dim)
        voigt = np.tensordot(prob.w, S, axes=1)
        reuss = np.linalg.inv(np.tensordot(prob.w, np.linalg.inv(S), axes=1))
    correctors = [CorrectorField(grid, prob.full(c)) for c, _ in fields] if keep_correctors else None
    return EffectiveTensor(matrix=0.5 * (M + M.T), basis=basis, voigt=voigt, reuss=reuss,
                           correctors=correctors, residual=residual)


def effective_tangent(g, solution, solver=None):
    """Second derivative of the cell value with respect to ``xi``.

    Uses the linearized corrector problems at the converged corrector:
    ``C = avg(L) - b^T K^{-1} b`` with ``L`` the integrand tangent.  Returned
    as a ``(d, dim, d, dim)`` array.
    """
    g = _as_cell_integrand(g)
    grid = solution.grid
    prob = CellProblem(g, solution.xi, grid)
    x = solution.corrector.values.ravel()[prob.free_dofs]
    G = prob.gradients(x)
    L = np.broadcast_to(np.asarray(g.tangent(prob.pts, G), dtype=float),
                        (G.shape[0],) + G.shape[1:] * 2)
    d, dim = g.d, g.dim
    Lavg = np.tensordot(prob.w, L, axes=1).reshape(d * dim, d * dim)
    if prob.n == 0:
        return Lavg.reshape(d, dim, d, dim)
    basis = standard_basis(d, dim)
    b = np.stack([prob.scatter(np.einsum("mijkl,kl->mij", L, E)) for E in basis], axis=1)
    try:
        solve = prob.factor(prob.assemble(L))
    except RuntimeError as exc:
        raise SolverError(f"tangent stiffness is singular: {exc}") from None
    C = Lavg - b.T @ solve(b)
    C = 0.5 * (C + C.T)
    return C.reshape(d, dim, d, dim)
