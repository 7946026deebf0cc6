"""Uniform tensor-product Q1 meshes for cell problems.

A :class:`TensorGrid` is a box split into equal cells along each axis.  Each
axis carries its own boundary treatment:

``periodic``   opposite faces identified (nodes wrap around)
``dirichlet``  corrector pinned to zero on both end faces
``free``       no constraint (natural boundary condition)

Quadrature is the 2-point Gauss rule per axis, so every element carries
``2**dim`` quadrature points.
"""
from __future__ import annotations

import csv
import functools
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

__all__ = ["Axis", "TensorGrid", "CellGrid", "FilmGrid", "CorrectorField", "interval_grid",
           "TransverseGrid"]

_BCS = ("periodic", "dirichlet", "free")
_GAUSS = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


@dataclass(frozen=True)
class Axis:
    length: float
    cells: int
    origin: float = 0.0
    bc: str = "periodic"

    def __post_init__(self):
        if self.bc not in _BCS:
            raise ContractViolation(f"axis bc must be one of {_BCS}, got {self.bc!r}")
        if int(self.cells) != self.cells or self.cells < 1:
            raise ContractViolation(f"axis needs a positive integer cell count, got {self.cells}")
        if not self.length > 0:
            raise ContractViolation("axis length must be positive")
        if self.bc == "periodic" and self.cells < 2:
            raise ContractViolation("periodic axes need at least two cells")

    @property
    def h(self):
        return self.length / self.cells

    @property
    def nodes(self):
        return self.cells if self.bc == "periodic" else self.cells + 1


class TensorGrid:
    """Box mesh of Q1 elements; geometry arrays are built lazily and cached.

    ``columns`` says which columns of the integrand's gradient matrix the
    grid axes fill (default: axis k fills column k).  A 1D grid with
    ``columns=(2,)`` relaxes only the third column of a 3x3 gradient.
    """

    def __init__(self, axes, columns=None):
        self.axes = tuple(axes)
        if not self.axes:
            raise ContractViolation("a grid needs at least one axis")
        if columns is not None:
            columns = tuple(int(c) for c in columns)
            if len(columns) != len(self.axes) or len(set(columns)) != len(columns) or min(columns) < 0:
                raise ContractViolation("columns must name one distinct gradient column per axis")
        self.columns = columns

    @property
    def dim(self):
        return len(self.axes)

    @property
    def h(self):
        return np.array([a.h for a in self.axes])

    @property
    def cells(self):
        return tuple(a.cells for a in self.axes)

    @property
    def node_shape(self):
        return tuple(a.nodes for a in self.axes)

    @property
    def n_nodes(self):
        return int(np.prod(self.node_shape))

    @property
    def n_elements(self):
        return int(np.prod(self.cells))

    @property
    def volume(self):
        return float(np.prod([a.length for a in self.axes]))

    @property
    def gauge(self):
        """True when constants are in the kernel (no Dirichlet axis)."""
        return not any(a.bc == "dirichlet" for a in self.axes)

    @functools.cached_property
    def corner_bits(self):
        return np.array(list(itertools.product((0, 1), repeat=self.dim)), dtype=int)

    @functools.cached_property
    def conn(self):
        """Element-to-node table, shape ``(n_elements, 2**dim)``."""
        idx = np.indices(self.cells).reshape(self.dim, -1).T
        cols = []
        for bits in self.corner_bits:
            per_axis = []
            for k, ax in enumerate(self.axes):
                i = idx[:, k] + bits[k]
                if ax.bc == "periodic":
                    i = i % ax.nodes
                per_axis.append(i)
            cols.append(np.ravel_multi_index(per_axis, self.node_shape))
        return np.stack(cols, axis=1)

    @functools.cached_property
    def gauss_ref(self):
        return np.array(list(itertools.product(_GAUSS, repeat=self.dim)))

    @functools.cached_property
    def weights(self):
        """Quadrature weight of each Gauss point (element volume / 2**dim)."""
        w = np.prod(self.h) / 2 ** self.dim
        return np.full(len(self.gauss_ref), w)

    @functools.cached_property
    def dN(self):
        """Shape-function gradients at Gauss points, shape ``(n_gp, 2**dim, dim)``."""
        t = self.gauss_ref
        bits = self.corner_bits
        out = np.empty((len(t), len(bits), self.dim))
        for g, a, j in itertools.product(range(len(t)), range(len(bits)), range(self.dim)):
            val = (1.0 if bits[a, j] else -1.0) / self.axes[j].h
            for k in range(self.dim):
                if k != j:
                    val *= t[g, k] if bits[a, k] else 1.0 - t[g, k]
            out[g, a, j] = val
        return out

    @functools.cached_property
    def points(self):
        """Physical Gauss-point coordinates, shape ``(n_elements, n_gp, dim)``."""
        idx = np.indices(self.cells).reshape(self.dim, -1).T.astype(float)
        origin = np.array([a.origin for a in self.axes])
        return origin + (idx[:, None, :] + self.gauss_ref[None, :, :]) * self.h

    @functools.cached_property
    def node_coords(self):
        idx = np.indices(self.node_shape).reshape(self.dim, -1).T.astype(float)
        origin = np.array([a.origin for a in self.axes])
        return origin + idx * self.h

    @functools.cached_property
    def fixed(self):
        """Boolean mask of nodes held at zero by Dirichlet axes."""
        mask = np.zeros(self.node_shape, dtype=bool)
        for k, ax in enumerate(self.axes):
            if ax.bc == "dirichlet":
                sl = [slice(None)] * self.dim
                sl[k] = 0
                mask[tuple(sl)] = True
                sl[k] = -1
                mask[tuple(sl)] = True
        return mask.ravel()

    @property
    def residual_scale(self):
        """Size of a nodal energy derivative produced by a unit stress.

        Dividing the raw gradient of the normalized energy by this number
        gives a stress-like residual that does not drift with the mesh size.
        """
        h = self.h
        return float(np.prod(h) / h.min() / self.volume)

    def __repr__(self):
        desc = ", ".join(f"{a.length:g}/{a.cells}:{a.bc}" for a in self.axes)
        return f"{type(self).__name__}({desc})"


class CellGrid(TensorGrid):
    """``(0, T)^N`` with ``n`` elements per unit period per axis.

    ``bc`` is ``"dirichlet_zero"`` (corrector vanishes on the boundary) or
    ``"periodic_mean_zero"`` (periodic corrector, zero mean per component).
    """

    MODES = ("dirichlet_zero", "periodic_mean_zero")

    def __init__(self, N, T=1, n=16, bc="periodic_mean_zero"):
        if bc not in self.MODES:
            raise ContractViolation(f"cell bc must be one of {self.MODES}, got {bc!r}")
        if int(T) != T or T < 1:
            raise ContractViolation(f"period count T must be a positive integer, got {T}")
        if int(n) != n or n < 1:
            raise ContractViolation(f"nodes per period n must be a positive integer, got {n}")
        self.N, self.T, self.n, self.bc = int(N), int(T), int(n), bc
        kind = "periodic" if bc == "periodic_mean_zero" else "dirichlet"
        super().__init__([Axis(float(T), int(n) * int(T), 0.0, kind)] * int(N))

    def with_T(self, T):
        return CellGrid(self.N, T, self.n, self.bc)


class FilmGrid(TensorGrid):
    """``(0, T)^2 x (-1, 1)`` for the membrane cell problem.

    The four lateral faces are either pinned to zero (``lateral_dirichlet``)
    or identified periodically (``lateral_periodic``); top and bottom faces
    are always free.  ``n3`` cells span the thickness (default ``2 n``, i.e.
    cubic elements).
    """

    MODES = ("lateral_dirichlet", "lateral_periodic")

    def __init__(self, T=1, n=8, n3=None, bc="lateral_dirichlet"):
        if bc not in self.MODES:
            raise ContractViolation(f"film bc must be one of {self.MODES}, got {bc!r}")
        if int(T) != T or T < 1:
            raise ContractViolation(f"period count T must be a positive integer, got {T}")
        self.T, self.n, self.bc = int(T), int(n), bc
        self.n3 = int(2 * n if n3 is None else n3)
        lateral = "dirichlet" if bc == "lateral_dirichlet" else "periodic"
        side = Axis(float(T), int(n) * int(T), 0.0, lateral)
        super().__init__([side, side, Axis(2.0, self.n3, -1.0, "free")])

    def with_T(self, T):
        return FilmGrid(T, self.n, self.n3, self.bc)


def interval_grid(cells, length=1.0, bc="dirichlet", origin=0.0, columns=None):
    return TensorGrid([Axis(float(length), int(cells), float(origin), bc)], columns=columns)


class TransverseGrid(TensorGrid):
    """``(0, T)`` cell in the thickness variable, filling gradient column 2."""

    def __init__(self, T=1, n=32, bc="periodic_mean_zero"):
        if bc not in CellGrid.MODES:
            raise ContractViolation(f"cell bc must be one of {CellGrid.MODES}, got {bc!r}")
        self.T, self.n, self.bc = int(T), int(n), bc
        kind = "periodic" if bc == "periodic_mean_zero" else "dirichlet"
        super().__init__([Axis(float(T), int(n) * int(T), 0.0, kind)], columns=(2,))

    def with_T(self, T):
        return TransverseGrid(T, self.n, self.bc)


class CorrectorField:
    """Nodal vector field ``phi`` on a grid (values shape ``(n_nodes, d)``)."""

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != grid.n_nodes:
            raise ContractViolation("corrector values must have shape (n_nodes, d)")
        self.grid = grid
        self.values = values

    @property
    def d(self):
        return self.values.shape[1]

    def sup_norm(self):
        return float(np.abs(self.values).max()) if self.values.size else 0.0

    def as_array(self):
        """Values reshaped to ``node_shape + (d,)``."""
        return self.values.reshape(self.grid.node_shape + (self.d,))

    def gradients(self):
        """Gradient at every Gauss point, shape ``(n_elements, n_gp, d, dim)``."""
        U = self.values[self.grid.conn]
        return np.einsum("eai,gaj->egij", U, self.grid.dN)

    def to_csv(self, path):
        dim = self.grid.dim
        header = [f"x{k}" for k in range(dim)] + [f"phi{i}" for i in range(self.d)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for c, v in zip(self.grid.node_coords, self.values):
                w.writerow([format(t, ".17g") for t in c] + [format(t, ".17g") for t in v])
