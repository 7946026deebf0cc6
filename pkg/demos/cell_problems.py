"""
Cell problems for periodic composites
=====================================

Effective energies of a few two-phase microstructures, compared with the
closed forms they should reproduce.
"""
import numpy as np

from homoglab import CellGrid, quadratic, solve_cell
from homoglab.integrand import Checkerboard, Laminate

# a layered conductor: phases 1 and 4, equal volume fractions
f = quadratic(coefficient=Laminate("z", 0, (1.0, 4.0)))
sol = solve_cell(f.frozen([0.0], [0.0]), [[1.0]], CellGrid(1, n=256))
print("laminate      ", sol.value, "closed form", 1 / (0.5 / 1 + 0.5 / 4))

# the corrector is piecewise linear and vanishes at the cell ends
phi = sol.corrector.values[:, 0]
print("corrector range", phi.min(), phi.max())

# a checkerboard approaches the geometric mean sqrt(1 * 4) = 2 under refinement
g = quadratic(N=2, coefficient=Checkerboard("z", (1.0, 4.0))).frozen([0, 0], [0, 0])
for n in (8, 16, 32, 64):
    print(f"checkerboard n={n:3d}", solve_cell(g, [[1.0, 0.0]], CellGrid(2, n=n)).value)
