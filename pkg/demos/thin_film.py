"""
Membrane energy of a thin film
==============================

For a constant quadratic energy the membrane density is the Schur
complement that eliminates the transverse column.  Layers through the
thickness are averaged arithmetically.
"""
import numpy as np

from homoglab import FilmConfig, membrane_density, quadratic, schur_membrane_oracle
from homoglab.integrand import Laminate
from homoglab.reiterated import CellConfig
from homoglab.thinfilm import MembraneConfig

rng = np.random.default_rng(0)
A = rng.standard_normal((9, 9))
C = A @ A.T / 9 + 0.2 * np.eye(9)
xi_bar = rng.standard_normal((3, 2))

cfg = FilmConfig(inner=CellConfig(n=4), membrane=MembraneConfig(n=4, n3=4))
est = membrane_density(quadratic(kind="film", matrix=C), [0, 0], xi_bar, cfg)
print("membrane cell", est.value)
print("Schur oracle ", schur_membrane_oracle(C, xi_bar))

W = quadratic(kind="film", coefficient=Laminate("y", 2, (1.0, 4.0)))
est = membrane_density(W, [0, 0], xi_bar, FilmConfig(membrane=MembraneConfig(n=4)))
print("layered film ", est.value, "arithmetic mean", 2.5 * np.sum(xi_bar ** 2))
