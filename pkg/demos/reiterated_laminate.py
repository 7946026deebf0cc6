"""
Two fast scales
===============

A coefficient a(y, z) = alpha(y) beta(z) oscillates on two scales.  The
effective energy is obtained by homogenizing in z first and then in y.
"""
import numpy as np

from homoglab import ReiterationConfig, laminate_oracle, outer_density, quadratic, reiterated_tensor
from homoglab.integrand import Checkerboard, Laminate, Product, Trigonometric, pnorm

coef = Product((Laminate("y", 0, (1.0, 4.0)), Laminate("z", 0, (1.0, 9.0))))
f = quadratic(coefficient=coef)

oracle = laminate_oracle([(0.5, 1), (0.5, 4)], "iterated", [(0.5, 1), (0.5, 9)])
for path in ("quadratic", "nested"):
    est = outer_density(f, [0.0], [[1.0]], ReiterationConfig(path=path))
    print(f"{path:9s}", est.value, "oracle", oracle, "inner solves", est.inner_solve_count)

# nonlinear growth: only the nested path applies
g = pnorm(3.0, coefficient=coef)
print("p = 3     ", outer_density(g, [0.0], [[1.0]], ReiterationConfig(path="nested")).value,
      "oracle", laminate_oracle([(0.5, 1), (0.5, 4)], "iterated", [(0.5, 1), (0.5, 9)], p=3.0))

# a 2D effective tensor: smooth slow profile in y, checkerboard in z
h = quadratic(N=2, coefficient=Product((Trigonometric("y", 0, 2.0, 1.0), Checkerboard("z", (1.0, 4.0)))))
E = reiterated_tensor(h)
print("effective tensor\n", np.round(E.matrix, 6))
