"""Numerical reiterated homogenization and thin-film effective densities."""
from .cell import (CellSolution, DensityEstimate, EffectiveTensor, SolverConfig, effective_tangent,
                   quadratic_corrector_tensor, solve_cell, t_extrapolate)
from .direct import DirectSimConfig, gamma_gap_report, minimize_F_eps_1d, minimize_film_eps_strip
from .errors import BudgetExhausted, ContractViolation, HomoglabError, IntegrandError, SolverError
from .grid import CellGrid, CorrectorField, FilmGrid
from .integrand import (GrowthSpec, double_well, eval_integrand, eval_stress, from_json, pnorm,
                        quadratic, validate_hypotheses)
from .io import emit_table
from .reiterated import (CellConfig, ReiterationConfig, density_sweep, inner_density, laminate_oracle,
                         outer_density, reiterated_tensor)
from .thinfilm import (FilmConfig, MembraneConfig, corollary_single_scale, film_inner_density,
                       membrane_density, schur_membrane_oracle)

__version__ = "0.1.0"
