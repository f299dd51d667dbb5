"""Incompressible pressure-based solvers: coupled p-U and a segregated SIMPLE reference."""

from .coupled import (IncompressibleState, PatchCondition, PressureDiscretization, coupled_iterate,
                      divergence_check, make_patch_conditions, momentum_diagonal_operator,
                      normalized_residuals, pressure_variables, rhie_chow_flux)
from .simple import DivergenceMonitor, simple_iterate
