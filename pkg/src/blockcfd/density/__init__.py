"""Implicit density-based solver for the Euler equations."""

from .assembly import (BoundaryCondition, DensityDiscretization, assemble_jacobian,
                       density_variables, make_boundaries, primitive_from_dict)
from .gas import GasModel, euler_flux, flux_jacobian
from .muscl import FaceStates, barth_jespersen, muscl_reconstruct
from .riemann import hllc_flux, numerical_flux, roe_flux, rusanov_flux, spectral_radius
from .solver import (PseudoTimeControl, StepResult, explicit_march, implicit_step, residual_norms,
                     sod_initial, uniform_state)
