"""Mass-conservative multiscale pressure solver and two-phase flow simulator.

The coarse space is a generalized multiscale finite element space: multiscale
partition-of-unity functions multiplied by local spectral modes. It is
combined with finite-volume conservation constraints imposed through Lagrange
multipliers. Conservative fine-scale fluxes are recovered by local Neumann
solves, and saturation is transported with an explicit upwind scheme.
"""
from .downscale import Downscaler, FluxField, coarse_boundary_flux, downscale_all, local_neumann_solve
from .fem import BoundaryConditions, assemble_constraints, assemble_stiffness, flux_row
from .field import PermeabilityField, SourceField, default_geometry, gen_channel_field, load_field, save_field
from .mesh import CoarseGrid, FineGrid, control_volumes, neighborhood
from .metrics import ErrorReport, energy_norm, relative_errors, saturation_error, weighted_l2_norm
from .msbasis import CoarseSpace, build_coarse_space, build_coarse_spaces, local_eig, solve_pou
from .saddle import (ConstraintRankError, PressureSolution, coarse_system, solve_fine_fv,
                     solve_galerkin, solve_kkt)
from .sim import RunRecord, SimConfig, run_single_phase, run_two_phase, sweep_two_phase
from .transport import (FluidProps, SaturationState, advance_saturation, cfl_dt,
                        fractional_flow, total_mobility)

__version__ = "0.1.0"
