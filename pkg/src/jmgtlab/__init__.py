"""Switched JMGT acoustics: spectral solver, resolvent residues and
nonlinearity-parameter tomography."""

from .errors import *  # noqa: F401,F403
from .spectral import EigenBasis, Grid, build_basis, sobolev_norm, to_grid, to_modal
from .model import (CoefficientField, Cutoff, SpatialProfile, TimeProfile, build_excitation,
                    f_weights, nu_factors)
from .solver import (Direction, LinearizedSolver, Solver, State, Trajectory, detect_Tstar,
                     linear_tail, simulate, solve_linearized, step, taylor_remainder_check)
from .residues import (ResidueSet, basis_poles, estimate_poles, modal_residue_closed_form, poles,
                       residue_from_trace, resolvent_residue, u_to_z_residues)
from .inversion import (Experiment, ObservationOp, ResidueImage, build_Blambda, forward_residues,
                        linearized_apply, lower_bound, newton_kappa, observe, reconstruct)
from .config import ExperimentConfig
from .pipeline import RunReport, build, run

__version__ = "0.1.0"
