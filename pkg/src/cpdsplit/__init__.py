"""Lie-Trotter splitting integrators for charged-particle dynamics in strong magnetic fields."""
from .diagnostics import (ConvergenceReport, DegenerateReference, ErrorRecord, energy_error,
                          rel_error, slope_fit, uniformity_ratio)
from .fields import (INITIAL_STATES, FieldModel, ZeroFieldError, check_nonresonance, constant,
                     energy, hat, make_preset, phi1_apply, phi2_apply, problem1, problem2,
                     rot_apply, v_parallel)
from .integrators import (SchemeId, SolverParams, State, StepFailure, StepStats, Trajectory,
                          analytic_constant, integrate, phi_L, phi_NL_avf, step, step_s1_avf,
                          step_s1_sv, step_s1_vp)
from .reference import OracleFailure, RKConfig, integrate_reference, rhs

__version__ = "0.1.0"
