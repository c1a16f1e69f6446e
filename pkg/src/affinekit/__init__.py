"""Numerics for affine jump-diffusions on the canonical state space R_+^m x R^n.

The library computes the Riccati flow of the characteristic exponent,
transition and invariant densities by Fourier inversion, a computable
certificate for the large-frequency envelope of the characteristic function,
and ergodicity diagnostics (Lyapunov drift, overlap of transition kernels,
total-variation decay), cross-validated against closed-form special cases and
an Euler Monte Carlo oracle.
"""

from . import errors
from .model import AffineModel, JumpMeasure, ValidationReport, levy_f_term, levy_r_term, validate
from .riccati import RiccatiPath, SolverSettings, psi_J_closed, solve_flow, solve_flow_batch, vector_field
from .spectral import TailBoundCert, charfn, cone_epsilon, gramian_delta, kalman_rank, tail_bound_check, tail_params
from .density import (
    DensityField,
    GridSpec,
    choose_truncation,
    invariant_charfn,
    invariant_density,
    invert_density,
    tv_distance,
)
from .montecarlo import PathEnsemble, SimConfig, compare_density, empirical_charfn, simulate_paths
from .ergodicity import (
    DecayReport,
    DriftFit,
    LyapunovData,
    dobrushin_check,
    drift_fit,
    generator_on_V,
    lyapunov_norms,
    split_semigroups,
    tv_decay_report,
)

__version__ = "0.1.0"

__all__ = [
    "AffineModel",
    "JumpMeasure",
    "ValidationReport",
    "validate",
    "levy_f_term",
    "levy_r_term",
    "RiccatiPath",
    "SolverSettings",
    "solve_flow",
    "solve_flow_batch",
    "vector_field",
    "psi_J_closed",
    "TailBoundCert",
    "charfn",
    "kalman_rank",
    "gramian_delta",
    "tail_params",
    "cone_epsilon",
    "tail_bound_check",
    "GridSpec",
    "DensityField",
    "choose_truncation",
    "invert_density",
    "invariant_charfn",
    "invariant_density",
    "tv_distance",
    "SimConfig",
    "PathEnsemble",
    "simulate_paths",
    "empirical_charfn",
    "compare_density",
    "LyapunovData",
    "DriftFit",
    "DecayReport",
    "split_semigroups",
    "lyapunov_norms",
    "generator_on_V",
    "drift_fit",
    "dobrushin_check",
    "tv_decay_report",
    "errors",
]
