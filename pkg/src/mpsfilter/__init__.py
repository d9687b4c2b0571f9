"""Energy-variance filtering of matrix product states.

Build matrix product states of prescribed small energy variance for local
one-dimensional spin Hamiltonians by Chebyshev spectral filtering, measure
the entanglement cost, and check the scaling laws against exact dense
references and a variational baseline.
"""

from .analysis import (ScalingFit, d_tr, energy_correlations, energy_profile,
                       energy_variance, fit_D0, fit_power,
                       trace_distance_inf_T, variance)
from .config import (ExperimentConfig, config_from_manifest, load_config,
                     manifest_from_config, parse_config, resolve_schedule)
from .filtering import (FilterTrace, cheby_filter, cheby_filter_exact_traced,
                        cheby_filter_multi, cosine_filter_exact)
from .hamiltonian import MPO, Model, build_ising, build_xyz
from .kernels import (delta_coefficients, jackson, predicted_delta_cheby,
                      predicted_delta_cos)
from .mps import (MPS, apply_mpo, block_entropy, canonicalize, compress,
                  entropy, expectation, from_product, inner, load, norm,
                  normalized, random_mps, save, schmidt)
from .runner import analyze, build_model, run
from .states import (build_initial_state, energy_target_state, step_state,
                     y_plus_state, z_staggered2_state)
from .variational import CostTrace, VarOpts, minimize_variance

__version__ = "0.1.0"

__all__ = [
    "CostTrace",
    "ExperimentConfig",
    "FilterTrace",
    "MPO",
    "MPS",
    "Model",
    "ScalingFit",
    "VarOpts",
    "analyze",
    "apply_mpo",
    "block_entropy",
    "build_initial_state",
    "build_ising",
    "build_model",
    "build_xyz",
    "canonicalize",
    "cheby_filter",
    "cheby_filter_exact_traced",
    "cheby_filter_multi",
    "compress",
    "config_from_manifest",
    "cosine_filter_exact",
    "d_tr",
    "delta_coefficients",
    "energy_correlations",
    "energy_profile",
    "energy_target_state",
    "energy_variance",
    "entropy",
    "expectation",
    "fit_D0",
    "fit_power",
    "from_product",
    "inner",
    "jackson",
    "load",
    "load_config",
    "manifest_from_config",
    "minimize_variance",
    "norm",
    "normalized",
    "parse_config",
    "predicted_delta_cheby",
    "predicted_delta_cos",
    "random_mps",
    "resolve_schedule",
    "run",
    "save",
    "schmidt",
    "step_state",
    "trace_distance_inf_T",
    "variance",
    "y_plus_state",
    "z_staggered2_state",
]
