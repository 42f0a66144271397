"""Decoherence as a convolution of exponential and Gaussian decay.

Spin-bath exact diagonalization, spectral analysis of the overlap, echo
dynamics, exponential/Gaussian/convolution fitting, and an exact quantum
Brownian motion solver, plus recipes reproducing the reference figures.
"""
__version__ = "0.1.0"

from .convolution import (
    ConvolutionParams,
    FitResult,
    convolution_numeric,
    convolution_value,
    decoherence_time,
    fit_all,
    fit_model,
    scaling_exponent,
)
from .echo import (
    DecoherenceTrace,
    InitialEnvironmentState,
    decoherence_factor,
    echo_generator_residual,
    thermal_decoherence_factor,
)
from .qbm import BvpSolution, KernelTable, QbmConfig, QbmTrace, qbm_zero_temperature_trace, rb_trace, solve_bvp
from .spectral import (
    DensityOfStates,
    LorentzianFit,
    OverlapProfile,
    SpectralDecomposition,
    density_of_states,
    diagonalize,
    effective_width,
    fit_lorentzian,
    golden_rule_gamma,
    measure_v_squared,
    overlap_profile,
)
from .spin_model import SpinBathConfig, SpinBathModel, build_environment, build_interaction, build_model, build_perturbed
