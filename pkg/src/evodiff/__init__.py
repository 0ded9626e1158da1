"""Variance-optimal diffusion ODE solvers checked against analytic denoisers."""

__version__ = "0.1.0"

from .exceptions import (DegenerateDirection, DomainError, EvoDiffError, FallbackApplied,
                         NumericalError, ParseError, ValidationError)
from .schedule import (VEEDM, NoiseSchedule, Parameterization, RStrategy, TimeGrid, VPCosine,
                       VPLinear, kappa, make_grid, step_ratio)
from .oracle import DenoiserOracle, GaussianData, MixtureData, cfg_combine, default_gmm
from .solver import (DDIM, EVODiff, DPMpp2M, DPMSolver2S, FDSingle, HeunEDM, PlainKappa,
                     REMulti, RESingle, RunResult, StepRecord, expected_nfe, make_solver, run)
from .estimator import DiffusionSampler

__all__ = [
    "DDIM", "DPMSolver2S", "DPMpp2M", "DegenerateDirection", "DenoiserOracle", "DiffusionSampler",
    "DomainError", "EVODiff", "EvoDiffError", "FDSingle", "FallbackApplied", "GaussianData",
    "HeunEDM", "MixtureData", "NoiseSchedule", "NumericalError", "Parameterization", "ParseError",
    "PlainKappa", "REMulti", "RESingle", "RStrategy", "RunResult", "StepRecord", "TimeGrid",
    "VEEDM", "VPCosine", "VPLinear", "ValidationError", "cfg_combine", "default_gmm",
    "expected_nfe", "kappa", "make_grid", "make_solver", "run", "step_ratio",
]
