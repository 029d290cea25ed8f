"""Quantum-noise spectra of continuously measured spin oscillators.

Modules
-------
model      mode parameters, ensembles and the cesium level builder
engine     multimode frequency-domain solver and homodyne spectra
analytic   closed-form single-mode spectra, envelopes and RWA formulas
fitter     global multi-quadrature spectral fits and synthetic data
optics     ray-matrix design of the flat-top probe beam
cli        command-line front end
"""

from .engine import SpectrumRequest, drift_and_transfer, homodyne_psd, optimum_quadrature, simulate
from .errors import (ConfigurationError, InfeasibleDesignError, ModelError, NumericalError,
                     SingularSolveError, UnstableModelError)
from .fitter import FitProblem, FitResult, global_fit, synthesize_dataset
from .model import (CesiumLevelSpec, EnsembleModel, ExtraneousNoiseSpec, ModeParams,
                    build_cesium_ensemble)
from .traces import PsdTrace

__version__ = "0.1.0"

__all__ = [
    "CesiumLevelSpec", "ConfigurationError", "EnsembleModel", "ExtraneousNoiseSpec",
    "FitProblem", "FitResult", "InfeasibleDesignError", "ModeParams", "ModelError",
    "NumericalError", "PsdTrace", "SingularSolveError", "SpectrumRequest",
    "UnstableModelError", "build_cesium_ensemble", "drift_and_transfer", "global_fit",
    "homodyne_psd", "optimum_quadrature", "simulate", "synthesize_dataset",
]
