"""Monte Carlo effective-diffusivity estimation for passive tracers in
synthetic random incompressible velocity fields.

Core pieces: spectral field synthesis with Ornstein-Uhlenbeck mode
amplitudes (:mod:`.field`), volume-preserving deterministic integrators
plus Brownian kicks (:mod:`.integrators`), reproducible parallel
ensembles (:mod:`.ensemble`), and estimators/diagnostics
(:mod:`.analysis`).
"""

__version__ = "0.1.0"

from .analysis import (DecayCurve, DiffusivityCurve, SlopeFit,
                       convergence_study, decay_diagnostic,
                       effective_diffusivity, fit_convergence,
                       residual_sweep)
from .ensemble import (ExperimentConfig, MomentAccumulator, SeedPolicy,
                       estimate_mean_drift, run_ensemble, run_path)
from .errors import ConfigurationError, EnsembleAbortError, NonConvergenceError
from .field import (OuAmplitudeState, SpectralModeSet, VelocityField,
                    advance_ou, amplitude_vectors, check_divergence,
                    eval_velocity, eval_velocity_jacobian, init_ou,
                    mode_velocity, sample_modes)
from .integrators import (SchemeConfig, StepRecord, add_brownian_kick,
                          jacobian_det_fd, step_euler, step_full,
                          step_midpoint2d, step_modesplit)

__all__ = [
    "__version__",
    "ConfigurationError", "EnsembleAbortError", "NonConvergenceError",
    "SpectralModeSet", "OuAmplitudeState", "VelocityField",
    "sample_modes", "init_ou", "advance_ou", "amplitude_vectors",
    "eval_velocity", "eval_velocity_jacobian", "mode_velocity",
    "check_divergence",
    "SchemeConfig", "StepRecord", "step_midpoint2d", "step_modesplit",
    "step_euler", "step_full", "add_brownian_kick", "jacobian_det_fd",
    "ExperimentConfig", "SeedPolicy", "MomentAccumulator",
    "run_path", "run_ensemble", "estimate_mean_drift",
    "DiffusivityCurve", "SlopeFit", "DecayCurve",
    "effective_diffusivity", "fit_convergence", "convergence_study",
    "decay_diagnostic", "residual_sweep",
]
