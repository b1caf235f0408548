"""Forward solvers and inverse recovery for time-fractional diffusion-wave equations with Robin conditions."""

from .errors import (BiasWarning, ConditioningWarning, ConfigError, DomainError, EvaluationError, FitError,
                     FracInvError, IllPosednessWarning, NumericalError, SpectralError, UsageError)
from .forward import BoundaryTrace, ModelParams, SourceSpec, boundary_trace, solve_ivp, solve_source
from .inverse import (SpectralFingerprint, deconvolve_source, distinguishability, fit_order_and_modes,
                      laplace_trace, recover, recover_initial, recover_operator)
from .kernel import solve_goursat, transform
from .mittag_leffler import ml
from .sturm_liouville import InitialData, Mesh, Potential, RobinPair, eigensystem, mode_coefficients

__version__ = "0.1.0"
