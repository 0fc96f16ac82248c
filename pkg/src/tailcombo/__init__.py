"""Linear combinations of covariates chosen for tail dependence with a response."""

from .data import Sample, Term, parse_terms
from .errors import (
    ConfigError,
    DataError,
    EstimationError,
    NumericError,
    SearchError,
    TailComboError,
)
from .lincomb import DesignConfig, PolarCoefficients, build_design, combine_and_transform
from .marginals import EmpiricalMarginal, ResponseTransform, fit_blended
from .optimize import FitSettings, OptimizerConfig, bootstrap_se, fit, fit_sample, make_objective
from .selection import CoolingSchedule, ModelSpace, ModelString, cv_score, exhaustive_search
from .taildep import SmoothThreshold, chi_hat, gamma_hat, gamma_profile

__version__ = "0.1.0"
