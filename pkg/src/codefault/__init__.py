"""Co-default probability engine.

Computes the probability that two or more banks default within a short
window of each other under a multivariate doubly stochastic default-time
model with a common market-stress shock: exact closed forms for constant
intensities, nested quadrature along frozen state paths, bounds,
comparative statics, and a reproducible Monte Carlo oracle.
"""

from .model import (
    AffineState,
    Constant,
    DestructiveCompetition,
    Estimate,
    IntensityCurve,
    MarketModel,
    PiecewiseDeterministic,
    ProbabilityReport,
    Quantity,
    StatePath,
    compile_intensity,
    integrated_intensity,
    inverse_integrated_intensity,
    validate,
)
from .analytic import ConstRates
from .pathwise import FrozenModel, freeze
from .config import Scenario, load_scenario, parse_scenario

__version__ = "0.1.0"
