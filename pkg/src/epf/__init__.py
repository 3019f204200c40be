"""Extended Parameter Filter: online joint state and parameter estimation."""

from .models import (
    GaussianPrior,
    ModelSpec,
    Trajectory,
    make_cauchy,
    make_gaussian_system,
    make_linear,
    make_model,
    make_sin,
    make_star,
    simulate,
)
from .polynomial import Poly, TaylorExpansion
from .samplers import SamplerConfig
from .filters import (
    FilterOutput,
    run_epf,
    run_liu_west,
    run_sir,
    run_sir_augmented,
    run_storvik,
)

__version__ = "0.1.0"
