"""Model selection for ordinary differential equation models by pairwise
regularised likelihood-ratio testing."""

__version__ = "0.1.0"

from .integrator import (  # noqa: E402
    IntegrationError,
    IntegratorOptions,
    integrate,
    integrate_with_sensitivities,
    integrate_with_variations,
)
from .likelihood import Dataset, FitOptions, FitResult, ThetaVector, fit_mle  # noqa: E402
from .model_dsl import OdeModel, bundled_model, load_model, parse_model  # noqa: E402
from .swtest import Decision, SwTestResult, sw_test  # noqa: E402
from .tournament import TournamentReport, run_tournament  # noqa: E402

__all__ = [
    "Dataset", "Decision", "FitOptions", "FitResult", "IntegrationError",
    "IntegratorOptions", "OdeModel", "SwTestResult", "ThetaVector",
    "TournamentReport", "bundled_model", "fit_mle", "integrate",
    "integrate_with_sensitivities", "integrate_with_variations", "load_model",
    "parse_model", "run_tournament", "sw_test",
]
