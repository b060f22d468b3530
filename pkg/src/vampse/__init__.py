"""Vector AMP for mismatched generalized linear models, with state evolution
and replica-symmetry-breaking instability diagnostics."""

__version__ = "0.1.0"

from .ensembles import (
    MeasurementMatrix,
    SpectralMeasure,
    empirical_spectrum,
    marchenko_pastur_measure,
    row_orthogonal_measure,
    sample_haar_with_spectrum,
    sample_iid_gaussian,
    sample_row_orthogonal,
    spectral_expectation,
)
from .engine import (
    EngineState,
    ProblemInstance,
    Trajectory,
    default_init,
    inject_perturbation,
    lmmse_step,
    measure_growth_rate,
    message_pass,
    run_vamp,
    sample_problem,
)
from .models import ScalarModelPair, build_model_pair
from .state_evolution import (
    MacroState,
    SEModel,
    rs_saddle_residual,
    se_fixed_point,
    se_trajectory,
)
from .stability import (
    StabilityReport,
    at_condition,
    evaluate_stability,
    find_at_threshold,
    growth_matrix,
    micro_instability,
    zeta_moments,
)

__all__ = [
    "__version__",
    "MeasurementMatrix", "SpectralMeasure", "empirical_spectrum",
    "marchenko_pastur_measure", "row_orthogonal_measure",
    "sample_haar_with_spectrum", "sample_iid_gaussian", "sample_row_orthogonal",
    "spectral_expectation",
    "EngineState", "ProblemInstance", "Trajectory", "default_init",
    "inject_perturbation", "lmmse_step", "measure_growth_rate", "message_pass",
    "run_vamp", "sample_problem",
    "ScalarModelPair", "build_model_pair",
    "MacroState", "SEModel", "rs_saddle_residual", "se_fixed_point", "se_trajectory",
    "StabilityReport", "at_condition", "evaluate_stability", "find_at_threshold",
    "growth_matrix", "micro_instability", "zeta_moments",
]
