"""Continuity-method laboratory for transverse Kahler-Einstein metrics on the Hopf fibration."""

__version__ = "0.1.0"

from .errors import (
    AmbiguousSpectrumError,
    ConfigError,
    ConvergenceError,
    InadmissiblePathError,
    ModelError,
    NewtonDivergenceError,
    NonPositiveStateError,
    PositivityError,
    SasakiError,
    SingularOperatorError,
)
from .estimates import (
    EstimateReport,
    GreenKernel,
    RescaledMetric,
    apriori_report,
    estimate_diameter,
    green_lower_bound,
    monotonicity_refinement,
    refine_family,
    rescaled_family_check,
)
from .functionals import (
    FunctionalPath,
    FunctionalReport,
    evaluate_functional,
    functional_I,
    functional_J,
    functional_L,
    functional_M,
    verify_functional_identities,
)
from .ma_solver import (
    ContinuityFamily,
    SolverOptions,
    continuity_solve,
    linearized_apply,
    linearized_solve,
    newton_solve,
    residual,
    uniqueness_experiment,
)
from .model import (
    BasicFunction,
    MetricState,
    ModelConfig,
    TransverseModel,
    build_model,
    compute_h,
    eta_einstein_map,
    load_config,
    metric_state,
    random_potential,
    sasaki_ricci_bound,
    volume,
    volume_invariance,
)
from .spectral import HamiltonianFieldRecord, SpectrumResult, basic_spectrum, hamiltonian_detector
from .sphere import SphereGrid
