"""emoskit: EMOS postprocessing of ensemble temperature forecasts.

Calibrates raw NWP ensembles into Gaussian predictive distributions by CRPS
minimization, combines two models into one stream with diagnosable weights,
blends the combination seamlessly into the longer-range model at the shorter
model's horizon, and verifies everything with proper scores, PIT histograms
and significance tests. A synthetic scenario generator and a CLI make the
whole chain runnable end to end without any proprietary forecast archive.
"""

from .domain import (
    EnsembleForecast,
    EnsembleStats,
    GaussianPredictive,
    ObservationSeries,
    StationMetadata,
    TrainingSample,
    align,
    ensemble_stats,
)
from .emos import (
    EmosCoefficients,
    FitOptions,
    FitResult,
    MixedEmosCoefficients,
    ModelWeights,
    NonConvergenceError,
    fit_mixed,
    fit_single,
    model_weights,
    predict_mixed,
    predict_single,
)
from .pipeline import (
    CoefficientKey,
    CoefficientStore,
    RollingWindowSpec,
    StoredFit,
    build_archive,
    fit_for_issue,
    mixed_strategy,
    parse_strategy,
    predict_for_issue,
    select_window,
    single_strategy,
)
from .scoring import (
    Conclusion,
    PitHistogram,
    ScoreSeries,
    SignificanceResult,
    VerificationReport,
    crpss,
    diebold_mariano,
    ensemble_crps,
    gaussian_crps,
    gaussian_crps_gradient,
    pit_histogram,
    pit_value,
    stratified_report,
)
from .synth import (
    ModelErrorSpec,
    ScenarioSpec,
    TruthSpec,
    generate_model_ensemble,
    generate_scenario,
    generate_truth,
    interpolate_leads,
)
from .terrain import (
    LAPSE_RATE_C_PER_100M,
    ElevationGrid,
    lapse_correct,
    read_esri_ascii,
    tpi,
    tpi_at_station,
)
from .transition import (
    DEFAULT_TRANSITION_WEIGHTS,
    SeamDiagnostics,
    TransitionSpec,
    seam_diagnostics,
    transition1_bounds,
    transition2_blend,
)

__version__ = "0.1.0"
