"""Bus section travel-time modelling and multi-section-ahead arrival prediction.

Raw GPS fixes are cut into trips and 500 m sections, reduced to one
travel time per (day, time bin) and modelled per section by a log-domain
seasonal AR model or a per-bin non-stationary AR model.  The section
models are chained to predict arrival times several sections ahead.
"""

from ._validation import DataError
from .config import ConfigError, PipelineConfig, load_config
from .eta import (
    EtaPrediction,
    EtaQuery,
    EtaStep,
    RealtimeStore,
    StoreSnapshot,
    eta_to_stop,
    predict_multi_section,
    update_store,
)
from .evaluation import (
    EvaluationResult,
    ExponentialSmoothingForecaster,
    HistoricalAverageForecaster,
    MetricReport,
    OracleForecaster,
    baseline_exp_smoothing,
    baseline_historical_average,
    evaluate_eta,
    evaluate_split,
    mae,
    mape,
)
from .ingest import (
    BinGrid,
    GpsFix,
    InsufficientCoverageError,
    SectionGrid,
    SectionSeries,
    TravelTimeCleaner,
    TravelTimeRecord,
    TripTrace,
    binize,
    clean,
    haversine,
    identify_trips,
    parse_gps,
    sectionize,
)
from .nsar import NonStationaryARForecaster, NsarModel, learn_all, learn_bin
from .sar import (
    ConvergenceError,
    NonStationaryFitError,
    SarModel,
    SeasonalARForecaster,
    fit_additive,
    fit_best,
    fit_multiplicative,
    screen_and_difference,
    select_order,
)
from .stats import acf, adf, fit_lognormal, ks_lognormal, linreg, pacf, partial_corr, pc_t_test
from .synth import SynthSpec, synth_generate, synth_gps

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
