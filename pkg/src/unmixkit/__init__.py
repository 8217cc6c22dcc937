"""Library-based hyperspectral unmixing: solvers, ensembles and an evaluation harness."""
from .ensemble import BmaConfig, WeightedModel, bic_of_fit, build_quadratic_features, unmix_bma, unmix_bma_q
from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    NNLSIterationError,
    NotSPDError,
    PValueError,
    SolverError,
    UnmixError,
)
from .harness import (
    MixtureTruth,
    RegionalSummary,
    aggregate_region,
    detect,
    generate_mixture,
    run_comparison,
    synthetic_library,
    unmix,
)
from .metrics import rmse
from .solvers import (
    AbundanceModel,
    SolverConfig,
    Technique,
    stepwise_pvalues,
    unmix_bsr,
    unmix_fsr,
    unmix_lasso,
    unmix_nnls,
    unmix_ols,
    unmix_ridge,
)
from .spectra import ObservedPixel, RegionOfInterest, SpectralLibrary, Spectrum, resolve_target, select_bands, validate_library

__version__ = "0.1.0"
