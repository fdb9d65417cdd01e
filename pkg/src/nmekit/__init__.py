"""Count-regression toolkit for weekly near-miss telematics data.

Fits exposure-offset Poisson, zero-inflated Poisson, and grouped
zero-inflated (generalized) Poisson mixtures to driver-week count tables,
with stratified grouped cross-validation and sensitivity sweeps.
"""

__version__ = "0.1.0"

from .components import (
    ComponentParams,
    Dispersion,
    InflationModel,
    MeanModel,
    component_loglik,
    component_logpmf,
    fit_component,
    linear_mean,
    predicted_mean,
    zero_prob,
)
from .data import (
    EVENT_NAMES,
    NME_TOTAL,
    TARGET_CHOICES,
    FeatureStats,
    FoldAssignment,
    ObservationTable,
    filter_features,
    load_csv,
    standardize,
    stratified_group_kfold,
    write_csv,
)
from .metrics import (
    MetricsReport,
    aic_bic,
    brier_zero,
    evaluate,
    mcfadden_r2,
    pearson_chi2,
    poisson_deviance,
    rmse,
)
from .mixture import (
    EmConfig,
    MixtureModel,
    driver_group_logliks,
    e_step,
    fit_em,
    initialize,
    m_step,
    mixture_loglik,
    mixture_zero_prob,
    observed_loglik,
    predict_mean,
)
from .pipeline import (
    FittedModel,
    ModelSpec,
    fit_null_poisson,
    fit_pipeline,
    load_model,
    save_model,
)
from .pmf import gp_logpmf, poisson_logpmf, zigp_logpmf, zip_logpmf
from .simulate import (
    GroupTruth,
    SimConfig,
    generate,
    pmf_bruteforce_check,
    recovery_report,
    sample_gp,
)
from .sweep import SweepSpec, derive_seed, run_cv, sweep
