"""Count regression of reshares on content scores and controls."""

from framecount.regression.covariates import (
    CovariateRow,
    compute_offset,
    election_proximity,
    message_age_days,
    time_of_day,
)
from framecount.regression.design import (
    FINAL_MODEL,
    FULL_MODEL,
    INTERCEPT,
    MAIN_EFFECTS,
    Design,
    DesignError,
    ModelSpec,
    build_design,
)
from framecount.regression.glm import (
    ConvergenceError,
    Family,
    RegressionFit,
    fit_negbin,
    fit_poisson,
    nb_loglik,
    nb_score,
    poisson_loglik,
    poisson_score,
)
from framecount.regression.selection import (
    EliminationStep,
    LRTestResult,
    backward_eliminate,
    chi_square_upper_tail,
    coefficient_table,
    fit_spec,
    incidence_rate_ratios,
    lr_test,
    poisson_vs_negbin,
)

__all__ = [
    "CovariateRow", "compute_offset", "election_proximity", "message_age_days", "time_of_day",
    "FINAL_MODEL", "FULL_MODEL", "INTERCEPT", "MAIN_EFFECTS", "Design", "DesignError",
    "ModelSpec", "build_design", "ConvergenceError", "Family", "RegressionFit", "fit_negbin",
    "fit_poisson", "nb_loglik", "nb_score", "poisson_loglik", "poisson_score", "EliminationStep", "LRTestResult",
    "backward_eliminate", "chi_square_upper_tail", "coefficient_table", "fit_spec", "incidence_rate_ratios",
    "lr_test", "poisson_vs_negbin",
]
