"""Implied weights of linear-regression causal estimators.

Design-stage workflow: load data, fit :class:`RegressionWeights` (or
:class:`IVWeights` for two-stage least squares) without ever touching the
outcome, inspect balance/representativeness/extrapolation diagnostics,
then estimate effects with robust inference via
:func:`fit_outcome_model` / :func:`effect_summary`.
"""

from .companion import (
    MatchResult,
    fit_propensity,
    generate_instrument,
    generate_multilevel,
    nn_match,
)
from .dataset import Column, Dataset, Roles, from_dataframe, load_csv, subgroup_counts
from .diagnostics import (
    BalanceTable,
    DistributionSummary,
    balance_summary,
    distribution_summary,
    ess,
    ks_stat,
    plot_data,
    smd,
    target_smd,
)
from .engine import (
    MomentSet,
    moment_set,
    mri_weights_closed_form,
    uri_target_profile,
    uri_weights_closed_form,
)
from .estimation import (
    EffectReport,
    EffectRow,
    InfluenceSet,
    OutcomeFit,
    effect_summary,
    fit_outcome_model,
    influence_measures,
    robust_vcov,
)
from .estimators import IVWeights, RegressionWeights
from .exceptions import (
    ConvergenceError,
    DataError,
    EstimationError,
    FormulaError,
    ImpliedWeightsError,
    SingularDesignError,
    SpecificationError,
    VerificationError,
)
from .formula import (
    DesignMatrix,
    Formula,
    build_design,
    expand_balance_columns,
    parse_formula,
)
from .verify import verify_fit

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "Column",
    "Dataset",
    "Roles",
    "load_csv",
    "from_dataframe",
    "subgroup_counts",
    "Formula",
    "DesignMatrix",
    "parse_formula",
    "build_design",
    "expand_balance_columns",
    "MomentSet",
    "moment_set",
    "uri_weights_closed_form",
    "mri_weights_closed_form",
    "uri_target_profile",
    "RegressionWeights",
    "IVWeights",
    "BalanceTable",
    "DistributionSummary",
    "balance_summary",
    "distribution_summary",
    "smd",
    "target_smd",
    "ks_stat",
    "ess",
    "plot_data",
    "OutcomeFit",
    "EffectRow",
    "EffectReport",
    "InfluenceSet",
    "fit_outcome_model",
    "effect_summary",
    "robust_vcov",
    "influence_measures",
    "MatchResult",
    "fit_propensity",
    "nn_match",
    "generate_multilevel",
    "generate_instrument",
    "verify_fit",
    "ImpliedWeightsError",
    "DataError",
    "FormulaError",
    "SingularDesignError",
    "EstimationError",
    "ConvergenceError",
    "SpecificationError",
    "VerificationError",
]
