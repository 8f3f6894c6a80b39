"""Natural direct and indirect effects for longitudinal outcomes.

The package estimates how a binary baseline exposure affects repeated
outcomes directly versus through repeatedly measured categorical mediators.
Mediator paths are handled with inverse-probability weights in a natural
effect model; uncertainty comes from a cluster-robust sandwich and from a
perturbed parametric bootstrap that propagates weight-model noise.
"""

from .bootstrap import (
    BootstrapConfig,
    BootstrapResult,
    bootstrap_ci,
    perturb_coefficients,
    run_perturbed_bootstrap,
)
from .dataset import (
    LongDataset,
    ValidationReport,
    VariableSchema,
    load_dataset,
    validate_frame,
)
from .design import DesignInfo, build_design, parse_term, parse_terms
from .effects import (
    EffectSummary,
    counterfactual_probs,
    decompose,
    effects_frame,
    probs_frame,
    proportion_mediated,
)
from .estimator import NaturalEffectsIPW
from .expand import expand_end_of_study, expand_per_time
from .glm import BinaryLogit, FittedGlm, MultinomialLogit, fit_glm, multinomial_loglik
from .nem import NaturalEffectFit, NemFormula, fit_nem, wald_tests
from .scm import OracleValue, StructuralModel, Variable, load_model, preset_model
from .weights import WeightTable, compute_weights, truncate_weights, weight_summary

__all__ = [
    "BinaryLogit",
    "BootstrapConfig",
    "BootstrapResult",
    "DesignInfo",
    "EffectSummary",
    "FittedGlm",
    "LongDataset",
    "MultinomialLogit",
    "NaturalEffectFit",
    "NaturalEffectsIPW",
    "NemFormula",
    "OracleValue",
    "StructuralModel",
    "ValidationReport",
    "Variable",
    "VariableSchema",
    "WeightTable",
    "bootstrap_ci",
    "build_design",
    "compute_weights",
    "counterfactual_probs",
    "decompose",
    "effects_frame",
    "expand_end_of_study",
    "expand_per_time",
    "fit_glm",
    "fit_nem",
    "load_dataset",
    "load_model",
    "multinomial_loglik",
    "parse_term",
    "parse_terms",
    "perturb_coefficients",
    "preset_model",
    "probs_frame",
    "proportion_mediated",
    "run_perturbed_bootstrap",
    "truncate_weights",
    "validate_frame",
    "wald_tests",
    "weight_summary",
]

__version__ = "0.1.0"
