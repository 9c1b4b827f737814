"""Subgroup discovery for longitudinal data with time-varying treatments.

A library and CLI for finding subgroups with heterogeneous causal effects of
sustained treatment regimes from panel data with non-randomized treatment
assignment and informative dropout. Trees are grown by maximizing between-child
effect heterogeneity, pruned by weakest-link split complexity, selected on a
held-out validation split, and leaf effects are re-estimated honestly on a
disjoint estimation split with bootstrap confidence intervals. Effects are
estimated by longitudinal TMLE by default, with IPW and iterated-regression
g-computation as alternatives.
"""

from .config import CHI2_1_95, RunConfig
from .discovery import SubgroupDiscovery
from .estimators import (
    EstimateWithIC,
    NuisanceModels,
    SubgroupEffect,
    estimate_effect,
    estimate_gcomp,
    estimate_ipw,
    estimate_tmle,
    fit_propensity_models,
)
from .glm import GlmFit, fit_glm, predict_glm
from .inference import SubgroupReport, bootstrap_ci, run_sdld
from .panel import (
    PanelDataset,
    PanelSchema,
    PeriodRecord,
    SubjectRecord,
    load_panel_csv,
    locf_impute,
    split_dataset,
    validate_monotone_censoring,
    write_panel_csv,
)
from .tree import (
    Condition,
    Node,
    PrunedSequence,
    Split,
    Subgroup,
    Tree,
    assign_subgroup,
    best_split,
    build_initial_tree,
    enumerate_candidate_splits,
    prune_sequence,
    select_final_tree,
    split_complexity,
    splitting_statistic,
)

__version__ = "0.1.0"

__all__ = [
    "CHI2_1_95",
    "Condition",
    "EstimateWithIC",
    "GlmFit",
    "Node",
    "NuisanceModels",
    "PanelDataset",
    "PanelSchema",
    "PeriodRecord",
    "PrunedSequence",
    "RunConfig",
    "Split",
    "Subgroup",
    "SubgroupDiscovery",
    "SubgroupEffect",
    "SubgroupReport",
    "SubjectRecord",
    "Tree",
    "assign_subgroup",
    "best_split",
    "bootstrap_ci",
    "build_initial_tree",
    "enumerate_candidate_splits",
    "estimate_effect",
    "estimate_gcomp",
    "estimate_ipw",
    "estimate_tmle",
    "fit_glm",
    "fit_propensity_models",
    "load_panel_csv",
    "locf_impute",
    "predict_glm",
    "prune_sequence",
    "run_sdld",
    "select_final_tree",
    "split_complexity",
    "split_dataset",
    "splitting_statistic",
    "validate_monotone_censoring",
    "write_panel_csv",
]
