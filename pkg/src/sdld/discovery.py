"""Scikit-learn style front end for the discovery pipeline.

``SubgroupDiscovery`` is a fit/predict estimator: ``fit`` takes a
:class:`~sdld.panel.PanelDataset` and runs the honest pipeline end to end;
``predict`` routes new baseline-covariate rows through the final tree and
returns the honest effect estimate of the leaf each row lands in. It follows
the scikit-learn parameter conventions (everything set in ``__init__``,
``get_params`` / ``set_params`` / ``clone`` supported, fitted attributes
suffixed with an underscore).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .config import CHI2_1_95, RunConfig
from .errors import SchemaMismatchError
from .inference import run_sdld
from .panel import PanelDataset


def check_baseline_matrix(X, n_features=None):
    """Validate and coerce a baseline-covariate matrix to 2-d float."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise SchemaMismatchError(f"expected a 2-d covariate matrix, got ndim={X.ndim}")
    if n_features is not None and X.shape[1] != n_features:
        raise SchemaMismatchError(
            f"expected {n_features} baseline covariates, got {X.shape[1]}"
        )
    if not np.all(np.isfinite(X)):
        raise SchemaMismatchError("baseline covariates must be finite")
    return X


class SubgroupDiscovery(BaseEstimator):
    """Discover subgroups with heterogeneous effects of a sustained treatment.

    Parameters mirror :class:`~sdld.config.RunConfig`; see there for meaning
    and defaults. After ``fit``, the selected tree is in ``tree_`` and the
    per-leaf honest report in ``report_``.

    Examples
    --------
    >>> from sdld.simulation import simulate_panel
    >>> model = SubgroupDiscovery(bootstrap_samples=50, seed=3)
    >>> model.fit(simulate_panel(4000, seed=1))     # doctest: +SKIP
    >>> model.predict([[0., 0., 0., 0., 0.]])       # doctest: +SKIP
    """

    def __init__(self, estimator="tmle", regime_treated=None, regime_control=None,
                 lambda_penalty=CHI2_1_95, discovery_fraction=0.6, build_fraction=0.8,
                 min_node_size=200, min_regime_followers=25, max_depth=5,
                 cutpoint_grid=15, truncation_bound=0.01, fluctuation="logistic",
                 outcome_design="history", propensity_design="history",
                 bootstrap_samples=1000, ci_level=0.95, seed=0, threads=1):
        self.estimator = estimator
        self.regime_treated = regime_treated
        self.regime_control = regime_control
        self.lambda_penalty = lambda_penalty
        self.discovery_fraction = discovery_fraction
        self.build_fraction = build_fraction
        self.min_node_size = min_node_size
        self.min_regime_followers = min_regime_followers
        self.max_depth = max_depth
        self.cutpoint_grid = cutpoint_grid
        self.truncation_bound = truncation_bound
        self.fluctuation = fluctuation
        self.outcome_design = outcome_design
        self.propensity_design = propensity_design
        self.bootstrap_samples = bootstrap_samples
        self.ci_level = ci_level
        self.seed = seed
        self.threads = threads

    def _config(self):
        return RunConfig(
            estimator=self.estimator,
            regime_treated=self.regime_treated,
            regime_control=self.regime_control,
            lambda_penalty=self.lambda_penalty,
            discovery_fraction=self.discovery_fraction,
            build_fraction=self.build_fraction,
            min_node_size=self.min_node_size,
            min_regime_followers=self.min_regime_followers,
            max_depth=self.max_depth,
            cutpoint_grid=self.cutpoint_grid,
            truncation_bound=self.truncation_bound,
            fluctuation=self.fluctuation,
            outcome_design=self.outcome_design,
            propensity_design=self.propensity_design,
            bootstrap_samples=self.bootstrap_samples,
            ci_level=self.ci_level,
            seed=self.seed,
            threads=self.threads,
        )

    def fit(self, data, y=None):
        """Run discovery, selection, and honest estimation on a panel dataset."""
        if not isinstance(data, PanelDataset):
            raise TypeError("fit expects a PanelDataset")
        report = run_sdld(data, self._config())
        self.report_ = report
        self.tree_ = report.tree
        self.n_features_in_ = data.baseline.shape[1]
        self.leaf_effects_ = {leaf.node_id: leaf.delta for leaf in report.leaves}
        return self

    def _check_fitted(self):
        if not hasattr(self, "tree_"):
            raise NotFittedError("this SubgroupDiscovery instance is not fitted yet")

    def apply(self, X):
        """Terminal-node id of the final tree for each baseline row."""
        self._check_fitted()
        X = check_baseline_matrix(X, self.n_features_in_)
        return self.tree_.apply(X)

    def predict(self, X):
        """Honest leaf effect estimate for each baseline row (NaN if inestimable)."""
        leaf_ids = self.apply(X)
        return np.array([
            np.nan if self.leaf_effects_[i] is None else self.leaf_effects_[i]
            for i in leaf_ids
        ])
