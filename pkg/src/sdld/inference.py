"""Honest end-to-end pipeline: discovery on one subject split, estimation on another.

Because splits are chosen by maximizing observed heterogeneity, effect
estimates read off the discovery data are biased upward. ``run_sdld``
therefore partitions subjects into a discovery part (itself split into build
and validation sets for growing and selecting the tree) and a disjoint
estimation part, on which every terminal-node effect and its bootstrap
confidence interval are computed. Subjects are resampled whole, and each
bootstrap replicate has its own RNG stream, so reports are reproducible
byte for byte under a fixed seed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from .config import RunConfig
from .errors import EstimationError
from .estimators import estimate_effect
from .panel import split_dataset
from .tree import Tree, build_initial_tree, prune_sequence, select_final_tree


@dataclass(frozen=True)
class LeafReport:
    """One terminal node of the final tree, estimated on the estimation part."""

    node_id: int
    path: str
    n: int
    share: float
    delta: float | None
    variance: float | None
    ci_lower: float | None
    ci_upper: float | None
    ci_level: float
    bootstrap_effective: int

    @property
    def estimable(self):
        return self.delta is not None


@dataclass
class SubgroupReport:
    """Final tree plus honest per-leaf effects, intervals, and the resolved config."""

    leaves: list[LeafReport]
    tree: Tree
    config: RunConfig
    n_subjects: int
    n_build: int
    n_validate: int
    n_estimation: int
    bootstrap_draws: np.ndarray | None = None  # (B, n_leaves), kept on request

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "n_subjects": self.n_subjects,
            "n_build": self.n_build,
            "n_validate": self.n_validate,
            "n_estimation": self.n_estimation,
            "tree": self.tree.to_dict(),
            "leaves": [
                {
                    "node_id": leaf.node_id,
                    "path": leaf.path,
                    "n": leaf.n,
                    "share": leaf.share,
                    "delta": leaf.delta,
                    "variance": leaf.variance,
                    "ci_lower": leaf.ci_lower,
                    "ci_upper": leaf.ci_upper,
                    "ci_level": leaf.ci_level,
                    "bootstrap_effective": leaf.bootstrap_effective,
                }
                for leaf in self.leaves
            ],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write_json(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([
                "node_id", "path", "n", "share", "delta", "variance",
                "ci_lower", "ci_upper", "ci_level", "bootstrap_effective",
            ])
            for leaf in self.leaves:
                writer.writerow([
                    leaf.node_id, leaf.path, leaf.n, repr(leaf.share),
                    "" if leaf.delta is None else repr(leaf.delta),
                    "" if leaf.variance is None else repr(leaf.variance),
                    "" if leaf.ci_lower is None else repr(leaf.ci_lower),
                    "" if leaf.ci_upper is None else repr(leaf.ci_upper),
                    repr(leaf.ci_level), leaf.bootstrap_effective,
                ])

    def write_draws_csv(self, path):
        if self.bootstrap_draws is None:
            raise ValueError("bootstrap draws were not kept; enable keep_draws")
        leaf_ids = [leaf.node_id for leaf in self.leaves]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["replicate", "node_id", "delta"])
            for b in range(self.bootstrap_draws.shape[0]):
                for col, node_id in enumerate(leaf_ids):
                    value = self.bootstrap_draws[b, col]
                    writer.writerow([b, node_id, "" if np.isnan(value) else repr(value)])


def _leaf_masks(tree, dataset):
    leaf_ids = [node.node_id for node in tree.terminal_nodes()]
    assigned = tree.apply(dataset.baseline)
    return leaf_ids, {node_id: assigned == node_id for node_id in leaf_ids}


def _estimate_leaf(dataset, mask, config):
    if not mask.any():
        return None
    try:
        return estimate_effect(
            dataset, config.regime_treated, config.regime_control, mask,
            **config.estimator_kwargs(),
        )
    except EstimationError:
        return None


def _bootstrap_replicate(dataset, tree, config, seed, index):
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))
    resample = dataset.take(rng.integers(0, dataset.n_subjects, dataset.n_subjects))
    leaf_ids, masks = _leaf_masks(tree, resample)
    out = np.full(len(leaf_ids), np.nan)
    for col, node_id in enumerate(leaf_ids):
        effect = _estimate_leaf(resample, masks[node_id], config)
        if effect is not None:
            out[col] = effect.delta
    return out


@dataclass(frozen=True)
class BootstrapInterval:
    lower: float | None
    upper: float | None
    level: float
    effective_b: int


def bootstrap_ci(dataset, tree, b, level, seed, config, n_jobs=1):
    """Percentile bootstrap intervals for every leaf effect.

    Resamples subjects (whole trajectories) with replacement ``b`` times; the
    tree structure stays fixed and only leaf effects are re-estimated.
    Interval endpoints are order statistics of the bootstrap draws; resamples
    where a leaf cannot be estimated are dropped for that leaf, with the
    per-leaf effective count reported.

    Returns the per-leaf intervals keyed by node id plus the (b, n_leaves)
    draw matrix.
    """
    if b < 1:
        raise ValueError("at least one bootstrap replicate is required")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    config = config.resolve_regimes(dataset.horizon)
    tasks = (
        delayed(_bootstrap_replicate)(dataset, tree, config, seed, i) for i in range(b)
    )
    draws = np.vstack(Parallel(n_jobs=n_jobs)(tasks))
    leaf_ids = [node.node_id for node in tree.terminal_nodes()]
    intervals = {}
    alpha = 1.0 - level
    for col, node_id in enumerate(leaf_ids):
        valid = draws[:, col][~np.isnan(draws[:, col])]
        if valid.size == 0:
            intervals[node_id] = BootstrapInterval(None, None, level, 0)
            continue
        lower = float(np.quantile(valid, alpha / 2.0, method="lower"))
        upper = float(np.quantile(valid, 1.0 - alpha / 2.0, method="higher"))
        intervals[node_id] = BootstrapInterval(lower, upper, level, int(valid.size))
    return intervals, draws


def run_sdld(dataset, config, n_jobs=None):
    """Full discovery pipeline on one dataset, honest estimates included.

    Subjects are split into build / validation / estimation parts; the tree is
    grown on the build part, selected against the validation part, and leaf
    effects with bootstrap intervals come only from the estimation part.
    Leaves whose estimation-part subjects cannot support the estimator are
    reported with missing estimates rather than failing the run.
    """
    config = config.resolve_regimes(dataset.horizon).validate()
    if n_jobs is None:
        n_jobs = config.threads
    build, validate, estimation = split_dataset(
        dataset, config.split_fractions(), config.seed
    )
    initial = build_initial_tree(build, config)
    sequence = prune_sequence(initial)
    final = select_final_tree(sequence, validate, config.lambda_penalty, config)

    leaf_ids, masks = _leaf_masks(final, estimation)
    n_est = estimation.n_subjects
    point = {node_id: _estimate_leaf(estimation, masks[node_id], config)
             for node_id in leaf_ids}
    if config.bootstrap_samples > 0:
        intervals, draws = bootstrap_ci(
            estimation, final, config.bootstrap_samples, config.ci_level,
            config.seed, config, n_jobs=n_jobs,
        )
    else:
        intervals = {node_id: BootstrapInterval(None, None, config.ci_level, 0)
                     for node_id in leaf_ids}
        draws = np.empty((0, len(leaf_ids)))

    names = final.baseline_names
    leaves = []
    for node_id in leaf_ids:
        node = final.node(node_id)
        effect = point[node_id]
        ci = intervals[node_id]
        n_leaf = int(masks[node_id].sum())
        lower, upper = ci.lower, ci.upper
        if effect is not None and lower is not None:
            # percentile endpoints are widened, if needed, to bracket the
            # point estimate computed from the original sample
            lower = min(lower, effect.delta)
            upper = max(upper, effect.delta)
        leaves.append(LeafReport(
            node_id=node_id,
            path=node.subgroup.describe(names),
            n=n_leaf,
            share=n_leaf / n_est if n_est else 0.0,
            delta=None if effect is None else effect.delta,
            variance=None if effect is None else effect.variance,
            ci_lower=lower,
            ci_upper=upper,
            ci_level=config.ci_level,
            bootstrap_effective=ci.effective_b,
        ))
    return SubgroupReport(
        leaves=leaves,
        tree=final,
        config=config,
        n_subjects=dataset.n_subjects,
        n_build=build.n_subjects,
        n_validate=validate.n_subjects,
        n_estimation=n_est,
        bootstrap_draws=draws if config.keep_draws else None,
    )
