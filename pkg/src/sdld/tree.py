"""Interaction-tree growth, weakest-link pruning, and validated final selection.

The tree recursively partitions the baseline-covariate space. Each split is
chosen to maximize the splitting statistic

    (delta_left - delta_right)^2 / (Var[delta_left] + Var[delta_right]),

the squared standardized difference of the child subgroup effects. Growth
continues until a depth cap, a node-size floor, or the absence of any
permissible split. Pruning repeatedly removes the branch whose internal nodes
have the smallest average statistic (the weakest link), producing a nested
candidate sequence; the final tree maximizes validation split complexity
``sum(G_w) - lambda * |internal nodes|`` with the statistics re-estimated on a
held-out validation dataset.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyValidationSetError,
    EstimationError,
    RootNotEstimableError,
    SchemaMismatchError,
    ZeroVarianceError,
)
from .estimators import SubgroupEffect, estimate_effect


@dataclass(frozen=True)
class Condition:
    """One axis-aligned constraint on a baseline covariate."""

    index: int
    op: str  # "<" or ">="
    cutpoint: float

    def holds(self, baseline):
        col = baseline[:, self.index]
        return col < self.cutpoint if self.op == "<" else col >= self.cutpoint

    def describe(self, names):
        name = names[self.index] if names else f"x[{self.index}]"
        return f"{name} {self.op} {self.cutpoint:g}"


@dataclass(frozen=True)
class Subgroup:
    """A conjunction of conditions; the empty conjunction is the root (everyone)."""

    conditions: tuple[Condition, ...] = ()

    def contains(self, baseline):
        baseline = np.asarray(baseline, dtype=float)
        mask = np.ones(baseline.shape[0], dtype=bool)
        for cond in self.conditions:
            mask &= cond.holds(baseline)
        return mask

    def refined(self, condition):
        return Subgroup(self.conditions + (condition,))

    def describe(self, names=None):
        if not self.conditions:
            return "all subjects"
        return " and ".join(c.describe(names) for c in self.conditions)


@dataclass
class Split:
    """A chosen split: covariate, cutpoint, statistic value, and child effects."""

    covariate_index: int
    cutpoint: float
    statistic: float
    left_effect: SubgroupEffect
    right_effect: SubgroupEffect


@dataclass
class Node:
    """A tree node; ``split`` and children are present together or not at all."""

    subgroup: Subgroup
    effect: SubgroupEffect | None
    n: int
    node_id: int = -1
    split: Split | None = None
    left: Node | None = None
    right: Node | None = None

    @property
    def is_leaf(self):
        return self.split is None


@dataclass
class Tree:
    """A binary partition of the baseline-covariate space.

    Terminal subgroups are mutually exclusive and exhaustive by construction
    (every point satisfies exactly one side of each split on its path).
    Node ids are assigned in breadth-first order.
    """

    root: Node
    baseline_names: tuple[str, ...]

    def __post_init__(self):
        self.renumber()

    def renumber(self):
        for i, node in enumerate(self.breadth_first()):
            node.node_id = i

    def breadth_first(self):
        queue = [self.root]
        while queue:
            node = queue.pop(0)
            yield node
            if node.split is not None:
                queue.extend([node.left, node.right])

    def internal_nodes(self):
        return [n for n in self.breadth_first() if n.split is not None]

    def terminal_nodes(self):
        return [n for n in self.breadth_first() if n.split is None]

    @property
    def n_internal(self):
        return len(self.internal_nodes())

    @property
    def n_terminal(self):
        return len(self.terminal_nodes())

    def node(self, node_id):
        for n in self.breadth_first():
            if n.node_id == node_id:
                return n
        raise KeyError(f"no node with id {node_id}")

    def apply(self, baseline):
        """Terminal node id for every row of a baseline matrix."""
        baseline = np.asarray(baseline, dtype=float)
        if baseline.ndim != 2 or baseline.shape[1] != len(self.baseline_names):
            raise SchemaMismatchError(
                f"expected {len(self.baseline_names)} baseline columns, got shape {baseline.shape}"
            )
        out = np.empty(baseline.shape[0], dtype=int)

        def route(node, idx):
            if node.split is None:
                out[idx] = node.node_id
                return
            goes_left = baseline[idx, node.split.covariate_index] < node.split.cutpoint
            route(node.left, idx[goes_left])
            route(node.right, idx[~goes_left])

        route(self.root, np.arange(baseline.shape[0]))
        return out

    def to_dict(self):
        def node_dict(node):
            out = {
                "n": node.n,
                "effect": None if node.effect is None else node.effect.delta,
                "variance": None if node.effect is None else node.effect.variance,
            }
            if node.split is not None:
                out["covariate"] = self.baseline_names[node.split.covariate_index]
                out["cutpoint"] = node.split.cutpoint
                out["statistic"] = node.split.statistic
                out["children"] = [node_dict(node.left), node_dict(node.right)]
            return out

        return {"baseline_names": list(self.baseline_names), "root": node_dict(self.root)}

    @classmethod
    def from_dict(cls, data):
        names = tuple(data["baseline_names"])

        def build(payload, subgroup):
            effect = None
            if payload.get("effect") is not None:
                effect = SubgroupEffect(
                    delta=payload["effect"], variance=payload["variance"],
                    n=payload["n"], regimes=((), ()),
                )
            node = Node(subgroup=subgroup, effect=effect, n=payload["n"])
            if "children" in payload:
                j = names.index(payload["covariate"])
                cut = payload["cutpoint"]
                node.split = Split(
                    covariate_index=j, cutpoint=cut, statistic=payload["statistic"],
                    left_effect=None, right_effect=None,
                )
                node.left = build(payload["children"][0], subgroup.refined(Condition(j, "<", cut)))
                node.right = build(payload["children"][1], subgroup.refined(Condition(j, ">=", cut)))
                node.split.left_effect = node.left.effect
                node.split.right_effect = node.right.effect
            return node

        return cls(root=build(data["root"], Subgroup()), baseline_names=names)

    def save(self, path, extra=None):
        payload = self.to_dict()
        if extra:
            payload.update(extra)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class PrunedSequence:
    """Nested candidate trees from the full tree down to root-only.

    ``critical_lambdas[d]`` is the branch-average statistic at which pruning
    step ``d + 1`` becomes preferable; internal-node counts strictly decrease
    along the sequence.
    """

    trees: list[Tree]
    critical_lambdas: list[float] = field(default_factory=list)


def splitting_statistic(left, right):
    """Squared standardized difference of two subgroup effects.

    Symmetric in its arguments and nonnegative; the denominator is the sum of
    the two effect variances because the child subgroups are disjoint.
    """
    denom = left.variance + right.variance
    if denom <= 0.0:
        raise ZeroVarianceError("combined variance of the child effects is zero")
    diff = left.delta - right.delta
    return float(diff * diff / denom)


def _node_mask(dataset, node):
    return node.subgroup.contains(dataset.baseline)


def enumerate_candidate_splits(dataset, node, config):
    """All permissible (covariate, cutpoint) pairs for splitting a node.

    Cutpoints are midpoints between adjacent distinct observed values within
    the node, thinned to an interior quantile grid when there are more
    midpoints than ``config.cutpoint_grid``. A pair is permissible when both
    children meet the node-size floor and contain at least
    ``min_regime_followers`` uncensored followers of each contrasted regime.
    """
    config = config.resolve_regimes(dataset.horizon)
    mask = _node_mask(dataset, node)
    K = dataset.horizon
    reg1 = config.regime_treated
    reg0 = config.regime_control
    f1 = dataset.follows_regime_through(reg1, K) & mask
    f0 = dataset.follows_regime_through(reg0, K) & mask
    n_node = int(mask.sum())
    candidates = []
    for j in range(dataset.baseline.shape[1]):
        values = dataset.baseline[mask, j]
        uniq = np.unique(values)
        if uniq.size < 2:
            continue
        mids = (uniq[:-1] + uniq[1:]) / 2.0
        if mids.size > config.cutpoint_grid:
            probs = np.arange(1, config.cutpoint_grid + 1) / (config.cutpoint_grid + 1)
            qs = np.quantile(values, probs)
            pos = np.clip(np.searchsorted(uniq, qs, side="right") - 1, 0, mids.size - 1)
            mids = np.unique(mids[pos])
        sorted_all = np.sort(values)
        sorted_f1 = np.sort(dataset.baseline[f1, j])
        sorted_f0 = np.sort(dataset.baseline[f0, j])
        for cut in mids:
            n_left = int(np.searchsorted(sorted_all, cut, side="left"))
            n_right = n_node - n_left
            if min(n_left, n_right) < config.min_node_size:
                continue
            f1_left = int(np.searchsorted(sorted_f1, cut, side="left"))
            f0_left = int(np.searchsorted(sorted_f0, cut, side="left"))
            followers = (
                f1_left, sorted_f1.size - f1_left,
                f0_left, sorted_f0.size - f0_left,
            )
            if min(followers) < config.min_regime_followers:
                continue
            candidates.append((j, float(cut)))
    return candidates


def _estimate_child(dataset, mask, config):
    return estimate_effect(
        dataset, config.regime_treated, config.regime_control, mask,
        **config.estimator_kwargs(),
    )


def best_split(dataset, node, config, candidates=None):
    """Evaluate every permissible candidate and return the statistic maximizer.

    Candidates whose child estimation fails are skipped; ties break toward the
    lowest covariate index, then the lowest cutpoint (the enumeration order).
    Returns None when no candidate can be evaluated.
    """
    config = config.resolve_regimes(dataset.horizon)
    if candidates is None:
        candidates = enumerate_candidate_splits(dataset, node, config)
    mask = _node_mask(dataset, node)
    best = None
    for j, cut in candidates:
        left_mask = mask & (dataset.baseline[:, j] < cut)
        right_mask = mask & ~(dataset.baseline[:, j] < cut)
        try:
            left = _estimate_child(dataset, left_mask, config)
            right = _estimate_child(dataset, right_mask, config)
            stat = splitting_statistic(left, right)
        except EstimationError:
            continue
        if best is None or stat > best.statistic:
            best = Split(
                covariate_index=j, cutpoint=cut, statistic=stat,
                left_effect=left, right_effect=right,
            )
    return best


def build_initial_tree(dataset, config):
    """Grow the initial (intentionally overfit) tree on the build dataset.

    Splitting recurses until the depth cap, the ``2 * min_node_size`` floor,
    or the absence of an evaluable permissible split. Every node stores its
    own subgroup effect; internal nodes also store the statistic of their
    chosen split.
    """
    config = config.resolve_regimes(dataset.horizon).validate()
    root_mask = np.ones(dataset.n_subjects, dtype=bool)
    try:
        root_effect = _estimate_child(dataset, root_mask, config)
    except EstimationError as exc:
        raise RootNotEstimableError(f"root effect estimation failed: {exc}") from exc
    root = Node(subgroup=Subgroup(), effect=root_effect, n=dataset.n_subjects)
    frontier = [(root, 0)]
    while frontier:
        node, depth = frontier.pop(0)
        if depth >= config.max_depth or node.n < 2 * config.min_node_size:
            continue
        split = best_split(dataset, node, config)
        if split is None:
            continue
        node.split = split
        cond_left = Condition(split.covariate_index, "<", split.cutpoint)
        cond_right = Condition(split.covariate_index, ">=", split.cutpoint)
        node.left = Node(
            subgroup=node.subgroup.refined(cond_left),
            effect=split.left_effect, n=split.left_effect.n,
        )
        node.right = Node(
            subgroup=node.subgroup.refined(cond_right),
            effect=split.right_effect, n=split.right_effect.n,
        )
        frontier.append((node.left, depth + 1))
        frontier.append((node.right, depth + 1))
    return Tree(root=root, baseline_names=dataset.schema.baseline)


def split_complexity(tree, lam, stats=None):
    """Total internal-node heterogeneity minus ``lam`` per internal node.

    ``stats`` optionally maps node ids to replacement statistic values (for
    validation-recomputed complexities); by default the statistics stored at
    build time are used.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    internals = tree.internal_nodes()
    if stats is None:
        total = sum(node.split.statistic for node in internals)
    else:
        total = sum(stats[node.node_id] for node in internals)
    return float(total - lam * len(internals))


def _branch_statistics(node):
    """Statistics of the internal nodes in the branch rooted at ``node``."""
    out = []
    stack = [node]
    while stack:
        current = stack.pop()
        if current.split is not None:
            out.append(current.split.statistic)
            stack.extend([current.left, current.right])
    return out


def _copy_pruned(tree, pruned_id):
    """Copy of the tree with all descendants of node ``pruned_id`` removed."""
    cloned = copy.deepcopy(tree)
    for node in cloned.breadth_first():
        if node.node_id == pruned_id:
            node.split = None
            node.left = None
            node.right = None
            break
    return cloned


def prune_sequence(tree):
    """Weakest-link pruning sequence from the full tree down to root-only.

    At each step the branch whose internal nodes have the smallest average
    statistic is collapsed (ties break toward the earliest node in
    breadth-first order), and that average is recorded as the step's critical
    penalty: the penalty value at which keeping or cutting the branch yields
    equal split complexity.
    """
    trees = [tree]
    lambdas = []
    current = tree
    while current.internal_nodes():
        best_node = None
        best_value = np.inf
        for node in current.breadth_first():
            if node.split is None:
                continue
            stats = _branch_statistics(node)
            value = sum(stats) / len(stats)
            if value < best_value:
                best_value = value
                best_node = node
        pruned = _copy_pruned(current, best_node.node_id)
        lambdas.append(float(best_value))
        trees.append(pruned)
        current = pruned
    return PrunedSequence(trees=trees, critical_lambdas=lambdas)


def validation_statistics(sequence, dataset, config):
    """Re-estimate each internal node's statistic on the validation dataset.

    Child effects are re-fit with the configured estimator restricted to the
    validation subjects of each child; nodes whose estimation fails get a
    statistic of zero so penalization can prune them. A child below the
    regime-follower floor counts as failed: a handful of followers cannot
    validate an effect contrast (and yields wildly unstable statistics).
    The candidate trees are nested, so each node is evaluated once and
    shared across candidates.
    """
    config = config.resolve_regimes(dataset.horizon).validate()
    K = dataset.horizon
    f1 = dataset.follows_regime_through(config.regime_treated, K)
    f0 = dataset.follows_regime_through(config.regime_control, K)
    floor = config.min_regime_followers
    stats = {}
    for node in sequence.trees[0].breadth_first():
        if node.split is None:
            continue
        mask = _node_mask(dataset, node)
        j, cut = node.split.covariate_index, node.split.cutpoint
        left_mask = mask & (dataset.baseline[:, j] < cut)
        right_mask = mask & ~(dataset.baseline[:, j] < cut)
        follower_counts = (
            int((f1 & left_mask).sum()), int((f0 & left_mask).sum()),
            int((f1 & right_mask).sum()), int((f0 & right_mask).sum()),
        )
        if min(follower_counts) < floor:
            stats[node.node_id] = 0.0
            continue
        try:
            left = _estimate_child(dataset, left_mask, config)
            right = _estimate_child(dataset, right_mask, config)
            stats[node.node_id] = splitting_statistic(left, right)
        except EstimationError:
            stats[node.node_id] = 0.0
    return stats


def select_final_tree(sequence, dataset, lam, config, stats=None):
    """Pick the candidate maximizing validation split complexity at penalty ``lam``.

    Statistics are recomputed on the validation dataset (or supplied via
    ``stats``); ties break toward the smaller tree. Raises
    ``EmptyValidationSetError`` when the validation dataset has no subjects.
    """
    if dataset.n_subjects == 0:
        raise EmptyValidationSetError("validation dataset has no subjects")
    if stats is None:
        stats = validation_statistics(sequence, dataset, config)
    best_tree = None
    best_value = -np.inf
    for candidate in sequence.trees:
        value = split_complexity(candidate, lam, stats)
        if value >= best_value:  # later candidates are smaller, so >= prefers them
            best_value = value
            best_tree = candidate
    return best_tree


def assign_subgroup(tree, l0):
    """Terminal node id of one baseline-covariate vector."""
    l0 = np.asarray(l0, dtype=float)
    if l0.shape != (len(tree.baseline_names),):
        raise SchemaMismatchError(
            f"expected a baseline vector of length {len(tree.baseline_names)}, got {l0.shape}"
        )
    return int(tree.apply(l0[None, :])[0])
