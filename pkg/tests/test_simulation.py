import numpy as np
import numpy.testing as npt
import pytest

import oracles
from sdld.estimators import SubgroupEffect
from sdld.panel import datasets_equal, validate_monotone_censoring
from sdld.simulation import (
    SimulationConfig,
    TreeEvaluation,
    benchmark_schema,
    draw_baseline,
    dropout0_probability,
    evaluate_tree,
    pairwise_similarity,
    simulate_panel,
    treatment0_probability,
    true_effect,
)
from sdld.tree import Condition, Node, Split, Subgroup, Tree


def make_stump(cov_index, cutpoint, names=("x1", "x2", "x3", "x4", "x5")):
    effect = SubgroupEffect(0.0, 1.0, 10, ((1, 1), (0, 0)))
    root = Node(subgroup=Subgroup(), effect=effect, n=20)
    root.split = Split(cov_index, cutpoint, 5.0, effect, effect)
    root.left = Node(Subgroup((Condition(cov_index, "<", cutpoint),)), effect, 10)
    root.right = Node(Subgroup((Condition(cov_index, ">=", cutpoint),)), effect, 10)
    return Tree(root=root, baseline_names=tuple(names))


def make_root_only(names=("x1", "x2", "x3", "x4", "x5")):
    effect = SubgroupEffect(0.0, 1.0, 10, ((1, 1), (0, 0)))
    return Tree(root=Node(Subgroup(), effect, 20), baseline_names=tuple(names))


class TestGenerator:

    def test_baseline_marginals(self):
        rng = np.random.default_rng(0)
        l0 = draw_baseline(rng, 1_000_000)
        npt.assert_allclose(l0.mean(axis=0), np.zeros(5), atol=0.005)
        corr = np.corrcoef(l0.T)
        off_diagonal = corr[~np.eye(5, dtype=bool)]
        npt.assert_allclose(off_diagonal, 0.2, atol=0.005)
        npt.assert_allclose(l0.std(axis=0), 1.0, atol=0.005)

    def test_treatment_probability_at_origin(self):
        p = treatment0_probability(np.zeros(5))
        npt.assert_allclose(p, 1.0 / (1.0 + np.exp(0.5)), rtol=1e-12)

    def test_conditional_probabilities_match_specification(self):
        # stratify simulated subjects by model probability and compare
        # empirical frequencies: 3 binomial SEs per bin
        ds = simulate_panel(200_000, seed=4)
        for prob, realized in [
            (treatment0_probability(ds.baseline), ds.treatments[:, 0]),
            (dropout0_probability(ds.baseline, ds.treatments[:, 0]), ds.censored[:, 0]),
        ]:
            bins = np.quantile(prob, np.linspace(0, 1, 9))
            which = np.clip(np.searchsorted(bins, prob, side="right") - 1, 0, 7)
            for b in range(8):
                sel = which == b
                if sel.sum() < 500:
                    continue
                expected = prob[sel].mean()
                se = np.sqrt(expected * (1 - expected) / sel.sum())
                assert abs(realized[sel].mean() - expected) <= 3 * se + 1e-12

    def test_monotone_dropout_always_holds(self):
        for seed in (0, 7, 13):
            assert validate_monotone_censoring(simulate_panel(1000, seed)) == []

    def test_deterministic_under_seed(self):
        assert datasets_equal(simulate_panel(200, seed=3), simulate_panel(200, seed=3))

    def test_oracle_cross_check_of_factual_means(self):
        # among uncensored never-treated subjects the oracle and generator
        # agree on the final-outcome distribution shape: compare conditional
        # mean surfaces at a few covariate points via the coefficient tables
        ds = simulate_panel(50_000, seed=6)
        probs = treatment0_probability(ds.baseline)
        assert 0.30 < ds.treatments[:, 0].mean() < 0.45
        npt.assert_allclose(probs.mean(), ds.treatments[:, 0].mean(), atol=0.01)


class TestTrueEffect:

    def test_piecewise_values(self):
        assert true_effect(np.zeros(5)) == 1.0
        assert true_effect(np.array([0.0, 1.0, 0.0, 0.0, 0.0])) == -3.0
        both = true_effect(np.array([[0.0, 0.4, 0, 0, 0], [0.0, 0.6, 0, 0, 0]]))
        npt.assert_allclose(both, [1.0, -3.0])

    def test_homogeneous_variant_is_constant(self):
        l0 = np.array([[0.0, 2.0, 0, 0, 0], [0.0, -2.0, 0, 0, 0]])
        npt.assert_allclose(true_effect(l0, heterogeneous=False), [1.0, 1.0])

    def test_monte_carlo_oracle_low_region(self):
        delta, se = oracles.potential_effect(400_000, seed=10, region="low")
        assert abs(delta - 1.0) <= 3 * se

    def test_monte_carlo_oracle_high_region(self):
        delta, se = oracles.potential_effect(400_000, seed=11, region="high")
        assert abs(delta - (-3.0)) <= 3 * se

    def test_region_difference_is_minus_four(self):
        low, se_low = oracles.potential_effect(400_000, seed=12, region="low")
        high, se_high = oracles.potential_effect(400_000, seed=13, region="high")
        assert abs((high - low) - (-4.0)) <= 3 * np.hypot(se_low, se_high)


class TestEvaluateTree:

    def test_exact_correct_stump(self):
        rng = np.random.default_rng(1)
        sample = draw_baseline(rng, 1000)
        scores = evaluate_tree(make_stump(1, 0.5), sample)
        assert scores == TreeEvaluation(True, 2, 0, 1.0)

    def test_root_only_similarity_half_split_sample(self):
        m = 1000
        sample = np.zeros((m, 5))
        sample[: m // 2, 1] = 1.0  # half above threshold
        scores = evaluate_tree(make_root_only(), sample)
        assert scores.correct is False
        assert scores.terminal_nodes == 1
        expected = 1.0 - (m / 2) ** 2 / (m * (m - 1) / 2)
        npt.assert_allclose(scores.similarity, expected, atol=1e-12)
        assert abs(scores.similarity - 0.5) < 0.01

    def test_offset_cutpoint_still_correct_but_not_similar(self):
        rng = np.random.default_rng(2)
        sample = draw_baseline(rng, 2000)
        scores = evaluate_tree(make_stump(1, 0.4), sample)
        assert scores.correct is True
        assert scores.noise_splits == 0
        assert scores.similarity < 1.0

    def test_noise_split_counting(self):
        tree = make_stump(1, 0.5)
        inner = tree.root.left
        effect = inner.effect
        inner.split = Split(3, 0.0, 2.0, effect, effect)
        inner.left = Node(inner.subgroup.refined(Condition(3, "<", 0.0)), effect, 5)
        inner.right = Node(inner.subgroup.refined(Condition(3, ">=", 0.0)), effect, 5)
        tree.renumber()
        rng = np.random.default_rng(3)
        scores = evaluate_tree(tree, draw_baseline(rng, 500))
        assert scores.correct is False
        assert scores.noise_splits == 1
        assert scores.terminal_nodes == 3

    def test_similarity_is_one_iff_same_partition(self):
        rng = np.random.default_rng(4)
        sample = draw_baseline(rng, 800)
        assert pairwise_similarity(make_stump(1, 0.5), sample) == 1.0
        assert pairwise_similarity(make_stump(0, 0.5), sample) < 1.0


class TestSimulationStudy:

    def test_single_replicate_rerun_identical(self):
        from dataclasses import asdict

        from sdld.config import RunConfig
        from sdld.simulation import run_simulation_study

        sim = SimulationConfig(n=900, n_build=700, n_validate=200, seed=5, replicates=1)
        cfg = RunConfig(min_node_size=100, min_regime_followers=10, max_depth=1,
                        cutpoint_grid=3, bootstrap_samples=0, seed=5)
        m1, r1 = run_simulation_study(sim, cfg)
        m2, r2 = run_simulation_study(sim, cfg)
        assert m1 == m2
        a, b = asdict(r1[0]), asdict(r2[0])
        a.pop("runtime_ms"), b.pop("runtime_ms")
        assert a == b

    def test_failed_replicates_are_reported_not_fatal(self, monkeypatch):
        import sdld.simulation as sim_mod
        from sdld.config import RunConfig
        from sdld.simulation import run_simulation_study

        def explode(*args, **kwargs):
            raise RuntimeError("boom")

        monkeypatch.setattr(sim_mod, "build_initial_tree", explode)
        sim = SimulationConfig(n=900, n_build=700, n_validate=200, seed=5, replicates=2)
        cfg = RunConfig(min_node_size=100, min_regime_followers=10, max_depth=1,
                        cutpoint_grid=3, bootstrap_samples=0, seed=5)
        metrics, records = run_simulation_study(sim, cfg)
        assert metrics.n_failed == 2
        assert all("RuntimeError" in r.error for r in records)

    def test_larger_samples_do_not_recover_worse(self):
        # scaled-down consistency direction: tripling the sample should not
        # reduce the correct-tree rate by more than noise allows
        from sdld.config import RunConfig
        from sdld.simulation import run_simulation_study

        cfg = RunConfig(bootstrap_samples=0, seed=3)
        small = SimulationConfig(n=12000, n_build=10000, n_validate=2000,
                                 seed=3, replicates=4)
        large = SimulationConfig(n=24000, n_build=20000, n_validate=4000,
                                 seed=3, replicates=4)
        m_small, _ = run_simulation_study(small, cfg, n_jobs=2)
        m_large, _ = run_simulation_study(large, cfg, n_jobs=2)
        assert m_large.correct_tree_proportion >= m_small.correct_tree_proportion - 0.25


class TestSimulationConfig:

    def test_size_invariant(self):
        with pytest.raises(ValueError):
            SimulationConfig(n=10, n_build=5, n_validate=4).validate()
        SimulationConfig(n=9, n_build=5, n_validate=4).validate()

    def test_schema_names(self):
        schema = benchmark_schema()
        assert schema.horizon == 1
        assert schema.outcome_measure in schema.time_varying[0]
