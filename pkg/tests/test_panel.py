import numpy as np
import numpy.testing as npt
import pytest

from conftest import build_panel
from sdld.errors import (
    InvalidFractionsError,
    MalformedValueError,
    MissingColumnError,
    NonMonotoneCensoringError,
    UnknownCovariateError,
)
from sdld.panel import (
    PanelSchema,
    datasets_equal,
    load_panel_csv,
    load_schema_json,
    locf_impute,
    split_dataset,
    truncate_at,
    validate_monotone_censoring,
    write_panel_csv,
    write_schema_json,
)
from sdld.simulation import simulate_panel


class TestCsvRoundTrip:

    def test_two_subject_csv_with_dropout(self, tmp_path, small_schema):
        path = tmp_path / "d.csv"
        path.write_text(
            "subject_id,l0_age,l0_sex,a_0,c_0,l1_weight,a_1,c_1,y\n"
            "p1,30,1,1,0,70.25,1,0,71.5\n"
            "p2,45,0,0,1,,,,\n"
        )
        ds = load_panel_csv(path, small_schema)
        assert ds.n_subjects == 2
        s2 = ds.subject(1)
        assert len(s2.periods) == 1
        assert s2.periods[0].censored == 1
        assert s2.outcome is None
        assert validate_monotone_censoring(ds) == []

    def test_data_after_dropout_is_rejected(self, tmp_path, small_schema):
        path = tmp_path / "d.csv"
        path.write_text(
            "subject_id,l0_age,l0_sex,a_0,c_0,l1_weight,a_1,c_1,y\n"
            "p1,30,1,1,1,70.25,1,0,71.5\n"
        )
        with pytest.raises(NonMonotoneCensoringError):
            load_panel_csv(path, small_schema)

    def test_missing_column(self, tmp_path, small_schema):
        path = tmp_path / "d.csv"
        path.write_text("subject_id,l0_age,a_0,c_0,l1_weight,a_1,c_1,y\np1,30,1,0,70,1,0,71\n")
        with pytest.raises(MissingColumnError):
            load_panel_csv(path, small_schema)

    def test_malformed_cell(self, tmp_path, small_schema):
        path = tmp_path / "d.csv"
        path.write_text(
            "subject_id,l0_age,l0_sex,a_0,c_0,l1_weight,a_1,c_1,y\n"
            "p1,thirty,1,1,0,70.25,1,0,71.5\n"
        )
        with pytest.raises(MalformedValueError):
            load_panel_csv(path, small_schema)

    def test_nonbinary_treatment(self, tmp_path, small_schema):
        path = tmp_path / "d.csv"
        path.write_text(
            "subject_id,l0_age,l0_sex,a_0,c_0,l1_weight,a_1,c_1,y\n"
            "p1,30,1,2,0,70.25,1,0,71.5\n"
        )
        with pytest.raises(MalformedValueError):
            load_panel_csv(path, small_schema)

    def test_simulated_panel_round_trips_exactly(self, tmp_path):
        ds = simulate_panel(500, seed=42)
        path = tmp_path / "sim.csv"
        write_panel_csv(ds, path)
        loaded = load_panel_csv(path, ds.schema)
        assert datasets_equal(ds, loaded)

    def test_schema_sidecar_round_trip(self, tmp_path, small_schema):
        path = tmp_path / "s.json"
        write_schema_json(small_schema, path)
        assert load_schema_json(path) == small_schema


class TestValidation:

    def test_clean_dataset_has_no_violations(self, tiny_panel):
        assert validate_monotone_censoring(tiny_panel) == []

    def test_outcome_after_dropout_is_reported(self, small_schema):
        rows = [{"id": "s1", "l0": [30.0, 1.0], "a": [1.0], "c": [1.0],
                 "l": [], "y": 5.0}]
        ds = build_panel(small_schema, rows)
        violations = validate_monotone_censoring(ds)
        assert len(violations) == 1
        assert violations[0].subject_id == "s1"
        assert violations[0].period == 0

    def test_missing_outcome_for_uncensored_subject(self, small_schema):
        rows = [{"id": "s1", "l0": [30.0, 1.0], "a": [1.0, 0.0], "c": [0.0, 0.0],
                 "l": [[70.0]]}]
        ds = build_panel(small_schema, rows)
        kinds = {v.kind for v in validate_monotone_censoring(ds)}
        assert kinds == {"missing_outcome"}

    def test_simulated_data_is_always_monotone(self):
        for seed in (0, 1, 2):
            ds = simulate_panel(300, seed=seed)
            assert validate_monotone_censoring(ds) == []


class TestLocfImpute:

    def test_carry_forward_from_baseline(self, small_schema):
        rows = [
            {"id": "s1", "l0": [30.0, 1.0], "a": [1.0, 0.0], "c": [0.0, 0.0],
             "l": [[np.nan]], "y": 71.0},
        ]
        schema = PanelSchema(
            baseline=("age", "weight"), time_varying=(("weight",),),
            horizon=1, outcome_measure="weight",
        )
        ds = build_panel(schema, rows)
        imputed = locf_impute(ds, ["weight"])
        npt.assert_allclose(imputed.covariates[0][0, 0], 1.0)  # baseline weight value

    def test_first_period_mean_fill(self, small_schema):
        rows = [
            {"id": "s1", "l0": [30.0, 1.0], "a": [1.0, 0.0], "c": [0.0, 0.0],
             "l": [[60.0]], "y": 1.0},
            {"id": "s2", "l0": [40.0, 0.0], "a": [0.0, 0.0], "c": [0.0, 0.0],
             "l": [[80.0]], "y": 2.0},
            {"id": "s3", "l0": [50.0, 0.0], "a": [0.0, 1.0], "c": [0.0, 1.0],
             "l": [[np.nan]]},
        ]
        ds = build_panel(small_schema, rows)
        imputed = locf_impute(ds, ["weight"])
        npt.assert_allclose(imputed.covariates[0][2, 0], 70.0)  # mean of 60, 80

    def test_binary_fills_zero_and_all_missing_fills_zero(self):
        schema = PanelSchema(
            baseline=("x",), time_varying=(("flag", "level"),),
            horizon=1, outcome_measure=None,
        )
        rows = [
            {"id": "s1", "l0": [1.0], "a": [1.0, 0.0], "c": [0.0, 0.0],
             "l": [[1.0, np.nan]], "y": 0.0},
            {"id": "s2", "l0": [2.0], "a": [0.0, 0.0], "c": [0.0, 0.0],
             "l": [[np.nan, np.nan]], "y": 0.0},
        ]
        ds = build_panel(schema, rows)
        imputed = locf_impute(ds, ["flag", "level"])
        assert imputed.covariates[0][1, 0] == 0.0      # binary missing -> 0
        npt.assert_allclose(imputed.covariates[0][1, 1], 0.0)  # no observations -> 0

    def test_idempotent(self, small_schema):
        rows = [
            {"id": "s1", "l0": [30.0, 1.0], "a": [1.0, 0.0], "c": [0.0, 0.0],
             "l": [[np.nan]], "y": 1.0},
            {"id": "s2", "l0": [40.0, 0.0], "a": [0.0, 0.0], "c": [0.0, 0.0],
             "l": [[80.0]], "y": 2.0},
        ]
        ds = build_panel(small_schema, rows)
        once = locf_impute(ds, ["weight"])
        twice = locf_impute(once, ["weight"])
        assert datasets_equal(once, twice)

    def test_monotone_structure_preserved(self, tiny_panel):
        imputed = locf_impute(tiny_panel, ["weight"])
        assert validate_monotone_censoring(imputed) == []

    def test_unknown_covariate(self, tiny_panel):
        with pytest.raises(UnknownCovariateError):
            locf_impute(tiny_panel, ["no_such_column"])


class TestSplitDataset:

    def test_largest_remainder_sizes(self):
        ds = simulate_panel(10, seed=0)
        parts = split_dataset(ds, (0.48, 0.12, 0.40), seed=7)
        assert [p.n_subjects for p in parts] == [5, 1, 4]
        ids = sorted(str(s) for p in parts for s in p.subject_ids)
        assert ids == sorted(str(s) for s in ds.subject_ids)

    def test_deterministic_under_seed(self):
        ds = simulate_panel(50, seed=1)
        a = split_dataset(ds, (0.5, 0.25, 0.25), seed=3)
        b = split_dataset(ds, (0.5, 0.25, 0.25), seed=3)
        for x, y in zip(a, b):
            assert datasets_equal(x, y)

    def test_zero_fraction_gives_empty_part(self):
        ds = simulate_panel(20, seed=2)
        build, val, est = split_dataset(ds, (0.6, 0.4, 0.0), seed=1)
        assert est.n_subjects == 0
        assert build.n_subjects + val.n_subjects == 20

    def test_partition_property_random_fractions(self):
        rng = np.random.default_rng(11)
        ds = simulate_panel(37, seed=5)
        for _ in range(10):
            raw = rng.uniform(0.05, 1.0, 3)
            fr = raw / raw.sum()
            parts = split_dataset(ds, fr, seed=int(rng.integers(1e6)))
            sizes = [p.n_subjects for p in parts]
            assert sum(sizes) == 37
            ids = [str(s) for p in parts for s in p.subject_ids]
            assert len(set(ids)) == 37

    def test_invalid_fractions(self):
        ds = simulate_panel(5, seed=0)
        with pytest.raises(InvalidFractionsError):
            split_dataset(ds, (0.5, 0.2, 0.2), seed=0)
        with pytest.raises(InvalidFractionsError):
            split_dataset(ds, (-0.1, 0.6, 0.5), seed=0)


class TestTruncate:

    def test_prefix_outcome_comes_from_interim_measure(self):
        ds = simulate_panel(200, seed=9)
        prefix = truncate_at(ds, 1)
        assert prefix.horizon == 0
        reached = ds.observed_at(1)
        npt.assert_allclose(prefix.outcome[reached], ds.covariates[0][reached, 0])
        assert np.all(np.isnan(prefix.outcome[~reached]))
        assert validate_monotone_censoring(prefix) == []

    def test_full_horizon_is_identity(self):
        ds = simulate_panel(50, seed=9)
        assert truncate_at(ds, 2) is ds


class TestRecordViews:

    def test_subject_round_trip(self, tiny_panel):
        from sdld.panel import PanelDataset

        subjects = list(tiny_panel.iter_subjects())
        rebuilt = PanelDataset.from_subjects(subjects, tiny_panel.schema)
        assert datasets_equal(tiny_panel, rebuilt)

    def test_period_zero_has_no_covariate_block(self, tiny_panel):
        s = tiny_panel.subject(0)
        assert s.periods[0].covariates == ()
        assert s.periods[1].covariates == (70.0,)
