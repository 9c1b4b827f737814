"""Longitudinal panel data: schema, containers, wide-CSV I/O, and preprocessing.

The observed data for each subject follow the time ordering

    baseline covariates, then for each period k = 0..K:
    time-varying covariates (k >= 1), treatment a_k, dropout indicator c_k,
    and finally the outcome y after period K.

Dropout is monotone: once ``c_k = 1`` nothing later is observed, and the
outcome is observed exactly for subjects with ``c_K = 0``. Datasets are
immutable after construction; every operation here returns a new dataset.

The canonical on-disk representation is a wide CSV with one row per subject,

    subject_id, l0_<name>..., a_0, c_0, l1_<name>..., a_1, c_1, ..., a_K, c_K, y

where an empty cell means "not observed". A JSON sidecar describes the schema
(baseline names, time-varying names per period, and the horizon K).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import (
    InvalidFractionsError,
    MalformedValueError,
    MissingColumnError,
    NonMonotoneCensoringError,
    UnknownCovariateError,
)


@dataclass(frozen=True)
class PanelSchema:
    """Column layout of a panel dataset.

    ``time_varying[k - 1]`` holds the covariate names measured at period
    ``k`` for ``k = 1..horizon``; period-0 values of time-varying covariates
    live in ``baseline`` under the same name. ``outcome_measure`` optionally
    names the time-varying covariate that carries interim outcome readings,
    which is what horizon-prefix estimation uses as its outcome.
    """

    baseline: tuple[str, ...]
    time_varying: tuple[tuple[str, ...], ...]
    horizon: int
    outcome_measure: str | None = None

    def __post_init__(self):
        if self.horizon < 0:
            raise MalformedValueError("horizon must be nonnegative")
        if len(self.time_varying) != self.horizon:
            raise MalformedValueError(
                f"expected {self.horizon} per-period name groups, got {len(self.time_varying)}"
            )
        if len(set(self.baseline)) != len(self.baseline):
            raise MalformedValueError("baseline covariate names must be unique")

    def csv_columns(self):
        cols = ["subject_id"] + [f"l0_{name}" for name in self.baseline]
        for k in range(self.horizon + 1):
            if k >= 1:
                cols.extend(f"l{k}_{name}" for name in self.time_varying[k - 1])
            cols.extend([f"a_{k}", f"c_{k}"])
        cols.append("y")
        return cols

    def to_dict(self):
        return {
            "baseline": list(self.baseline),
            "time_varying": [list(names) for names in self.time_varying],
            "horizon": self.horizon,
            "outcome_measure": self.outcome_measure,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            baseline=tuple(data["baseline"]),
            time_varying=tuple(tuple(names) for names in data["time_varying"]),
            horizon=int(data["horizon"]),
            outcome_measure=data.get("outcome_measure"),
        )


@dataclass(frozen=True)
class PeriodRecord:
    """One period of one subject: covariates (empty tuple at period 0), treatment, dropout flag."""

    covariates: tuple[float, ...]
    treatment: int
    censored: int


@dataclass(frozen=True)
class SubjectRecord:
    """A subject's full trajectory; ``periods`` stops at the dropout period."""

    subject_id: str
    baseline: tuple[float, ...]
    periods: tuple[PeriodRecord, ...]
    outcome: float | None


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Column-oriented panel data for ``n`` subjects over periods ``0..horizon``.

    Arrays use NaN for "not observed". ``treatments`` and ``censored`` are
    ``(n, horizon + 1)``; ``covariates[k - 1]`` is the period-``k`` covariate
    block. Instances are frozen; all operations return new datasets.
    """

    schema: PanelSchema
    subject_ids: np.ndarray
    baseline: np.ndarray
    treatments: np.ndarray
    censored: np.ndarray
    covariates: tuple[np.ndarray, ...]
    outcome: np.ndarray

    def __post_init__(self):
        n = len(self.subject_ids)
        k1 = self.schema.horizon + 1
        if self.baseline.shape != (n, len(self.schema.baseline)):
            raise MalformedValueError("baseline array shape does not match schema")
        if self.treatments.shape != (n, k1) or self.censored.shape != (n, k1):
            raise MalformedValueError("treatment/censoring array shapes do not match horizon")
        if len(self.covariates) != self.schema.horizon:
            raise MalformedValueError("covariate blocks do not match horizon")
        for k, block in enumerate(self.covariates, start=1):
            if block.shape != (n, len(self.schema.time_varying[k - 1])):
                raise MalformedValueError(f"covariate block at period {k} has wrong shape")
        if self.outcome.shape != (n,):
            raise MalformedValueError("outcome array shape does not match subjects")

    @property
    def n_subjects(self):
        return len(self.subject_ids)

    @property
    def horizon(self):
        return self.schema.horizon

    def uncensored_through(self, k):
        """Boolean mask of subjects with no dropout at periods 0..k."""
        return np.all(self.censored[:, : k + 1] == 0, axis=1)

    def observed_at(self, k):
        """Boolean mask of subjects that reached period k (no dropout before k)."""
        if k == 0:
            return np.ones(self.n_subjects, dtype=bool)
        return self.uncensored_through(k - 1)

    def follows_regime_through(self, regime, k):
        """Mask of subjects with treatments equal to the regime and no dropout through period k."""
        reg = np.asarray(regime, dtype=float)[: k + 1]
        return np.all(self.treatments[:, : k + 1] == reg, axis=1) & self.uncensored_through(k)

    def take(self, indices):
        """Row subset (or resample) of the dataset by integer indices."""
        idx = np.asarray(indices)
        return PanelDataset(
            schema=self.schema,
            subject_ids=self.subject_ids[idx],
            baseline=self.baseline[idx],
            treatments=self.treatments[idx],
            censored=self.censored[idx],
            covariates=tuple(block[idx] for block in self.covariates),
            outcome=self.outcome[idx],
        )

    def subset(self, mask):
        return self.take(np.flatnonzero(np.asarray(mask, dtype=bool)))

    def subject(self, i):
        """Materialize subject ``i`` as a record view."""
        periods = []
        for k in range(self.horizon + 1):
            if math.isnan(self.censored[i, k]) and math.isnan(self.treatments[i, k]):
                break
            covs = () if k == 0 else tuple(self.covariates[k - 1][i])
            periods.append(
                PeriodRecord(covs, int(self.treatments[i, k]), int(self.censored[i, k]))
            )
        y = self.outcome[i]
        return SubjectRecord(
            subject_id=str(self.subject_ids[i]),
            baseline=tuple(self.baseline[i]),
            periods=tuple(periods),
            outcome=None if math.isnan(y) else float(y),
        )

    def iter_subjects(self):
        for i in range(self.n_subjects):
            yield self.subject(i)

    @classmethod
    def from_subjects(cls, subjects, schema):
        """Build a dataset from record views (mainly a convenience for tests)."""
        n = len(subjects)
        k1 = schema.horizon + 1
        baseline = np.full((n, len(schema.baseline)), np.nan)
        treatments = np.full((n, k1), np.nan)
        censored = np.full((n, k1), np.nan)
        covariates = tuple(
            np.full((n, len(names)), np.nan) for names in schema.time_varying
        )
        outcome = np.full(n, np.nan)
        ids = []
        for i, s in enumerate(subjects):
            ids.append(s.subject_id)
            baseline[i] = s.baseline
            for k, rec in enumerate(s.periods):
                treatments[i, k] = rec.treatment
                censored[i, k] = rec.censored
                if k >= 1:
                    covariates[k - 1][i] = rec.covariates
            if s.outcome is not None:
                outcome[i] = s.outcome
        return cls(
            schema=schema,
            subject_ids=np.asarray(ids, dtype=object),
            baseline=baseline,
            treatments=treatments,
            censored=censored,
            covariates=covariates,
            outcome=outcome,
        )


def datasets_equal(a, b):
    """Exact (NaN-aware) equality of two datasets, schema included."""
    if a.schema != b.schema:
        return False
    if not np.array_equal(a.subject_ids, b.subject_ids):
        return False
    pairs = [(a.baseline, b.baseline), (a.treatments, b.treatments),
             (a.censored, b.censored), (a.outcome, b.outcome)]
    pairs.extend(zip(a.covariates, b.covariates))
    return all(np.array_equal(x, y, equal_nan=True) for x, y in pairs)


@dataclass(frozen=True)
class Violation:
    """One monotone-structure violation: which subject, which period, what kind."""

    subject_id: str
    period: int | None
    kind: str
    message: str


def _scan_subject(ds, i):
    """Yield structure violations for subject i."""
    sid = str(ds.subject_ids[i])
    K = ds.horizon
    dropout = None  # first period with c_k = 1
    for k in range(K + 1):
        a = ds.treatments[i, k]
        c = ds.censored[i, k]
        if dropout is not None:
            for label, value in (("treatment", a), ("censoring", c)):
                if not math.isnan(value):
                    yield Violation(sid, k, "data_after_dropout",
                                    f"{label} recorded at period {k} after dropout at period {dropout}")
            if k >= 1 and not np.all(np.isnan(ds.covariates[k - 1][i])):
                yield Violation(sid, k, "data_after_dropout",
                                f"covariates recorded at period {k} after dropout at period {dropout}")
            continue
        for label, value in (("treatment", a), ("censoring", c)):
            if math.isnan(value):
                yield Violation(sid, k, "missing_marker",
                                f"{label} missing at period {k} before any dropout")
            elif value not in (0.0, 1.0):
                yield Violation(sid, k, "nonbinary",
                                f"{label} value {value} at period {k} is not 0/1")
        if c == 1.0:
            dropout = k
    y = ds.outcome[i]
    if dropout is not None and not math.isnan(y):
        yield Violation(sid, dropout, "data_after_dropout",
                        f"outcome recorded despite dropout at period {dropout}")
    if dropout is None and math.isnan(y):
        yield Violation(sid, K, "missing_outcome",
                        "outcome missing for a subject uncensored through the horizon")


def validate_monotone_censoring(dataset):
    """List every monotone-dropout violation in the dataset.

    An empty list means every subject satisfies the invariant: nothing is
    recorded after the first ``c_k = 1``, treatment/censoring markers are
    binary and present at every reached period, and the outcome is present
    exactly for subjects uncensored through the horizon.
    """
    violations = []
    for i in range(dataset.n_subjects):
        violations.extend(_scan_subject(dataset, i))
    return violations


def _raise_for_violations(violations):
    if not violations:
        return
    first = violations[0]
    if first.kind in ("nonbinary", "missing_marker"):
        raise MalformedValueError(f"subject {first.subject_id}: {first.message}")
    raise NonMonotoneCensoringError(f"subject {first.subject_id}: {first.message}")


def load_panel_csv(path, schema):
    """Load a wide-format panel CSV against a schema.

    Raises ``MissingColumnError`` for absent columns, ``MalformedValueError``
    for non-numeric or non-binary cells, and ``NonMonotoneCensoringError``
    when a row carries data after its dropout period. The returned dataset
    always passes :func:`validate_monotone_censoring`.
    """
    frame = pd.read_csv(path, dtype={"subject_id": str}, float_precision="round_trip")
    missing = [c for c in schema.csv_columns() if c not in frame.columns]
    if missing:
        raise MissingColumnError(f"missing columns: {', '.join(missing)}")

    def numeric(col):
        try:
            return pd.to_numeric(frame[col], errors="raise").to_numpy(dtype=float)
        except (ValueError, TypeError) as exc:
            raise MalformedValueError(f"column {col}: {exc}") from None

    n = len(frame)
    ids = frame["subject_id"].to_numpy(dtype=object)
    if len(set(ids)) != n:
        raise MalformedValueError("subject_id values must be unique")
    baseline = np.column_stack([numeric(f"l0_{name}") for name in schema.baseline]) \
        if schema.baseline else np.empty((n, 0))
    k1 = schema.horizon + 1
    treatments = np.column_stack([numeric(f"a_{k}") for k in range(k1)])
    censored = np.column_stack([numeric(f"c_{k}") for k in range(k1)])
    covariates = tuple(
        np.column_stack([numeric(f"l{k}_{name}") for name in schema.time_varying[k - 1]])
        if schema.time_varying[k - 1] else np.empty((n, 0))
        for k in range(1, k1)
    )
    outcome = numeric("y")
    ds = PanelDataset(
        schema=schema,
        subject_ids=ids,
        baseline=baseline,
        treatments=treatments,
        censored=censored,
        covariates=covariates,
        outcome=outcome,
    )
    _raise_for_violations(validate_monotone_censoring(ds))
    return ds


def _format_cell(value):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def write_panel_csv(dataset, path):
    """Write the canonical wide CSV; floats use shortest round-trip text."""
    schema = dataset.schema
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(schema.csv_columns())
        for i in range(dataset.n_subjects):
            row = [str(dataset.subject_ids[i])]
            row.extend(_format_cell(v) for v in dataset.baseline[i])
            for k in range(schema.horizon + 1):
                if k >= 1:
                    row.extend(_format_cell(v) for v in dataset.covariates[k - 1][i])
                row.append(_format_cell(dataset.treatments[i, k]))
                row.append(_format_cell(dataset.censored[i, k]))
            row.append(_format_cell(dataset.outcome[i]))
            writer.writerow(row)


def write_schema_json(schema, path, extra=None):
    payload = schema.to_dict()
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_schema_json(path):
    with open(path) as fh:
        return PanelSchema.from_dict(json.load(fh))


def _locf_columns(dataset, name):
    """(period, column) pairs where a covariate lives, in time order."""
    cols = []
    if name in dataset.schema.baseline:
        cols.append((0, dataset.schema.baseline.index(name)))
    for k in range(1, dataset.horizon + 1):
        names = dataset.schema.time_varying[k - 1]
        if name in names:
            cols.append((k, names.index(name)))
    if not cols:
        raise UnknownCovariateError(f"covariate {name!r} is not in the schema")
    return cols


def locf_impute(dataset, covariates):
    """Fill missing covariate values by carrying the last observation forward.

    At a covariate's first measurement period, missing values are filled with
    the observed mean at that period (0 when nothing is observed), or with 0
    for binary covariates. Later periods take the most recent value, so the
    operation is idempotent. Cells after dropout stay absent.
    """
    baseline = dataset.baseline.copy()
    blocks = [block.copy() for block in dataset.covariates]

    def get(period, col):
        return baseline[:, col] if period == 0 else blocks[period - 1][:, col]

    for name in covariates:
        cols = _locf_columns(dataset, name)
        first_period, first_col = cols[0]
        column = get(first_period, first_col)
        reached = dataset.observed_at(first_period)
        missing = reached & np.isnan(column)
        if missing.any():
            observed = column[reached & ~np.isnan(column)]
            binary = observed.size > 0 and np.all(np.isin(observed, (0.0, 1.0)))
            fill = 0.0 if (binary or observed.size == 0) else float(observed.mean())
            column[missing] = fill
        previous = column
        for period, col in cols[1:]:
            column = get(period, col)
            reached = dataset.observed_at(period)
            missing = reached & np.isnan(column)
            column[missing] = previous[missing]
            previous = column

    return PanelDataset(
        schema=dataset.schema,
        subject_ids=dataset.subject_ids,
        baseline=baseline,
        treatments=dataset.treatments,
        censored=dataset.censored,
        covariates=tuple(blocks),
        outcome=dataset.outcome,
    )


def _largest_remainder_sizes(n, fractions):
    raw = np.asarray(fractions, dtype=float) * n
    sizes = np.floor(raw).astype(int)
    remainder = n - int(sizes.sum())
    if remainder > 0:
        order = np.argsort(-(raw - sizes), kind="stable")
        sizes[order[:remainder]] += 1
    return sizes


def split_dataset(dataset, fractions, seed):
    """Randomly partition subjects into three disjoint datasets.

    Fractions must be nonnegative and sum to one; sizes use largest-remainder
    rounding so they always sum to ``n`` exactly. The partition is a
    deterministic function of the seed, and randomization is at the subject
    level so whole trajectories stay together.
    """
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,):
        raise InvalidFractionsError("exactly three fractions are required")
    if np.any(fr < 0) or abs(float(fr.sum()) - 1.0) > 1e-9:
        raise InvalidFractionsError(f"fractions must be nonnegative and sum to 1, got {fractions}")
    n = dataset.n_subjects
    sizes = _largest_remainder_sizes(n, fr)
    order = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum(sizes)
    parts = (order[: bounds[0]], order[bounds[0]: bounds[1]], order[bounds[1]:])
    return tuple(dataset.take(np.sort(idx)) for idx in parts)


def truncate_at(dataset, time):
    """Shorten the panel to the horizon prefix ending at ``time``.

    ``time = horizon + 1`` returns the dataset unchanged. For earlier times
    the outcome becomes the schema's ``outcome_measure`` covariate at period
    ``time``, so effects can be reported per time as well as at the end of
    follow-up. The covariate must be fully observed among subjects who
    reached that period (impute first if needed).
    """
    K = dataset.horizon
    if not 1 <= time <= K + 1:
        raise MalformedValueError(f"time must be in 1..{K + 1}, got {time}")
    if time == K + 1:
        return dataset
    name = dataset.schema.outcome_measure
    if name is None:
        raise UnknownCovariateError("schema has no outcome_measure; cannot truncate")
    names = dataset.schema.time_varying[time - 1]
    if name not in names:
        raise UnknownCovariateError(
            f"outcome measure {name!r} is not recorded at period {time}"
        )
    outcome = dataset.covariates[time - 1][:, names.index(name)].copy()
    reached = dataset.observed_at(time)
    if np.isnan(outcome[reached]).any():
        raise MalformedValueError(
            f"outcome measure {name!r} has missing values at period {time}; impute first"
        )
    outcome[~reached] = np.nan
    schema = PanelSchema(
        baseline=dataset.schema.baseline,
        time_varying=dataset.schema.time_varying[: time - 1],
        horizon=time - 1,
        outcome_measure=name,
    )
    return PanelDataset(
        schema=schema,
        subject_ids=dataset.subject_ids,
        baseline=dataset.baseline,
        treatments=dataset.treatments[:, :time],
        censored=dataset.censored[:, :time],
        covariates=dataset.covariates[: time - 1],
        outcome=outcome,
    )
