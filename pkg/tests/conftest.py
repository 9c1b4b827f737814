import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sdld.panel import PanelDataset, PanelSchema


@pytest.fixture
def small_schema():
    """K=1 schema with two baseline covariates and one time-varying covariate."""
    return PanelSchema(
        baseline=("age", "sex"),
        time_varying=(("weight",),),
        horizon=1,
        outcome_measure="weight",
    )


def build_panel(schema, rows):
    """Assemble a PanelDataset from per-subject dict rows (NaN-friendly)."""
    n = len(rows)
    k1 = schema.horizon + 1
    data = PanelDataset(
        schema=schema,
        subject_ids=np.array([r["id"] for r in rows], dtype=object),
        baseline=np.array([r["l0"] for r in rows], dtype=float),
        treatments=np.array([r["a"] + [np.nan] * (k1 - len(r["a"])) for r in rows], dtype=float),
        censored=np.array([r["c"] + [np.nan] * (k1 - len(r["c"])) for r in rows], dtype=float),
        covariates=tuple(
            np.array([
                r["l"][k - 1] if len(r["l"]) >= k else [np.nan] * len(schema.time_varying[k - 1])
                for r in rows
            ], dtype=float)
            for k in range(1, k1)
        ),
        outcome=np.array([r.get("y", np.nan) for r in rows], dtype=float),
    )
    return data


def single_period_panel(l0, a0, y, c0=None):
    """K=0 dataset with one baseline covariate."""
    n = len(y)
    c0 = np.zeros(n) if c0 is None else np.asarray(c0, dtype=float)
    y = np.asarray(y, dtype=float)
    outcome = np.where(c0 == 0.0, y, np.nan)
    schema = PanelSchema(baseline=("l",), time_varying=(), horizon=0)
    return PanelDataset(
        schema=schema,
        subject_ids=np.array([f"s{i}" for i in range(n)], dtype=object),
        baseline=np.asarray(l0, dtype=float).reshape(n, 1),
        treatments=np.asarray(a0, dtype=float).reshape(n, 1),
        censored=c0.reshape(n, 1),
        covariates=(),
        outcome=outcome,
    )


def saturated_panel():
    """Binary covariate, additive cell means, zero-sum within-cell noise.

    Cell means 1 + 2a + 3l lie in the span of a main-effects design, so the
    fitted regressions reproduce them exactly and the targeting step has
    nothing left to move.
    """
    l_vals, a_vals, y_vals = [], [], []
    for l in (0.0, 1.0):
        for a in (0.0, 1.0):
            mean = 1.0 + 2.0 * a + 3.0 * l
            for dev in (0.5, -0.5, 0.25, -0.25):
                l_vals.append(l)
                a_vals.append(a)
                y_vals.append(mean + dev)
    # unbalance the covariate distribution: double the l=0 cells
    extra = [(0.0, a, 1.0 + 2.0 * a + dev) for a in (0.0, 1.0) for dev in (0.125, -0.125)]
    for l, a, y in extra:
        l_vals.append(l)
        a_vals.append(a)
        y_vals.append(y)
    return single_period_panel(l_vals, a_vals, y_vals)


@pytest.fixture
def tiny_panel(small_schema):
    """Four subjects: two complete, one censored at period 0, one at period 1."""
    rows = [
        {"id": "s1", "l0": [30.0, 1.0], "a": [1.0, 1.0], "c": [0.0, 0.0],
         "l": [[70.0]], "y": 71.5},
        {"id": "s2", "l0": [45.0, 0.0], "a": [0.0, 0.0], "c": [0.0, 0.0],
         "l": [[80.0]], "y": 79.0},
        {"id": "s3", "l0": [52.0, 1.0], "a": [1.0], "c": [1.0], "l": []},
        {"id": "s4", "l0": [38.0, 0.0], "a": [0.0, 1.0], "c": [0.0, 1.0],
         "l": [[64.0]]},
    ]
    return build_panel(small_schema, rows)
