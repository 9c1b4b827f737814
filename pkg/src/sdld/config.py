"""Run configuration shared by the library pipeline and the CLI."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .errors import InvalidFractionsError

# 95th percentile of the chi-squared distribution with one degree of freedom,
# the split-complexity penalty calibrated to the splitting statistic's null law.
CHI2_1_95 = 3.841459

_ESTIMATORS = ("tmle", "gcomp", "ipw")


@dataclass
class RunConfig:
    """Every knob of the discovery pipeline, serializable for reproducibility.

    ``regime_treated`` / ``regime_control`` default to always-treated and
    never-treated vectors of the data's horizon when left as None.
    """

    estimator: str = "tmle"
    regime_treated: tuple[int, ...] | None = None
    regime_control: tuple[int, ...] | None = None
    lambda_penalty: float = CHI2_1_95
    discovery_fraction: float = 0.6
    build_fraction: float = 0.8
    min_node_size: int = 200
    min_regime_followers: int = 25
    max_depth: int = 5
    cutpoint_grid: int = 15
    truncation_bound: float = 0.01
    fluctuation: str = "logistic"
    outcome_design: str = "history"
    propensity_design: str = "history"
    bootstrap_samples: int = 1000
    ci_level: float = 0.95
    seed: int = 0
    threads: int = 1
    keep_draws: bool = False

    def __post_init__(self):
        if self.regime_treated is not None:
            self.regime_treated = tuple(int(v) for v in self.regime_treated)
        if self.regime_control is not None:
            self.regime_control = tuple(int(v) for v in self.regime_control)

    def validate(self):
        if self.estimator not in _ESTIMATORS:
            raise ValueError(f"estimator must be one of {_ESTIMATORS}")
        if not 0.0 < self.discovery_fraction < 1.0:
            raise InvalidFractionsError("discovery_fraction must be in (0, 1)")
        if not 0.0 < self.build_fraction <= 1.0:
            raise InvalidFractionsError("build_fraction must be in (0, 1]")
        if self.lambda_penalty < 0:
            raise ValueError("lambda_penalty must be nonnegative")
        if self.min_node_size < 1 or self.min_regime_followers < 0:
            raise ValueError("stopping parameters must be positive")
        if self.max_depth < 0 or self.cutpoint_grid < 1:
            raise ValueError("max_depth and cutpoint_grid must be positive")
        if not 0.0 < self.truncation_bound <= 0.5:
            raise ValueError("truncation_bound must be in (0, 0.5]")
        if self.bootstrap_samples < 0:
            raise ValueError("bootstrap_samples must be nonnegative")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must be in (0, 1)")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        return self

    def resolve_regimes(self, horizon):
        """Fill default always/never regimes for the given horizon."""
        treated = self.regime_treated or tuple([1] * (horizon + 1))
        control = self.regime_control or tuple([0] * (horizon + 1))
        return dataclasses.replace(self, regime_treated=treated, regime_control=control)

    def estimator_kwargs(self):
        return {
            "method": self.estimator,
            "truncation_bound": self.truncation_bound,
            "fluctuation": self.fluctuation,
            "outcome_design": self.outcome_design,
            "propensity_design": self.propensity_design,
        }

    def split_fractions(self):
        """(build, select, estimate) subject fractions of the full dataset."""
        d = self.discovery_fraction
        return (d * self.build_fraction, d * (1.0 - self.build_fraction), 1.0 - d)

    def to_dict(self):
        out = dataclasses.asdict(self)
        for key in ("regime_treated", "regime_control"):
            if out[key] is not None:
                out[key] = list(out[key])
        return out

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def merged(self, overrides):
        """New config with the non-None entries of ``overrides`` applied."""
        updates = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(self, **updates)
