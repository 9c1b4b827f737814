"""Subgroup-specific potential-outcome means and treatment effects.

Three estimators of ``E[Y under regime a with censoring abolished | subgroup]``:

* ``estimate_ipw`` — Hajek ratio of inverse-probability-weighted outcomes,
  weighting regime followers by one over the product of their per-period
  treatment and remaining-uncensored probabilities.
* ``estimate_gcomp`` — iterated conditional expectations: regress the outcome
  on full history among the uncensored, predict under the regime, and recurse
  the pseudo-outcome back to baseline; the estimate is the subgroup average
  of the final predictions.
* ``estimate_tmle`` — g-computation with a targeting step after each iterated
  regression: a weighted intercept-only logistic fluctuation with the current
  prediction as offset and inverse-probability weights, run on an outcome
  rescaled to [0, 1] so estimates always stay inside the observed outcome
  range. Doubly robust.

All nuisance models are main-effects GLMs on past covariates and treatments,
fit within the subgroup being estimated. Predicted follow/stay probabilities
are floored at a configurable truncation bound. Variances come from the
efficient-influence-curve expression with cumulative-weight clever covariates,
so they are cheap enough to evaluate inside split search.

Everything here is pure with respect to the dataset; concurrent estimation
across subgroups is the intended execution mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .errors import (
    EmptyRiskSetError,
    NoFollowersError,
    SchemaMismatchError,
)
from .glm import GlmFit, fit_glm, predict_glm

_Q_CLAMP = 1e-6  # scaled-outcome floor before the logit offset

DESIGN_CHOICES = ("history", "intercept")
FLUCTUATION_CHOICES = ("logistic", "linear")
METHODS = ("ipw", "gcomp", "tmle")


@dataclass
class NuisanceModels:
    """Fitted sequential nuisance models for one subgroup.

    ``treatment_models[k]`` models P(a_k = 1 | history) and
    ``censoring_models[k]`` models P(c_k = 0 | history, a_k) among subjects
    still in follow-up at period k. ``outcome_models`` is populated by the
    g-computation / TMLE routines (index k-1 holds the step-k regression).
    The truncation bound floors every predicted per-period probability, which
    keeps cumulative weights bounded.

    ``treatment_probs`` / ``stay_probs`` cache the fitted per-period
    probabilities aligned to the rows of the dataset the models were fit on;
    they are regime-independent, so one fit serves any contrast. They are
    recomputed from the model objects when absent (e.g. for hand-built fits).
    """

    treatment_models: list[GlmFit]
    censoring_models: list[GlmFit]
    truncation_bound: float
    propensity_design: str = "history"
    outcome_models: list[GlmFit] = field(default_factory=list)
    treatment_probs: np.ndarray | None = None
    stay_probs: np.ndarray | None = None


@dataclass(frozen=True)
class CumulativeWeights:
    """Per-subject prefix products of follow/stay probabilities.

    ``cumulative[:, k]`` is the product of truncated treatment and censoring
    probabilities through period k; ``follower[:, k]`` flags subjects whose
    observed treatments match the regime and who are uncensored through k.
    Weights are only ever read where the follower flag is set.
    """

    cumulative: np.ndarray
    follower: np.ndarray


@dataclass(frozen=True)
class EstimateWithIC:
    """A potential-outcome-mean estimate with its influence values.

    ``variance`` equals the sample variance of ``influence_values`` divided
    by ``n``; the influence values sum to (numerically) zero.
    """

    mean: float
    variance: float
    n: int
    influence_values: np.ndarray
    diagnostics: dict | None = None


@dataclass(frozen=True)
class SubgroupEffect:
    """Contrast of two regimes within one subgroup: delta = mean(a1) - mean(a0)."""

    delta: float
    variance: float
    n: int
    regimes: tuple[tuple[int, ...], tuple[int, ...]]


def _check_regime(regime, horizon):
    reg = np.asarray(regime, dtype=float)
    if reg.shape != (horizon + 1,):
        raise SchemaMismatchError(
            f"regime must have length {horizon + 1}, got shape {reg.shape}"
        )
    if not np.all(np.isin(reg, (0.0, 1.0))):
        raise SchemaMismatchError("regime values must be 0 or 1")
    return reg


def _as_mask(dataset, mask):
    if mask is None:
        return np.ones(dataset.n_subjects, dtype=bool)
    m = np.asarray(mask, dtype=bool)
    if m.shape != (dataset.n_subjects,):
        raise SchemaMismatchError("subgroup mask length does not match the dataset")
    return m


def _history_design(dataset, rows, periods_through, treatments_through, regime=None):
    """[1, baseline, L_1..L_p, a_0..a_t] design block for the given rows.

    ``regime`` replaces the treatment columns with fixed regime values, which
    is how predictions under an intervention are formed.
    """
    n = int(rows.sum())
    blocks = [np.ones((n, 1)), dataset.baseline[rows]]
    for k in range(1, periods_through + 1):
        blocks.append(dataset.covariates[k - 1][rows])
    if treatments_through >= 0:
        if regime is None:
            blocks.append(dataset.treatments[rows, : treatments_through + 1])
        else:
            blocks.append(
                np.broadcast_to(regime[: treatments_through + 1], (n, treatments_through + 1)).copy()
            )
    return np.hstack(blocks)


def _intercept_design(n):
    return np.ones((n, 1))


def fit_propensity_models(dataset, regime, mask=None, bound=0.01,
                          propensity_design="history"):
    """Fit per-period treatment-assignment and remaining-uncensored models.

    At period k the treatment model is a logistic regression of a_k on all
    past covariates and treatments among subgroup subjects still in follow-up;
    the censoring model additionally conditions on a_k and models staying
    uncensored. The fits do not depend on the regime (predictions under a
    regime are formed later), so one call serves any contrast.

    Raises ``EmptyRiskSetError`` when no subject is at risk at some period,
    which signals the subgroup is too small to estimate.
    """
    if propensity_design not in DESIGN_CHOICES:
        raise ValueError(f"propensity_design must be one of {DESIGN_CHOICES}")
    mask = _as_mask(dataset, mask)
    _check_regime(regime, dataset.horizon)
    if not mask.any():
        raise EmptyRiskSetError(0, "subgroup has no subjects")
    n = dataset.n_subjects
    treatment_models = []
    censoring_models = []
    treatment_probs = np.full((n, dataset.horizon + 1), np.nan)
    stay_probs = np.full((n, dataset.horizon + 1), np.nan)
    for k in range(dataset.horizon + 1):
        rows = mask & dataset.observed_at(k)
        if not rows.any():
            raise EmptyRiskSetError(k)
        if propensity_design == "history":
            xt = _history_design(dataset, rows, k, k - 1)
            xc = _history_design(dataset, rows, k, k)
        else:
            xt = _intercept_design(int(rows.sum()))
            xc = _intercept_design(int(rows.sum()))
        tmod = fit_glm(xt, dataset.treatments[rows, k], family="binomial")
        cmod = fit_glm(xc, 1.0 - dataset.censored[rows, k], family="binomial")
        treatment_models.append(tmod)
        censoring_models.append(cmod)
        treatment_probs[rows, k] = predict_glm(tmod, xt)
        stay_probs[rows, k] = predict_glm(cmod, xc)
    return NuisanceModels(
        treatment_models=treatment_models,
        censoring_models=censoring_models,
        truncation_bound=float(bound),
        propensity_design=propensity_design,
        treatment_probs=treatment_probs,
        stay_probs=stay_probs,
    )


def cumulative_weights(dataset, regime, mask, models):
    """Prefix products of truncated follow/stay probabilities, plus follower flags.

    Probabilities are evaluated at each subject's observed history; for the
    followers whose weights are actually used this coincides with the regime
    history. Each per-period probability is floored at the truncation bound,
    so the prefix product through period k is at least ``bound**(2 (k + 1))``.
    """
    mask = _as_mask(dataset, mask)
    reg = _check_regime(regime, dataset.horizon)
    n = dataset.n_subjects
    bound = models.truncation_bound
    cached = (
        models.treatment_probs is not None
        and models.stay_probs is not None
        and models.treatment_probs.shape == (n, dataset.horizon + 1)
    )
    cumulative = np.full((n, dataset.horizon + 1), np.nan)
    follower = np.zeros((n, dataset.horizon + 1), dtype=bool)
    running = np.ones(n)
    for k in range(dataset.horizon + 1):
        rows = mask & dataset.observed_at(k)
        if cached:
            p_treat = models.treatment_probs[rows, k]
            g_stay = models.stay_probs[rows, k]
        else:
            if models.propensity_design == "history":
                xt = _history_design(dataset, rows, k, k - 1)
                xc = _history_design(dataset, rows, k, k)
            else:
                xt = _intercept_design(int(rows.sum()))
                xc = _intercept_design(int(rows.sum()))
            p_treat = predict_glm(models.treatment_models[k], xt)
            g_stay = predict_glm(models.censoring_models[k], xc)
        g_treat = p_treat if reg[k] == 1.0 else 1.0 - p_treat
        g_k = np.clip(g_treat, bound, 1.0) * np.clip(g_stay, bound, 1.0)
        running_rows = running[rows] * g_k
        running[rows] = running_rows
        cumulative[rows, k] = running_rows
        follower[:, k] = mask & dataset.follows_regime_through(reg, k)
    return CumulativeWeights(cumulative=cumulative, follower=follower)


def _variance_from_ic(ic):
    n = ic.size
    if n < 2:
        return 0.0
    return float(np.var(ic, ddof=1)) / n


def estimate_ipw(dataset, regime, mask, models):
    """Hajek inverse-probability-weighted estimate of the potential-outcome mean.

    The ratio of the weighted outcome sum to the weighted follower-indicator
    sum over the subgroup; the variance comes from the ratio-estimator
    influence function. Raises ``NoFollowersError`` when no uncensored
    subject followed the regime.
    """
    mask = _as_mask(dataset, mask)
    reg = _check_regime(regime, dataset.horizon)
    K = dataset.horizon
    cw = cumulative_weights(dataset, reg, mask, models)
    follows = cw.follower[:, K]
    sub = np.flatnonzero(mask)
    if not follows.any():
        raise NoFollowersError("no uncensored follower of the regime in the subgroup")
    weights = np.zeros(dataset.n_subjects)
    weights[follows] = 1.0 / cw.cumulative[follows, K]
    y_filled = np.where(follows, np.nan_to_num(dataset.outcome, nan=0.0), 0.0)
    w = weights[sub]
    wy = (weights * y_filled)[sub]
    mean = float(wy.sum() / w.sum())
    ic = (weights[sub] * (y_filled[sub] - mean)) / w.mean()
    return EstimateWithIC(
        mean=mean,
        variance=_variance_from_ic(ic),
        n=sub.size,
        influence_values=ic,
    )


def _sequential_regressions(dataset, regime, mask, models, *, targeted,
                            fluctuation="logistic", outcome_design="history"):
    """Shared engine for g-computation and TMLE.

    Runs the iterated regressions from the final outcome back to baseline.
    With ``targeted=True`` each step's predictions are fluctuated through a
    weighted intercept-only fit before becoming the next pseudo-outcome, and
    the recursion runs on the outcome linearly rescaled to [0, 1] so the
    final average is a genuine substitution estimate.
    """
    if outcome_design not in DESIGN_CHOICES:
        raise ValueError(f"outcome_design must be one of {DESIGN_CHOICES}")
    if fluctuation not in FLUCTUATION_CHOICES:
        raise ValueError(f"fluctuation must be one of {FLUCTUATION_CHOICES}")
    mask = _as_mask(dataset, mask)
    reg = _check_regime(regime, dataset.horizon)
    if not mask.any():
        raise EmptyRiskSetError(0, "subgroup has no subjects")
    K = dataset.horizon
    n = dataset.n_subjects
    y = dataset.outcome

    fully_observed = mask & dataset.uncensored_through(K)
    if not fully_observed.any():
        raise EmptyRiskSetError(K)

    logistic = targeted and fluctuation == "logistic"
    y_min = float(y[fully_observed].min())
    y_max = float(y[fully_observed].max())
    y_range = y_max - y_min
    degenerate = y_range == 0.0
    if logistic and not degenerate:
        scale, shift = y_range, y_min
    else:
        scale, shift = 1.0, 0.0

    cw = cumulative_weights(dataset, reg, mask, models)
    if targeted and not cw.follower[:, K].any():
        raise NoFollowersError("no uncensored follower of the regime in the subgroup")

    response = np.full(n, np.nan)
    response[fully_observed] = (y[fully_observed] - shift) / scale
    outcome_fits = []
    ic_terms = np.zeros(n)
    step_scores = []
    epsilons = []

    for step in range(K + 1, 0, -1):
        fit_rows = mask & dataset.uncensored_through(step - 1)
        if not fit_rows.any():
            raise EmptyRiskSetError(step - 1)
        if outcome_design == "history":
            x_fit = _history_design(dataset, fit_rows, step - 1, step - 1)
        else:
            x_fit = _intercept_design(int(fit_rows.sum()))
        qfit = fit_glm(x_fit, response[fit_rows], family="gaussian")
        outcome_fits.append(qfit)

        predict_rows = mask & dataset.observed_at(step - 1)
        if outcome_design == "history":
            x_pred = _history_design(dataset, predict_rows, step - 1, step - 1, regime=reg)
        else:
            x_pred = _intercept_design(int(predict_rows.sum()))
        q = np.full(n, np.nan)
        q[predict_rows] = predict_glm(qfit, x_pred)

        if targeted and not degenerate:
            flucts = cw.follower[:, step - 1]
            inv_weights = 1.0 / cw.cumulative[flucts, step - 1]
            if logistic:
                q_bounded = np.clip(q, _Q_CLAMP, 1.0 - _Q_CLAMP)
                offset = logit(q_bounded[flucts])
                eps_fit = fit_glm(
                    _intercept_design(int(flucts.sum())),
                    response[flucts],
                    weights=inv_weights,
                    offset=offset,
                    family="binomial",
                )
                epsilon = float(eps_fit.coefficients[0])
                q_star = np.full(n, np.nan)
                q_star[predict_rows] = expit(logit(q_bounded[predict_rows]) + epsilon)
            else:
                resid = response[flucts] - q[flucts]
                epsilon = float(np.sum(inv_weights * resid) / np.sum(inv_weights))
                q_star = q + epsilon
            epsilons.append(epsilon)
            score = float(np.sum(inv_weights * (response[flucts] - q_star[flucts])))
            step_scores.append(score / max(int(flucts.sum()), 1))
            ic_terms[flucts] += inv_weights * (response[flucts] - q_star[flucts])
            response = q_star
        else:
            flucts = cw.follower[:, step - 1]
            if flucts.any():
                inv_weights = 1.0 / cw.cumulative[flucts, step - 1]
                ic_terms[flucts] += inv_weights * (response[flucts] - q[flucts])
            if targeted:
                epsilons.append(0.0)
                step_scores.append(0.0)
            response = q

    q_final = response[mask]
    mean = shift + scale * float(q_final.mean())
    ic = scale * ic_terms[mask] + (shift + scale * q_final) - mean
    if not targeted:
        # the plug-in estimator does not solve the score equation, so center
        ic = ic - ic.mean()
    if logistic and not (y_min - 1e-9 <= mean <= y_max + 1e-9):
        # substitution estimates live inside the observed outcome range by
        # construction; escaping it means a real defect, not a data problem
        raise AssertionError(
            f"targeted estimate {mean} escaped the outcome range [{y_min}, {y_max}]"
        )
    models.outcome_models = outcome_fits[::-1]
    diagnostics = None
    if targeted:
        diagnostics = {
            "step_scores": tuple(step_scores[::-1]),
            "epsilons": tuple(epsilons[::-1]),
            "outcome_range": (y_min, y_max),
        }
    return EstimateWithIC(
        mean=mean,
        variance=_variance_from_ic(ic),
        n=int(mask.sum()),
        influence_values=ic,
        diagnostics=diagnostics,
    )


def estimate_gcomp(dataset, regime, mask, models, *, outcome_design="history"):
    """Iterated-conditional-expectation (g-computation) estimate.

    Regresses the outcome on full history among the uncensored, predicts with
    treatments set to the regime, recurses the predictions back to baseline,
    and averages the final predictions over the subgroup. Influence values
    use the efficient-influence-curve expression evaluated at the fitted
    (untargeted) regressions, centered.
    """
    return _sequential_regressions(
        dataset, regime, mask, models, targeted=False, outcome_design=outcome_design
    )


def estimate_tmle(dataset, regime, mask, models, *, fluctuation="logistic",
                  outcome_design="history"):
    """Longitudinal targeted maximum likelihood estimate.

    Adds a targeting step after each iterated regression: an intercept-only
    weighted fluctuation with the current predictions as offset and
    inverse-probability weights over that step's followers. With the default
    logistic fluctuation the recursion runs on the outcome rescaled to
    [0, 1], so the estimate always lies within the observed outcome range.
    The linear fluctuation variant is available for diagnostics only.
    """
    est = _sequential_regressions(
        dataset, regime, mask, models, targeted=True,
        fluctuation=fluctuation, outcome_design=outcome_design,
    )
    return est


_ESTIMATOR_DISPATCH = {
    "ipw": lambda d, r, m, nm, opts: estimate_ipw(d, r, m, nm),
    "gcomp": lambda d, r, m, nm, opts: estimate_gcomp(
        d, r, m, nm, outcome_design=opts["outcome_design"]
    ),
    "tmle": lambda d, r, m, nm, opts: estimate_tmle(
        d, r, m, nm, fluctuation=opts["fluctuation"], outcome_design=opts["outcome_design"]
    ),
}


def estimate_potential_outcome_mean(dataset, regime, mask=None, method="tmle", *,
                                    truncation_bound=0.01, fluctuation="logistic",
                                    outcome_design="history", propensity_design="history",
                                    models=None):
    """Convenience wrapper: fit nuisances and run one estimator for one regime."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if models is None:
        models = fit_propensity_models(
            dataset, regime, mask, bound=truncation_bound, propensity_design=propensity_design
        )
    opts = {"fluctuation": fluctuation, "outcome_design": outcome_design}
    return _ESTIMATOR_DISPATCH[method](dataset, regime, mask, models, opts)


def estimate_effect(dataset, regime1, regime0, mask=None, method="tmle", *,
                    truncation_bound=0.01, fluctuation="logistic",
                    outcome_design="history", propensity_design="history"):
    """Subgroup treatment effect contrasting two regimes.

    ``delta`` is the difference of the two potential-outcome-mean estimates;
    its variance is the sample variance of the per-subject influence-value
    differences divided by the subgroup size, since both estimates are
    functions of the same subgroup sample.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    mask = _as_mask(dataset, mask)
    reg1 = _check_regime(regime1, dataset.horizon)
    reg0 = _check_regime(regime0, dataset.horizon)
    if not mask.all():
        # restrict once up front so every model fit and weight computation
        # below works on subgroup-sized arrays
        dataset = dataset.subset(mask)
        mask = None
    models = fit_propensity_models(
        dataset, reg1, mask, bound=truncation_bound, propensity_design=propensity_design
    )
    opts = {"fluctuation": fluctuation, "outcome_design": outcome_design}
    est1 = _ESTIMATOR_DISPATCH[method](dataset, reg1, mask, models, opts)
    est0 = _ESTIMATOR_DISPATCH[method](dataset, reg0, mask, models, opts)
    ic = est1.influence_values - est0.influence_values
    return SubgroupEffect(
        delta=est1.mean - est0.mean,
        variance=_variance_from_ic(ic),
        n=est1.n,
        regimes=(tuple(int(v) for v in reg1), tuple(int(v) for v in reg0)),
    )
