"""Weighted generalized linear models fit by iteratively reweighted least squares.

Supports the gaussian family with identity link and the binomial family with
logit link, per-observation prior weights, and offsets. Every sequential
nuisance regression in the package runs through :func:`fit_glm`, so the
implementation favors small dense problems: normal equations with a ridge
floor, step halving when the deviance increases, and internal standardization
of non-constant columns for conditioning.

Binomial responses may be fractional (anywhere in [0, 1]); the deviance is the
quasi-binomial one, which is what the sequential-regression pseudo-outcomes
require.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy

from .errors import DimensionMismatchError

FAMILIES = ("gaussian", "binomial")

_MU_EPS = 1e-10     # floor for fitted binomial means during iteration
_PRED_EPS = 1e-12   # floor for returned binomial predictions
_BASE_RIDGE = 1e-8  # first ridge applied when a plain solve fails
_MAX_RIDGE = 1e-2
_MAX_HALVINGS = 10


@dataclass
class GlmFit:
    """A fitted weighted GLM.

    Coefficients are on the raw covariate scale with the intercept first,
    matching the column order of the design matrix passed to :func:`fit_glm`.
    """

    family: str
    coefficients: np.ndarray
    converged: bool
    iterations: int
    deviance: float


def _check_design(design, name="design"):
    X = np.asarray(design, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatchError(f"{name} must be a 2-d matrix, got ndim={X.ndim}")
    return X


def _check_vector(x, n, name, default=None):
    if x is None:
        return np.full(n, default, dtype=float)
    v = np.asarray(x, dtype=float)
    if v.shape != (n,):
        raise DimensionMismatchError(f"{name} must have shape ({n},), got {v.shape}")
    return v


def _standardize(X):
    """Scale non-constant columns to unit sd; center only when column 0 is an intercept.

    Returns the transformed copy plus what is needed to map coefficients back
    to the raw scale.
    """
    mean = X.mean(axis=0)
    var = np.einsum("ij,ij->j", X, X) / X.shape[0] - mean * mean
    sd = np.sqrt(np.clip(var, 0.0, None))
    scaled = sd > 0
    has_intercept = X.shape[1] > 0 and not scaled[0] and X[0, 0] == 1.0
    if not scaled.any():
        return X, mean, sd, scaled, has_intercept
    Xs = X.copy()
    if has_intercept:
        Xs[:, scaled] = (X[:, scaled] - mean[scaled]) / sd[scaled]
    else:
        Xs[:, scaled] = X[:, scaled] / sd[scaled]
    return Xs, mean, sd, scaled, has_intercept


def _unstandardize(beta, mean, sd, scaled, has_intercept):
    raw = beta.copy()
    raw[scaled] = beta[scaled] / sd[scaled]
    if has_intercept and scaled.any():
        raw[0] = beta[0] - np.sum(beta[scaled] * mean[scaled] / sd[scaled])
    return raw


def _solve_normal_equations(xtwx, xtwz):
    """Solve the weighted normal equations; on failure add an escalating ridge.

    Rank deficiency and separation show up here as singular or non-finite
    solves; the ridge keeps those fits usable instead of aborting them.
    """
    p = xtwx.shape[0]
    eye = np.eye(p)
    ridge = 0.0
    while True:
        try:
            beta = np.linalg.solve(xtwx + ridge * eye, xtwz)
        except np.linalg.LinAlgError:
            beta = None
        if beta is not None and np.all(np.isfinite(beta)):
            return beta
        if ridge >= _MAX_RIDGE:
            beta, *_ = np.linalg.lstsq(xtwx + ridge * eye, xtwz, rcond=None)
            return np.nan_to_num(beta, nan=0.0, posinf=0.0, neginf=0.0)
        ridge = _BASE_RIDGE if ridge == 0.0 else ridge * 10.0


def _binomial_deviance(y, mu, w):
    terms = xlogy(y, y) - xlogy(y, mu) + xlogy(1.0 - y, 1.0 - y) - xlogy(1.0 - y, 1.0 - mu)
    return 2.0 * float(np.sum(w * terms))


def _binomial_saturated(y, w):
    """Saturated-model part of the binomial deviance; constant across iterations."""
    return float(np.sum(w * (xlogy(y, y) + xlogy(1.0 - y, 1.0 - y))))


def _binomial_fitted_part(y, mu, w):
    """Iteration-dependent part; mu must already be clipped away from 0 and 1."""
    return -float(np.sum(w * (y * np.log(mu) + (1.0 - y) * np.log1p(-mu))))


def _gaussian_deviance(y, mu, w):
    r = y - mu
    return float(np.sum(w * r * r))


def glm_deviance(design, response, coefficients, weights=None, offset=None,
                 family="gaussian"):
    """Deviance of the given coefficient vector on the raw covariate scale."""
    X = _check_design(design)
    n = X.shape[0]
    y = _check_vector(response, n, "response")
    w = _check_vector(weights, n, "weights", default=1.0)
    o = _check_vector(offset, n, "offset", default=0.0)
    beta = np.asarray(coefficients, dtype=float)
    if beta.shape != (X.shape[1],):
        raise DimensionMismatchError("coefficient length does not match design width")
    eta = X @ beta + o
    if family == "gaussian":
        return _gaussian_deviance(y, eta, w)
    mu = np.clip(expit(eta), _MU_EPS, 1.0 - _MU_EPS)
    return _binomial_deviance(y, mu, w)


def fit_glm(design, response, weights=None, offset=None, family="gaussian",
            max_iter=100, tol=1e-10):
    """Fit a weighted GLM with an optional per-observation offset.

    Parameters
    ----------
    design : (n, p) array
        Model matrix. The first column is expected to be an intercept column
        of ones; constant columns are never rescaled.
    response : (n,) array
        Gaussian responses are unrestricted; binomial responses must lie in
        [0, 1] and may be fractional.
    weights : (n,) array, optional
        Nonnegative prior weights. Default is all ones.
    offset : (n,) array, optional
        Added to the linear predictor and never estimated.
    family : {"gaussian", "binomial"}
        Identity link for gaussian, logit link for binomial.
    max_iter : int
        Iteration cap for IRLS. Gaussian fits always take one step.
    tol : float
        Relative deviance-change convergence threshold.

    Returns
    -------
    GlmFit
        Never raises for rank deficiency or separation; a ridge floor on the
        standardized normal equations keeps the solve well posed, and a fit
        that hits ``max_iter`` is returned with ``converged=False``.
    """
    X = _check_design(design)
    n, p = X.shape
    if n == 0:
        raise DimensionMismatchError("cannot fit a GLM on an empty design")
    y = _check_vector(response, n, "response")
    w = _check_vector(weights, n, "weights", default=1.0)
    o = _check_vector(offset, n, "offset", default=0.0)
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if not np.any(w > 0):
        raise ValueError("weights must not all be zero")
    if family == "binomial" and (np.any(y < 0) or np.any(y > 1)):
        raise ValueError("binomial responses must lie in [0, 1]")

    Xs, mean, sd, scaled, has_intercept = _standardize(X)

    if family == "gaussian":
        xtw = Xs.T * w
        beta = _solve_normal_equations(xtw @ Xs, xtw @ (y - o))
        dev = _gaussian_deviance(y, Xs @ beta + o, w)
        raw = _unstandardize(beta, mean, sd, scaled, has_intercept)
        return GlmFit("gaussian", raw, True, 1, dev)

    # binomial IRLS with step halving
    beta = np.zeros(p)
    if has_intercept:
        ybar = float(np.clip(np.sum(w * y) / np.sum(w), _MU_EPS, 1.0 - _MU_EPS))
        beta[0] = np.log(ybar / (1.0 - ybar))
    eta = Xs @ beta + o
    mu = np.clip(expit(eta), _MU_EPS, 1.0 - _MU_EPS)
    saturated = _binomial_saturated(y, w)
    dev = 2.0 * (saturated + _binomial_fitted_part(y, mu, w))
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        irls_w = w * mu * (1.0 - mu)
        z = (eta - o) + (y - mu) / (mu * (1.0 - mu))
        xtw = Xs.T * irls_w
        proposal = _solve_normal_equations(xtw @ Xs, xtw @ z)
        step = proposal - beta
        for _ in range(_MAX_HALVINGS + 1):
            cand = beta + step
            eta_c = Xs @ cand + o
            mu_c = np.clip(expit(eta_c), _MU_EPS, 1.0 - _MU_EPS)
            dev_c = 2.0 * (saturated + _binomial_fitted_part(y, mu_c, w))
            if dev_c <= dev + 1e-10 * (1.0 + abs(dev)):
                break
            step = step / 2.0
        prev = dev
        beta, eta, mu, dev = cand, eta_c, mu_c, dev_c
        if abs(prev - dev) <= tol * (abs(prev) + 1e-8):
            converged = True
            break

    raw = _unstandardize(beta, mean, sd, scaled, has_intercept)
    return GlmFit("binomial", raw, converged, iterations, dev)


def predict_glm(fit, design, offset=None):
    """Mean-scale predictions for a fitted GLM.

    Gaussian fits return the linear predictor plus offset; binomial fits
    return expit of it, clipped so every prediction lies strictly in (0, 1).
    """
    X = _check_design(design)
    coef = np.asarray(fit.coefficients, dtype=float)
    if X.shape[1] != coef.shape[0]:
        raise DimensionMismatchError(
            f"design has {X.shape[1]} columns but the fit has {coef.shape[0]} coefficients"
        )
    o = _check_vector(offset, X.shape[0], "offset", default=0.0)
    eta = X @ coef + o
    if fit.family == "gaussian":
        return eta
    return np.clip(expit(eta), _PRED_EPS, 1.0 - _PRED_EPS)
