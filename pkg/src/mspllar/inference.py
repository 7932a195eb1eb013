"""State inference, prediction and residual diagnostics.

Pair-state probabilities from the filter are mapped to marginal regime
probabilities by summing over pairs sharing a current state. Smoothing
runs the usual backward recursion over the pair chain. Predictions are
probability-weighted mixtures of the per-path intensities; the recursive
most-likely-path predictor is available for comparison but is a poor
default when regimes are not well separated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .filtering import FilterTrace, bayes_update_eta, ehg_step, forward_eta
from .model import ExpandedChain, ParameterSet, build_expanded_chain


@dataclass(frozen=True, eq=False)
class StateProbabilities:
    """T x m matrix of marginal regime probabilities of the given kind."""

    kind: str  # filter | one_step_ahead | smoothing
    probs: np.ndarray


@dataclass(frozen=True, eq=False)
class PredictionSeries:
    """Intensity predictions: one_step, smoothed_insample or forecast."""

    kind: str
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class DiagnosticsReport:
    pearson_residuals: np.ndarray
    residual_mse: float  # nan when T <= p
    acf: np.ndarray  # lags 1..L
    aic: float
    bic: float
    poisson_check_pairs: list[tuple[float, float]]  # (intensity, squared raw residual)
    n_params: int


def marginal_state_probs(expanded_probs, chain: ExpandedChain,
                         kind: str = "filter") -> StateProbabilities:
    """Collapse pair-state probabilities onto the current regime."""
    expanded = np.atleast_2d(np.asarray(expanded_probs, dtype=float))
    out = np.zeros((expanded.shape[0], chain.m))
    for j in range(chain.m):
        out[:, j] = expanded[:, chain.cur_state == j].sum(axis=1)
    return StateProbabilities(kind=kind, probs=out)


def kim_smoother(trace: FilterTrace, chain: ExpandedChain) -> np.ndarray:
    """Backward smoothing over pair states, returns a T x m**2 matrix.

    Row T is the final filter row; earlier rows rescale the filter by the
    transition-weighted ratio of smoothed to predictive probabilities one
    step ahead. A zero predictive probability with smoothed mass on it
    means the forward pass was inconsistent, which is a hard error;
    zero-over-zero terms contribute nothing.
    """
    filt = trace.filter_probs_mat
    pred_next = trace.pred_probs_next_mat
    T = filt.shape[0]
    smooth = np.empty_like(filt)
    smooth[T - 1] = filt[T - 1]
    for t in range(T - 2, -1, -1):
        denom = pred_next[t]
        num = smooth[t + 1]
        bad = (denom <= 0.0) & (num > 0.0)
        if bad.any():
            raise NumericalError(
                f"smoothing at t={t + 1}: predictive probability is zero where "
                "smoothed mass is positive (corrupt filter output)"
            )
        ratio = np.where(denom > 0.0, num / np.where(denom > 0.0, denom, 1.0), 0.0)
        smooth[t] = filt[t] * (chain.gamma_star @ ratio)
    return smooth


def filter_marginals(trace: FilterTrace, chain: ExpandedChain) -> StateProbabilities:
    return marginal_state_probs(trace.filter_probs_mat, chain, "filter")


def one_step_marginals(trace: FilterTrace, chain: ExpandedChain) -> StateProbabilities:
    return marginal_state_probs(trace.pred_probs_next_mat, chain, "one_step_ahead")


def smoothing_marginals(trace: FilterTrace, chain: ExpandedChain) -> StateProbabilities:
    return marginal_state_probs(kim_smoother(trace, chain), chain, "smoothing")


def predict_one_step(trace: FilterTrace, chain: ExpandedChain) -> PredictionSeries:
    """In-sample one-step predictions: predictive-weighted mean intensity."""
    values = np.einsum("tj,tj->t", np.exp(trace.lambda_mat), trace.priors)
    return PredictionSeries(kind="one_step", values=values)


def predict_smoothed_insample(trace: FilterTrace, smoothing,
                              chain: ExpandedChain) -> PredictionSeries:
    """In-sample predictions reweighted by smoothing probabilities."""
    smoothing = np.asarray(smoothing, dtype=float)
    values = np.einsum("tj,tj->t", np.exp(trace.lambda_mat), smoothing)
    return PredictionSeries(kind="smoothed_insample", values=values)


def forecast(params: ParameterSet, trace: FilterTrace, horizon: int,
             X_future=None, chain: ExpandedChain | None = None) -> PredictionSeries:
    """Intensity forecasts for 1..horizon steps past the filtered sample.

    Models with covariates need one future covariate row per step
    (missing rows are a hard error). Beyond the first step the recursion
    is fed the previous prediction in place of the unobserved count; the
    fed-back value stays real-valued inside log(. + 1) and inside the
    (continuous) Poisson density.
    """
    if horizon < 1:
        raise ValueError("forecast horizon must be at least 1")
    if chain is None:
        chain = build_expanded_chain(params.gamma)
    if params.r > 0:
        if X_future is None:
            raise ValueError(f"model has r={params.r} covariates; supply X_future")
        X_future = np.asarray(X_future, dtype=float)
        if X_future.ndim != 2 or X_future.shape != (horizon, params.r):
            raise ValueError(
                f"future covariates must be ({horizon}, {params.r}), "
                f"got {np.shape(X_future)}"
            )
    step = trace.last_step()
    values = np.empty(horizon)
    for s in range(horizon):
        x_t = X_future[s] if params.r > 0 else None
        pred = step.pred_probs_next
        eta_cond = bayes_update_eta(step.lambda_vec, step.filter_probs, pred, chain)
        eta = forward_eta(eta_cond, step.y, x_t, params, chain)
        lam_hat = float(np.exp(eta) @ pred)
        values[s] = lam_hat
        if s + 1 < horizon:
            step = ehg_step(step, lam_hat, x_t, params, chain)
    return PredictionSeries(kind="forecast", values=values)


def predict_most_likely_path(params: ParameterSet, y, X, smoothing_marginal,
                             eta0: float, y0: float) -> PredictionSeries:
    """Recursive intensity along the modal smoothed regime path.

    Kept for comparison only; mixture-weighted predictions are preferred.
    """
    y = np.asarray(y, dtype=float)
    probs = np.asarray(smoothing_marginal, dtype=float)
    path = probs.argmax(axis=1)
    T = y.shape[0]
    if X is None:
        X = np.zeros((T, params.r))
    X = np.asarray(X, dtype=float)
    eta = np.empty(T)
    eta_prev, y_prev = float(eta0), float(y0)
    for t in range(T):
        s = path[t]
        e = params.d[s] + params.a[s] * eta_prev + params.b[s] * np.log1p(y_prev)
        if params.r > 0:
            e += float(params.beta[s] @ X[t])
        eta[t] = e
        eta_prev, y_prev = e, y[t]
    return PredictionSeries(kind="most_likely_path", values=np.exp(eta))


def sample_acf(x, max_lag: int) -> np.ndarray:
    """Biased (1/T-normalized) sample autocorrelations for lags 1..max_lag."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom == 0.0:
        return np.zeros(max_lag)
    return np.array([float(xc[l:] @ xc[:-l]) / denom for l in range(1, max_lag + 1)])


def diagnostics(y, predictions: PredictionSeries, p: int, qll: float,
                max_lag: int | None = None) -> DiagnosticsReport:
    """Pearson residual diagnostics plus information criteria.

    ``p`` is the parameter count charged against the fit (callers may
    override it when boundary-pinned transitions are dropped from the
    count). MSE divides by T - p and is reported as nan when T <= p.
    """
    y = np.asarray(y, dtype=float)
    lam = np.asarray(predictions.values, dtype=float)
    if lam.shape != y.shape:
        raise ValueError("predictions and series length differ")
    if (lam <= 0).any():
        raise ValueError("predicted intensities must be positive")
    T = y.shape[0]
    if max_lag is None:
        max_lag = min(40, T // 4)
    resid = (y - lam) / np.sqrt(lam)
    mse = float(resid @ resid) / (T - p) if T > p else math.nan
    return DiagnosticsReport(
        pearson_residuals=resid,
        residual_mse=mse,
        acf=sample_acf(resid, max_lag) if max_lag >= 1 else np.zeros(0),
        aic=-2.0 * qll + 2.0 * p,
        bic=-2.0 * qll + p * math.log(T),
        poisson_check_pairs=[(float(l), float((yt - l) ** 2)) for yt, l in zip(y, lam)],
        n_params=p,
    )


def covariate_effect_trajectory(beta_hat, smoothing_marginal) -> np.ndarray:
    """Smoothing-weighted covariate effects over time (T x r)."""
    beta_hat = np.atleast_2d(np.asarray(beta_hat, dtype=float))
    probs = np.asarray(smoothing_marginal, dtype=float)
    if probs.shape[1] != beta_hat.shape[0]:
        raise ValueError("regime dimension mismatch between beta and probabilities")
    return probs @ beta_hat


def intensity_decomposition(params: ParameterSet, y, X, eta0: float,
                            y0: float) -> dict[str, np.ndarray]:
    """Split the single-regime linear predictor into its four sources.

    Returns per-t arrays for the geometric intercept sum, the decaying
    initial condition, the accumulated feedback from past counts and the
    accumulated covariate contribution; they sum to the recursive linear
    predictor. Requires m = 1 and a != 1.
    """
    if params.m != 1:
        raise ValueError("decomposition is defined for single-regime models")
    d, a, b = float(params.d[0]), float(params.a[0]), float(params.b[0])
    if a == 1.0:
        raise ValueError("decomposition is invalid at a = 1")
    y = np.asarray(y, dtype=float)
    T = y.shape[0]
    if X is None:
        X = np.zeros((T, params.r))
    X = np.asarray(X, dtype=float)
    xb = X @ params.beta[0] if params.r > 0 else np.zeros(T)
    y_lag = np.concatenate([[y0], y[:-1]])
    log_lag = np.log1p(y_lag)

    t_idx = np.arange(1, T + 1)
    intercept = d * (1.0 - a**t_idx) / (1.0 - a)
    initial = a**t_idx * eta0
    contagion = np.empty(T)
    systematic = np.empty(T)
    c_acc = s_acc = 0.0
    for t in range(T):
        c_acc = a * c_acc + b * log_lag[t]
        s_acc = a * s_acc + xb[t]
        contagion[t] = c_acc
        systematic[t] = s_acc
    return {
        "intercept": intercept,
        "initial": initial,
        "contagion": contagion,
        "systematic": systematic,
    }
