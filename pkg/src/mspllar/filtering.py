"""Forward filter for the switching count model.

The recursion tracks, for every pair state (s_{t-1}, s_t), the expectation
of the linear predictor given past data, together with filtering and
one-step predictive probabilities of the pair chain. Summing the resulting
per-path Poisson likelihoods gives the per-observation mixture likelihood
and hence the quasi-log-likelihood that estimation maximizes.

All mixture arithmetic is in log space. ``quasi_log_likelihood`` runs the
fused kernel selected in ``_kernels``; the per-step functions here are the
readable reference used by tests and by forecasting.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import gammaln, logsumexp

from ._ehg_py import ETA_CLAMP, UNREACHABLE_EPS
from ._kernels import ehg_filter_core
from .model import (
    ExpandedChain,
    ParameterSet,
    build_expanded_chain,
    stationary_distribution,
    stationary_distribution_expanded,
)

DEGENERATE_FEEDBACK_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class FilterInit:
    """Starting values: pre-sample count, conditional-mean vector, prior."""

    y0: float
    lambda0: np.ndarray
    prior: np.ndarray


@dataclass(frozen=True, eq=False)
class FilterStep:
    """All per-time-step filter outputs (pair-state space, length m**2)."""

    t: int
    lambda_vec: np.ndarray
    log_cond_pmf: np.ndarray
    filter_probs: np.ndarray
    pred_probs_next: np.ndarray
    log_mix: float
    y: float


@dataclass(frozen=True, eq=False)
class FilterTrace:
    """Filter output over t = 1..T plus the initialization record.

    Array attributes are (T, m**2); ``steps`` wraps them lazily as
    FilterStep objects. ``priors`` holds P(pair state at t | data to t-1),
    i.e. the predictive distribution each step was scored against.
    """

    qll: float
    init: FilterInit
    lambda_mat: np.ndarray
    log_cond_pmf_mat: np.ndarray
    filter_probs_mat: np.ndarray
    pred_probs_next_mat: np.ndarray
    log_mix_vec: np.ndarray
    y: np.ndarray

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @cached_property
    def priors(self) -> np.ndarray:
        return np.vstack([self.init.prior, self.pred_probs_next_mat[:-1]])

    @cached_property
    def steps(self) -> tuple[FilterStep, ...]:
        return tuple(
            FilterStep(
                t=t + 1,
                lambda_vec=self.lambda_mat[t],
                log_cond_pmf=self.log_cond_pmf_mat[t],
                filter_probs=self.filter_probs_mat[t],
                pred_probs_next=self.pred_probs_next_mat[t],
                log_mix=float(self.log_mix_vec[t]),
                y=float(self.y[t]),
            )
            for t in range(self.T)
        )

    def initial_step(self) -> FilterStep:
        """Virtual step 0 from which the recursion can be (re)started.

        Valid because all entries of lambda0 coincide, so the Bayes update
        at t=1 reproduces the initialization exactly.
        """
        return FilterStep(
            t=0,
            lambda_vec=self.init.lambda0,
            log_cond_pmf=np.zeros_like(self.init.lambda0),
            filter_probs=self.init.prior,
            pred_probs_next=self.init.prior,
            log_mix=0.0,
            y=self.init.y0,
        )

    def last_step(self) -> FilterStep:
        return self.steps[-1]


def initialize_filter(params: ParameterSet, chain: ExpandedChain | None = None) -> FilterInit:
    """Starting values from the marginal-mean heuristic.

    Every element of lambda0 is the stationary-weighted mean of the
    per-state long-run linear predictors d_i / (1 - a_i - b_i) and y0 is
    its exponential; the prior over pair states is the expanded chain's
    stationary distribution. States with 1 - a - b near zero make the
    long-run mean blow up, in which case we fall back to lambda0 = 0,
    y0 = 1 and warn (keeps optimization alive near the unit root).
    """
    if chain is None:
        chain = build_expanded_chain(params.gamma)
    prior = stationary_distribution_expanded(chain)
    denom = 1.0 - params.a - params.b
    if np.abs(denom).min() < DEGENERATE_FEEDBACK_TOL:
        warnings.warn(
            "near-unit-root feedback (1 - a - b ~ 0); falling back to "
            "lambda0 = 0, y0 = 1",
            RuntimeWarning,
            stacklevel=2,
        )
        mean_eta = 0.0
    else:
        delta = stationary_distribution(params.gamma)
        mean_eta = float(delta @ (params.d / denom))
    lambda0 = np.full(chain.n_states, mean_eta)
    return FilterInit(y0=float(np.exp(mean_eta)), lambda0=lambda0, prior=prior)


def bayes_update_eta(lambda_prev, filter_probs_prev, pred_probs, chain: ExpandedChain):
    """Condition the previous-step means on each new pair state.

    Element j is the gamma_star-weighted average of lambda_prev over
    predecessor pairs, normalized by the predictive probability of j.
    Unreachable states (predictive probability below 1e-300) get the
    probability-weighted mean of lambda_prev; they carry zero weight
    downstream, the substitution just keeps arithmetic finite.
    """
    lambda_prev = np.asarray(lambda_prev, dtype=float)
    filter_probs_prev = np.asarray(filter_probs_prev, dtype=float)
    pred_probs = np.asarray(pred_probs, dtype=float)
    weighted = filter_probs_prev * lambda_prev
    num = chain.gamma_star.T @ weighted
    out = np.empty_like(num)
    reachable = pred_probs >= UNREACHABLE_EPS
    out[reachable] = num[reachable] / pred_probs[reachable]
    out[~reachable] = weighted.sum()
    return out


def forward_eta(eta_cond, y_prev, x_t, params: ParameterSet, chain: ExpandedChain,
                raw_count_feedback: bool = False):
    """Propagate conditioned means one step along each pair's current regime.

    The lagged count enters through log(y_prev + 1) to match the model
    definition; ``raw_count_feedback=True`` switches to the raw count
    (comparison variant, off by default).
    """
    eta_cond = np.asarray(eta_cond, dtype=float)
    cur = chain.cur_state
    fb = float(y_prev) if raw_count_feedback else float(np.log1p(y_prev))
    eta = params.d[cur] + params.a[cur] * eta_cond + params.b[cur] * fb
    if params.r > 0:
        if x_t is None:
            raise ValueError(f"model has r={params.r} covariates but x_t is None")
        eta = eta + params.beta[cur] @ np.asarray(x_t, dtype=float)
    return eta


def conditional_log_pmf(lambda_vec, y_t: float):
    """Poisson log pmf of y_t for each per-path linear predictor.

    The exp() argument is clamped at 700 with a warning; the linear term
    keeps the untouched predictor.
    """
    if y_t < 0:
        raise ValueError(f"y_t must be non-negative, got {y_t}")
    eta = np.asarray(lambda_vec, dtype=float)
    if (eta > ETA_CLAMP).any():
        warnings.warn(
            "linear predictor above 700, clamping exp() argument",
            RuntimeWarning,
            stacklevel=2,
        )
    return y_t * eta - np.exp(np.minimum(eta, ETA_CLAMP)) - gammaln(y_t + 1.0)


def ehg_step(prev: FilterStep, y_t: float, x_t, params: ParameterSet,
             chain: ExpandedChain, raw_count_feedback: bool = False) -> FilterStep:
    """One full recursion step from the previous step's state."""
    eta_cond = bayes_update_eta(
        prev.lambda_vec, prev.filter_probs, prev.pred_probs_next, chain
    )
    eta = forward_eta(eta_cond, prev.y, x_t, params, chain, raw_count_feedback)
    lp = conditional_log_pmf(eta, y_t)
    pred = prev.pred_probs_next
    with np.errstate(divide="ignore"):
        w = np.where(pred > 0.0, np.log(np.where(pred > 0.0, pred, 1.0)) + lp, -np.inf)
    log_mix = float(logsumexp(w))
    if not np.isfinite(log_mix):
        raise FloatingPointError(
            f"mixture likelihood underflowed at t={prev.t + 1}: "
            "all pair states are impossible for this observation"
        )
    filt = np.exp(w - log_mix)
    pred_next = filt @ chain.gamma_star
    return FilterStep(
        t=prev.t + 1,
        lambda_vec=eta,
        log_cond_pmf=lp,
        filter_probs=filt,
        pred_probs_next=pred_next,
        log_mix=log_mix,
        y=float(y_t),
    )


def quasi_log_likelihood(
    params: ParameterSet,
    y,
    X=None,
    raw_count_feedback: bool = False,
    init: FilterInit | None = None,
) -> tuple[float, FilterTrace | None]:
    """Quasi-log-likelihood of the count series plus the full filter trace.

    On an infeasible parameter point (mixture underflows to probability
    zero at some step) returns (-inf, None) with a warning instead of
    raising, so an optimizer can retreat.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.shape[0] < 1:
        raise ValueError("y must be a non-empty 1-d series")
    if (y < 0).any() or not np.isfinite(y).all():
        raise ValueError("counts must be finite and non-negative")
    T = y.shape[0]
    if X is None:
        X = np.zeros((T, params.r))
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape != (T, params.r):
        raise ValueError(f"X must have shape ({T}, {params.r}), got {X.shape}")

    chain = build_expanded_chain(params.gamma)
    if init is None:
        init = initialize_filter(params, chain)

    qll, lam, logpmf, filt, pred_next, log_mix, n_clamped, fail_t = ehg_filter_core(
        y, X, params.d, params.a, params.b, params.beta,
        chain.gamma_star, chain.cur_state,
        init.lambda0, init.y0, init.prior, raw_count_feedback,
    )
    if n_clamped:
        warnings.warn(
            f"{n_clamped} linear predictors above 700 were clamped in exp()",
            RuntimeWarning,
            stacklevel=2,
        )
    if fail_t >= 0:
        warnings.warn(
            f"mixture likelihood underflowed at t={fail_t + 1}; "
            "parameter point treated as infeasible (qll = -inf)",
            RuntimeWarning,
            stacklevel=2,
        )
        return -np.inf, None
    trace = FilterTrace(
        qll=float(qll),
        init=init,
        lambda_mat=lam,
        log_cond_pmf_mat=logpmf,
        filter_probs_mat=filt,
        pred_probs_next_mat=pred_next,
        log_mix_vec=log_mix,
        y=y,
    )
    return float(qll), trace
