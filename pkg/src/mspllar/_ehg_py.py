"""Pure numpy implementation of the filter recursion.

This is the fallback for the compiled core in ``_ehg_cy``; both must produce
the same outputs for the same inputs (up to floating round-off). Any change
here has to be mirrored there.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

# Predictive probabilities below this are treated as unreachable paths.
UNREACHABLE_EPS = 1e-300
# exp() argument clamp used when evaluating the Poisson pmf.
ETA_CLAMP = 700.0


def ehg_filter_core(y, X, d, a, b, beta, gamma_star, cur_state,
                    lambda0, y0, prior, raw_count_feedback=False):
    """Run the full forward recursion over t = 1..T.

    Parameters are raw arrays so the compiled core can share the signature:
    ``y`` is float (pseudo-counts are allowed), ``X`` is (T, r) with r >= 0,
    ``lambda0``/``prior`` are the initial conditional-mean vector and the
    distribution of the first pair state, ``y0`` the pre-sample count.

    Returns a tuple ``(qll, lam, logpmf, filt, pred_next, log_mix,
    n_clamped, fail_t)`` where the arrays are (T, M) resp. (T,) and
    ``fail_t`` is the first index whose mixture underflowed (-1 if none);
    in that case qll is -inf and rows from fail_t on are unspecified.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    T = y.shape[0]
    M = gamma_star.shape[0]
    r = X.shape[1]

    d_j = d[cur_state]
    a_j = a[cur_state]
    b_j = b[cur_state]
    beta_j = beta[cur_state] if r > 0 else None

    lam = np.empty((T, M))
    logpmf = np.empty((T, M))
    filt = np.empty((T, M))
    pred_next = np.empty((T, M))
    log_mix = np.empty(T)

    lam_prev = np.asarray(lambda0, dtype=float)
    filt_prev = np.asarray(prior, dtype=float)
    pred = np.asarray(prior, dtype=float)
    y_prev = float(y0)
    n_clamped = 0

    for t in range(T):
        # Bayes update of the conditional means against the new pair state
        weighted = filt_prev * lam_prev
        num = gamma_star.T @ weighted
        reachable = pred >= UNREACHABLE_EPS
        eta_cond = np.empty(M)
        eta_cond[reachable] = num[reachable] / pred[reachable]
        if not reachable.all():
            eta_cond[~reachable] = weighted.sum()

        # forward one step along each pair's current regime
        fb = y_prev if raw_count_feedback else np.log1p(y_prev)
        eta = d_j + a_j * eta_cond + b_j * fb
        if r > 0:
            eta = eta + beta_j @ X[t]

        # Poisson log pmf per path, exp argument clamped against overflow
        eta_c = eta
        over = eta > ETA_CLAMP
        if over.any():
            n_clamped += int(over.sum())
            eta_c = np.minimum(eta, ETA_CLAMP)
        lp = y[t] * eta - np.exp(eta_c) - gammaln(y[t] + 1.0)

        # mixture likelihood in log space
        w = np.where(pred > 0.0, np.log(np.where(pred > 0.0, pred, 1.0)) + lp, -np.inf)
        w_max = w.max()
        if not np.isfinite(w_max):
            return -np.inf, lam, logpmf, filt, pred_next, log_mix, n_clamped, t
        mix = w_max + np.log(np.exp(w - w_max).sum())

        # filtering then one-step predictive probabilities
        f = np.exp(w - mix)
        p_next = f @ gamma_star

        lam[t] = eta
        logpmf[t] = lp
        filt[t] = f
        pred_next[t] = p_next
        log_mix[t] = mix

        lam_prev = eta
        filt_prev = f
        pred = p_next
        y_prev = y[t]

    return float(log_mix.sum()), lam, logpmf, filt, pred_next, log_mix, n_clamped, -1
