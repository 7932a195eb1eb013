"""Quasi-maximum-likelihood estimation.

The likelihood is maximized over an unconstrained vector psi: d, a, b and
beta map by identity, each transition-matrix row by a multinomial logit
with the last column as reference. Gradients, Hessians and report-map
Jacobians are central finite differences; standard errors combine the
Hessian at the optimum with the delta method so that transition
probabilities and the stationary distribution get standard errors too.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm

from .errors import NumericalError
from .filtering import quasi_log_likelihood
from .model import ParameterSet, count_free_parameters, stationary_distribution

EPS = np.finfo(float).eps
GRAD_STEP = EPS ** (1.0 / 3.0)
HESS_STEP = EPS ** 0.25
GAMMA_CLIP = 1e-8
GRAD_TOL = 1e-6
FTOL = 1e-10
NSD_TOL = 1e-6
RESTART_GRAD_NORM = 1e-3
MAX_RESTARTS = 4


# ---------------------------------------------------------------------------
# reparametrization


def to_unconstrained(theta: ParameterSet) -> np.ndarray:
    """Map a parameter set to the unconstrained optimization vector.

    Layout: d, a, b, beta (row-major), then m-1 log-odds per transition
    row against its last column. Boundary transition probabilities are
    clamped into [1e-8, 1 - 1e-8] with a warning.
    """
    gamma = np.asarray(theta.gamma, dtype=float)
    if theta.m > 1 and ((gamma <= 0.0).any() or (gamma >= 1.0).any()):
        warnings.warn(
            "transition probabilities at the boundary were clamped before "
            "taking log-odds",
            RuntimeWarning,
            stacklevel=2,
        )
        gamma = np.clip(gamma, GAMMA_CLIP, 1.0 - GAMMA_CLIP)
    logits = np.log(gamma[:, :-1] / gamma[:, -1:]) if theta.m > 1 else np.zeros((1, 0))
    return np.concatenate(
        [theta.d, theta.a, theta.b, theta.beta.ravel(), logits.ravel()]
    )


def to_constrained(psi: np.ndarray, m: int, r: int = 0) -> ParameterSet:
    """Inverse of ``to_unconstrained``: always yields a valid parameter set."""
    psi = np.asarray(psi, dtype=float)
    expected = count_free_parameters(m, r)
    if psi.shape != (expected,):
        raise ValueError(f"psi must have length {expected}, got {psi.shape}")
    d, a, b = psi[:m], psi[m : 2 * m], psi[2 * m : 3 * m]
    beta = psi[3 * m : 3 * m + m * r].reshape(m, r)
    logits = psi[3 * m + m * r :].reshape(m, m - 1) if m > 1 else np.zeros((1, 0))
    z = np.concatenate([logits, np.zeros((m, 1))], axis=1)
    z -= z.max(axis=1, keepdims=True)
    gamma = np.exp(z)
    gamma /= gamma.sum(axis=1, keepdims=True)
    return ParameterSet(d=d, a=a, b=b, beta=beta, gamma=gamma)


# ---------------------------------------------------------------------------
# finite differences


def finite_diff_gradient(fun: Callable, x: np.ndarray, step: float = GRAD_STEP):
    """Central-difference gradient with per-coordinate steps step*max(1,|x_i|)."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return g


def numerical_hessian(fun: Callable, x: np.ndarray, step: float = HESS_STEP):
    """Symmetric central-second-difference Hessian of ``fun`` at ``x``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = step * np.maximum(1.0, np.abs(x))
    H = np.empty((n, n))
    f0 = fun(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        H[i, i] = (fun(x + ei) - 2.0 * f0 + fun(x - ei)) / h[i] ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return 0.5 * (H + H.T)


def finite_diff_jacobian(fun: Callable, x: np.ndarray, step: float = GRAD_STEP):
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x), dtype=float)
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2.0 * h)
    return J


# ---------------------------------------------------------------------------
# reporting


def report_names(m: int, r: int = 0, covariate_names=None) -> list[str]:
    """Labels of the reported quantity vector (theta plus delta)."""
    if covariate_names is None:
        covariate_names = [f"x{j + 1}" for j in range(r)]
    names = [f"a{k + 1}" for k in range(m)]
    names += [f"b{k + 1}" for k in range(m)]
    names += [f"d{k + 1}" for k in range(m)]
    names += [f"beta{k + 1}_{cn}" for k in range(m) for cn in covariate_names]
    names += [f"gamma{i + 1}{j + 1}" for j in range(m) for i in range(m)]
    names += [f"delta{k + 1}" for k in range(m)]
    return names


def report_vector(theta: ParameterSet, delta: np.ndarray) -> np.ndarray:
    """Reported quantities in the ``report_names`` order.

    Transition probabilities are emitted column by column to match the
    conventional tabulation order.
    """
    return np.concatenate(
        [theta.a, theta.b, theta.d, theta.beta.ravel(), theta.gamma.ravel(order="F"), delta]
    )


def report_map(psi: np.ndarray, m: int, r: int = 0) -> np.ndarray:
    theta = to_constrained(psi, m, r)
    return report_vector(theta, stationary_distribution(theta.gamma))


def delta_method_se(hessian: np.ndarray, psi_hat: np.ndarray,
                    g: Callable[[np.ndarray], np.ndarray]):
    """Covariance of g(psi_hat) from the objective Hessian at the optimum.

    ``hessian`` is of the maximized objective (so negative definite at an
    interior maximum). A singular information matrix falls back to the
    pseudo-inverse with a warning; the returned flags record that and any
    negative variance on the diagonal.
    """
    H = np.asarray(hessian, dtype=float)
    J = finite_diff_jacobian(g, psi_hat)
    info = -H
    flags = {"hessian_pinv": False, "negative_variance": False}

    def propagate(inv):
        cov = J @ inv @ J.T
        return 0.5 * (cov + cov.T)

    cov = None
    try:
        inv = np.linalg.solve(info, np.eye(info.shape[0]))
        if np.isfinite(inv).all():
            cov = propagate(inv)
    except np.linalg.LinAlgError:
        pass
    if cov is None or np.diag(cov).min() < 0:
        # singular or indefinite information: invert the identified
        # (positive-eigenvalue) subspace only
        warnings.warn(
            "singular information matrix: using pseudo-inverse for standard errors",
            RuntimeWarning,
            stacklevel=2,
        )
        flags["hessian_pinv"] = True
        eigvals, eigvecs = np.linalg.eigh(info)
        keep = eigvals > 1e-10 * max(1.0, eigvals.max())
        inv = (eigvecs[:, keep] / eigvals[keep]) @ eigvecs[:, keep].T
        cov = propagate(inv)
    diag = np.diag(cov).copy()
    if (diag < 0).any():
        flags["negative_variance"] = True
    se = np.where(diag >= 0, np.sqrt(np.maximum(diag, 0.0)), np.nan)
    return cov, se, flags


# ---------------------------------------------------------------------------
# fit results


@dataclass(frozen=True, eq=False)
class FitResult:
    params: ParameterSet
    delta: np.ndarray
    qll: float
    psi_hat: np.ndarray
    report_names: list[str]
    report_values: np.ndarray
    covariance: np.ndarray
    standard_errors: np.ndarray
    convergence: dict
    flags: dict
    n_obs: int
    restarts: list[dict] | None = None

    @property
    def n_params(self) -> int:
        return self.params.n_free_parameters()

    def _index(self, name: str) -> int:
        try:
            return self.report_names.index(name)
        except ValueError:
            raise KeyError(
                f"unknown parameter {name!r}; available: {', '.join(self.report_names)}"
            ) from None

    def estimate(self, name: str) -> float:
        return float(self.report_values[self._index(name)])

    def se(self, name: str) -> float:
        return float(self.standard_errors[self._index(name)])


def wald_test(fit: FitResult, name: str):
    """Two-sided z-test of the zero restriction on one reported parameter."""
    est, se = fit.estimate(name), fit.se(name)
    if not np.isfinite(se) or se <= 0:
        raise NumericalError(f"no usable standard error for {name!r}")
    z = est / se
    p = 2.0 * norm.sf(abs(z))
    return z, p, bool(p < 0.05)


# ---------------------------------------------------------------------------
# state ordering


def _ordering(params: ParameterSet) -> np.ndarray:
    denom = 1.0 - params.a - params.b
    if np.abs(denom).min() < 1e-6:
        key = params.d
    else:
        key = params.d / denom
    return np.argsort(key, kind="stable")


def order_states(fit: FitResult) -> FitResult:
    """Relabel regimes ascending in long-run mean (by intercept if that
    degenerates); permutes every reported block consistently. The
    objective value is unaffected by relabeling."""
    order = _ordering(fit.params)
    m, r = fit.params.m, fit.params.r
    if (order == np.arange(m)).all():
        return fit
    params = fit.params.permuted(order)
    delta = fit.delta[order]

    # report-vector permutation matching the relabeling
    idx = np.arange(len(fit.report_names))
    blocks, pos = [], 0
    for _ in range(3):  # a, b, d
        blocks.append(idx[pos : pos + m][order])
        pos += m
    beta_idx = idx[pos : pos + m * r].reshape(m, r)
    blocks.append(beta_idx[order].ravel())
    pos += m * r
    gamma_idx = idx[pos : pos + m * m].reshape(m, m, order="F")
    blocks.append(gamma_idx[np.ix_(order, order)].ravel(order="F"))
    pos += m * m
    blocks.append(idx[pos : pos + m][order])
    perm = np.concatenate(blocks)

    return replace(
        fit,
        params=params,
        delta=delta,
        psi_hat=to_unconstrained(params),
        report_values=fit.report_values[perm],
        covariance=fit.covariance[np.ix_(perm, perm)],
        standard_errors=fit.standard_errors[perm],
    )


# ---------------------------------------------------------------------------
# fitting


def heuristic_init(y, m: int, r: int = 0) -> ParameterSet:
    """Data-driven starting point: mild dynamics, intercepts spread so the
    per-state long-run means track count quantiles."""
    y = np.asarray(y, dtype=float)
    a = np.full(m, 0.1)
    b = np.full(m, 0.2)
    q = np.quantile(y, (np.arange(m) + 1.0) / (m + 1.0)) if m > 1 else np.array([y.mean()])
    d = (1.0 - a - b) * np.log1p(q)
    if m == 1:
        gamma = np.ones((1, 1))
    else:
        gamma = np.full((m, m), 0.2 / (m - 1))
        np.fill_diagonal(gamma, 0.8)
    return ParameterSet(d=d, a=a, b=b, beta=np.zeros((m, r)), gamma=gamma)


def _negative_qll(psi, y, X, m, r, raw_count_feedback):
    theta = to_constrained(psi, m, r)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        qll, _ = quasi_log_likelihood(theta, y, X, raw_count_feedback)
    if not np.isfinite(qll):
        return 1e300
    return -qll


def fit(
    y,
    X=None,
    m: int = 1,
    init: ParameterSet | str = "auto",
    *,
    raw_count_feedback: bool = False,
    maxiter: int = 500,
    compute_se: bool = True,
    reorder: bool = True,
    covariate_names=None,
) -> FitResult:
    """Maximize the quasi-log-likelihood and assemble the full fit report.

    ``init`` is a ParameterSet (typically the known truth in simulation
    studies) or "auto" for the data-driven heuristic. The optimizer stops
    when the gradient max-norm drops below 1e-6 or the relative objective
    change below 1e-10; non-convergence is reported through
    ``convergence["status"]``, never silently.
    """
    y = np.asarray(y, dtype=float)
    T = y.shape[0]
    if X is not None:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
    r = 0 if X is None else X.shape[1]
    p_free = count_free_parameters(m, r)
    if T <= p_free:
        warnings.warn(
            f"series length {T} does not exceed the {p_free} free parameters",
            RuntimeWarning,
            stacklevel=2,
        )
    if init == "auto":
        init = heuristic_init(y, m, r)
    if init.m != m or init.r != r:
        raise ValueError(
            f"init has (m={init.m}, r={init.r}), expected (m={m}, r={r})"
        )
    psi0 = to_unconstrained(init)
    obj_args = (y, X, m, r, raw_count_feedback)

    def objective(psi):
        return _negative_qll(psi, *obj_args)

    def gradient(psi):
        return finite_diff_gradient(objective, psi)

    # The objective-change stopping rule can fire while the quasi-Newton
    # curvature model is still poor; restarting from the stop point resets
    # that model and usually resumes progress. Stop restarting once the
    # gradient is small or a restart no longer improves the objective.
    psi, prev_f = psi0, np.inf
    res, total_nit, total_nfev, n_restarts = None, 0, 0, 0
    for attempt in range(1 + MAX_RESTARTS):
        cur = minimize(
            objective,
            psi,
            jac=gradient,
            method="L-BFGS-B",
            options={"ftol": FTOL, "gtol": GRAD_TOL, "maxiter": maxiter, "maxcor": 20},
        )
        total_nit += int(cur.nit)
        total_nfev += int(cur.nfev)
        if res is None or cur.fun <= res.fun:
            res = cur
        improved = prev_f - cur.fun > FTOL * max(1.0, abs(cur.fun))
        psi, prev_f = cur.x, cur.fun
        if cur.status != 0 or np.abs(cur.jac).max() <= RESTART_GRAD_NORM:
            break
        if attempt > 0 and not improved:
            break
        n_restarts = attempt + 1
    status = {0: "converged", 1: "maxiter"}.get(res.status, "failed")
    convergence = {
        "status": status,
        "iterations": total_nit,
        "n_evaluations": total_nfev,
        "n_restarts": n_restarts,
        "gradient_norm": float(np.abs(res.jac).max()),
        "message": str(res.message),
    }

    psi_hat = np.asarray(res.x, dtype=float)
    theta_hat = to_constrained(psi_hat, m, r)
    delta_hat = stationary_distribution(theta_hat.gamma)
    qll = -float(res.fun)
    names = report_names(m, r, covariate_names)
    values = report_vector(theta_hat, delta_hat)

    flags = {"hessian_pinv": False, "negative_variance": False, "hessian_not_nsd": False}
    if compute_se:
        def qll_fun(psi):
            return -_negative_qll(psi, *obj_args)

        # Near 1 - a - b = 0 the surface has steep higher-order terms that
        # alias into the default-step Hessian as spurious positive
        # curvature; shrink the step until negative semi-definite.
        step = HESS_STEP
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for _ in range(4):
                H = numerical_hessian(qll_fun, psi_hat, step=step)
                eigs = np.linalg.eigvalsh(H)
                if eigs.max() <= NSD_TOL * max(1.0, np.abs(eigs).max()):
                    break
                step /= 4.0
        flags["hessian_step"] = step
        if eigs.max() > NSD_TOL * max(1.0, np.abs(eigs).max()):
            flags["hessian_not_nsd"] = True
            warnings.warn(
                "Hessian at the optimum is not negative semi-definite "
                f"(max eigenvalue {eigs.max():.3e})",
                RuntimeWarning,
                stacklevel=2,
            )
        cov, se, dflags = delta_method_se(H, psi_hat, lambda p: report_map(p, m, r))
        flags.update(dflags)
    else:
        cov = np.full((len(names), len(names)), np.nan)
        se = np.full(len(names), np.nan)

    result = FitResult(
        params=theta_hat,
        delta=delta_hat,
        qll=qll,
        psi_hat=psi_hat,
        report_names=names,
        report_values=values,
        covariance=cov,
        standard_errors=se,
        convergence=convergence,
        flags=flags,
        n_obs=T,
    )
    return order_states(result) if reorder else result


def _perturbed_init(base: ParameterSet, rng: np.random.Generator,
                    dispersion: float) -> ParameterSet:
    m, r = base.m, base.r
    jitter = lambda arr: arr + rng.uniform(-dispersion, dispersion, size=arr.shape)
    if m == 1:
        gamma = np.ones((1, 1))
    else:
        conc = max(2.0, 10.0 / dispersion)
        gamma = np.vstack([rng.dirichlet(np.maximum(row * conc, 0.05)) for row in base.gamma])
        gamma = np.clip(gamma, 1e-6, 1.0)
        gamma /= gamma.sum(axis=1, keepdims=True)
    return ParameterSet(
        d=jitter(base.d), a=jitter(base.a), b=jitter(base.b),
        beta=jitter(base.beta), gamma=gamma,
    )


def multi_start(
    y,
    X=None,
    m: int = 1,
    n_starts: int = 1,
    seed: int | None = None,
    dispersion: float = 0.25,
    init: ParameterSet | str = "auto",
    **fit_kwargs,
) -> FitResult:
    """Best-of-n fits from perturbed starting points.

    Start 0 uses the unperturbed init, later starts jitter it (uniform
    noise on coefficients, Dirichlet resampling of transition rows). The
    best converged fit wins; if every start fails this raises with the
    per-start diagnostics attached.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    if init == "auto":
        r = 0 if X is None else np.atleast_2d(np.asarray(X)).shape[1]
        init = heuristic_init(y, m, r)
    if n_starts > 1 and seed is None:
        raise ValueError("multi-start perturbations require a seed")
    rng = np.random.default_rng(seed)
    attempts: list[dict] = []
    best: FitResult | None = None
    for s in range(n_starts):
        start = init if s == 0 else _perturbed_init(init, rng, dispersion)
        try:
            result = fit(y, X, m, init=start, **fit_kwargs)
            ok = result.convergence["status"] == "converged"
            attempts.append(
                {"start": s, "qll": result.qll, "status": result.convergence["status"]}
            )
        except (NumericalError, ValueError, FloatingPointError) as exc:
            attempts.append({"start": s, "qll": None, "status": f"error: {exc}"})
            continue
        if ok and (best is None or result.qll > best.qll):
            best = result
    if best is None:
        raise NumericalError(f"all {n_starts} starts failed: {attempts}")
    return replace(best, restarts=attempts)
