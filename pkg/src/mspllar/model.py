"""Core model objects: parameters, regime chains and the linear predictor.

The observation model is a conditionally Poisson count series whose
log-intensity is autoregressive with regime-dependent coefficients:

    eta_t = d[s] + a[s] * eta_{t-1} + b[s] * log(y_{t-1} + 1) + beta[s] @ x_t

where s is the current state of an unobserved first-order Markov chain with
row-stochastic transition matrix ``gamma``. Filtering works on the expanded
chain over consecutive state pairs, built here as well.

States are 0-based everywhere in code; report layers add 1 for display.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError

ROW_SUM_TOL = 1e-8


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ModelSpec:
    """Model dimensions: number of regimes and covariates."""

    m: int
    r: int = 0
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"need at least one regime, got m={self.m}")
        if self.r < 0:
            raise ValueError(f"covariate dimension must be >= 0, got r={self.r}")
        if self.covariate_names and len(self.covariate_names) != self.r:
            raise ValueError(
                f"{len(self.covariate_names)} covariate names for r={self.r}"
            )


def count_free_parameters(m: int, r: int = 0) -> int:
    """Number of free parameters: 3m + rm + m(m-1)."""
    return 3 * m + r * m + m * (m - 1)


def validate_transition_matrix(gamma: np.ndarray, tol: float = ROW_SUM_TOL) -> np.ndarray:
    """Check that ``gamma`` is square and row-stochastic within ``tol``."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.ndim != 2 or gamma.shape[0] != gamma.shape[1]:
        raise ValueError(f"transition matrix must be square, got shape {gamma.shape}")
    if not np.isfinite(gamma).all():
        raise ValueError("transition matrix contains non-finite entries")
    if gamma.min() < -tol or gamma.max() > 1.0 + tol:
        raise ValueError("transition probabilities must lie in [0, 1]")
    dev = np.abs(gamma.sum(axis=1) - 1.0)
    if dev.max() > tol:
        raise ValueError(
            f"transition matrix rows must sum to 1; max deviation {dev.max():.3e}"
        )
    return gamma


@dataclass(frozen=True, eq=False)
class ParameterSet:
    """Full parameter vector of the switching model.

    d, a, b are length-m vectors, beta is m x r (r may be 0) and gamma is
    the m x m row-stochastic transition matrix.
    """

    d: np.ndarray
    a: np.ndarray
    b: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        d = _frozen(np.atleast_1d(self.d))
        a = _frozen(np.atleast_1d(self.a))
        b = _frozen(np.atleast_1d(self.b))
        m = d.shape[0]
        beta = np.asarray(self.beta, dtype=float)
        if beta.ndim == 1 and beta.size == 0:
            beta = beta.reshape(m, 0)
        beta = _frozen(np.atleast_2d(beta))
        gamma = _frozen(validate_transition_matrix(self.gamma))
        if a.shape != (m,) or b.shape != (m,):
            raise ValueError("d, a, b must have a common length m")
        if beta.shape[0] != m:
            raise ValueError(f"beta must have {m} rows, got {beta.shape}")
        if gamma.shape != (m, m):
            raise ValueError(f"gamma must be {m}x{m}, got {gamma.shape}")
        for name, arr in (("d", d), ("a", a), ("b", b), ("beta", beta)):
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)

    @property
    def m(self) -> int:
        return self.d.shape[0]

    @property
    def r(self) -> int:
        return self.beta.shape[1]

    def n_free_parameters(self) -> int:
        return count_free_parameters(self.m, self.r)

    def permuted(self, order) -> "ParameterSet":
        """Relabel regimes: new state k is old state order[k]."""
        order = np.asarray(order, dtype=int)
        if sorted(order.tolist()) != list(range(self.m)):
            raise ValueError(f"order must be a permutation of 0..{self.m - 1}")
        return ParameterSet(
            d=self.d[order],
            a=self.a[order],
            b=self.b[order],
            beta=self.beta[order],
            gamma=self.gamma[np.ix_(order, order)],
        )


@dataclass(frozen=True, eq=False)
class ExpandedChain:
    """Markov chain over consecutive state pairs (s_{t-1}, s_t).

    Pair j encodes (prev, cur) with cur varying fastest: j = prev * m + cur.
    Transitions require the new pair's previous state to equal the old
    pair's current state, so each row of ``gamma_star`` has at most m
    nonzero entries.
    """

    m: int
    gamma_star: np.ndarray
    prev_state: np.ndarray = field(repr=False)  # length m**2
    cur_state: np.ndarray = field(repr=False)  # length m**2

    @property
    def n_states(self) -> int:
        return self.m * self.m

    def pair_of(self, j: int) -> tuple[int, int]:
        return int(self.prev_state[j]), int(self.cur_state[j])


def build_expanded_chain(gamma: np.ndarray) -> ExpandedChain:
    """Build the pair chain and its transition matrix from ``gamma``."""
    gamma = validate_transition_matrix(gamma)
    m = gamma.shape[0]
    n = m * m
    prev_state = np.repeat(np.arange(m), m)
    cur_state = np.tile(np.arange(m), m)
    gamma_star = np.zeros((n, n))
    for k in range(n):
        ck = cur_state[k]
        # reachable pairs start where pair k ends
        gamma_star[k, ck * m : (ck + 1) * m] = gamma[ck]
    return ExpandedChain(
        m=m,
        gamma_star=_frozen(gamma_star),
        prev_state=_frozen(prev_state, dtype=np.int64),
        cur_state=_frozen(cur_state, dtype=np.int64),
    )


def stationary_distribution(gamma: np.ndarray) -> np.ndarray:
    """Stationary distribution via the linear system delta (I - G + U) = 1."""
    gamma = validate_transition_matrix(gamma)
    m = gamma.shape[0]
    system = np.eye(m) - gamma + np.ones((m, m))
    try:
        delta = np.linalg.solve(system.T, np.ones(m))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            "stationary distribution is not unique (singular system); "
            "the chain is reducible or periodic"
        ) from exc
    if not np.isfinite(delta).all() or delta.min() < -1e-9:
        raise NumericalError("stationary distribution solve produced invalid values")
    fixed_point_gap = np.abs(delta @ gamma - delta).max()
    if fixed_point_gap > 1e-8:
        raise NumericalError(
            f"stationary solve inconsistent (|dG - d| = {fixed_point_gap:.3e}); "
            "the chain is likely degenerate"
        )
    return np.clip(delta, 0.0, None) / delta.sum()


def stationary_distribution_expanded(chain: ExpandedChain) -> np.ndarray:
    """Stationary distribution of the pair chain (length m**2)."""
    return stationary_distribution(chain.gamma_star)


def linear_predictor_step(
    params: ParameterSet,
    k: int,
    eta_prev: float,
    y_prev: float,
    x_t=None,
) -> float:
    """One-step linear predictor for regime k (0-based)."""
    if y_prev < 0:
        raise ValueError(f"y_prev must be non-negative, got {y_prev}")
    if not 0 <= k < params.m:
        raise ValueError(f"regime index {k} out of range for m={params.m}")
    out = params.d[k] + params.a[k] * eta_prev + params.b[k] * np.log1p(y_prev)
    if params.r > 0:
        if x_t is None:
            raise ValueError(f"model has r={params.r} covariates but x_t is None")
        out += float(params.beta[k] @ np.asarray(x_t, dtype=float))
    return float(out)
