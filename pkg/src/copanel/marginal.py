"""Univariate ordinal regression: cutpoint cdf/pmf and the
time-independence log-likelihood.

Sign convention: the category-y cdf is F(alpha_y + mu) with mu = x'beta,
so a positive coefficient shifts mass toward LOWER categories as the
covariate increases.  Most textbooks write F(alpha_y - mu); the latent
construction here is Y = y iff alpha_{y-1} + mu <= Z <= alpha_y + mu.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit, ndtr

from .errors import DomainError, UnderflowError
from .panel import SeriesData

__all__ = ["Link", "MarginalParams", "ordinal_cdf", "ordinal_pmf",
           "loglik_independent"]

PMF_FLOOR = 1e-300  # keeps the optimizer alive; underflows are flagged


class Link(str, Enum):
    PROBIT = "probit"
    LOGIT = "logit"

    def cdf(self, z):
        if self is Link.PROBIT:
            return ndtr(z)
        return expit(z)


@dataclass(frozen=True)
class MarginalParams:
    """Regression coefficients plus strictly increasing cutpoints."""

    beta: np.ndarray      # (p,)
    cutpoints: np.ndarray  # (K-1,), strictly increasing
    link: Link = Link.PROBIT

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, float)))
        object.__setattr__(
            self, "cutpoints", np.atleast_1d(np.asarray(self.cutpoints, float))
        )
        if self.cutpoints.size < 1:
            raise DomainError("need at least one cutpoint (K >= 2)")
        if np.any(np.diff(self.cutpoints) <= 0):
            raise DomainError("cutpoints must be strictly increasing")

    @property
    def K(self) -> int:
        return self.cutpoints.size + 1

    @property
    def p(self) -> int:
        return self.beta.size

    def mu(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        if X.shape[1] != self.p:
            raise DomainError(f"covariate arity {X.shape[1]} != {self.p}")
        return X @ self.beta

    def cdf_levels(self, X):
        """(m, K+1) matrix of F(alpha_y + mu) for y = 0..K."""
        mu = self.mu(X)
        inner = self.link.cdf(self.cutpoints[None, :] + mu[:, None])
        m = mu.size
        out = np.empty((m, self.K + 1))
        out[:, 0] = 0.0
        out[:, 1:-1] = inner
        out[:, -1] = 1.0
        return out


def ordinal_cdf(par: MarginalParams, y, x):
    """P(Y <= y | x) = F(alpha_y + x'beta); y in 0..K."""
    y = int(y)
    if not 0 <= y <= par.K:
        raise DomainError(f"category {y} outside 0..{par.K}")
    if y == 0:
        return 0.0
    if y == par.K:
        return 1.0
    mu = float(par.mu(np.atleast_2d(x))[0])
    return float(par.link.cdf(par.cutpoints[y - 1] + mu))


def ordinal_pmf(par: MarginalParams, y, x):
    """P(Y = y | x); y in 1..K."""
    y = int(y)
    if not 1 <= y <= par.K:
        raise DomainError(f"category {y} outside 1..{par.K}")
    return ordinal_cdf(par, y, x) - ordinal_cdf(par, y - 1, x)


def pmf_matrix(par: MarginalParams, X):
    """(m, K) matrix of category probabilities, rows summing to 1."""
    cdf = par.cdf_levels(X)
    return np.diff(cdf, axis=1)


def loglik_independent(par: MarginalParams, data: SeriesData,
                       on_underflow: str = "floor", return_flags: bool = False):
    """Sum of log pmf over all rows, ignoring serial dependence.

    on_underflow: "floor" clamps zero-probability cells at 1e-300 and
    flags them; "raise" raises UnderflowError naming the offending
    (subject, time).
    """
    cdf = par.cdf_levels(data.X)
    rows = np.arange(data.n_obs)
    p = cdf[rows, data.y] - cdf[rows, data.y - 1]
    flags = np.flatnonzero(p <= 0.0)
    if flags.size and on_underflow == "raise":
        i = flags[0]
        raise UnderflowError(
            f"zero probability for subject {data.subject[i]} at time {data.time[i]}",
            where=(data.subject[i], data.time[i]),
        )
    value = float(np.sum(np.log(np.maximum(p, PMF_FLOOR))))
    if return_flags:
        return value, [(data.subject[i], data.time[i]) for i in flags]
    return value
