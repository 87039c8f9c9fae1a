"""Copula-based Markov chain for one ordinal series.

The joint distribution of consecutive observations is the bivariate
copula applied to the two marginal cdfs; transition probabilities follow
by conditioning on the earlier value.  Time-varying covariates enter the
margin at each time separately.  A gap in a subject's time index
restarts the chain (marginal pmf at the first post-gap observation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bivariate import BivCopula
from .errors import DomainError, UnderflowError
from .marginal import PMF_FLOOR, MarginalParams
from .panel import SeriesData

__all__ = ["SeriesModel", "transition_cdf", "transition_pmf", "series_loglik",
           "series_loglik_by_subject"]


@dataclass(frozen=True)
class SeriesModel:
    marginal: MarginalParams
    temporal: BivCopula


def _pair_mass(cop, u_prev_lo, u_prev_hi, u_t_lo, u_t_hi):
    """P(Y_{t-1} in prev cell, Y_t in current cell) via the four-term
    copula rectangle."""
    return cop.rect_prob(u_prev_lo, u_prev_hi, u_t_lo, u_t_hi)


def transition_cdf_levels(m: SeriesModel, y_prev, x_t, x_prev):
    """(batch, K+1) matrix of P(Y_t <= y | Y_{t-1} = y_prev) for y = 0..K.

    y_prev: (batch,) categories; x_t, x_prev: (batch, p) covariates.
    """
    par = m.marginal
    y_prev = np.atleast_1d(np.asarray(y_prev, dtype=int))
    cdf_prev = par.cdf_levels(np.atleast_2d(x_prev))
    cdf_t = par.cdf_levels(np.atleast_2d(x_t))
    rows = np.arange(y_prev.size)
    u_prev_hi = cdf_prev[rows, y_prev]
    u_prev_lo = cdf_prev[rows, y_prev - 1]
    f_prev = u_prev_hi - u_prev_lo
    if np.any(f_prev <= 0.0):
        i = int(np.argmax(f_prev <= 0.0))
        raise UnderflowError(
            f"conditioning on a zero-probability value y_prev={y_prev[i]}"
        )
    # C(F_prev(y_prev), F_t(y)) - C(F_prev(y_prev - 1), F_t(y)), per level
    hi = m.temporal.cdf(u_prev_hi[:, None], cdf_t)
    lo = m.temporal.cdf(u_prev_lo[:, None], cdf_t)
    out = (hi - lo) / f_prev[:, None]
    out = np.clip(out, 0.0, 1.0)
    out[:, 0] = 0.0
    out[:, -1] = 1.0
    # enforce monotonicity against round-off
    return np.maximum.accumulate(out, axis=1)


def transition_cdf(m: SeriesModel, y_t, y_prev, x_t, x_prev) -> float:
    """P(Y_t <= y_t | Y_{t-1} = y_prev); y_t in 0..K."""
    y_t = int(y_t)
    if not 0 <= y_t <= m.marginal.K:
        raise DomainError(f"category {y_t} outside 0..{m.marginal.K}")
    levels = transition_cdf_levels(m, [int(y_prev)], np.atleast_2d(x_t),
                                   np.atleast_2d(x_prev))
    return float(levels[0, y_t])


def transition_pmf(m: SeriesModel, y_t, y_prev, x_t, x_prev) -> float:
    """P(Y_t = y_t | Y_{t-1} = y_prev); y_t in 1..K."""
    y_t = int(y_t)
    if not 1 <= y_t <= m.marginal.K:
        raise DomainError(f"category {y_t} outside 1..{m.marginal.K}")
    levels = transition_cdf_levels(m, [int(y_prev)], np.atleast_2d(x_t),
                                   np.atleast_2d(x_prev))
    return float(levels[0, y_t] - levels[0, y_t - 1])


def series_loglik(m: SeriesModel, data: SeriesData,
                  on_underflow: str = "floor", return_flags: bool = False):
    """Log-likelihood of the copula Markov chain for one series:
    log pmf of each run's first observation plus log transition pmfs."""
    par = m.marginal
    cdf = par.cdf_levels(data.X)
    rows = np.arange(data.n_obs)
    u_hi = cdf[rows, data.y]
    u_lo = cdf[rows, data.y - 1]

    terms = np.empty(data.n_obs)
    first = data.first_idx
    terms[first] = u_hi[first] - u_lo[first]

    prev, curr = data.trans_prev, data.trans_curr
    if prev.size:
        pair = _pair_mass(m.temporal, u_lo[prev], u_hi[prev], u_lo[curr], u_hi[curr])
        f_prev = u_hi[prev] - u_lo[prev]
        bad = f_prev <= 0.0
        if np.any(bad):
            i = prev[int(np.argmax(bad))]
            if on_underflow == "raise":
                raise UnderflowError(
                    f"conditioning on zero-probability observation at subject "
                    f"{data.subject[i]} time {data.time[i]}",
                    where=(data.subject[i], data.time[i]),
                )
            f_prev = np.maximum(f_prev, PMF_FLOOR)
        terms[curr] = pair / f_prev

    flags = np.flatnonzero(terms <= 0.0)
    if flags.size and on_underflow == "raise":
        i = flags[0]
        raise UnderflowError(
            f"zero probability for subject {data.subject[i]} at time {data.time[i]}",
            where=(data.subject[i], data.time[i]),
        )
    value = float(np.sum(np.log(np.maximum(terms, PMF_FLOOR))))
    if return_flags:
        return value, [(data.subject[i], data.time[i]) for i in flags]
    return value


def series_loglik_by_subject(m: SeriesModel, data: SeriesData):
    """Per-subject log-likelihood contributions of one series' chain.

    The aggregation unit for non-nested model comparisons: terms are
    independent across subjects.  Returns (subject_ids, terms).
    """
    par = m.marginal
    cdf = par.cdf_levels(data.X)
    rows = np.arange(data.n_obs)
    u_hi = cdf[rows, data.y]
    u_lo = cdf[rows, data.y - 1]
    terms = np.empty(data.n_obs)
    first = data.first_idx
    terms[first] = u_hi[first] - u_lo[first]
    prev, curr = data.trans_prev, data.trans_curr
    if prev.size:
        pair = _pair_mass(m.temporal, u_lo[prev], u_hi[prev], u_lo[curr], u_hi[curr])
        f_prev = np.maximum(u_hi[prev] - u_lo[prev], PMF_FLOOR)
        terms[curr] = pair / f_prev
    logs = np.log(np.maximum(terms, PMF_FLOOR))
    ids = np.unique(data.subject)
    pos = {s: k for k, s in enumerate(ids)}
    out = np.zeros(ids.size)
    for i in range(data.n_obs):
        out[pos[data.subject[i]]] += logs[i]
    return ids, out
