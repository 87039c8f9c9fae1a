"""The d-variate model: an MVN or MVT copula over the per-series
conditional (on the past) distributions.

Each joint pmf is a d-dimensional rectangle probability whose limits are
per-series cdf values mapped through the link copula's univariate
quantile (normal for MVN, Student t at the link's nu for MVT).  The MVN
branch uses normal quantiles and the MVN kernel directly rather than a
large-nu MVT.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri, stdtrit

from .errors import DomainError, UnderflowError
from .marginal import PMF_FLOOR
from .markov import SeriesModel, transition_cdf_levels
from .panel import OrdinalPanel
from .rectprob import QmcConfig, mvn_rect_many, mvt_rect_many, validate_correlation

__all__ = ["LinkCopula", "JointParams", "joint_pmf_initial",
           "joint_pmf_transition", "joint_loglik", "joint_loglik_by_subject",
           "panel_cdf_limits"]


@dataclass(frozen=True)
class LinkCopula:
    """Cross-sectional copula: MVN, or MVT with nu degrees of freedom."""

    kind: str  # "mvn" | "mvt"
    nu: float | None = None

    def __post_init__(self):
        if self.kind not in ("mvn", "mvt"):
            raise DomainError("link copula kind must be 'mvn' or 'mvt'")
        if self.kind == "mvt" and (self.nu is None or self.nu <= 0):
            raise DomainError("mvt link requires nu > 0")
        if self.kind == "mvn" and self.nu is not None:
            raise DomainError("mvn link takes no nu")

    def quantile(self, u):
        """Univariate quantile; cdf value 0 -> -inf, 1 -> +inf."""
        u = np.asarray(u, dtype=float)
        out = np.empty_like(u)
        lo = u <= 0.0
        hi = u >= 1.0
        mid = ~(lo | hi)
        out[lo] = -np.inf
        out[hi] = np.inf
        if self.kind == "mvn":
            out[mid] = ndtri(u[mid])
        else:
            out[mid] = stdtrit(self.nu, u[mid])
        return out


@dataclass(frozen=True)
class JointParams:
    series: tuple            # d SeriesModel values
    R: np.ndarray            # (d, d) correlation matrix
    link: LinkCopula = LinkCopula("mvn")

    def __post_init__(self):
        object.__setattr__(self, "series", tuple(self.series))
        object.__setattr__(self, "R", validate_correlation(self.R))
        if len(self.series) != self.R.shape[0] or len(self.series) < 2:
            raise DomainError("need d >= 2 series matching the R dimension")

    @property
    def d(self) -> int:
        return len(self.series)


def _rect_batch(jp: JointParams, lower_u, upper_u, cfg: QmcConfig):
    """(B, d) cdf-value limits -> rectangle probabilities and SEs."""
    lo = jp.link.quantile(lower_u)
    up = jp.link.quantile(upper_u)
    up = np.maximum(up, lo)
    if jp.link.kind == "mvn":
        return mvn_rect_many(lo, up, jp.R, cfg)
    return mvt_rect_many(lo, up, jp.R, jp.link.nu, cfg)


def _initial_limits(jp: JointParams, y, x):
    """Marginal cdf limits at a first-of-run observation.  y: (B, d)."""
    B = y.shape[0]
    lo = np.empty((B, jp.d))
    up = np.empty((B, jp.d))
    for j, sm in enumerate(jp.series):
        cdf = sm.marginal.cdf_levels(x[j])
        rows = np.arange(B)
        up[:, j] = cdf[rows, y[:, j]]
        lo[:, j] = cdf[rows, y[:, j] - 1]
    return lo, up


def _transition_limits(jp: JointParams, y_t, y_prev, x_t, x_prev):
    """Per-series conditional transition cdf limits.  Arrays (B, d)."""
    B = y_t.shape[0]
    lo = np.empty((B, jp.d))
    up = np.empty((B, jp.d))
    for j, sm in enumerate(jp.series):
        levels = transition_cdf_levels(sm, y_prev[:, j], x_t[j], x_prev[j])
        rows = np.arange(B)
        up[:, j] = levels[rows, y_t[:, j]]
        lo[:, j] = levels[rows, y_t[:, j] - 1]
    return lo, up


def joint_pmf_initial(jp: JointParams, y, x, cfg: QmcConfig, return_se=False):
    """Joint pmf of the d responses at a chain start.

    y: length-d category vector; x: list of d covariate vectors.
    """
    y = np.atleast_2d(np.asarray(y, dtype=int))
    x = [np.atleast_2d(np.asarray(xj, float)) for xj in x]
    lo, up = _initial_limits(jp, y, x)
    p, se = _rect_batch(jp, lo, up, cfg)
    return (float(p[0]), float(se[0])) if return_se else float(p[0])


def joint_pmf_transition(jp: JointParams, y_t, y_prev, x_t, x_prev,
                         cfg: QmcConfig, return_se=False):
    """Joint pmf of the d responses given the previous response vector."""
    y_t = np.atleast_2d(np.asarray(y_t, dtype=int))
    y_prev = np.atleast_2d(np.asarray(y_prev, dtype=int))
    x_t = [np.atleast_2d(np.asarray(xj, float)) for xj in x_t]
    x_prev = [np.atleast_2d(np.asarray(xj, float)) for xj in x_prev]
    lo, up = _transition_limits(jp, y_t, y_prev, x_t, x_prev)
    p, se = _rect_batch(jp, lo, up, cfg)
    return (float(p[0]), float(se[0])) if return_se else float(p[0])


def panel_cdf_limits(jp: JointParams, panel: OrdinalPanel):
    """Cdf-value rectangle limits of every joint term, panel-row aligned.

    Returns (term_rows, lower_u, upper_u).  The limits depend on the
    per-series parameters only, not on R or the link, so they can be
    computed once and reused while optimizing over the correlation
    matrix (``joint_loglik(..., limits=...)``).
    """
    if panel.d != jp.d:
        raise DomainError("panel dimension does not match model")
    init_rows, prev_rows, curr_rows = panel.joint_index()
    B = init_rows.size + curr_rows.size
    lower = np.empty((B, jp.d))
    upper = np.empty((B, jp.d))
    if init_rows.size:
        lo, up = _initial_limits(
            jp, panel.y[init_rows], [xj[init_rows] for xj in panel.x]
        )
        lower[: init_rows.size] = lo
        upper[: init_rows.size] = up
    if curr_rows.size:
        lo, up = _transition_limits(
            jp,
            panel.y[curr_rows],
            panel.y[prev_rows],
            [xj[curr_rows] for xj in panel.x],
            [xj[prev_rows] for xj in panel.x],
        )
        lower[init_rows.size:] = lo
        upper[init_rows.size:] = up
    term_rows = np.concatenate([init_rows, curr_rows])
    return term_rows, lower, upper


def _panel_term_probs(jp: JointParams, panel: OrdinalPanel, cfg: QmcConfig,
                      limits=None):
    """Rectangle probability of every joint term, panel-row aligned.

    Returns (term_rows, probs): rows of the panel contributing a term and
    their probabilities (initial and transition terms batched together).
    """
    if limits is None:
        limits = panel_cdf_limits(jp, panel)
    term_rows, lower, upper = limits
    probs, _ = _rect_batch(jp, lower, upper, cfg)
    return term_rows, probs


def joint_loglik(jp: JointParams, panel: OrdinalPanel, cfg: QmcConfig,
                 on_underflow: str = "floor", return_flags: bool = False,
                 limits=None):
    """Log-likelihood of the joint copula Markov model; deterministic
    given cfg.seed.

    limits: optional precomputed ``panel_cdf_limits(jp, panel)``; valid
    while the per-series parameters are held fixed (R and the link may
    vary freely).
    """
    term_rows, probs = _panel_term_probs(jp, panel, cfg, limits=limits)
    flags = np.flatnonzero(probs <= 0.0)
    if flags.size and on_underflow == "raise":
        i = term_rows[flags[0]]
        raise UnderflowError(
            f"zero joint probability for subject {panel.subject[i]} at time "
            f"{panel.time[i]}",
            where=(panel.subject[i], panel.time[i]),
        )
    value = float(np.sum(np.log(np.maximum(probs, PMF_FLOOR))))
    if return_flags:
        idx = term_rows[flags]
        return value, [(panel.subject[i], panel.time[i]) for i in idx]
    return value


def joint_loglik_by_subject(jp: JointParams, panel: OrdinalPanel, cfg: QmcConfig):
    """Per-subject log-likelihood contributions (the Vuong aggregation
    unit).  Returns (subject_ids, terms)."""
    term_rows, probs = _panel_term_probs(jp, panel, cfg)
    logs = np.log(np.maximum(probs, PMF_FLOOR))
    ids = panel.subject_ids
    pos = {s: k for k, s in enumerate(ids)}
    out = np.zeros(ids.size)
    for row, lg in zip(term_rows, logs):
        out[pos[panel.subject[row]]] += lg
    return ids, out
