"""Population-limit study of the simulated-likelihood estimator.

For the cross-sectional d-variate ordinal model with an exchangeable
MVN copula and a discrete covariate, the scaled log-likelihood
converges to sum_t p_t log h(case_t), where the p_t are the model cell
probabilities under the true parameters.  Maximizing that limit with
cell probabilities computed by deterministic 1-D quadrature gives the
limiting exact-MLE; computing them by randomized-QMC instead gives the
limiting simulated-likelihood estimator.  Comparing the two argmaxes
measures the bias the QMC approximation introduces at n = infinity,
with no Monte Carlo over datasets.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit, ndtri

from .errors import DomainError, NumericalError, UnderflowError
from .estimate import (OptResult, cutpoints_to_free, free_to_cutpoints,
                       quasi_newton_max)
from .marginal import Link, MarginalParams
from .rectprob import QmcConfig, Rectangle, mvn_rect_exchangeable, mvn_rect_many

__all__ = ["CaseTable", "enumerate_cases", "cell_prob_exact", "limit_loglik",
           "limiting_estimates", "replication_report"]

_CASE_CAP = 1_000_000


@dataclass(frozen=True)
class CaseTable:
    """All distinct (response vector, covariate value) cases with their
    population frequencies."""

    y: np.ndarray        # (M, d) categories
    x: np.ndarray        # (M,) shared scalar covariate value per case
    weights: np.ndarray  # (M,) probabilities, sum 1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("case weights must be nonnegative and sum to 1")

    @property
    def n_cases(self) -> int:
        return self.y.shape[0]


def _rect_limits(marginal: MarginalParams, y, x):
    """Latent-normal rectangle limits for each case row.

    y: (M, d); x: (M,).  The copula cell [F(y-1), F(y)] maps to
    [ndtri(F(y-1)), ndtri(F(y))] per coordinate.
    """
    M, d = y.shape
    cdf = marginal.cdf_levels(x[:, None])          # (M, K+1)
    rows = np.arange(M)[:, None]
    hi = cdf[rows, y]
    lo = cdf[rows, y - 1]
    with np.errstate(divide="ignore"):
        return ndtri(lo), ndtri(hi)


def cell_prob_exact(marginal: MarginalParams, rho: float, y, x: float,
                    quad_tol: float = 1e-12) -> float:
    """Exact cell probability under the exchangeable MVN copula."""
    y = np.atleast_2d(np.asarray(y, dtype=int))
    lo, hi = _rect_limits(marginal, y, np.asarray([float(x)]))
    return mvn_rect_exchangeable(Rectangle(lower=lo[0], upper=hi[0]), rho,
                                 quad_tol=quad_tol)


def enumerate_cases(marginal: MarginalParams, rho: float, d: int,
                    support=((0.0, 0.5), (1.0, 0.5)),
                    cap: int = _CASE_CAP) -> CaseTable:
    """Full K^d x |support| case enumeration with model-based weights.

    support: (covariate value, probability mass) pairs; the same scalar
    covariate is shared by all d margins.  Weights are exact cell
    probabilities from the 1-D quadrature oracle times the covariate
    mass, so they sum to one by construction.
    """
    K = marginal.K
    n_cases = K ** d * len(support)
    if n_cases > cap:
        raise DomainError(f"{n_cases} cases exceed the cap {cap}")
    if abs(sum(m for _, m in support) - 1.0) > 1e-12:
        raise DomainError("covariate masses must sum to 1")
    ys, xs, ws = [], [], []
    for xv, mass in support:
        # probabilities depend on the sorted category pattern only
        cache = {}
        for combo in itertools.product(range(1, K + 1), repeat=d):
            key = tuple(sorted(combo))
            if key not in cache:
                cache[key] = cell_prob_exact(marginal, rho, combo, xv)
            ys.append(combo)
            xs.append(xv)
            ws.append(mass * cache[key])
    w = np.asarray(ws)
    w = w / w.sum()  # absorb quadrature round-off at the 1e-13 level
    return CaseTable(y=np.asarray(ys, dtype=int), x=np.asarray(xs), weights=w)


def _unique_rows(table: CaseTable):
    """Indices of one representative per (sorted y, x) class plus the
    map from every case to its representative (exchangeability makes the
    class members equiprobable)."""
    keys = [tuple(sorted(yr)) + (xv,) for yr, xv in zip(table.y, table.x)]
    reps, inverse = {}, np.empty(len(keys), dtype=int)
    for i, k in enumerate(keys):
        if k not in reps:
            reps[k] = len(reps)
        inverse[i] = reps[k]
    rep_rows = np.empty(len(reps), dtype=int)
    seen = set()
    for i, k in enumerate(keys):
        if k not in seen:
            rep_rows[reps[k]] = i
            seen.add(k)
    return rep_rows, inverse


def limit_loglik(marginal: MarginalParams, rho: float, table: CaseTable,
                 evaluator: str, cfg: QmcConfig | None = None,
                 return_flags: bool = False):
    """sum_t p_t log h(case_t) under trial parameters.

    evaluator: "exact1d" (deterministic quadrature, the exact-MLE path)
    or "qmc" (randomized-QMC rectangles, the simulated-likelihood path).
    Zero cells under the trial parameters are flagged.
    """
    if evaluator not in ("exact1d", "qmc"):
        raise DomainError("evaluator must be 'exact1d' or 'qmc'")
    d = table.y.shape[1]
    rep_rows, inverse = _unique_rows(table)
    if evaluator == "exact1d":
        h_rep = np.array([
            cell_prob_exact(marginal, rho, table.y[i], table.x[i])
            for i in rep_rows
        ])
    else:
        if cfg is None:
            cfg = QmcConfig()
        lo, hi = _rect_limits(marginal, table.y[rep_rows], table.x[rep_rows])
        R = (1.0 - rho) * np.eye(d) + rho * np.ones((d, d))
        h_rep, _ = mvn_rect_many(lo, hi, R, cfg)
    h = h_rep[inverse]
    flags = np.flatnonzero(h <= 0.0)
    if flags.size:
        if not return_flags:
            raise UnderflowError("zero cell probability under trial parameters")
        h = np.maximum(h, 1e-300)
    value = float(np.sum(table.weights * np.log(np.maximum(h, 1e-300))))
    return (value, flags.tolist()) if return_flags else value


def _pack(marginal: MarginalParams, rho: float):
    return np.concatenate([marginal.beta, cutpoints_to_free(marginal.cutpoints),
                           [logit(rho)]])


def _unpack(xv, p: int, link: Link):
    marginal = MarginalParams(beta=xv[:p], cutpoints=free_to_cutpoints(xv[p:-1]),
                              link=link)
    return marginal, float(expit(xv[-1]))


def limiting_estimates(table: CaseTable, evaluator: str,
                       init_marginal: MarginalParams, init_rho: float,
                       cfg: QmcConfig | None = None, tol: float = 1e-8,
                       max_iter: int = 500):
    """Argmax of the limiting log-likelihood.

    Returns (marginal, rho, value, OptResult): the limiting exact MLE
    for evaluator "exact1d", the limiting simulated-likelihood estimator
    for "qmc".  rho is optimized through a logistic map into (0, 1).
    """
    p = init_marginal.p

    def obj(xv):
        try:
            m, r = _unpack(xv, p, init_marginal.link)
            return limit_loglik(m, r, table, evaluator, cfg)
        except (DomainError, NumericalError, UnderflowError):
            return -np.inf

    res: OptResult = quasi_newton_max(obj, _pack(init_marginal, init_rho),
                                      tol=tol, max_iter=max_iter)
    marginal, rho = _unpack(res.x, p, init_marginal.link)
    return marginal, rho, res.value, res


def replication_report(designs, cfg: QmcConfig | None = None,
                       beta: float = 0.5, tol_exact: float = 1e-8,
                       tol_qmc: float = 1e-8) -> list:
    """Limiting MLE vs limiting simulated-likelihood estimator per design.

    designs: iterable of (d, K, rho) with a binary covariate.  Cutpoints
    are spread symmetrically; the report rows carry both estimate
    vectors (beta, cutpoints, rho) and their max componentwise gap.
    The simulated-likelihood optimization starts from the exact MLE,
    which the population identity makes the natural warm start.
    """
    rows = []
    for d, K, rho in designs:
        cut = np.linspace(-0.8, 0.8, K - 1) if K > 2 else np.array([0.0])
        truth = MarginalParams(beta=[beta], cutpoints=cut)
        table = enumerate_cases(truth, rho, d)
        m_mle, r_mle, v_mle, res_mle = limiting_estimates(
            table, "exact1d", truth, rho, tol=tol_exact)
        m_msle, r_msle, v_msle, res_msle = limiting_estimates(
            table, "qmc", m_mle, r_mle, cfg=cfg, tol=tol_qmc)
        vec = lambda m, r: np.concatenate([m.beta, m.cutpoints, [r]])
        mle, msle = vec(m_mle, r_mle), vec(m_msle, r_msle)
        rows.append({
            "design": {"d": d, "K": K, "rho": rho, "beta": beta,
                       "cutpoints": cut.tolist()},
            "limiting_mle": mle.tolist(),
            "limiting_msle": msle.tolist(),
            "max_gap": float(np.max(np.abs(mle - msle))),
            "truth_gap": float(np.max(np.abs(mle - vec(truth, rho)))),
            "converged": bool(res_mle.converged and res_msle.converged),
        })
    return rows
