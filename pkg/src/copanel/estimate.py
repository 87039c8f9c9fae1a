"""Parameter transforms, quasi-Newton maximization, and the staged
estimation pipeline.

All optimization happens on unconstrained vectors: cutpoints become the
first cutpoint plus log-spacings, correlations go through Fisher's z,
Gumbel parameters through 1 + softplus, and the joint correlation matrix
through the spherical angles of its Cholesky factor (positive definite
by construction).

The pipeline follows inference-functions-for-margins logic: stage 1
fits each series on its own (independence margins, then the temporal
copula parameter, then a joint per-series refit), stage 2 maximizes the
joint likelihood over the cross-sectional correlation matrix only, and
the optional stage 3 refits everything simultaneously.  Each stage
starts from the previous stage's solution and the line search never
accepts a decrease, so log-likelihoods are nondecreasing along the
chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit, ndtri

from .bivariate import GUMBEL_THETA_CAP, BivCopula, Family
from .errors import (DomainError, NumericalError, OptimizationError,
                     UnderflowError)
from .joint import JointParams, LinkCopula, joint_loglik, panel_cdf_limits
from .marginal import Link, MarginalParams, loglik_independent
from .markov import SeriesModel, series_loglik
from .panel import OrdinalPanel, SeriesData
from .rectprob import QmcConfig

__all__ = [
    "OptResult", "FitResult", "Step1Result", "quasi_newton_max",
    "fit_step1", "fit_step2", "fit_step3", "fit_pipeline", "PipelineResult",
    "cutpoints_to_free", "free_to_cutpoints", "theta_to_free",
    "free_to_theta", "corr_to_free", "free_to_corr",
]

_SOFTPLUS_CLIP = 50.0


# ---------------------------------------------------------------------
# transforms


def cutpoints_to_free(cut):
    """Strictly increasing cutpoints -> (first value, log spacings)."""
    cut = np.asarray(cut, dtype=float)
    return np.concatenate([[cut[0]], np.log(np.diff(cut))])


def free_to_cutpoints(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    out[0] = x[0]
    out[1:] = x[0] + np.cumsum(np.exp(x[1:]))
    return out


def _softplus(x):
    return np.logaddexp(0.0, x)


def theta_to_free(family: Family, theta: float) -> np.ndarray:
    """Copula parameter -> unconstrained vector (empty for independence)."""
    if family is Family.INDEPENDENCE:
        return np.zeros(0)
    if family in (Family.BVN, Family.BVT):
        return np.array([np.arctanh(theta)])
    if family is Family.FRANK:
        return np.array([float(theta)])
    # Gumbel-type: theta = 1 + softplus(x)
    return np.array([np.log(np.expm1(max(theta - 1.0, 1e-12)))])


def free_to_theta(family: Family, x) -> float:
    if family is Family.INDEPENDENCE:
        return 0.0
    v = float(np.asarray(x).ravel()[0])
    if family in (Family.BVN, Family.BVT):
        return float(np.tanh(v))
    if family is Family.FRANK:
        return v
    return float(min(1.0 + _softplus(min(v, _SOFTPLUS_CLIP)), GUMBEL_THETA_CAP))


def _cholesky_angles(R):
    """Angles omega in (0, pi) of the Cholesky factor, row by row."""
    d = R.shape[0]
    L = np.linalg.cholesky(R)
    angles = []
    for i in range(1, d):
        run = 1.0
        for j in range(i):
            c = np.clip(L[i, j] / max(run, 1e-300), -1.0, 1.0)
            angles.append(np.arccos(c))
            run *= np.sin(angles[-1])
    return np.asarray(angles)


def _angles_to_corr(angles, d):
    L = np.zeros((d, d))
    L[0, 0] = 1.0
    k = 0
    for i in range(1, d):
        run = 1.0
        for j in range(i):
            L[i, j] = np.cos(angles[k]) * run
            run *= np.sin(angles[k])
            k += 1
        L[i, i] = run
    R = L @ L.T
    np.fill_diagonal(R, 1.0)
    return R


def corr_to_free(R):
    """Correlation matrix -> d(d-1)/2 reals via Cholesky spherical angles."""
    ang = _cholesky_angles(np.asarray(R, dtype=float))
    return logit(np.clip(ang / np.pi, 1e-12, 1.0 - 1e-12))


def free_to_corr(x, d: int):
    x = np.asarray(x, dtype=float)
    if x.size != d * (d - 1) // 2:
        raise DomainError("wrong number of correlation parameters")
    # keep angles strictly inside (0, pi): sin = 0 would make R singular
    ang = np.pi * np.clip(expit(x), 1e-7, 1.0 - 1e-7)
    return _angles_to_corr(ang, d)


# ---------------------------------------------------------------------
# quasi-Newton maximizer


@dataclass
class OptResult:
    x: np.ndarray
    value: float
    inv_hessian: np.ndarray
    converged: bool
    iterations: int
    grad_norm: float


def _num_grad(f, x, h_rel=1e-5):
    """Central-difference gradient, step max(1e-5, 1e-5 |x_k|)."""
    g = np.empty(x.size)
    for k in range(x.size):
        h = max(h_rel, h_rel * abs(x[k]))
        xp = x.copy(); xp[k] += h
        xm = x.copy(); xm[k] -= h
        fp, fm = f(xp), f(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OptimizationError(f"non-finite objective near x[{k}]")
        g[k] = (fp - fm) / (2.0 * h)
    return g


def quasi_newton_max(objective, init, tol: float = 1e-5, max_iter: int = 500):
    """BFGS ascent with numerical gradients and Armijo backtracking.

    Stops when the gradient infinity-norm drops below tol or after
    max_iter iterations; never accepts a step that lowers the objective.
    Returns the final inverse-Hessian approximation for SE work.
    """
    x = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    n = x.size
    fx = float(objective(x))
    if not np.isfinite(fx):
        raise OptimizationError("objective not finite at the initial point")
    # H approximates the inverse Hessian of the NEGATED objective, so it
    # stays positive definite and H @ g is an ascent direction.
    H = np.eye(n)
    g = _num_grad(objective, x)
    I = np.eye(n)
    for it in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(g)))
        if gnorm < tol:
            return OptResult(x, fx, H, True, it - 1, gnorm)
        direction = H @ g
        slope = float(g @ direction)
        if slope <= 0.0:  # curvature information went bad: restart
            H = I.copy()
            direction = g.copy()
            slope = float(g @ g)
            if slope == 0.0:
                return OptResult(x, fx, H, True, it - 1, gnorm)
        alpha, accepted = 1.0, False
        for _ in range(40):
            x_new = x + alpha * direction
            f_new = float(objective(x_new))
            if np.isfinite(f_new) and f_new >= fx + 1e-4 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # flat or noisy along this direction: report where we stand
            return OptResult(x, fx, H, gnorm < 10.0 * tol, it, gnorm)
        g_new = _num_grad(objective, x_new)
        s = x_new - x
        y = g - g_new  # gradient change of the negated objective
        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            H = (I - rho * np.outer(s, y)) @ H @ (I - rho * np.outer(y, s)) \
                + rho * np.outer(s, s)
        x, fx, g = x_new, f_new, g_new
    gnorm = float(np.max(np.abs(g)))
    return OptResult(x, fx, H, gnorm < tol, max_iter, gnorm)


# ---------------------------------------------------------------------
# staged fitting


@dataclass
class FitResult:
    """One maximization: the fitted object plus everything SE work needs."""

    params: object               # SeriesModel, MarginalParams or JointParams
    loglik: float
    converged: bool
    iterations: int
    grad_norm: float
    free: np.ndarray             # argmax on the unconstrained scale
    objective: object            # callable on the free scale
    to_report: object            # free vector -> constrained report vector
    report_names: list
    se: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


@dataclass
class Step1Result:
    """Per-series staged results: (a) independence margins, (b) copula
    parameter at fixed margins, (c) joint refit; nu is the profiled
    degrees-of-freedom pick when the temporal family needs one."""

    a: FitResult
    b: FitResult
    c: FitResult
    family: Family
    nu: float | None = None

    @property
    def model(self) -> SeriesModel:
        return self.c.params


def _marginal_names(p, K):
    return [f"beta_{i+1}" for i in range(p)] + [f"cut_{k+1}" for k in range(K - 1)]


def _pack_marginal(par: MarginalParams):
    return np.concatenate([par.beta, cutpoints_to_free(par.cutpoints)])


def _unpack_marginal(x, p, link):
    return MarginalParams(beta=x[:p], cutpoints=free_to_cutpoints(x[p:]), link=link)


def _marginal_report(x, p):
    return np.concatenate([x[:p], free_to_cutpoints(x[p:])])


def _marginal_init(data: SeriesData, link: Link):
    """Zero coefficients; cutpoints at the link quantiles of the
    empirical cumulative category frequencies."""
    K = data.K
    counts = np.bincount(data.y, minlength=K + 1)[1:].astype(float)
    cum = np.cumsum(counts)[:-1] / counts.sum()
    cum = np.clip(cum, 1e-3, 1.0 - 1e-3)
    # tied empirical frequencies would give non-increasing cutpoints
    cum = np.maximum.accumulate(cum + 1e-9 * np.arange(K - 1))
    q = ndtri(cum) if link is Link.PROBIT else logit(cum)
    q = q + 1e-6 * np.arange(K - 1)
    return MarginalParams(beta=np.zeros(data.X.shape[1]), cutpoints=q, link=link)


def _theta_starts(family: Family):
    """Start values for the copula-parameter fit: near independence plus
    moderate dependence (the softplus gradient vanishes at the Gumbel
    independence boundary, so a second start is essential there)."""
    if family in (Family.BVN, Family.BVT):
        return [np.zeros(1), np.array([0.55])]          # theta ~ 0, 0.5
    if family is Family.FRANK:
        return [np.zeros(1), np.array([3.0])]
    return [np.array([-20.0]), np.array([-0.43])]       # theta ~ 1, 1.5


def _make_copula(family: Family, theta: float, nu):
    if family is Family.INDEPENDENCE:
        return BivCopula(Family.INDEPENDENCE)
    if family is Family.BVT:
        return BivCopula(family, theta=theta, nu=nu)
    return BivCopula(family, theta=theta)


def fit_step1(data: SeriesData, family: Family, link: Link = Link.PROBIT,
              nu_grid=None, tol: float = 1e-5, max_iter: int = 500) -> Step1Result:
    """Stage-1 fit of one series.

    (a) ordinal regression under time independence, (b) the temporal
    copula parameter with margins held at (a), (c) a joint refit started
    from the stacked (a, b) solution, so its log-likelihood can only
    improve.  A degrees-of-freedom grid is profiled by repeating (b)-(c)
    and keeping the largest (c) log-likelihood.
    """
    p = data.X.shape[1]
    init = _pack_marginal(_marginal_init(data, link))
    names_m = _marginal_names(p, data.K)

    def obj_a(x):
        try:
            return loglik_independent(_unpack_marginal(x, p, link), data)
        except DomainError:
            return -np.inf

    try:
        ra = quasi_newton_max(obj_a, init, tol=tol, max_iter=max_iter)
    except OptimizationError as exc:
        raise OptimizationError(f"step 1(a) failed: {exc}") from exc
    par_a = _unpack_marginal(ra.x, p, link)
    fit_a = FitResult(par_a, ra.value, ra.converged, ra.iterations, ra.grad_norm,
                      ra.x, obj_a, lambda x: _marginal_report(x, p), names_m)

    if family is Family.INDEPENDENCE:
        model = SeriesModel(par_a, BivCopula(Family.INDEPENDENCE))
        fit_bc = FitResult(model, ra.value, ra.converged, ra.iterations,
                           ra.grad_norm, ra.x, obj_a,
                           lambda x: _marginal_report(x, p), names_m)
        return Step1Result(a=fit_a, b=fit_bc, c=fit_bc, family=family)

    grid = list(nu_grid) if (family is Family.BVT and nu_grid) else [None]
    if family is Family.BVT and not grid:
        raise DomainError("BVT temporal family needs a nu grid")

    best = None
    for nu in grid:
        def obj_b(t, nu=nu):
            try:
                cop = _make_copula(family, free_to_theta(family, t), nu)
                return series_loglik(SeriesModel(par_a, cop), data)
            except (DomainError, UnderflowError):
                return -np.inf

        rb = None
        for start in _theta_starts(family):
            try:
                cand = quasi_newton_max(obj_b, start, tol=tol, max_iter=max_iter)
            except OptimizationError as exc:
                raise OptimizationError(f"step 1(b) failed (nu={nu}): {exc}") from exc
            if rb is None or cand.value > rb.value:
                rb = cand

        def obj_c(x, nu=nu):
            try:
                par = _unpack_marginal(x[:-1], p, link)
                cop = _make_copula(family, free_to_theta(family, x[-1:]), nu)
                return series_loglik(SeriesModel(par, cop), data)
            except (DomainError, UnderflowError):
                return -np.inf

        try:
            rc = quasi_newton_max(obj_c, np.concatenate([ra.x, rb.x]),
                                  tol=tol, max_iter=max_iter)
        except OptimizationError as exc:
            raise OptimizationError(f"step 1(c) failed (nu={nu}): {exc}") from exc

        if best is None or rc.value > best[2].value:
            best = (nu, rb, rc)

    nu, rb, rc = best

    def rep_b(t):
        return np.array([free_to_theta(family, t)])

    def rep_c(x):
        return np.concatenate([_marginal_report(x[:-1], p),
                               [free_to_theta(family, x[-1:])]])

    cop_b = _make_copula(family, free_to_theta(family, rb.x), nu)
    fit_b = FitResult(SeriesModel(par_a, cop_b), rb.value, rb.converged,
                      rb.iterations, rb.grad_norm, rb.x,
                      (lambda t, nu=nu: series_loglik(
                          SeriesModel(par_a, _make_copula(family, free_to_theta(family, t), nu)),
                          data)),
                      rep_b, ["theta"])
    par_c = _unpack_marginal(rc.x[:-1], p, link)
    cop_c = _make_copula(family, free_to_theta(family, rc.x[-1:]), nu)

    def obj_c_final(x, nu=nu):
        try:
            par = _unpack_marginal(x[:-1], p, link)
            cop = _make_copula(family, free_to_theta(family, x[-1:]), nu)
            return series_loglik(SeriesModel(par, cop), data)
        except DomainError:
            return -np.inf

    fit_c = FitResult(SeriesModel(par_c, cop_c), rc.value, rc.converged,
                      rc.iterations, rc.grad_norm, rc.x, obj_c_final,
                      rep_c, names_m + ["theta"])
    return Step1Result(a=fit_a, b=fit_b, c=fit_c, family=family, nu=nu)


def _corr_names(d):
    return [f"rho_{j+1}_{k+1}" for k in range(1, d) for j in range(k)]


def _corr_report(x, d):
    R = free_to_corr(x, d)
    return np.array([R[j, k] for k in range(1, d) for j in range(k)])


def fit_step2(panel: OrdinalPanel, step1, links, cfg: QmcConfig,
              tol: float = 1e-5, max_iter: int = 500) -> list:
    """Stage 2: maximize the joint log-likelihood over the correlation
    matrix only, series parameters fixed at stage 1(c).  Returns one
    FitResult per link-copula candidate (same ordering as ``links``).
    """
    series = tuple(s.model if isinstance(s, Step1Result) else s for s in step1)
    d = len(series)
    # the cdf-value rectangle limits depend on the (fixed) per-series
    # parameters only, so compute them once for all R evaluations
    template = JointParams(series=series, R=np.eye(d), link=links[0])
    limits = panel_cdf_limits(template, panel)
    results = []
    for link in links:
        def obj(x, link=link):
            try:
                return joint_loglik(
                    JointParams(series=series, R=free_to_corr(x, d), link=link),
                    panel, cfg, limits=limits,
                )
            except (DomainError, NumericalError, UnderflowError):
                return -np.inf

        try:
            r = quasi_newton_max(obj, np.zeros(d * (d - 1) // 2),
                                 tol=tol, max_iter=max_iter)
        except OptimizationError as exc:
            raise OptimizationError(f"step 2 failed for link {link}: {exc}") from exc
        jp = JointParams(series=series, R=free_to_corr(r.x, d), link=link)
        results.append(FitResult(jp, r.value, r.converged, r.iterations,
                                 r.grad_norm, r.x, obj,
                                 (lambda x, d=d: _corr_report(x, d)),
                                 _corr_names(d), extra={"link": link}))
    return results


def _pack_joint(jp: JointParams):
    parts, slices, pos = [], [], 0
    for sm in jp.series:
        x = np.concatenate([
            _pack_marginal(sm.marginal),
            theta_to_free(sm.temporal.family, sm.temporal.theta
                          if sm.temporal.family is not Family.INDEPENDENCE else 0.0),
        ])
        parts.append(x)
        slices.append(slice(pos, pos + x.size))
        pos += x.size
    xr = corr_to_free(jp.R)
    parts.append(xr)
    slices.append(slice(pos, pos + xr.size))
    return np.concatenate(parts), slices


def _unpack_joint(x, slices, template: JointParams):
    series = []
    for sl, sm in zip(slices[:-1], template.series):
        xs = x[sl]
        p = sm.marginal.p
        fam = sm.temporal.family
        n_theta = 0 if fam is Family.INDEPENDENCE else 1
        par = _unpack_marginal(xs[: xs.size - n_theta], p, sm.marginal.link)
        cop = _make_copula(fam, free_to_theta(fam, xs[xs.size - n_theta:]),
                           sm.temporal.nu)
        series.append(SeriesModel(par, cop))
    R = free_to_corr(x[slices[-1]], template.d)
    return JointParams(series=tuple(series), R=R, link=template.link)


def fit_step3(panel: OrdinalPanel, step2: FitResult, cfg: QmcConfig,
              tol: float = 1e-5, max_iter: int = 500, dim_cap: int = 60,
              force: bool = False) -> FitResult:
    """Stage 3: full joint maximization over every parameter, started at
    the stage-2 solution.  Refuses above ``dim_cap`` free parameters
    unless forced (the flat, high-dimensional objective is slow and
    fragile there)."""
    jp0: JointParams = step2.params
    x0, slices = _pack_joint(jp0)
    if x0.size > dim_cap and not force:
        raise DomainError(
            f"stage 3 would optimize {x0.size} parameters (> cap {dim_cap}); "
            "pass force=True to override"
        )

    def obj(x):
        try:
            return joint_loglik(_unpack_joint(x, slices, jp0), panel, cfg)
        except (DomainError, NumericalError, UnderflowError):
            return -np.inf

    try:
        r = quasi_newton_max(obj, x0, tol=tol, max_iter=max_iter)
    except OptimizationError as exc:
        raise OptimizationError(f"step 3 failed: {exc}") from exc
    jp = _unpack_joint(r.x, slices, jp0)

    names = []
    for j, sm in enumerate(jp0.series):
        base = _marginal_names(sm.marginal.p, sm.marginal.K)
        names += [f"s{j+1}_{nm}" for nm in base]
        if sm.temporal.family is not Family.INDEPENDENCE:
            names.append(f"s{j+1}_theta")
    names += _corr_names(jp0.d)

    def rep(x):
        out = []
        for sl, sm in zip(slices[:-1], jp0.series):
            xs = x[sl]
            fam = sm.temporal.family
            n_theta = 0 if fam is Family.INDEPENDENCE else 1
            out.append(_marginal_report(xs[: xs.size - n_theta], sm.marginal.p))
            if n_theta:
                out.append([free_to_theta(fam, xs[-1:])])
        out.append(_corr_report(x[slices[-1]], jp0.d))
        return np.concatenate(out)

    return FitResult(jp, r.value, r.converged, r.iterations, r.grad_norm,
                     r.x, obj, rep, names)


@dataclass
class PipelineResult:
    """Everything one staged fit produced, for reporting and jackknifing."""

    step1: list            # Step1Result per series
    step2: list            # FitResult per link candidate
    best2: FitResult       # largest stage-2 log-likelihood
    step3: FitResult | None = None

    @property
    def final(self) -> FitResult:
        return self.step3 if self.step3 is not None else self.best2


def fit_pipeline(panel: OrdinalPanel, families, links, link_model: Link = Link.PROBIT,
                 nu_grids=None, cfg: QmcConfig = QmcConfig(), stage: int = 2,
                 tol: float = 1e-5, max_iter: int = 500) -> PipelineResult:
    """Run the staged estimation end to end.

    families: temporal family per series; links: link-copula candidates;
    stage: 1 stops after the per-series fits, 2 adds the correlation fit
    (the default two-step procedure), 3 adds the full joint refit.
    """
    if nu_grids is None:
        nu_grids = [None] * panel.d
    step1 = [
        fit_step1(panel.series(j), families[j], link=link_model,
                  nu_grid=nu_grids[j], tol=tol, max_iter=max_iter)
        for j in range(panel.d)
    ]
    if stage == 1:
        return PipelineResult(step1=step1, step2=[], best2=None)
    step2 = fit_step2(panel, step1, links, cfg, tol=tol, max_iter=max_iter)
    best2 = max(step2, key=lambda r: r.loglik)
    step3 = None
    if stage >= 3:
        step3 = fit_step3(panel, best2, cfg, tol=tol, max_iter=max_iter)
    return PipelineResult(step1=step1, step2=step2, best2=best2, step3=step3)
