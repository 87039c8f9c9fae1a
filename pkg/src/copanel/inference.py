"""Standard errors, Wald tests, the Vuong non-nested comparison, and
the delete-one-subject jackknife."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import DegenerateVarianceError, DomainError, HessianError
from .panel import OrdinalPanel

__all__ = ["hessian_se", "wald_test", "VuongResult", "vuong_test",
           "JackknifeResult", "jackknife_se"]


def _num_hessian(f, x, step: float = 1e-4):
    """Central-difference Hessian with relative step per coordinate."""
    n = x.size
    h = step * np.maximum(1.0, np.abs(x))
    H = np.empty((n, n))
    for k in range(n):
        for l in range(k, n):
            pp = x.copy(); pp[k] += h[k]; pp[l] += h[l]
            pm = x.copy(); pm[k] += h[k]; pm[l] -= h[l]
            mp = x.copy(); mp[k] -= h[k]; mp[l] += h[l]
            mm = x.copy(); mm[k] -= h[k]; mm[l] -= h[l]
            H[k, l] = H[l, k] = (f(pp) - f(pm) - f(mp) + f(mm)) / (4 * h[k] * h[l])
    return H


def _num_jacobian(g, x, step: float = 1e-6):
    h = step * np.maximum(1.0, np.abs(x))
    cols = []
    for k in range(x.size):
        xp = x.copy(); xp[k] += h[k]
        xm = x.copy(); xm[k] -= h[k]
        cols.append((np.asarray(g(xp)) - np.asarray(g(xm))) / (2 * h[k]))
    return np.column_stack(cols)


def hessian_se(objective, argmax, to_report=None, step: float = 1e-4):
    """Standard errors from the inverse negative numerical Hessian.

    objective is the maximized log-likelihood on the unconstrained
    scale; to_report (optional) maps the free vector to the reporting
    scale and its SEs follow by the delta method.  A negative Hessian
    that is not positive definite signals a flat or saddle-shaped
    likelihood and raises HessianError carrying the eigenvalues.
    """
    x = np.atleast_1d(np.asarray(argmax, dtype=float))
    negH = -_num_hessian(objective, x, step=step)
    eig = np.linalg.eigvalsh(negH)
    if np.any(eig <= 0.0):
        raise HessianError(
            "negative Hessian is not positive definite (flat likelihood?)",
            eigenvalues=eig,
        )
    cov = np.linalg.inv(negH)
    if to_report is not None:
        J = _num_jacobian(to_report, x)
        cov = J @ cov @ J.T
    var = np.diag(cov)
    return np.sqrt(np.maximum(var, 0.0))


def wald_test(estimate: float, se: float):
    """Z = estimate / se with its two-sided normal p-value."""
    if se <= 0.0:
        raise DomainError("Wald test needs a positive standard error")
    z = estimate / se
    return z, 2.0 * ndtr(-abs(z))


@dataclass(frozen=True)
class VuongResult:
    z0: float
    p_value: float
    d_bar: float
    s: float
    N: int


def vuong_test(terms1, terms2) -> VuongResult:
    """Normal test on the mean per-subject log-likelihood difference.

    terms1, terms2: per-subject log-likelihood contributions of the two
    models on the same panel (one value per subject, so the differences
    are independent).  Positive z0 favors model 2.
    """
    t1 = np.asarray(terms1, dtype=float)
    t2 = np.asarray(terms2, dtype=float)
    if t1.shape != t2.shape or t1.ndim != 1:
        raise DomainError("per-subject term vectors must have equal length")
    N = t1.size
    if N < 2:
        raise DomainError("need at least 2 subjects")
    D = t2 - t1
    d_bar = float(D.mean())
    s = float(D.std(ddof=1))
    if s == 0.0:
        raise DegenerateVarianceError(
            "log-likelihood differences have zero variance (identical fits?)"
        )
    z0 = np.sqrt(N) * d_bar / s
    return VuongResult(z0=float(z0), p_value=float(2.0 * ndtr(-abs(z0))),
                       d_bar=d_bar, s=s, N=N)


@dataclass
class JackknifeResult:
    se: np.ndarray
    n_used: int
    failed_subjects: list = field(default_factory=list)


def jackknife_se(fit_fn, panel: OrdinalPanel, floor: int = 30) -> JackknifeResult:
    """Delete-one-subject jackknife over a full fitting pipeline.

    fit_fn maps a panel to an estimate vector.  SE_k =
    sqrt((n-1)/n * sum_i (theta_(i),k - mean_k)^2) over the n leave-one-
    out refits.  Replicates whose fit raises are dropped and disclosed.
    """
    ids = panel.subject_ids
    n = ids.size
    if n < floor:
        raise DomainError(f"jackknife needs at least {floor} subjects (got {n})")
    reps, failed = [], []
    for sid in ids:
        try:
            reps.append(np.asarray(fit_fn(panel.drop_subject(sid)), dtype=float))
        except Exception:
            failed.append(sid)
    m = len(reps)
    if m < 2:
        raise DomainError("too few successful jackknife replicates")
    reps = np.vstack(reps)
    center = reps.mean(axis=0)
    se = np.sqrt((m - 1) / m * np.sum((reps - center) ** 2, axis=0))
    return JackknifeResult(se=se, n_used=m, failed_subjects=failed)
