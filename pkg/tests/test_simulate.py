"""Exact simulator: link-copula sampling and conditional-inverse chains."""

import numpy as np
import pytest
from scipy.special import ndtr
from scipy.stats import kendalltau, kstest

from copanel.bivariate import BivCopula, Family
from copanel.errors import DomainError
from copanel.marginal import MarginalParams, ordinal_pmf, pmf_matrix
from copanel.markov import SeriesModel, transition_pmf
from copanel.joint import JointParams, LinkCopula
from copanel.simulate import (CovariateSpec, SimDesign, sample_link_copula,
                              simulate_panel)

X0 = np.zeros((1, 0))


def binary_pair(rho=0.5, link=None):
    m = SeriesModel(MarginalParams(beta=[], cutpoints=[0.0]),
                    BivCopula(Family.INDEPENDENCE))
    R = np.array([[1.0, rho], [rho, 1.0]])
    kwargs = {} if link is None else {"link": link}
    return JointParams(series=(m, m), R=R, **kwargs)


# ---------------------------------------------------------------------
# link-copula sampler


def test_link_sampler_marginals_are_uniform():
    rng = np.random.default_rng(0)
    U = sample_link_copula(np.eye(2), LinkCopula("mvn"), rng, size=100_000)
    assert kstest(U[:, 0], "uniform").pvalue > 0.01
    assert kstest(U[:, 1], "uniform").pvalue > 0.01


def test_link_sampler_mvt_marginals_are_uniform():
    rng = np.random.default_rng(1)
    R = np.array([[1.0, 0.6], [0.6, 1.0]])
    U = sample_link_copula(R, LinkCopula("mvt", 4.0), rng, size=100_000)
    assert kstest(U[:, 0], "uniform").pvalue > 0.01
    assert kstest(U[:, 1], "uniform").pvalue > 0.01


def test_link_sampler_kendall_tau():
    # elliptical-copula identity: tau = (2/pi) arcsin(rho)
    rng = np.random.default_rng(2)
    R = np.array([[1.0, 0.5], [0.5, 1.0]])
    n = 60_000
    expect = 2.0 / np.pi * np.arcsin(0.5)
    for link in (LinkCopula("mvn"), LinkCopula("mvt", 4.0)):
        U = sample_link_copula(R, link, rng, size=n)
        tau = kendalltau(U[:, 0], U[:, 1]).statistic
        assert abs(tau - expect) < 4.0 * 2.0 / np.sqrt(n)


def test_mvt_has_heavier_joint_tails_than_mvn():
    rng = np.random.default_rng(3)
    R = np.array([[1.0, 0.5], [0.5, 1.0]])
    n = 200_000
    Un = sample_link_copula(R, LinkCopula("mvn"), rng, size=n)
    Ut = sample_link_copula(R, LinkCopula("mvt", 4.0), rng, size=n)
    q = 0.01
    both_n = np.mean((Un[:, 0] < q) & (Un[:, 1] < q))
    both_t = np.mean((Ut[:, 0] < q) & (Ut[:, 1] < q))
    assert both_t > 1.5 * both_n


# ---------------------------------------------------------------------
# panel simulator


def test_determinism_and_stream_independence():
    jp = binary_pair()
    a = simulate_panel(SimDesign(n=20, T=4, jp=jp, seed=7))
    b = simulate_panel(SimDesign(n=20, T=4, jp=jp, seed=7))
    c = simulate_panel(SimDesign(n=20, T=4, jp=jp, seed=8))
    assert a == b
    assert a != c


def test_initial_cross_dependence_matches_link_rectangle():
    # both series start in category 1 with probability C(0.5, 0.5; rho)
    rho = 0.6
    jp = binary_pair(rho=rho)
    panel = simulate_panel(SimDesign(n=150_000, T=1, jp=jp, seed=9))
    from copanel.bivariate import bvn_cdf

    expect = bvn_cdf(0.0, 0.0, rho)  # copula at (0.5, 0.5) on the z scale
    freq = np.mean((panel.y[:, 0] == 1) & (panel.y[:, 1] == 1))
    mc = np.sqrt(expect * (1.0 - expect) / panel.n_rows)
    assert abs(freq - expect) < 4.0 * mc


def test_independent_design_matches_ordinal_pmf():
    m = SeriesModel(MarginalParams(beta=[], cutpoints=[-0.5, 0.8]),
                    BivCopula(Family.INDEPENDENCE))
    jp = JointParams(series=(m, m), R=np.eye(2))
    panel = simulate_panel(SimDesign(n=60_000, T=1, jp=jp, seed=10))
    for y in (1, 2, 3):
        expect = ordinal_pmf(m.marginal, y, X0)
        freq = np.mean(panel.y[:, 0] == y)
        mc = np.sqrt(expect * (1.0 - expect) / panel.n_rows)
        assert abs(freq - expect) < 4.0 * mc


def test_transition_frequencies_match_transition_pmf():
    m = SeriesModel(MarginalParams(beta=[], cutpoints=[-0.4, 0.6]),
                    BivCopula(Family.FRANK, theta=5.0))
    jp = JointParams(series=(m, m), R=np.eye(2))
    panel = simulate_panel(SimDesign(n=40_000, T=2, jp=jp, seed=11))
    y = panel.y[:, 0].reshape(-1, 2)
    for y_prev in (1, 2, 3):
        sel = y[:, 0] == y_prev
        n_sel = sel.sum()
        for y_t in (1, 2, 3):
            expect = transition_pmf(m, y_t, y_prev, X0, X0)
            freq = np.mean(y[sel, 1] == y_t)
            mc = np.sqrt(expect * (1.0 - expect) / n_sel)
            assert abs(freq - expect) < 4.5 * mc


def test_covariates_shift_categories():
    m = SeriesModel(MarginalParams(beta=[2.0], cutpoints=[0.0]),
                    BivCopula(Family.INDEPENDENCE))
    m0 = SeriesModel(MarginalParams(beta=[], cutpoints=[0.0]),
                     BivCopula(Family.INDEPENDENCE))
    jp = JointParams(series=(m, m0), R=np.eye(2))
    design = SimDesign(n=20_000, T=1, jp=jp, seed=12,
                       covariates=(CovariateSpec("iid_normal", p=1),
                                   CovariateSpec("none")))
    panel = simulate_panel(design)
    x = panel.x[0][:, 0]
    # positive covariate effect moves mass to category 1
    p1_high = np.mean(panel.y[x > 1.0, 0] == 1)
    p1_low = np.mean(panel.y[x < -1.0, 0] == 1)
    assert p1_high > 0.9 and p1_low < 0.1
    # conditional frequencies agree with the model pmf
    pm = pmf_matrix(m.marginal, panel.x[0])
    assert abs(np.mean(panel.y[:, 0] == 1) - pm[:, 0].mean()) < 0.01


def test_fixed_covariates_pass_through():
    vals = np.arange(3, dtype=float).reshape(3, 1)
    m = SeriesModel(MarginalParams(beta=[0.1], cutpoints=[0.0]),
                    BivCopula(Family.INDEPENDENCE))
    m0 = SeriesModel(MarginalParams(beta=[], cutpoints=[0.0]),
                     BivCopula(Family.INDEPENDENCE))
    jp = JointParams(series=(m, m0), R=np.eye(2))
    design = SimDesign(n=2, T=3, jp=jp, seed=13,
                       covariates=(CovariateSpec("fixed", values=vals),
                                   CovariateSpec("none")))
    panel = simulate_panel(design)
    assert np.array_equal(panel.x[0], np.tile(vals, (2, 1)))


def test_covariate_arity_validation():
    m = SeriesModel(MarginalParams(beta=[0.5], cutpoints=[0.0]),
                    BivCopula(Family.INDEPENDENCE))
    jp = JointParams(series=(m, m), R=np.eye(2))
    with pytest.raises(DomainError):
        SimDesign(n=5, T=2, jp=jp, seed=1,
                  covariates=(CovariateSpec("none"), CovariateSpec("none")))


def test_subject_time_layout():
    jp = binary_pair()
    panel = simulate_panel(SimDesign(n=3, T=4, jp=jp, seed=14))
    assert panel.subject.tolist() == [1] * 4 + [2] * 4 + [3] * 4
    assert panel.time.tolist() == [1, 2, 3, 4] * 3
