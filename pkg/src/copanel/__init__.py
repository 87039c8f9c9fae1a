"""Joint copula-based Markov models for multivariate ordinal panel data."""

from .bivariate import BivCopula, Family, bvn_cdf, bvt_cdf, kendall_tau, param_from_tau
from .errors import CopanelError
from .estimate import FitResult, fit_pipeline, fit_step1, fit_step2, fit_step3
from .inference import jackknife_se, hessian_se, vuong_test, wald_test
from .joint import JointParams, LinkCopula, joint_loglik
from .marginal import Link, MarginalParams
from .markov import SeriesModel, series_loglik
from .panel import ModelConfig, OrdinalPanel, load_panel_csv, write_panel_csv
from .rectprob import QmcConfig, Rectangle, mvn_rect, mvn_rect_exchangeable, mvt_rect
from .simulate import SimDesign, simulate_panel

__version__ = "0.1.0"
