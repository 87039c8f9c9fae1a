"""Command-line surface: fit, simulate, vuong, asymptotics, density-grid.

All commands read JSON configuration, write deterministic JSON reports
(sorted keys, fixed layout), and exit 0 on success, 2 on validation
errors, 3 on numerical failures — with a machine-readable error JSON on
stderr in the failure cases.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .asymptotics import replication_report
from .bivariate import BivCopula, Family, density_grid_normal_margins, kendall_tau
from .errors import (CopanelError, DegenerateVarianceError, DomainError,
                     HessianError, NumericalError, OptimizationError,
                     PanelError, UnderflowError)
from .estimate import fit_pipeline
from .inference import hessian_se, vuong_test, wald_test
from .joint import LinkCopula, joint_loglik_by_subject
from .marginal import Link, MarginalParams
from .markov import SeriesModel
from .panel import ModelConfig, OrdinalPanel, load_panel_csv, write_panel_csv
from .rectprob import QmcConfig
from .simulate import CovariateSpec, SimDesign, simulate_panel

_FAMILIES = {
    "bvn": Family.BVN,
    "bvt": Family.BVT,
    "frank": Family.FRANK,
    "gumbel": Family.GUMBEL,
    "sgumbel": Family.SURVIVAL_GUMBEL,
    "independence": Family.INDEPENDENCE,
}

_VALIDATION_ERRORS = (PanelError, DomainError, click.ClickException)
_NUMERICAL_ERRORS = (NumericalError, OptimizationError, HessianError,
                     UnderflowError, DegenerateVarianceError)


def _fail(exc, code):
    payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    click.echo(json.dumps(payload, sort_keys=True), err=True)
    sys.exit(code)


def _guard(fn):
    def wrapped(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _NUMERICAL_ERRORS as exc:
            _fail(exc, 3)
        except _VALIDATION_ERRORS as exc:
            _fail(exc, 2)
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            _fail(exc, 2)
    wrapped.__name__ = fn.__name__
    wrapped.__doc__ = fn.__doc__
    return wrapped


def _write_json(path: Path, doc: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _qmc_from(ctx_obj, config: ModelConfig | None) -> QmcConfig:
    qmc = dict(config.qmc) if config is not None else {}
    if ctx_obj.get("seed") is not None:
        qmc["seed"] = ctx_obj["seed"]
    if ctx_obj.get("qmc_points") is not None:
        qmc["points_per_shift"] = ctx_obj["qmc_points"]
    if ctx_obj.get("qmc_shifts") is not None:
        qmc["shifts"] = ctx_obj["qmc_shifts"]
    return QmcConfig(seed=qmc.get("seed", 0), shifts=qmc.get("shifts", 12),
                     points_per_shift=qmc.get("points_per_shift", 4096))


@click.group()
@click.version_option(__version__)
@click.option("--seed", type=int, default=None, help="Override the QMC/simulation seed.")
@click.option("--qmc-points", type=int, default=None, help="QMC points per shift.")
@click.option("--qmc-shifts", type=int, default=None, help="Number of QMC random shifts.")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON model configuration.")
@click.option("--out", "out_dir", type=click.Path(), default=".",
              help="Output directory for reports and artifacts.")
@click.option("--threads", type=int, default=1,
              help="Worker bound (results are independent of it).")
@click.pass_context
def main(ctx, seed, qmc_points, qmc_shifts, config_path, out_dir, threads):
    """Joint copula Markov models for multivariate ordinal panel data."""
    ctx.obj = {"seed": seed, "qmc_points": qmc_points, "qmc_shifts": qmc_shifts,
               "config_path": config_path, "out": Path(out_dir), "threads": threads}


def _require_config(ctx_obj) -> ModelConfig:
    if not ctx_obj.get("config_path"):
        raise DomainError("this command requires --config <json>")
    return ModelConfig.from_json(ctx_obj["config_path"])


def _se_block(fit, step):
    """Estimates/SEs/Wald columns for one FitResult; SE failures are
    reported instead of raised."""
    est = np.asarray(fit.to_report(fit.free), dtype=float)
    block = {"names": list(fit.report_names), "estimates": est.tolist(),
             "converged": bool(fit.converged), "iterations": int(fit.iterations),
             "grad_norm": float(fit.grad_norm)}
    try:
        se = hessian_se(fit.objective, fit.free, to_report=fit.to_report,
                        step=step)
        zp = [wald_test(e, s) if s > 0 else (None, None)
              for e, s in zip(est, se)]
        block["se"] = se.tolist()
        block["z"] = [None if z is None else float(z) for z, _ in zp]
        block["p"] = [None if p is None else float(p) for _, p in zp]
    except HessianError as exc:
        block["se"] = None
        block["se_error"] = {"message": str(exc),
                             "eigenvalues": np.asarray(exc.eigenvalues).tolist()}
    return block


@main.command()
@click.option("--data", "data_path", type=click.Path(), required=True,
              help="Long-format panel CSV.")
@click.pass_context
@_guard
def fit(ctx, data_path):
    """Run the staged estimation and write fit_report.json."""
    config = _require_config(ctx.obj)
    cfg = _qmc_from(ctx.obj, config)
    panel = load_panel_csv(data_path, config)
    families = [_family(r.family) for r in config.responses]
    links = [_link_copula(lk) for lk in config.joint_links]
    link_model = Link(config.responses[0].link)
    nu_grids = [r.nu_grid for r in config.responses]
    tol = config.optimizer.get("tol", 1e-5)
    max_iter = config.optimizer.get("max_iter", 500)
    pipe = fit_pipeline(panel, families, links, link_model=link_model,
                        nu_grids=nu_grids, cfg=cfg, stage=config.stage,
                        tol=tol, max_iter=max_iter)
    se_step = 1e-4
    series_blocks = []
    for j, s1 in enumerate(pipe.step1):
        sm: SeriesModel = s1.model
        blk = {
            "response": config.responses[j].name,
            "family": config.responses[j].family,
            "nu": s1.nu,
            "loglik_independence": s1.a.loglik,
            "loglik_copula_fixed_margins": s1.b.loglik,
            "loglik_joint_refit": s1.c.loglik,
            "fit": _se_block(s1.c, se_step),
        }
        if sm.temporal.family is not Family.INDEPENDENCE:
            blk["tau_hat"] = kendall_tau(sm.temporal)
        series_blocks.append(blk)
    report = {
        "version": __version__,
        "config": config.echo(),
        "seed": cfg.seed,
        "stage": config.stage,
        "series": series_blocks,
    }
    if config.stage >= 2:
        link_blocks = []
        for res in pipe.step2:
            link = res.extra["link"]
            link_blocks.append({
                "link": {"type": link.kind, "nu": link.nu},
                "loglik": res.loglik,
                "fit": _se_block(res, se_step),
            })
        best = pipe.final
        best_link = pipe.best2.extra["link"]
        ids, terms = joint_loglik_by_subject(best.params, panel, cfg)
        report["joint"] = {
            "links": link_blocks,
            "selected_link": {"type": best_link.kind, "nu": best_link.nu},
            "loglik": best.loglik,
            "per_subject_loglik": {"subject": [str(s) for s in ids],
                                   "terms": terms.tolist()},
        }
        if pipe.step3 is not None:
            report["joint"]["stage3"] = {"loglik": pipe.step3.loglik,
                                         "fit": _se_block(pipe.step3, se_step)}
    out = ctx.obj["out"] / "fit_report.json"
    _write_json(out, report)
    click.echo(str(out))


def _family(name: str) -> Family:
    try:
        return _FAMILIES[name]
    except KeyError:
        raise DomainError(f"unknown temporal family {name!r}") from None


def _link_copula(spec: dict) -> LinkCopula:
    kind = spec.get("type", "mvn")
    return LinkCopula(kind, spec.get("nu")) if kind == "mvt" else LinkCopula(kind)


def _sim_design(config: ModelConfig, raw: dict, seed) -> SimDesign:
    sim = raw.get("simulate")
    if not sim:
        raise DomainError("config lacks a 'simulate' section")
    series, covs = [], []
    for rconf, strue in zip(config.responses, sim["series"]):
        marg = MarginalParams(beta=np.asarray(strue.get("beta", []), dtype=float),
                              cutpoints=strue["cutpoints"], link=Link(rconf.link))
        fam = _family(rconf.family)
        if fam is Family.INDEPENDENCE:
            cop = BivCopula(fam)
        elif fam is Family.BVT:
            cop = BivCopula(fam, theta=strue["theta"], nu=strue["nu"])
        else:
            cop = BivCopula(fam, theta=strue["theta"])
        series.append(SeriesModel(marg, cop))
        cspec = strue.get("covariates", {"kind": "none"})
        covs.append(CovariateSpec(kind=cspec.get("kind", "none"),
                                  p=cspec.get("p", len(rconf.covariates)),
                                  prob=cspec.get("prob", 0.5)))
    from .joint import JointParams

    jp = JointParams(series=tuple(series), R=np.asarray(sim["R"], dtype=float),
                     link=_link_copula(sim.get("joint_link", {"type": "mvn"})))
    return SimDesign(n=sim["n"], T=sim["T"], jp=jp, covariates=tuple(covs),
                     seed=seed if seed is not None else sim.get("seed", 0))


@main.command()
@click.pass_context
@_guard
def simulate(ctx):
    """Draw a panel from the configured truth and write panel.csv."""
    config = _require_config(ctx.obj)
    with open(ctx.obj["config_path"], "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    design = _sim_design(config, raw, ctx.obj.get("seed"))
    panel = simulate_panel(design)
    out = ctx.obj["out"] / "panel.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_panel_csv(out, panel, config)
    click.echo(str(out))


@main.command()
@click.option("--report-a", type=click.Path(), required=True)
@click.option("--report-b", type=click.Path(), required=True)
@click.pass_context
@_guard
def vuong(ctx, report_a, report_b):
    """Vuong comparison of two fit reports on the same panel."""
    docs = []
    for path in (report_a, report_b):
        with open(path, "r", encoding="utf-8") as fh:
            docs.append(json.load(fh))
    terms = []
    for doc in docs:
        blk = doc.get("joint", {}).get("per_subject_loglik")
        if blk is None:
            raise DomainError("fit report lacks per-subject log-likelihood terms")
        terms.append(blk)
    if terms[0]["subject"] != terms[1]["subject"]:
        raise DomainError("the two reports cover different subjects")
    res = vuong_test(terms[0]["terms"], terms[1]["terms"])
    out = ctx.obj["out"] / "vuong_report.json"
    _write_json(out, {"z0": res.z0, "p_value": res.p_value, "d_bar": res.d_bar,
                      "s": res.s, "N": res.N,
                      "favors": "b" if res.z0 > 0 else "a"})
    click.echo(str(out))


@main.command()
@click.option("--d", "dims", multiple=True, type=int, default=(3, 5))
@click.option("--k", "ks", multiple=True, type=int, default=(2, 3))
@click.option("--rho", "rhos", multiple=True, type=float, default=(0.3, 0.6))
@click.pass_context
@_guard
def asymptotics(ctx, dims, ks, rhos):
    """Limiting simulated-likelihood vs exact-likelihood estimates."""
    cfg = _qmc_from(ctx.obj, None)
    designs = [(d, K, r) for d in dims for K in ks for r in rhos]
    rows = replication_report(designs, cfg=cfg)
    out = ctx.obj["out"] / "asymptotics_report.json"
    _write_json(out, {"seed": cfg.seed, "designs": rows,
                      "max_gap": max(r["max_gap"] for r in rows)})
    click.echo(str(out))


@main.command("density-grid")
@click.option("--family", "family_name", required=True,
              type=click.Choice(sorted(_FAMILIES)))
@click.option("--tau", type=float, default=None, help="Kendall tau target.")
@click.option("--theta", type=float, default=None, help="Copula parameter.")
@click.option("--nu", type=float, default=None, help="Degrees of freedom (bvt).")
@click.option("--grid-n", type=int, default=61)
@click.pass_context
@_guard
def density_grid(ctx, family_name, tau, theta, nu, grid_n):
    """Copula density on standard-normal margins over z in [-3, 3]^2."""
    fam = _family(family_name)
    if fam is Family.INDEPENDENCE:
        cop = BivCopula(fam)
    elif theta is None and tau is not None:
        from .bivariate import param_from_tau

        cop = param_from_tau(fam, tau, nu=nu)
    elif fam is Family.BVT:
        cop = BivCopula(fam, theta=theta, nu=nu if nu is not None else 5.0)
    elif theta is None:
        raise DomainError("provide --theta or --tau")
    else:
        cop = BivCopula(fam, theta=theta)
    z, dens = density_grid_normal_margins(cop, grid_n)
    out = ctx.obj["out"] / "density_grid.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("z1,z2,density\n")
        for i, z1 in enumerate(z):
            for j, z2 in enumerate(z):
                fh.write(f"{float(z1)!r},{float(z2)!r},{float(dens[i, j])!r}\n")
    click.echo(str(out))


if __name__ == "__main__":
    main()
