"""Command-line front end: ``enkf-cal <subcommand> [flags]``.

Exit codes: 0 success, 2 input validation, 3 numerical failure. Every JSON
output carries a ``meta`` key echoing the resolved configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from enkf_cal import __version__
from enkf_cal._linalg import NumericalError, ValidationError
from enkf_cal.design import DesignProblem, exhaustive_design, fedorov_exchange
from enkf_cal.discrepancy import estimate_lambda, sigma_y_from_lambda
from enkf_cal.emulator import (
    DensityTable,
    DesignRuns,
    GpConfig,
    gp_posterior_density,
    quadrature_posterior,
)
from enkf_cal.ensemble import (
    ObservationModel,
    compute_moments,
    load_observation,
    load_tabulated_ensemble,
    save_ensemble,
)
from enkf_cal.models import TOY, TOY_SIGMA_Y, TOY_Y, ice_forward, identity_forward, toy_ensemble
from enkf_cal.taper import DEFAULT_CANDIDATES, SpatialGrid, fit_taper_range
from enkf_cal.update import (
    ForwardModelError,
    StageSchedule,
    ensemble_update,
    gaussian_update,
    multistage_update,
    theta_summary,
)

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

DEFAULTS = {
    "method": "gaussian",
    "stages": 2,
    "weights": None,
    "seed": None,
    "format": "json",
    "restarts": 100,
    "obs_noise_var": 1.0,
    "final": "ensemble",
    "taper_method": "loo",
    "n_seasons": 4,
    "k": 5,
    "steps": 20_000,
    "proposal_sd": 0.3,
    "m": 200,
    "gp_runs": 4,
}


def _tolist(x):
    return np.asarray(x, dtype=float).tolist()


def _write_json(path, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=False)
    if path is None:
        sys.stdout.write(text + "\n")
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n", encoding="utf-8")


def _meta(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    return {"tool": "enkf-cal", "version": __version__, "subcommand": args.command, "config": cfg}


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise ValidationError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _ensemble(args):
    _require(args, "ensemble")
    return load_tabulated_ensemble(args.ensemble)


def _grid(args) -> SpatialGrid:
    _require(args, "grid_dims")
    nx, ny = args.grid_dims
    return SpatialGrid.lattice(nx, ny)


FORWARDS = {"toy": lambda: TOY, "identity": lambda: identity_forward(1), "ice": lambda: ice_forward()}


# ---------------------------------------------------------------- subcommands


def cmd_moments(args) -> int:
    ens = _ensemble(args)
    mo = compute_moments(ens)
    _write_json(
        args.out,
        {
            "meta": _meta(args),
            "m": ens.m,
            "d_theta": ens.d_theta,
            "d_eta": ens.d_eta,
            "mu_pr": _tolist(mo.mu_pr),
            "sigma_pr": _tolist(mo.sigma_pr),
        },
    )
    return 0


def _observation(args, ens):
    _require(args, "obs")
    obs = load_observation(args.obs, ens.d_theta, ens.d_eta)
    if args.lambda_json:
        lam_spec = json.loads(Path(args.lambda_json).read_text(encoding="utf-8"))
        lam = np.asarray(lam_spec["lambda_mean"], dtype=float)
        obs = obs.with_sigma_y(sigma_y_from_lambda(lam, args.n_seasons, args.k))
    return obs


def cmd_calibrate(args) -> int:
    ens = _ensemble(args)
    obs = _observation(args, ens)
    meta = _meta(args)
    if args.method == "gaussian":
        post = gaussian_update(compute_moments(ens), obs)
        _write_json(args.out, _gaussian_payload(post, meta))
        return 0
    _require(args, "seed")
    if args.method == "ensemble":
        upd = ensemble_update(ens, obs, args.seed)
    elif args.method == "multistage":
        schedule = StageSchedule(tuple(args.weights)) if args.weights else StageSchedule.even(args.stages)
        _require(args, "forward")
        if args.forward not in FORWARDS:
            raise ValidationError(f"unknown forward model {args.forward!r}; choose from {sorted(FORWARDS)}")
        res = multistage_update(ens, obs, schedule, FORWARDS[args.forward](), args.seed, final=args.final)
        if args.final == "gaussian":
            _write_json(args.out, _gaussian_payload(res, meta))
            return 0
        upd = res
    else:
        raise ValidationError(f"unknown method {args.method!r}")
    summ = theta_summary(upd.theta)
    payload = {
        "meta": meta,
        "m": int(upd.members.shape[0]),
        "theta_mean": _tolist(summ["mean"]),
        "theta_cov": _tolist(summ["cov"]),
        "theta_skewness": _tolist(summ["skewness"]),
        "eta_mean": _tolist(upd.eta.mean(axis=0)),
    }
    if args.format == "csv":
        _require(args, "out")
        save_ensemble(upd.as_ensemble(), args.out)
        _write_json(str(args.out) + ".summary.json", payload)
    else:
        payload["members"] = _tolist(upd.members)
        _write_json(args.out, payload)
    return 0


def _gaussian_payload(post, meta) -> dict:
    return {
        "meta": meta,
        "mu_post": _tolist(post.mu_post),
        "theta_mean": _tolist(post.theta_mean),
        "sigma_post": {"theta": _tolist(post.theta_cov), "full": _tolist(post.sigma_post)},
        "kalman_gain": _tolist(post.kalman_gain),
    }


def _candidates(args):
    return DEFAULT_CANDIDATES if not args.candidates else np.asarray(args.candidates, dtype=float)


def cmd_taper_fit(args) -> int:
    ens = _ensemble(args)
    fit = fit_taper_range(ens.eta, _grid(args), _candidates(args), method=args.taper_method)
    _write_json(args.out, {"meta": _meta(args), "r_star": fit.r_star, "loglik_curve": fit.curve()})
    return 0


def cmd_design(args) -> int:
    _require(args, "n")
    if args.n < 1:
        raise ValidationError("--n must be at least 1")
    ens = _ensemble(args)
    grid = _grid(args)
    if len(grid) != ens.d_eta:
        raise ValidationError(f"grid has {len(grid)} sites but the ensemble has {ens.d_eta} outputs")
    if args.taper_r is not None:
        r_star, curve = float(args.taper_r), None
    else:
        fit = fit_taper_range(ens.eta, grid, _candidates(args), method=args.taper_method)
        r_star, curve = fit.r_star, fit.curve()
    problem = DesignProblem.build(compute_moments(ens), grid, args.n, args.obs_noise_var, r_star)
    if args.exhaustive:
        design = exhaustive_design(problem)
    else:
        design = fedorov_exchange(problem, args.restarts, 0 if args.seed is None else args.seed)
    payload = {
        "meta": _meta(args),
        "site_indices": list(design.site_indices),
        "row_col_coords": [[int(a), int(b)] for a, b in design.coords(grid)],
        "log_det": design.criterion,
        "r_star": r_star,
    }
    if curve is not None:
        payload["loglik_curve"] = curve
    _write_json(args.out, payload)
    return 0


def cmd_lambda_fit(args) -> int:
    _require(args, "n_outputs")
    ens = _ensemble(args)
    obs = load_observation(args.obs, ens.d_theta, ens.d_eta) if args.obs else None
    if obs is None:
        raise ValidationError("missing required option: --obs")
    mo = compute_moments(ens)
    sel = np.flatnonzero(obs.H[:, ens.d_theta :].any(axis=0)) if obs.mode == "incidence" else None
    He = obs.H[:, ens.d_theta :]
    mu_eta = He @ mo.mu_eta
    sigma_ee = He @ mo.sigma_ee @ He.T
    if obs.n != args.n_outputs * args.n_seasons * args.k:
        raise ValidationError(
            f"{obs.n} observed weights != n_outputs*n_seasons*k = {args.n_outputs * args.n_seasons * args.k}"
        )
    est = estimate_lambda(
        obs.y,
        mu_eta,
        sigma_ee,
        args.n_outputs,
        steps=args.steps,
        seed=0 if args.seed is None else args.seed,
        proposal_sd=args.proposal_sd,
    )
    _write_json(
        args.out,
        {
            "meta": _meta(args),
            "lambda_mean": _tolist(est.lambdas),
            "acceptance_rate": est.diagnostics["acceptance_rate"],
            "lambda_posterior_sd": est.diagnostics["posterior_sd"],
            "observed_outputs": None if sel is None else sel.tolist(),
        },
    )
    return 0


def _density_from_gaussian(grid, mean, var) -> DensityTable:
    return DensityTable.from_log(grid, -0.5 * (grid - mean) ** 2 / var)


def cmd_toy_demo(args) -> int:
    _require(args, "out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = 0 if args.seed is None else args.seed
    grid = np.linspace(-6.0, 6.0, 20_001)
    exact = quadrature_posterior(TOY, TOY_Y, TOY_SIGMA_Y, grid=grid)
    runs = DesignRuns.from_forward(TOY, np.linspace(-2.0, 2.5, args.gp_runs))
    gp = gp_posterior_density(TOY_Y, TOY_SIGMA_Y, GpConfig(), runs, prior_sd=1.0, grid=grid)
    obs = ObservationModel.incidence([0], 1, 1, [TOY_Y], [TOY_SIGMA_Y**2])
    ens = toy_ensemble(args.m, seed)
    gpost = gaussian_update(compute_moments(ens), obs)
    gdens = _density_from_gaussian(grid, gpost.theta_mean[0], gpost.theta_cov[0, 0])
    upd = ensemble_update(ens, obs, seed + 1)
    exact.to_csv(out / "exact_posterior.csv")
    gp.to_csv(out / "gp_posterior.csv")
    gdens.to_csv(out / "gaussian_enkf.csv")
    with open(out / "ensemble_enkf_samples.csv", "w", encoding="utf-8") as fh:
        fh.write("theta,eta\n")
        for th, et in upd.members:
            fh.write(f"{th!r},{et!r}\n")
    summ = theta_summary(upd.theta)
    _write_json(
        out / "summary.json",
        {
            "meta": _meta(args),
            "exact": {"mean": exact.mean(), "var": exact.var(), "skewness": exact.skewness(),
                      "mode": exact.mode(), "integral": exact.normalization},
            "gp": {"mean": gp.mean(), "var": gp.var(), "skewness": gp.skewness(),
                   "design": _tolist(runs.theta_design)},
            "gaussian_enkf": {"mean": float(gpost.theta_mean[0]), "var": float(gpost.theta_cov[0, 0]),
                              "skewness": 0.0},
            "ensemble_enkf": {"mean": float(summ["mean"][0]), "var": float(summ["cov"][0, 0]),
                              "skewness": float(summ["skewness"][0])},
        },
    )
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option values; command-line flags take precedence")
    common.add_argument("--ensemble", help="ensemble CSV (theta_1..,eta_1.. header)")
    common.add_argument("--obs", help="observation JSON")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output path (stdout when omitted, where allowed)")
    common.add_argument("--format", choices=["json", "csv"])

    p = argparse.ArgumentParser(prog="enkf-cal", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"enkf-cal {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("moments", parents=[common], help="sample mean and covariance of an ensemble")
    s.set_defaults(func=cmd_moments)

    s = sub.add_parser("calibrate", parents=[common], help="EnKF update (gaussian | ensemble | multistage)")
    s.add_argument("--method", choices=["gaussian", "ensemble", "multistage"])
    s.add_argument("--stages", type=int)
    s.add_argument("--weights", type=lambda t: [float(v) for v in t.split(",")],
                   help="comma-separated information fractions summing to 1")
    s.add_argument("--forward", help="built-in forward model for multistage runs: toy | identity | ice")
    s.add_argument("--final", choices=["ensemble", "gaussian"])
    s.add_argument("--lambda-json", help="lambda-fit output; sets Σy = I + Σδ(λ)")
    s.add_argument("--n-seasons", type=int)
    s.add_argument("--k", type=int)
    s.set_defaults(func=cmd_calibrate)

    taper = argparse.ArgumentParser(add_help=False)
    taper.add_argument("--grid-dims", type=int, nargs=2, metavar=("NX", "NY"))
    taper.add_argument("--candidates", type=float, nargs="+", help="candidate taper ranges")
    taper.add_argument("--taper-method", choices=["loo", "in_sample"])

    s = sub.add_parser("taper-fit", parents=[common, taper], help="maximum-likelihood taper range")
    s.set_defaults(func=cmd_taper_fit)

    s = sub.add_parser("design", parents=[common, taper], help="D-optimal measurement sites")
    s.add_argument("--n", type=int)
    s.add_argument("--restarts", type=int)
    s.add_argument("--obs-noise-var", type=float)
    s.add_argument("--taper-r", type=float, help="use this taper range instead of fitting one")
    s.add_argument("--exhaustive", action="store_true", default=None, help="enumerate all designs")
    s.set_defaults(func=cmd_design)

    s = sub.add_parser("lambda-fit", parents=[common], help="posterior-mean discrepancy precisions")
    s.add_argument("--n-outputs", type=int)
    s.add_argument("--n-seasons", type=int)
    s.add_argument("--k", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--proposal-sd", type=float)
    s.set_defaults(func=cmd_lambda_fit)

    s = sub.add_parser("toy-demo", parents=[common], help="1-d toy problem: exact, GP, and EnKF posteriors")
    s.add_argument("--m", type=int, help="ensemble size")
    s.add_argument("--gp-runs", type=int, help="number of GP design runs")
    s.set_defaults(func=cmd_toy_demo)
    return p


def _resolve(args) -> None:
    cfg = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ValidationError("config file must hold a JSON object")
    for key, value in vars(args).items():
        if value is not None or key in ("func", "command"):
            continue
        norm = key.replace("_", "-")
        if key in cfg or norm in cfg:
            setattr(args, key, cfg.get(key, cfg.get(norm)))
        elif key in DEFAULTS:
            setattr(args, key, DEFAULTS[key])
    if getattr(args, "exhaustive", None) is None and hasattr(args, "exhaustive"):
        args.exhaustive = False


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _resolve(args)
        return args.func(args)
    except (ValidationError, FileNotFoundError, KeyError) as exc:
        print(f"enkf-cal: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, ForwardModelError) as exc:
        print(f"enkf-cal: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
