"""Run the CLI on the synthetic cosmology-shaped and climate-shaped fixtures.

    python3 scripts/fixtures_end_to_end.py --workdir results/fixtures

Cosmology: 128 runs, 5 parameters, 55 outputs, 22 observed. Climate: 1400
runs, 15 parameters, 7 outputs x 4 seasons x 5 EOF weights; discrepancy
precisions are fitted first and then used for the update.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from enkf_cal import save_ensemble
from enkf_cal.cli import main as cli
from enkf_cal.ensemble import save_observation
from enkf_cal.models import COSMOLOGY_NAMES, climate_fixture, cosmology_fixture


def run(argv):
    code = cli(argv)
    if code:
        raise SystemExit(f"enkf-cal {argv[0]} failed with exit code {code}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--workdir", default="results/fixtures")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    wd = Path(args.workdir)
    wd.mkdir(parents=True, exist_ok=True)

    ens, h_idx, y, sd2 = cosmology_fixture(args.seed)
    save_ensemble(ens, wd / "cosmo.csv")
    save_observation(wd / "cosmo_obs.json", y, sd2, h_idx)
    run(["calibrate", "--ensemble", str(wd / "cosmo.csv"), "--obs", str(wd / "cosmo_obs.json"),
         "--out", str(wd / "cosmo_gaussian.json")])
    run(["calibrate", "--method", "ensemble", "--seed", str(args.seed + 1), "--format", "csv",
         "--ensemble", str(wd / "cosmo.csv"), "--obs", str(wd / "cosmo_obs.json"),
         "--out", str(wd / "cosmo_enkf.csv")])
    post = json.loads((wd / "cosmo_gaussian.json").read_text())
    prior_sd = ens.theta.std(axis=0, ddof=1)
    post_sd = np.sqrt(np.diag(post["sigma_post"]["theta"]))
    print("cosmology: posterior mean (sd / prior sd)")
    for name, mu, r in zip(COSMOLOGY_NAMES, post["theta_mean"], post_sd / prior_sd):
        print(f"  {name:<10}{mu:>9.4f}   {r:.3f}")

    ens, y, true_lam = climate_fixture(args.seed)
    save_ensemble(ens, wd / "climate.csv")
    save_observation(wd / "climate_obs.json", y, np.ones(y.size), list(range(y.size)))
    run(["lambda-fit", "--ensemble", str(wd / "climate.csv"), "--obs", str(wd / "climate_obs.json"),
         "--n-outputs", "7", "--n-seasons", "4", "--k", "5", "--seed", str(args.seed),
         "--out", str(wd / "lambda.json")])
    run(["calibrate", "--ensemble", str(wd / "climate.csv"), "--obs", str(wd / "climate_obs.json"),
         "--lambda-json", str(wd / "lambda.json"), "--n-seasons", "4", "--k", "5",
         "--out", str(wd / "climate_gaussian.json")])
    lam = json.loads((wd / "lambda.json").read_text())
    print("climate: discrepancy precision posterior means")
    for i, (est, sd, t) in enumerate(zip(lam["lambda_mean"], lam["lambda_posterior_sd"], true_lam)):
        print(f"  output {i}: {est:10.3f} (sd {sd:8.3f}), generating value {t}")


if __name__ == "__main__":
    main()
