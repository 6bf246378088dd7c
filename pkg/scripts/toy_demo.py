"""1-d toy calibration: exact, GP-emulated and EnKF posteriors side by side.

    python3 scripts/toy_demo.py --out results/toy --m 200

Writes density tables and a summary via the ``toy-demo`` subcommand, then
prints a short comparison, including the multistage ensemble.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from enkf_cal import ObservationModel, StageSchedule, multistage_update
from enkf_cal.cli import main as cli_main
from enkf_cal.models import TOY, TOY_SIGMA_Y, TOY_Y, toy_ensemble
from enkf_cal.update import theta_summary


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/toy")
    ap.add_argument("--m", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    code = cli_main(["toy-demo", "--out", args.out, "--m", str(args.m), "--seed", str(args.seed)])
    if code:
        raise SystemExit(code)
    summ = json.loads((Path(args.out) / "summary.json").read_text())

    obs = ObservationModel.incidence([0], 1, 1, [TOY_Y], [TOY_SIGMA_Y**2])
    two = multistage_update(toy_ensemble(args.m, args.seed), obs, StageSchedule.even(2), TOY, args.seed + 1)
    ms = theta_summary(two.theta)
    summ["two_stage_enkf"] = {
        "mean": float(ms["mean"][0]),
        "var": float(ms["cov"][0, 0]),
        "skewness": float(ms["skewness"][0]),
    }

    print(f"{'method':<16}{'mean':>10}{'var':>10}{'skew':>10}")
    for name in ("exact", "gp", "gaussian_enkf", "ensemble_enkf", "two_stage_enkf"):
        row = summ[name]
        print(f"{name:<16}{row['mean']:>10.4f}{row['var']:>10.4f}{row.get('skewness', np.nan):>10.3f}")


if __name__ == "__main__":
    main()
