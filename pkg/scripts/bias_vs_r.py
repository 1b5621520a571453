"""Mean attacked bias as a function of the number of queries r, against the linear prediction.

Writes CSV rows r,seed,mean_adjusted,predicted,threshold.

    python scripts/bias_vs_r.py --ell 9 --b 8 --rs 81 162 324 --seeds 20 > bias_vs_r.csv
"""

import argparse
import csv
import sys

import numpy as np

from sketch_attack.attack import AttackConfig, universal_attack
from sketch_attack.estimators import median_threshold_estimator
from sketch_attack.sketch import SketchRandomness, derive_seed
from sketch_attack.verification import bias_under, predicted_bias


def sweep(ell, b, rs, seeds, master_seed=0):
    for r in rs:
        for i in range(seeds):
            cfg = AttackConfig.desk_scale(ell=ell, b=b, r=r, seed=derive_seed(master_seed, r, i))
            rho = SketchRandomness(cfg.params, derive_seed(cfg.seed, 77))
            tr = universal_attack(rho, median_threshold_estimator(cfg.correctness()), cfg, check=i == 0)
            rep = bias_under(rho, tr.z_A, tr.h, 1, cfg)
            yield r, cfg.seed, rep.mean_adjusted, predicted_bias(r, ell, cfg.sigma, cfg.a, cfg.c, cfg.g), rep.threshold


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ell", type=int, default=9)
    ap.add_argument("--b", type=int, default=8)
    ap.add_argument("--rs", type=int, nargs="+", default=[81, 162, 324])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--master-seed", type=int, default=0)
    args = ap.parse_args(argv)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["r", "seed", "mean_adjusted", "predicted", "threshold"])
    rows = list(sweep(args.ell, args.b, args.rs, args.seeds, args.master_seed))
    w.writerows(rows)
    arr = np.array([(r, x) for r, _, x, _, _ in rows])
    slope = np.polyfit(arr[:, 0], arr[:, 1], 1)[0]
    print(f"# slope {slope:.4f} vs predicted {rows[0][3] / rows[0][0]:.4f}", file=sys.stderr)


if __name__ == "__main__":
    main()
