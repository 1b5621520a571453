"""Monte Carlo reporting-probability gap against 2 alpha / (c - a + 2g) for a range of alpha.

    python scripts/gap_sweep.py --alphas 0.05 0.1 0.2 0.3 --samples 1000000
"""

import argparse

from sketch_attack.estimators import CorrectnessParams, randomized_estimator_family
from sketch_attack.sketch import derive_seed
from sketch_attack.verification import gap_estimate, predicted_gap


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ell", type=int, default=9)
    ap.add_argument("--a", type=float, default=0.3)
    ap.add_argument("--c", type=float, default=1.3)
    ap.add_argument("--g", type=float, default=0.3)
    ap.add_argument("--sigma", type=float, default=1.0)
    ap.add_argument("--delta", type=float, default=0.1)
    ap.add_argument("--estimator", default="median_threshold")
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.1, 0.2, 0.3])
    ap.add_argument("--samples", type=int, default=1_000_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    params = CorrectnessParams(args.delta, args.a, args.c, args.ell, args.sigma)
    print("alpha,gap,predicted,ratio")
    for i, alpha in enumerate(args.alphas):
        f = randomized_estimator_family(args.estimator, params, seed=args.seed)
        gap = gap_estimate(f, alpha, args.a, args.c, args.g, args.sigma, args.ell, args.samples,
                           seed=derive_seed(args.seed, i))
        pred = predicted_gap(alpha, args.a, args.c, args.g)
        print(f"{alpha},{gap:.6f},{pred:.6f},{gap / pred:.4f}")


if __name__ == "__main__":
    main()
