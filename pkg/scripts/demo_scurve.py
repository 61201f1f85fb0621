#!/usr/bin/env python3
"""Run the S-curve experiment across seeds and print a small table.

Usage: python scripts/demo_scurve.py [--seeds 0 1 2 3] [--n 1000]
"""

import argparse

from deep_vecchia.experiments import demo_scurve


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--noise-sd", type=float, default=0.1)
    ap.add_argument("--m", type=int, default=32)
    args = ap.parse_args()

    print(f"{'seed':>4}  {'network MSE':>12}  {'DVE MSE':>12}  {'DVE NLL':>9}")
    for seed in args.seeds:
        r = demo_scurve(seed=seed, n=args.n, noise_sd=args.noise_sd, m=args.m)
        print(
            f"{seed:>4}  {r['network_mse']:>12.5f}  {r['dve_mse']:>12.5f}  "
            f"{r['dve_nll']:>9.3f}"
        )


if __name__ == "__main__":
    main()
