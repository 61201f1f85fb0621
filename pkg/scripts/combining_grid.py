#!/usr/bin/env python3
"""Evaluate every combining option (scheme x space x softmax x temperature)
on one seeded problem with a partially collapsed network and print the grid.

Usage: python scripts/combining_grid.py [--seed 11]
"""

import argparse

from deep_vecchia.experiments import combining_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--n", type=int, default=2000)
    args = ap.parse_args()

    rows = combining_grid(seed=args.seed, n=args.n)
    print(f"{'scheme':<22} {'space':<5} {'softmax':<7} {'T':>4}  {'RMSE':>8}  {'NLL':>8}")
    for r in rows:
        T = f"{r['temperature']:.0f}" if r["softmax"] else "-"
        print(
            f"{r['scheme']:<22} {r['space']:<5} {str(r['softmax']):<7} {T:>4}  "
            f"{r['rmse']:>8.4f}  {r['nll']:>8.4f}"
        )


if __name__ == "__main__":
    main()
