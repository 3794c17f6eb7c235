"""Regression BSDE solver against the linear closed form over a grid of sizes.

Prints relative RMSE of Y and Z as the particle count and step count grow.
"""

import argparse
import time

from regime_mp.bsde import closed_form_check


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rate", type=float, default=0.5)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    print(f"{'particles':>9s} {'steps':>6s} {'Y rmse':>9s} {'Z rmse':>9s} {'seconds':>8s}")
    for particles in (1_000, 4_000, 10_000):
        for steps in (25, 50, 100):
            start = time.perf_counter()
            res = closed_form_check(args.rate, particles, steps, seed=args.seed)
            print(f"{particles:9d} {steps:6d} {res.y_error:9.5f} {res.z_error:9.5f} "
                  f"{time.perf_counter() - start:8.2f}")


if __name__ == "__main__":
    main()
