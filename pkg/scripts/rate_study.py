"""Spike-variation rate study: slopes, identities and the cost-expansion remainder.

Usage: python3 scripts/rate_study.py [--scenario lq_sine_rates] [--workers 1]
"""

import argparse

from _common import finish, run


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scenario", default="lq_sine_rates")
    parser.add_argument("--out", default="runs/rate_study")
    parser.add_argument("--workers", default="1")
    args = parser.parse_args()
    code, rep = run("rate-study", args.scenario, args.out, ("--workers", args.workers))
    res = rep["result"]
    print(f"{'quantity':14s} {'slope':>7s} {'se':>7s}  band          verdict")
    for q, fit in res["rates"].items():
        lo, hi = fit["band"]
        band = f"[{lo:.1f}, {'inf' if hi is None else f'{hi:.1f}'}]"
        print(f"{q:14s} {fit['slope']:7.3f} {fit['slope_se']:7.3f}  {band:13s} {fit['verdict']}")
    print(f"identities at eps {res['identities']['eps']:.3g}:")
    for name, c in res["identities"]["checks"].items():
        print(f"  {name:10s} residual {c['residual']:.4f}  tol {c['tol']}")
    print("eps      expansion residual  remainder R")
    for (e, r), (_, rem) in zip(res["expansion_residuals"], res["remainder"]):
        print(f"{e:<8.4g} {r:<19.4f} {rem:.4f}")
    finish(code)


if __name__ == "__main__":
    main()
