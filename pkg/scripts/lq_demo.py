"""Brute-force the two-block LQ demo and check the maximum principle at the optimum.

Usage: python3 scripts/lq_demo.py [--out runs/lq_demo] [--scenario lq_demo]
"""

import argparse

from _common import finish, run


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scenario", default="lq_demo")
    parser.add_argument("--out", default="runs/lq_demo")
    args = parser.parse_args()
    code, rep = run("lq-demo", args.scenario, args.out)
    res = rep["result"]
    print(f"best blocks {res['best']}  cost {res['best_value']:.4f}  gap to runner-up {res['runner_up_gap']:.4f}")
    for label, check in res["checks"].items():
        print(f"{label:17s} violation fraction {check['violation_fraction']:.3f}  verdict {check['verdict']}")
    print(f"cost table: {args.out}/cost_table.csv")
    finish(code)


if __name__ == "__main__":
    main()
