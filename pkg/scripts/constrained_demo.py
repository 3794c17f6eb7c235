"""Penalty-ladder multipliers and the constrained inequality at the forced control.

Usage: python3 scripts/constrained_demo.py [--scenario constrained_demo]
"""

import argparse

from _common import finish, run


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scenario", default="constrained_demo")
    parser.add_argument("--out", default="runs/constrained_demo")
    args = parser.parse_args()
    code, rep = run("constrained-demo", args.scenario, args.out)
    res = rep["result"]
    print(f"{'kappa':>6s} {'lambda':>8s} {'mu':>8s} {'E[psi]':>8s} {'control':>8s}")
    for lv in res["levels"]:
        print(f"{lv['kappa']:6.2f} {lv['lambda']:8.4f} {lv['mu']:8.4f} {lv['expected_psi']:8.4f} "
              f"{lv['control'][0]:8.3f}")
    print(f"limit lambda {res['lambda']:.6f}  mu {res['mu']:.6f}  converged {res['converged']}  "
          f"feasible {res['feasible']}  verdict {res['verdict']}")
    finish(code)


if __name__ == "__main__":
    main()
