"""Acceptance suite: one PASS/FAIL line per criterion.

Each criterion runs the command-line tool on a shipped scenario and checks the
written ``report.json`` against the stated threshold and wall-clock budget.
Run alone with ``pytest -m acceptance -s tests/test_acceptance.py``.
"""

import json
import time

import numpy as np
import pytest

from regime_mp.bsde import closed_form_check
from regime_mp.cli import main

pytestmark = pytest.mark.acceptance

SLOPE_BANDS = {
    "delta1_X": (0.7, 1.3),
    "delta1_mean": (1.6, 2.4),
    "first_X": (0.7, 1.3),
    "first_mean": (1.6, 2.4),
    "second_X": (1.7, 2.3),
    "delta2_Y": (2.0, np.inf),
    "delta3_X": (2.0, np.inf),
    "delta3_Y": (2.0, np.inf),
}


class Runs:
    """Runs each (command, scenario) once per session and keeps the report and runtime."""

    def __init__(self, root):
        self.root = root
        self.cache = {}

    def get(self, command, scenario, tag="a"):
        key = (command, scenario, tag)
        if key not in self.cache:
            out = self.root / f"{command}-{scenario}-{tag}"
            start = time.perf_counter()
            code = main([command, "--scenario", scenario, "--out", str(out)])
            elapsed = time.perf_counter() - start
            self.cache[key] = (code, json.loads((out / "report.json").read_text()), elapsed, out)
        return self.cache[key]


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    return Runs(tmp_path_factory.mktemp("acceptance"))


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
        assert ok, detail
    return emit


def test_criterion_01_bsde_oracle(verdict):
    start = time.perf_counter()
    res = closed_form_check(particles=10_000, steps=100, horizon=1.0)
    elapsed = time.perf_counter() - start
    ok = res.y_error <= 0.02 and res.z_error <= 0.05 and elapsed < 30
    verdict(1, "linear BSDE closed form", ok,
            f"Y rel RMSE {res.y_error:.4f}, Z rel RMSE {res.z_error:.4f}, {elapsed:.1f}s")


def test_criterion_02_mean_free_degeneracy(runs, verdict):
    code, rep, elapsed, _ = runs.get("adjoint", "mean_free")
    d = rep["result"]["degeneracy"]
    ok = (code == 0 and d["p1_sup"] < 5 * d["floor_y_sup"] and d["q1_norm"] < 5 * d["floor_z_norm"]
          and elapsed < 60)
    verdict(2, "mean-independent adjoint vanishes", ok,
            f"sup|p1| {d['p1_sup']:.2e} vs 5x{d['floor_y_sup']:.2e}, "
            f"|q1| {d['q1_norm']:.2e} vs 5x{d['floor_z_norm']:.2e}, {elapsed:.1f}s")


def test_criterion_03_first_order_identity(runs, verdict):
    code, rep, elapsed, _ = runs.get("rate-study", "lq_demo")
    ident = rep["result"]["identities"]
    r = ident["checks"]["first_Y"]["residual"]
    ok = abs(ident["eps"] - 0.05) < 1e-9 and r <= 0.05 and elapsed < 120
    verdict(3, "first-order cost identity", ok, f"relative RMS {r:.4f} at eps 0.05, {elapsed:.1f}s")


def test_criterion_04_second_order_expansion(runs, verdict):
    code, rep, elapsed, _ = runs.get("rate-study", "lq_demo")
    res = rep["result"]
    r = res["identities"]["checks"]["expansion"]["residual"]
    ladder = [v for _, v in sorted(res["expansion_residuals"], key=lambda p: -p[0])]
    decreasing = all(b < a for a, b in zip(ladder, ladder[1:]))
    ok = r <= 0.10 and decreasing and elapsed < 300
    verdict(4, "second-order expansion", ok,
            f"relative RMS {r:.4f} at eps 0.05, ladder {[round(v, 4) for v in ladder]}, {elapsed:.1f}s")


def test_criterion_05_rate_suite(runs, verdict):
    code, rep, elapsed, _ = runs.get("rate-study", "lq_sine_rates")
    rates = rep["result"]["rates"]
    outside = {q: round(rates[q]["slope"], 3) for q, (lo, hi) in SLOPE_BANDS.items()
               if not lo <= rates[q]["slope"] <= hi}
    ok = not outside and elapsed < 600
    slopes = ", ".join(f"{q} {rates[q]['slope']:.2f}" for q in SLOPE_BANDS)
    verdict(5, "variation rates", ok, f"{slopes}; outside {outside}, {elapsed:.1f}s")


def test_criterion_06_cost_expansion_remainder(runs, verdict):
    code, rep, elapsed, _ = runs.get("rate-study", "lq_demo")
    rem = dict((round(e, 6), r) for e, r in rep["result"]["remainder"])
    ok = rem[0.0125] < rem[0.2] / 2 and elapsed < 300
    verdict(6, "cost expansion remainder", ok,
            f"R(0.0125) {rem[0.0125]:.4f} vs R(0.2)/2 {rem[0.2] / 2:.4f}, {elapsed:.1f}s")


def test_criterion_07_brute_force_optimum(runs, verdict):
    code, rep, elapsed, _ = runs.get("lq-demo", "lq_demo")
    res = rep["result"]
    opt, neg = res["checks"]["optimum"], res["checks"]["negative_control"]
    ok = (opt["violation_fraction"] <= 0.01 and neg["violation_fraction"] > 0.10
          and not res["budget_exceeded"] and elapsed < 600)
    verdict(7, "maximum principle at the brute-force optimum", ok,
            f"optimum {res['best']} violations {opt['violation_fraction']:.3f}, "
            f"negative control {neg['violation_fraction']:.3f}, {elapsed:.1f}s")


def test_criterion_08_gamma_and_representation(runs, verdict):
    code, rep, elapsed, _ = runs.get("rate-study", "lq_demo")
    res = rep["result"]
    worst = max(abs(r["difference"]) / r["se"] for r in res["representation"].values())
    ok = res["gamma_min"] > 0 and worst <= 3.0 and elapsed < 60
    verdict(8, "stochastic exponential representation", ok,
            f"min Gamma {res['gamma_min']:.3f}, worst |difference|/SE {worst:.2f}, run {elapsed:.1f}s")


def test_criterion_09_constrained_demo(runs, verdict):
    code, rep, elapsed, _ = runs.get("constrained-demo", "constrained_demo")
    res = rep["result"]
    lam, mu = res["lambda"], res["mu"]
    levels = res["levels"]
    steps = [abs(a["lambda"] - b["lambda"]) + abs(a["mu"] - b["mu"]) for a, b in zip(levels, levels[1:])]
    ok = (abs(lam ** 2 + mu ** 2 - 1.0) <= 1e-10 and res["converged"] and min(steps) < 1e-2
          and res["verdict"] == "pass" and res["feasible"] and elapsed < 300)
    verdict(9, "constrained maximum principle", ok,
            f"lambda {lam:.4f}, mu {mu:.4f}, violations {res['violation_fraction']:.3f}, {elapsed:.1f}s")


def test_criterion_10_determinism(runs, verdict):
    reruns = [("adjoint", "mean_free"), ("constrained-demo", "constrained_demo")]
    same = []
    for command, scenario in reruns:
        _, _, _, first = runs.get(command, scenario, "a")
        _, _, _, second = runs.get(command, scenario, "b")
        names = json.loads((first / "report.json").read_text())["files"] + ["report.json"]
        same.append(all((first / n).read_bytes() == (second / n).read_bytes() for n in names))
    verdict(10, "byte-identical reruns", all(same),
            ", ".join(f"{c} {s}: {'identical' if ok else 'differs'}" for (c, s), ok in zip(reruns, same)))
