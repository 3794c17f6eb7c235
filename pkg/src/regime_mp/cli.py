"""Command-line entry point: ``regime-mp <command> --scenario <file or shipped name>``.

Every command writes ``report.json``, ``manifest.json`` and ``timings.json``
plus command-specific CSV files into ``--out``.  ``report.json`` and the CSVs
depend only on the scenario, seed and sizes, so two runs with the same inputs
produce byte-identical files; wall-clock data goes to ``timings.json`` only.

Exit codes: 0 success, 1 a verification failed, 2 invalid configuration,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator

import numpy as np

from . import __version__
from .adjoint import degeneracy_check, reduced_adjoint_residual, representation_check, solve_adjoints
from .bsde import Trajectory, solve_state
from .chain import sample_chain
from .config import PolicyConfig, ScenarioConfig, load_scenario, shipped_scenarios
from .errors import ConfigError, NumericalAbort
from .forward import brownian_increments, moment_probe, simulate_forward
from .mp import SearchSettings, check_mp, check_mp_lq, constrained_verify, lq_brute_force
from .rng import StreamFactory
from .scenario import check_assumptions
from .variation import (SpikeSpec, check_identities, expansion_check, expansion_trend_ok,
                        identity_ladder, rate_probe, run_spike, strictly_decreasing)

log = logging.getLogger("regime_mp")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def sanitize(obj: Any) -> Any:
    """JSON-safe copy: numpy scalars to Python, non-finite floats to ``None``."""
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return sanitize(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def dump_json(obj: Any) -> str:
    return json.dumps(sanitize(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


@dataclass
class RunManifest:
    """Inputs that determine a run.  ``digest`` ignores the output path and worker count."""

    command: str
    scenario: str
    scenario_sha256: str
    seed: int
    particles: int
    steps: int
    version: str
    seed_schedule: dict[str, int]
    config: dict[str, Any]
    out: str = ""
    workers: int = 1

    def hashed(self) -> dict[str, Any]:
        return sanitize({k: v for k, v in self.__dict__.items() if k not in ("out", "workers")})

    def digest(self) -> str:
        return hashlib.sha256(dump_json(self.hashed()).encode()).hexdigest()

    def to_dict(self) -> dict[str, Any]:
        d = dict(self.hashed())
        d.update(out=self.out, workers=self.workers, manifest_hash=self.digest())
        return d


@dataclass
class Run:
    """State shared by a command: resolved config, output directory and timers."""

    cfg: ScenarioConfig
    args: argparse.Namespace
    out: Path
    timings: dict[str, float] = field(default_factory=dict)
    files: list[str] = field(default_factory=list)

    @contextmanager
    def timed(self, stage: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[stage] = self.timings.get(stage, 0.0) + time.perf_counter() - start

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def trajectory(self, policy=None) -> Trajectory:
        """Forward ensemble and cost equation for ``policy`` (the scenario policy by default)."""
        cfg = self.cfg
        coeffs = cfg.coefficients()
        model = cfg.control_model(policy)
        with self.timed("forward"):
            chain = sample_chain(cfg.generator, cfg.horizon, cfg.steps, cfg.seed, cfg.initial_regime)
            dW = brownian_increments(cfg.seed, cfg.steps, cfg.particles, cfg.horizon / cfg.steps, 0,
                                     cfg.antithetic)
            ens = simulate_forward(coeffs, model, chain, cfg.particles, cfg.seed, cfg.x0, dW=dW)
        with self.timed("cost_bsde"):
            return solve_state(coeffs, ens, model, cfg.basis(), cfg.regression.picard)

    def adjoints(self, traj: Trajectory):
        with self.timed("adjoints"):
            return solve_adjoints(traj, self.cfg.basis(), self.cfg.regression.picard)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

CommandResult = tuple[dict[str, Any], bool]


def cmd_simulate(run: Run) -> CommandResult:
    traj = run.trajectory()
    e = traj.ensemble
    e.summary_csv(run.path("forward.csv"))
    e.chain.to_csv(run.path("chain.csv"))
    if run.args.dump_paths:
        e.paths_csv(run.path("paths.csv"))
    moments = {f"beta={b:g}": moment_probe(e, b) for b in (2.0, 4.0, 8.0)}
    result = {
        "cost": traj.cost,
        "cost_se": float(traj.solution.initial_se),
        "terminal_mean": float(e.mean[-1]),
        "terminal_std": float(e.X[-1].std(ddof=1)),
        "chain_jumps": e.chain.count_jumps(),
        "terminal_regime": e.terminal_regime,
        "sup_moments": moments,
        "control_moment_8": traj.control.moment_bound(e.controls),
    }
    return result, bool(np.isfinite(traj.cost))


def cmd_adjoint(run: Run) -> CommandResult:
    traj = run.trajectory()
    bundle = run.adjoints(traj)
    bundle.summary_csv(run.path("adjoints.csv"))
    f, s = bundle.first, bundle.second
    with run.timed("degeneracy"):
        deg = degeneracy_check(traj, bundle, run.cfg.basis())
    d = bundle.fields
    y_free = not (np.any(d.f_y) or np.any(d.f_z))
    result = {
        "p0_initial": float(f.p0[0].mean()),
        "p1_initial": float(f.p1[0].mean()),
        "P0_initial": float(s.P0[0].mean()),
        "P1_initial": float(s.P1[0].mean()),
        "degeneracy": {"p1_sup": deg.p1_sup, "q1_norm": deg.q1_norm,
                       "floor_y_sup": deg.floor.y_sup, "floor_z_norm": deg.floor.z_norm,
                       "factor": deg.factor, "within_floor": deg.passed},
    }
    if y_free:
        result["reduced_adjoint_residual"] = reduced_adjoint_residual(traj, bundle)
    return result, True


def cmd_verify_mp(run: Run) -> CommandResult:
    cfg = run.cfg
    traj = run.trajectory()
    bundle = run.adjoints(traj)
    with run.timed("mp_check"):
        rep = check_mp(traj, bundle, cfg.controls.grid, cfg.mp.quantile, cfg.mp.se_multiplier,
                       cfg.mp.atol, scenario=cfg.name, candidate=cfg.policy.describe())
    rep.steps_csv(run.path("mp_steps.csv"))
    result = rep.to_dict()
    ok = rep.passed
    lq = cfg.lq()
    if lq is not None:
        with run.timed("mp_check_lq"):
            lq_rep = check_mp_lq(lq, traj, bundle, cfg.controls.grid, cfg.mp.quantile,
                                 cfg.mp.se_multiplier, cfg.mp.atol, scenario=cfg.name,
                                 candidate=cfg.policy.describe())
        result["lq_form"] = lq_rep.to_dict()
        ok = ok and lq_rep.passed
    return result, ok


def cmd_rate_study(run: Run) -> CommandResult:
    cfg = run.cfg
    sp = cfg.spike
    traj = run.trajectory()
    bundle = run.adjoints(traj)
    alt = cfg.control_model(sp.alternative)
    with run.timed("spikes"):
        report, studies = rate_probe(traj, alt, sp.ladder, sp.start, sp.beta, bundle,
                                     workers=run.args.workers, basis=cfg.basis(),
                                     joint_degree=sp.joint_degree)
    report.to_csv(run.path("rates.csv"))
    by_eps = {round(s.eps, 12): s for s in studies}
    ident_study = by_eps.get(round(sp.identity_eps, 12))
    if ident_study is None:
        with run.timed("spikes"):
            ident_study = run_spike(traj, SpikeSpec.interval(sp.start, sp.identity_eps, alt), bundle,
                                    cfg.basis(), sp.joint_degree)
    identities = check_identities(ident_study)
    identities.to_csv(run.path("identities.csv"))
    ladder = identity_ladder(studies)
    points = expansion_check(studies)
    reps = {f"{s.eps:g}": representation_check(s.expansion, traj.ensemble.dt) for s in studies}
    gamma_min = float(min(np.min(s.expansion.gamma) for s in studies))
    _expansion_csv(run.path("expansion.csv"), points, ladder)

    fits = {q: {"slope": f.slope, "slope_se": f.slope_se, "band": list(f.band), "verdict": f.verdict,
                "points_used": f.used}
            for q, f in report.fits.items()}
    rate_ok = all(f.verdict != "fail" for f in report.fits.values())
    ident_ok = all(r.passed for r in identities.results)
    result = {
        "beta": sp.beta,
        "ladder": list(sp.ladder),
        "rates": fits,
        "rates_ok": rate_ok,
        "identities": {"eps": ident_study.eps,
                       "checks": {r.name: {"residual": r.residual, "tol": r.tolerance,
                                           "passed": r.passed} for r in identities.results},
                       "passed": ident_ok},
        "expansion_residuals": [[e, r] for e, r in ladder],
        "expansion_residuals_decreasing": strictly_decreasing(ladder),
        "remainder": [[p.eps, p.remainder] for p in points],
        "remainder_trend_ok": expansion_trend_ok(points),
        "representation": {k: {"difference": r.difference, "se": r.se, "passed": r.passes()}
                           for k, r in reps.items()},
        "gamma_min": gamma_min,
    }
    ok = (rate_ok and ident_ok and result["expansion_residuals_decreasing"]
          and result["remainder_trend_ok"] and gamma_min > 0
          and all(r.passes() for r in reps.values()))
    return result, ok


def _expansion_csv(path: Path, points, ladder) -> None:
    resid = dict(ladder)
    lines = ["eps,cost_difference,ytil0,remainder,identity_residual"]
    for p in sorted(points, key=lambda p: -p.eps):
        lines.append(",".join(repr(float(v)) for v in
                              (p.eps, p.cost_difference, p.ytil0, p.remainder, resid[p.eps])))
    path.write_text("\n".join(lines) + "\n")


def cmd_lq_demo(run: Run) -> CommandResult:
    cfg = run.cfg
    lq = cfg.lq()
    if lq is None:
        raise ConfigError("lq-demo needs an 'lq' model family", "model.family")
    bf = cfg.brute_force
    with run.timed("brute_force"):
        search = lq_brute_force(lq, cfg.controls, bf.blocks, np.asarray(cfg.generator), cfg.x0,
                                cfg.horizon, bf.steps or cfg.steps, bf.particles or cfg.particles,
                                bf.seeds or (cfg.seed,), bf.budget, bf.exhaustive_limit,
                                cfg.antithetic, cfg.basis())
    search.to_csv(run.path("cost_table.csv"))
    best_policy = PolicyConfig("block", 0.0, tuple(search.best))
    checks = {}
    for label, policy in (("optimum", best_policy), ("negative_control", cfg.mp.negative_control)):
        if policy is None:
            continue
        traj = run.trajectory(policy)
        bundle = run.adjoints(traj)
        with run.timed("mp_check"):
            rep = check_mp_lq(lq, traj, bundle, cfg.controls.grid, cfg.mp.quantile,
                              cfg.mp.se_multiplier, cfg.mp.atol, scenario=cfg.name,
                              candidate=policy.describe())
        rep.steps_csv(run.path(f"mp_steps_{label}.csv"))
        checks[label] = rep.to_dict()
    table = search.mean_table()
    ranked = sorted(table.items(), key=lambda kv: (kv[1], kv[0]))
    gap = ranked[1][1] - ranked[0][1] if len(ranked) > 1 else None
    result = {
        "best": list(search.best),
        "best_value": search.best_value,
        "runner_up_gap": gap,
        "evaluated": len(table),
        "exhaustive": search.exhaustive,
        "budget_exceeded": search.budget_exceeded,
        "checks": checks,
    }
    ok = not search.budget_exceeded and checks["optimum"]["verdict"] == "pass"
    if "negative_control" in checks:
        neg = checks["negative_control"]
        result["negative_control_detected"] = neg["violation_fraction"] > 0.1
        ok = ok and result["negative_control_detected"]
    return result, ok


def cmd_constrained_demo(run: Run) -> CommandResult:
    cfg = run.cfg
    con = cfg.constraint
    if con is None:
        raise ConfigError("scenario has no 'constraint' section", "constraint")
    settings = SearchSettings(cfg.generator, cfg.x0, cfg.horizon, cfg.steps, cfg.particles, cfg.seed,
                              con.blocks, cfg.antithetic, cfg.initial_regime)
    with run.timed("constrained"):
        rep = constrained_verify(cfg.coefficients(), con.build(), cfg.control_model(), con.kappas,
                                 settings, con.feasibility_tol, cfg.mp.quantile, cfg.mp.se_multiplier,
                                 cfg.mp.atol, con.multiplier_tol, cfg.basis(), con.terminal, cfg.name)
    rep.final.steps_csv(run.path("mp_steps.csv"))
    lines = ["kappa,lambda,mu,j_kappa,expected_psi,violation_fraction"]
    for lv in rep.levels:
        lines.append(",".join(repr(float(v)) for v in (lv.kappa, lv.lam, lv.mu, lv.j_kappa,
                                                        lv.expected_psi, lv.report.violation_fraction)))
    run.path("kappa_levels.csv").write_text("\n".join(lines) + "\n")
    return rep.to_dict(), rep.passed and rep.feasible


def cmd_selftest(run: Run) -> CommandResult:
    from .selftest import run_selftest

    with run.timed("selftest"):
        checks = run_selftest()
    return {"checks": checks}, all(c["passed"] for c in checks.values())


COMMANDS: dict[str, Callable[[Run], CommandResult]] = {
    "simulate": cmd_simulate,
    "adjoint": cmd_adjoint,
    "verify-mp": cmd_verify_mp,
    "rate-study": cmd_rate_study,
    "lq-demo": cmd_lq_demo,
    "constrained-demo": cmd_constrained_demo,
    "selftest": cmd_selftest,
}

DEFAULT_SCENARIO = {"constrained-demo": "constrained_demo", "rate-study": "lq_sine_rates"}


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regime-mp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--scenario", help="scenario JSON file or shipped name "
                       f"({', '.join(shipped_scenarios())})")
        p.add_argument("--seed", type=int, help="override the scenario master seed")
        p.add_argument("--particles", type=int, help="override the particle count")
        p.add_argument("--steps", type=int, help="override the number of time steps")
        p.add_argument("--workers", type=int, default=1, help="threads for spike ladders")
        p.add_argument("--out", default=None, help="output directory (default runs/<command>)")
        p.add_argument("--dump-paths", action="store_true", help="write every particle path")
        p.add_argument("--skip-validate", action="store_true", help="skip the assumption checks")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args: argparse.Namespace) -> ScenarioConfig:
    cfg = load_scenario(args.scenario or DEFAULT_SCENARIO.get(args.command, "lq_demo"))
    for flag in ("seed", "particles", "steps"):
        value = getattr(args, flag)
        if value is not None and value < (0 if flag == "seed" else 1):
            raise ConfigError("must be positive" if flag != "seed" else "must be non-negative",
                              f"--{flag}")
    if args.workers < 1:
        raise ConfigError("must be at least 1", "--workers")
    cfg = cfg.with_overrides(seed=args.seed, particles=args.particles, steps=args.steps)
    if cfg.particles < 2:
        raise ConfigError("at least 2 particles are needed", "--particles")
    cfg.check_grid()
    return cfg


def validate(run: Run) -> dict[str, Any]:
    cfg = run.cfg
    with run.timed("validation"):
        report = check_assumptions(cfg.coefficients(), cfg.validation.budget, cfg.seed,
                                   cfg.validation.box, cfg.controls, cfg.horizon, cfg.validation.fd_tol)
    summary = report.to_dict()
    failed = report.failed()
    if failed:
        raise ConfigError(f"scenario fails assumption checks: {', '.join(failed)}", "model")
    return summary


def execute(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = Path(args.out or Path("runs") / args.command)
    out.mkdir(parents=True, exist_ok=True)
    run = Run(cfg, args, out)
    manifest = RunManifest(
        command=args.command,
        scenario=cfg.name,
        scenario_sha256=hashlib.sha256(cfg.source.encode()).hexdigest(),
        seed=cfg.seed,
        particles=cfg.particles,
        steps=cfg.steps,
        version=__version__,
        seed_schedule=StreamFactory(cfg.seed).schedule(),
        config=cfg.to_dict(),
        out=str(out),
        workers=args.workers,
    )
    validation = None
    if not args.skip_validate and args.command != "selftest":
        validation = validate(run)
    start = time.perf_counter()
    try:
        result, ok = COMMANDS[args.command](run)
    finally:
        run.timings["total"] = time.perf_counter() - start
        run.path("timings.json").write_text(dump_json(run.timings))
    report = {
        "command": args.command,
        "scenario": cfg.name,
        "manifest_hash": manifest.digest(),
        "version": __version__,
        "validation": validation,
        "result": result,
        "ok": ok,
        "files": sorted(set(run.files) - {"timings.json"}),
    }
    (out / "manifest.json").write_text(dump_json(manifest.to_dict()))
    (out / "report.json").write_text(dump_json(report))
    print(f"{args.command}: {'ok' if ok else 'FAILED'} (report in {out / 'report.json'})")
    return EXIT_OK if ok else EXIT_FAILED


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return execute(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
