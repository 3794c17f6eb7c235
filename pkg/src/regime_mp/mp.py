"""Hamiltonian, H-function and the maximum-principle checks.

The inequality ``H-function(v) >= H-function(v_bar)`` is checked on a grid
of ``(t_k, particle, v)`` points with a tolerance of a few local standard
errors propagated from the regression estimates of the adjoints.  The
state-constrained variant adds a penalised search over block controls,
multipliers and auxiliary adjoints driven by the constraint function.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from .adjoint import AdjointBundle, DerivativeFields, solve_adjoints, solve_gamma
from .bsde import BackwardSolution, RegressionBasis, Trajectory, evaluate_cost, solve_bsde, solve_state
from .chain import GeneratorMatrix, sample_chain
from .forward import brownian_increments, simulate_forward
from .scenario import (BlockPolicy, CoefficientSet, ControlModel, ControlSet, LQCoefficients,
                       lq_to_general)

Array = NDArray[np.float64]


# ---------------------------------------------------------------------------
# Hamiltonian
# ---------------------------------------------------------------------------


@dataclass
class HamiltonianContext:
    """Everything the Hamiltonian needs at one step of one ensemble.

    Per-particle arrays have shape ``(N,)``; ``control`` is the candidate
    value (scalar or per particle) and ``base_control`` the reference
    control at the same step.
    """

    coeffs: CoefficientSet
    step: int
    t: float
    x: Array
    mean: float
    y: Array
    z: Array
    base_control: Array
    regime: int
    p0: Array
    p1: Array
    q0: Array
    control: float | Array
    P0: Array | None = None
    P1: Array | None = None

    @classmethod
    def at(cls, traj: Trajectory, bundle: AdjointBundle, k: int, control: float | Array) -> "HamiltonianContext":
        e = traj.ensemble
        return cls(traj.coeffs, k, float(e.times[k]), e.X[k], float(e.mean[k]), traj.Y[k], traj.Z[k],
                   e.controls[k], int(e.regimes[k]), bundle.first.p0[k], bundle.first.p1[k],
                   bundle.first.q0[k], control, bundle.second.P0[k], bundle.second.P1[k])

    def with_control(self, control: float | Array) -> "HamiltonianContext":
        out = HamiltonianContext(**{**self.__dict__})
        out.control = control
        return out

    def candidate(self) -> Array:
        return np.broadcast_to(np.asarray(self.control, dtype=float), self.x.shape)

    def sigma_gap(self) -> Array:
        c, a = self.coeffs, (self.t, self.x, self.mean)
        return c.sigma(*a, self.candidate(), self.regime) - c.sigma(*a, self.base_control, self.regime)


def hamiltonian(ctx: HamiltonianContext) -> Array:
    """Per-particle Hamiltonian with the cross-particle mean for the ``p1`` term."""
    c, a, v = ctx.coeffs, (ctx.t, ctx.x, ctx.mean), ctx.candidate()
    b = np.broadcast_to(c.b(*a, v, ctx.regime), ctx.x.shape)
    s = np.broadcast_to(c.sigma(*a, v, ctx.regime), ctx.x.shape)
    shift = ctx.p0 * ctx.sigma_gap()
    return (ctx.p0 * b + ctx.p1 * b.mean() + ctx.q0 * s
            + c.f(ctx.t, ctx.x, ctx.mean, ctx.y, ctx.z + shift, v, ctx.regime))


def h_function(ctx: HamiltonianContext, P0: Array | None = None, P1: Array | None = None) -> Array:
    """Hamiltonian plus ``P0 dsigma^2 / 2 + P1 mean(dsigma^2) / 2``."""
    P0 = ctx.P0 if P0 is None else P0
    P1 = ctx.P1 if P1 is None else P1
    if P0 is None or P1 is None:
        raise ValueError("second-order adjoint values are required")
    gap2 = ctx.sigma_gap() ** 2
    return hamiltonian(ctx) + 0.5 * P0 * gap2 + 0.5 * P1 * gap2.mean()


# ---------------------------------------------------------------------------
# grid check
# ---------------------------------------------------------------------------


@dataclass
class MPWeights:
    """Coefficients of the control-difference terms at every ``(k, particle)``.

    The increment of the H-function between a candidate ``v`` and the base
    control is

        p0 db + p1 mean(db) + q0 dsigma + P0 dsigma^2/2 + P1 mean(dsigma^2)/2
        + gamma [f(.., z + shift dsigma, v) - f(.., z, v_bar)]

    with ``shift`` the unconstrained ``p0``.  ``*_se`` are the matching
    per-particle standard errors.  ``tied`` marks ``p0`` and ``shift`` as
    the same estimate, so their error contributions add linearly.
    """

    p0: Array
    p1: Array
    q0: Array
    P0: Array
    P1: Array
    gamma: Array
    shift: Array
    p0_se: Array
    p1_se: Array
    q0_se: Array
    P0_se: Array
    P1_se: Array
    shift_se: Array
    y_se: Array
    z_se: Array
    tied: bool = True

    @classmethod
    def from_adjoints(cls, traj: Trajectory, bundle: AdjointBundle) -> "MPWeights":
        f, s = bundle.first, bundle.second
        steps = traj.ensemble.steps
        return cls(f.p0[:steps], f.p1[:steps], f.q0, s.P0[:steps], s.P1[:steps],
                   np.ones_like(f.q0), f.p0[:steps],
                   f.p0_se[:steps], f.p1_se[:steps], f.q0_se, s.P0_se[:steps], s.P1_se[:steps],
                   f.p0_se[:steps], traj.solution.y_se[:steps], traj.solution.z_se, True)


@dataclass
class MPReport:
    """Outcome of a grid check of the maximum-principle inequality."""

    scenario: str
    candidate: str
    points: int
    violations: int
    worst_violation: float
    se_multiplier: float
    tol_median: float
    tol_max: float
    slack: float
    quantile: float
    nontrivial_points: int
    step_violations: tuple[int, ...]
    min_delta: float

    @property
    def violation_fraction(self) -> float:
        return self.violations / self.points if self.points else 0.0

    @property
    def nontrivial_fraction(self) -> float:
        return self.violations / self.nontrivial_points if self.nontrivial_points else 0.0

    @property
    def passed(self) -> bool:
        return self.violation_fraction <= self.quantile

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "candidate": self.candidate,
            "violation_fraction": self.violation_fraction,
            "worst_violation": self.worst_violation,
            "tol": {"rule": f"{self.se_multiplier:g} local standard errors",
                    "median": self.tol_median, "max": self.tol_max, "slack": self.slack},
            "verdict": self.verdict,
            "points": self.points,
            "violations": self.violations,
            "nontrivial_points": self.nontrivial_points,
            "nontrivial_fraction": self.nontrivial_fraction,
            "quantile": self.quantile,
            "min_delta": self.min_delta,
        }

    def steps_csv(self, target: str | Path | None = None) -> str:
        """Rows ``k, violations``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "violations"])
        for k, n in enumerate(self.step_violations):
            w.writerow([k, n])
        text = buf.getvalue()
        if target is not None:
            Path(target).write_text(text)
        return text


def _grid_values(grid: ControlSet | Sequence[float] | None, traj: Trajectory) -> Array:
    if grid is None:
        grid = traj.control.control_set
    if isinstance(grid, ControlSet):
        return grid.grid
    return np.asarray(sorted(set(float(v) for v in grid)))


def _weighted_check(
    traj: Trajectory,
    w: MPWeights,
    grid: Array,
    quantile: float,
    se_multiplier: float,
    atol: float,
    slack: float,
    scenario: str,
    candidate: str,
) -> MPReport:
    c, e = traj.coeffs, traj.ensemble
    points = violations = nontrivial = 0
    worst = 0.0
    min_delta = math.inf
    tols: list[Array] = []
    per_step = []
    for k in range(e.steps):
        t, x, m, i = float(e.times[k]), e.X[k], float(e.mean[k]), int(e.regimes[k])
        vbar, y, z = e.controls[k], traj.Y[k], traj.Z[k]
        b_bar = c.b(t, x, m, vbar, i)
        s_bar = c.sigma(t, x, m, vbar, i)
        f_bar = c.f(t, x, m, y, z, vbar, i)
        fy_bar = c.f_y(t, x, m, y, z, vbar, i)
        fz_bar = c.f_z(t, x, m, y, z, vbar, i)
        count = 0
        for v in grid:
            vv = np.full_like(x, v)
            db = np.broadcast_to(c.b(t, x, m, vv, i) - b_bar, x.shape)
            ds = np.broadcast_to(c.sigma(t, x, m, vv, i) - s_bar, x.shape)
            zs = z + w.shift[k] * ds
            df = c.f(t, x, m, y, zs, vv, i) - f_bar
            ds2 = ds * ds
            delta = (w.p0[k] * db + w.p1[k] * db.mean() + w.q0[k] * ds
                     + 0.5 * w.P0[k] * ds2 + 0.5 * w.P1[k] * ds2.mean() + w.gamma[k] * df)
            fz_v = c.f_z(t, x, m, y, zs, vv, i)
            d_shift = w.gamma[k] * fz_v * ds
            if w.tied:
                var = ((db + d_shift) * w.p0_se[k]) ** 2
            else:
                var = (db * w.p0_se[k]) ** 2 + (d_shift * w.shift_se[k]) ** 2
            var = var + (db.mean() * w.p1_se[k]) ** 2 + (ds * w.q0_se[k]) ** 2
            var = var + (0.5 * ds2 * w.P0_se[k]) ** 2 + (0.5 * ds2.mean() * w.P1_se[k]) ** 2
            var = var + (w.gamma[k] * (c.f_y(t, x, m, y, zs, vv, i) - fy_bar) * w.y_se[k]) ** 2
            var = var + (w.gamma[k] * (fz_v - fz_bar) * w.z_se[k]) ** 2
            tol = np.maximum(se_multiplier * np.sqrt(var), atol)
            bad = delta < -(tol + slack)
            n_bad = int(bad.sum())
            count += n_bad
            points += delta.size
            nontrivial += int(np.sum(vv != vbar))
            tols.append(tol)
            min_delta = min(min_delta, float(delta.min()))
            if n_bad:
                worst = min(worst, float(delta[bad].min()))
        per_step.append(count)
        violations += count
    all_tol = np.concatenate(tols) if tols else np.zeros(1)
    return MPReport(scenario, candidate, points, violations, worst, se_multiplier,
                    float(np.median(all_tol)), float(all_tol.max()), slack, quantile,
                    nontrivial, tuple(per_step), float(min_delta))


def check_mp(
    traj: Trajectory,
    bundle: AdjointBundle,
    grid: ControlSet | Sequence[float] | None = None,
    quantile: float = 0.01,
    se_multiplier: float = 3.0,
    atol: float = 1e-10,
    scenario: str = "",
    candidate: str = "",
) -> MPReport:
    """Fraction of ``(t_k, particle, v)`` points where the H-function drops below its base value.

    A point is a violation when ``H(v) - H(v_bar) < -max(se_multiplier * se, atol)``
    with ``se`` the local standard error.  ``atol`` only absorbs round-off.
    All grid points count, including ``v = v_bar``; ``nontrivial_fraction``
    in the report excludes those.
    """
    return _weighted_check(traj, MPWeights.from_adjoints(traj, bundle), _grid_values(grid, traj),
                           quantile, se_multiplier, atol, 0.0, scenario,
                           candidate or traj.control.label)


def check_mp_lq(
    lq: LQCoefficients,
    traj: Trajectory,
    bundle: AdjointBundle,
    grid: ControlSet | Sequence[float] | None = None,
    quantile: float = 0.01,
    se_multiplier: float = 3.0,
    atol: float = 1e-10,
    p1_tol: float = 1e-8,
    scenario: str = "",
    candidate: str = "",
) -> MPReport:
    """Closed-form LQ inequality on the grid, same pass rule as :func:`check_mp`.

    Evaluates ``[p0(A3 + C4 B3) + B3 q0 + C5](v - v_bar) + p1 A3 mean(v - v_bar)
    + P0 B3^2 (v - v_bar)^2 / 2``.  Raises ``ValueError`` unless
    ``max|P1| <= p1_tol``.
    """
    P1max = float(np.max(np.abs(bundle.second.P1)))
    if P1max > p1_tol:
        raise ValueError(f"LQ form needs P1 = 0, found max|P1| = {P1max:.3g}")
    e = traj.ensemble
    f, s = bundle.first, bundle.second
    values = _grid_values(grid, traj)
    tab = {n: lq.table(n) for n in ("A3", "B3", "C4", "C5")}
    points = violations = nontrivial = 0
    worst, min_delta = 0.0, math.inf
    tols, per_step = [], []
    for k in range(e.steps):
        idx = 0 if lq.n_regimes == 1 else int(e.regimes[k]) - 1
        A3, B3, C4, C5 = (float(tab[n][idx]) for n in ("A3", "B3", "C4", "C5"))
        vbar = e.controls[k]
        lin = f.p0[k] * (A3 + C4 * B3) + B3 * f.q0[k] + C5
        count = 0
        for v in values:
            dv = v - vbar
            delta = lin * dv + f.p1[k] * A3 * dv.mean() + 0.5 * s.P0[k] * B3 ** 2 * dv ** 2
            var = (((A3 + C4 * B3) * dv * f.p0_se[k]) ** 2 + (B3 * dv * f.q0_se[k]) ** 2
                   + (A3 * dv.mean() * f.p1_se[k]) ** 2 + (0.5 * B3 ** 2 * dv ** 2 * s.P0_se[k]) ** 2)
            tol = np.maximum(se_multiplier * np.sqrt(var), atol)
            bad = delta < -tol
            n_bad = int(bad.sum())
            count += n_bad
            points += delta.size
            nontrivial += int(np.sum(dv != 0))
            tols.append(tol)
            min_delta = min(min_delta, float(delta.min()))
            if n_bad:
                worst = min(worst, float(delta[bad].min()))
        per_step.append(count)
        violations += count
    all_tol = np.concatenate(tols)
    return MPReport(scenario, candidate or traj.control.label, points, violations, worst,
                    se_multiplier, float(np.median(all_tol)), float(all_tol.max()), 0.0, quantile,
                    nontrivial, tuple(per_step), float(min_delta))


# ---------------------------------------------------------------------------
# block-control search
# ---------------------------------------------------------------------------


@dataclass
class SearchResult:
    """Block-control search outcome.

    ``table`` maps each evaluated combination to its objective values (one
    per seed) and ``best`` is the minimiser of their mean, ties going to the
    lexicographically smallest combination.
    """

    values: tuple[float, ...]
    blocks: int
    table: dict[tuple[float, ...], tuple[float, ...]]
    best: tuple[float, ...]
    exhaustive: bool
    budget_exceeded: bool
    seeds: tuple[int, ...] = ()

    @property
    def best_value(self) -> float:
        return float(np.mean(self.table[self.best]))

    def mean_table(self) -> dict[tuple[float, ...], float]:
        return {k: float(np.mean(v)) for k, v in self.table.items()}

    def to_csv(self, target: str | Path | None = None) -> str:
        """Rows ``block_1..block_B, value_<seed>..., mean`` in combination order."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        width = len(next(iter(self.table.values()))) if self.table else 0
        labels = [str(s) for s in self.seeds] if len(self.seeds) == width else [str(j) for j in range(width)]
        w.writerow([f"block_{b + 1}" for b in range(self.blocks)]
                   + [f"value_{s}" for s in labels] + ["mean"])
        for combo in sorted(self.table):
            vals = self.table[combo]
            w.writerow([repr(v) for v in combo] + [repr(v) for v in vals] + [repr(float(np.mean(vals)))])
        text = buf.getvalue()
        if target is not None:
            Path(target).write_text(text)
        return text


def _argmin(table: Mapping[tuple[float, ...], tuple[float, ...]]) -> tuple[float, ...]:
    return min(table, key=lambda c: (float(np.mean(table[c])), c))


def block_search(
    objective: Callable[[tuple[float, ...]], tuple[float, ...]],
    values: Sequence[float],
    blocks: int,
    budget: int | None = None,
    exhaustive_limit: int = 100_000,
    seeds: Sequence[int] = (),
) -> SearchResult:
    """Minimise ``mean(objective(combo))`` over ``values ** blocks``.

    Exhaustive when the product space has at most ``exhaustive_limit``
    points, coordinate descent from the smallest combination otherwise.
    At most ``budget`` objective calls are made; hitting the budget returns
    the partial table with ``budget_exceeded`` set.
    """
    vals = tuple(sorted(set(float(v) for v in values)))
    if blocks < 1 or not vals:
        raise ValueError("need at least one block and one control value")
    table: dict[tuple[float, ...], tuple[float, ...]] = {}
    exceeded = False

    def visit(combo: tuple[float, ...]) -> bool:
        nonlocal exceeded
        if combo in table:
            return True
        if budget is not None and len(table) >= budget:
            exceeded = True
            return False
        table[combo] = tuple(float(r) for r in objective(combo))
        return True

    exhaustive = len(vals) ** blocks <= exhaustive_limit
    if exhaustive:
        for combo in itertools.product(vals, repeat=blocks):
            if not visit(combo):
                break
    else:
        current = tuple([vals[0]] * blocks)
        visit(current)
        changed = True
        while changed and not exceeded:
            changed = False
            for b in range(blocks):
                for v in vals:
                    trial = current[:b] + (v,) + current[b + 1:]
                    if not visit(trial):
                        break
                best = _argmin({c: table[c] for c in table
                                if c[:b] == current[:b] and c[b + 1:] == current[b + 1:]})
                if best != current:
                    current, changed = best, True
                if exceeded:
                    break
    best = _argmin(table) if table else tuple([vals[0]] * blocks)
    return SearchResult(vals, blocks, table, best, exhaustive, exceeded, tuple(int(s) for s in seeds))


def lq_brute_force(
    lq: LQCoefficients | CoefficientSet,
    control_set: ControlSet,
    blocks: int,
    generator_matrix: GeneratorMatrix | Array,
    x0: float,
    horizon: float,
    steps: int,
    particles: int,
    seeds: Sequence[int] = (0,),
    budget: int | None = None,
    exhaustive_limit: int = 100_000,
    antithetic: bool = False,
    basis: RegressionBasis | None = None,
) -> SearchResult:
    """Grid search of block controls by Monte Carlo cost under common noise.

    Every combination is costed with :func:`evaluate_cost` at each seed, so
    all combinations share the chain path and Brownian increments of a seed.
    """
    coeffs = lq_to_general(lq) if isinstance(lq, LQCoefficients) else lq

    def objective(combo: tuple[float, ...]) -> tuple[float, ...]:
        model = ControlModel(control_set, BlockPolicy(horizon, combo))
        return tuple(evaluate_cost(coeffs, model, generator_matrix, x0, horizon, steps, particles,
                                   s, basis=basis, antithetic=antithetic).value for s in seeds)

    return block_search(objective, control_set.grid, blocks, budget, exhaustive_limit, seeds)


# ---------------------------------------------------------------------------
# state constraint
# ---------------------------------------------------------------------------


StateFn3 = Callable[[Array, Array, Array], Array]


@dataclass(frozen=True)
class ConstraintFunction:
    """Constraint ``psi(x, x_mean, y)`` with its derivative oracles."""

    psi: StateFn3
    psi_x: StateFn3
    psi_xp: StateFn3
    psi_y: StateFn3
    psi_xx: StateFn3
    label: str = "custom"

    @classmethod
    def quadratic(cls, a_x: float = 0.0, a_xp: float = 0.0, a_y: float = 0.0,
                  target: float = 0.0, curvature: float = 0.0) -> "ConstraintFunction":
        """``a_x x + a_xp x' + a_y y + curvature x^2 / 2 - target``."""
        def full(x, xp, y):
            return np.zeros(np.broadcast(np.asarray(x), np.asarray(xp), np.asarray(y)).shape)

        return cls(
            psi=lambda x, xp, y: a_x * x + a_xp * xp + a_y * y + 0.5 * curvature * x * x - target,
            psi_x=lambda x, xp, y: a_x + curvature * x + full(x, xp, y),
            psi_xp=lambda x, xp, y: a_xp + full(x, xp, y),
            psi_y=lambda x, xp, y: a_y + full(x, xp, y),
            psi_xx=lambda x, xp, y: curvature + full(x, xp, y),
            label=f"{a_x:g}x+{a_xp:g}x'+{a_y:g}y+{curvature:g}x^2/2-{target:g}",
        )

    @classmethod
    def zero(cls) -> "ConstraintFunction":
        return cls.quadratic()

    def expected(self, traj: Trajectory) -> float:
        e = traj.ensemble
        return float(np.mean(self.psi(e.X[-1], e.mean[-1], traj.cost)))

    def expected_y_derivative(self, traj: Trajectory) -> float:
        e = traj.ensemble
        return float(np.mean(self.psi_y(e.X[-1], e.mean[-1], traj.cost)))


@dataclass
class TildeAdjoints:
    """Constraint adjoints ``(p~0, p~1, q~0, q~1)`` and ``(P~0, P~1)``."""

    p0: Array
    p1: Array
    q0: Array
    q1: Array
    P0: Array
    P1: Array
    first: BackwardSolution
    second: BackwardSolution


def solve_tilde_adjoints(
    traj: Trajectory,
    constraint: ConstraintFunction,
    mu: float,
    fields: DerivativeFields | None = None,
    basis: RegressionBasis | None = None,
    terminal: str = "constraint",
) -> TildeAdjoints:
    """Constraint adjoints: drivers built from ``b`` and ``sigma`` derivatives only.

    ``terminal="constraint"`` uses ``mu (psi_x, psi_xp)`` and ``(mu psi_xx, 0)``;
    ``terminal="displayed"`` uses ``(phi_x, phi_xp)`` and ``(phi_xx, 0)``.
    """
    d = fields or DerivativeFields.along(traj)
    e = traj.ensemble
    N = e.particles
    if terminal == "constraint":
        xT, mT, y0 = e.X[-1], e.mean[-1], traj.cost
        t1 = np.column_stack([np.broadcast_to(mu * constraint.psi_x(xT, mT, y0), (N,)),
                              np.broadcast_to(mu * constraint.psi_xp(xT, mT, y0), (N,))])
        t2 = np.column_stack([np.broadcast_to(mu * constraint.psi_xx(xT, mT, y0), (N,)), np.zeros(N)])
    elif terminal == "displayed":
        t1 = np.column_stack([d.phi_x, d.phi_xp])
        t2 = np.column_stack([d.phi_xx, np.zeros(N)])
    else:
        raise ValueError(f"unknown terminal {terminal!r}")
    bhat = d.b_xp_mean

    def first_driver(k, t, y, z):
        p0, p1, q0 = y[:, 0], y[:, 1], z[:, 0]
        g0 = d.b_x[k] * p0 + d.sigma_x[k] * q0
        g1 = d.b_xp[k] * p0 + (d.b_x[k] + bhat[k]) * p1 + d.sigma_xp[k] * q0
        return np.column_stack([g0, g1])

    s1 = solve_bsde(first_driver, t1, e, basis)
    p0, p1, q0 = s1.Y[..., 0], s1.Y[..., 1], s1.Z[..., 0]

    def second_driver(k, t, y, z):
        P0, P1, Q0 = y[:, 0], y[:, 1], z[:, 0]
        a = 2 * d.b_x[k] + d.sigma_x[k] ** 2
        g0 = a * P0 + 2 * d.sigma_x[k] * Q0 + d.b_xx[k] * p0[k] + d.sigma_xx[k] * q0[k]
        g1 = a * P1 + d.b_xx[k] * p1[k]
        return np.column_stack([g0, g1])

    s2 = solve_bsde(second_driver, t2, e, basis)
    return TildeAdjoints(p0, p1, q0, s1.Z[..., 1], s2.Y[..., 0], s2.Y[..., 1], s1, s2)


@dataclass
class ConstraintContext:
    """Constraint data at one penalisation level."""

    constraint: ConstraintFunction
    kappa: float
    lam: float
    mu: float
    tilde: TildeAdjoints
    upsilon: Array
    upsilon0: float

    def __post_init__(self) -> None:
        if abs(self.lam ** 2 + self.mu ** 2 - 1.0) > 1e-10:
            raise ValueError("multipliers must satisfy lam^2 + mu^2 = 1")
        if not np.all(self.upsilon[0] == self.upsilon0):
            raise ValueError("upsilon must start at lam + mu E[psi_y]")


def multipliers(y_gap: float, expected_psi: float, kappa: float) -> tuple[float, float, float]:
    """``(lam, mu, J_kappa)`` from ``Y(0) - Y_bar(0)`` and ``E[psi]``."""
    j = math.hypot(y_gap + kappa, expected_psi)
    if j == 0.0:
        raise ValueError("penalised cost is zero; multipliers are undefined")
    return (y_gap + kappa) / j, expected_psi / j, j


def constrained_weights(traj: Trajectory, bundle: AdjointBundle, ctx: ConstraintContext) -> MPWeights:
    """Weights of the constrained Hamiltonian increment."""
    f, s, t = bundle.first, bundle.second, ctx.tilde
    steps = traj.ensemble.steps
    g = ctx.upsilon[:steps]
    sl = slice(0, steps)
    return MPWeights(
        t.p0[sl] + g * f.p0[sl], t.p1[sl] + g * f.p1[sl], t.q0 + g * f.q0,
        t.P0[sl] + g * s.P0[sl], t.P1[sl] + g * s.P1[sl], g, f.p0[sl],
        np.hypot(t.first.y_se[sl, :, 0], g * f.p0_se[sl]),
        np.hypot(t.first.y_se[sl, :, 1], g * f.p1_se[sl]),
        np.hypot(t.first.z_se[:, :, 0], g * f.q0_se),
        np.hypot(t.second.y_se[sl, :, 0], g * s.P0_se[sl]),
        np.hypot(t.second.y_se[sl, :, 1], g * s.P1_se[sl]),
        f.p0_se[sl], traj.solution.y_se[sl], traj.solution.z_se, tied=False,
    )


@dataclass
class KappaLevel:
    kappa: float
    control: tuple[float, ...]
    j_kappa: float
    lam: float
    mu: float
    expected_psi: float
    report: MPReport

    @property
    def norm_error(self) -> float:
        return abs(self.lam ** 2 + self.mu ** 2 - 1.0)


@dataclass
class ConstrainedReport:
    scenario: str
    candidate: str
    candidate_cost: float
    expected_psi: float
    feasible: bool
    levels: list[KappaLevel]
    lam: float
    mu: float
    converged: bool
    limit_kappa: float | None
    final: MPReport
    terminal: str
    multiplier_tol: float = 1e-2

    @property
    def norm_error(self) -> float:
        return max([abs(self.lam ** 2 + self.mu ** 2 - 1.0)] + [lv.norm_error for lv in self.levels])

    @property
    def passed(self) -> bool:
        return self.converged and self.norm_error <= 1e-10 and self.final.passed

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "candidate": self.candidate,
            "candidate_cost": self.candidate_cost,
            "expected_psi": self.expected_psi,
            "feasible": self.feasible,
            "terminal": self.terminal,
            "levels": [{"kappa": lv.kappa, "control": list(lv.control), "j_kappa": lv.j_kappa,
                        "lambda": lv.lam, "mu": lv.mu, "norm_error": lv.norm_error,
                        "expected_psi": lv.expected_psi,
                        "violation_fraction": lv.report.violation_fraction,
                        "slack": lv.report.slack} for lv in self.levels],
            "lambda": self.lam,
            "mu": self.mu,
            "norm_error": self.norm_error,
            "converged": self.converged,
            "limit_kappa": self.limit_kappa,
            "violation_fraction": self.final.violation_fraction,
            "worst_violation": self.final.worst_violation,
            "tol": self.final.to_dict()["tol"],
            "verdict": self.verdict,
        }


def limit_multipliers(levels: Sequence[KappaLevel], tol: float = 1e-2) -> tuple[float, float, bool, float | None]:
    """Multipliers at the largest ``kappa`` whose value is within ``tol`` of the previous level.

    Levels are ordered by decreasing ``kappa``.  Without such a level the
    smallest ``kappa`` is used and ``converged`` is ``False``.
    """
    ordered = sorted(levels, key=lambda lv: -lv.kappa)
    for prev, cur in zip(ordered, ordered[1:]):
        if max(abs(cur.lam - prev.lam), abs(cur.mu - prev.mu)) < tol:
            return cur.lam, cur.mu, True, cur.kappa
    last = ordered[-1]
    return last.lam, last.mu, False, None


@dataclass(frozen=True)
class SearchSettings:
    """Simulation settings shared by every trajectory of a constrained study."""

    generator_matrix: tuple[tuple[float, ...], ...]
    x0: float
    horizon: float
    steps: int
    particles: int
    seed: int
    blocks: int = 1
    antithetic: bool = True
    initial_regime: int = 1
    budget: int | None = None


def _trajectory(coeffs: CoefficientSet, model: ControlModel, s: SearchSettings,
                basis: RegressionBasis | None) -> Trajectory:
    chain = sample_chain(s.generator_matrix, s.horizon, s.steps, s.seed, s.initial_regime)
    dW = brownian_increments(s.seed, s.steps, s.particles, s.horizon / s.steps, 0, s.antithetic)
    ens = simulate_forward(coeffs, model, chain, s.particles, s.seed, s.x0, dW=dW)
    return solve_state(coeffs, ens, model, basis)


def _constrained_check(traj: Trajectory, constraint: ConstraintFunction, lam: float, mu: float,
                       kappa: float, grid: Array, quantile: float, se_multiplier: float,
                       atol: float, slack: float, basis: RegressionBasis | None, terminal: str,
                       scenario: str, candidate: str) -> MPReport:
    bundle = solve_adjoints(traj, basis)
    tilde = solve_tilde_adjoints(traj, constraint, mu, bundle.fields, basis, terminal)
    ups0 = lam + mu * constraint.expected_y_derivative(traj)
    ups = ups0 * solve_gamma(traj, bundle.fields)
    ctx = ConstraintContext(constraint, kappa, lam, mu, tilde, ups, ups0)
    return _weighted_check(traj, constrained_weights(traj, bundle, ctx), grid, quantile,
                           se_multiplier, atol, slack, scenario, candidate)


def constrained_verify(
    coeffs: CoefficientSet,
    constraint: ConstraintFunction,
    candidate: ControlModel,
    kappas: Sequence[float],
    settings: SearchSettings,
    feasibility_tol: float = 1e-2,
    quantile: float = 0.01,
    se_multiplier: float = 3.0,
    atol: float = 1e-10,
    multiplier_tol: float = 1e-2,
    basis: RegressionBasis | None = None,
    terminal: str = "constraint",
    scenario: str = "",
) -> ConstrainedReport:
    """Penalised search, multipliers and the constrained Hamiltonian inequality.

    For each ``kappa`` the block control minimising
    ``J_kappa = hypot(Y(0) - Y_cand(0) + kappa, E[psi])`` is found on the
    control grid, the multipliers are normalised from it and the inequality
    is checked along that control with slack ``sqrt(kappa)``.  The final
    check uses the limit multipliers along ``candidate`` with no slack.
    """
    control_set = candidate.control_set
    grid = control_set.grid
    base = _trajectory(coeffs, candidate, settings, basis)
    y_bar = base.cost
    psi_bar = constraint.expected(base)
    cache: dict[tuple[float, ...], Trajectory] = {}

    def traj_for(combo: tuple[float, ...]) -> Trajectory:
        if combo not in cache:
            model = ControlModel(control_set, BlockPolicy(settings.horizon, combo), f"block{combo}")
            cache[combo] = _trajectory(coeffs, model, settings, basis)
        return cache[combo]

    levels = []
    for kappa in sorted(kappas, reverse=True):
        def objective(combo, kappa=kappa):
            tr = traj_for(combo)
            return (math.hypot(tr.cost - y_bar + kappa, constraint.expected(tr)),)

        found = block_search(objective, grid, settings.blocks, settings.budget)
        tr = traj_for(found.best)
        psi = constraint.expected(tr)
        lam, mu, j = multipliers(tr.cost - y_bar, psi, kappa)
        rep = _constrained_check(tr, constraint, lam, mu, kappa, grid, quantile, se_multiplier, atol,
                                 math.sqrt(kappa), basis, terminal, scenario, f"kappa={kappa:g}")
        levels.append(KappaLevel(float(kappa), found.best, j, lam, mu, psi, rep))
    lam, mu, converged, at = limit_multipliers(levels, multiplier_tol)
    final = _constrained_check(base, constraint, lam, mu, 0.0, grid, quantile, se_multiplier, atol,
                               0.0, basis, terminal, scenario, candidate.label)
    return ConstrainedReport(scenario, candidate.label, y_bar, psi_bar,
                             abs(psi_bar) <= feasibility_tol, levels, lam, mu, converged, at, final,
                             terminal, multiplier_tol)
