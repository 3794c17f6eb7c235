"""Least-squares regression solver for backward SDEs on a particle ensemble.

The scheme, for ``dY = -F dt + Z dW`` on a uniform grid, is

    Z_k = slope on dW_k in the regression of Y_{k+1} on (features, dW_k, features * dW_k)
    Y_k = Proj_k[Y_{k+1} - Z_k dW_k + F(t_k, Y_k, Z_k) dt]

with a few Picard sweeps for the implicit ``Y_k``.  ``Proj_k`` is a ridge
least-squares projection on features available at step ``k``.  The joint
slope estimates ``E[Y_{k+1} dW_k | F_k] / dt`` without the ``dW**2`` noise of
the plain product estimator (still available as ``z_method="product"``), and
subtracting ``Z_k dW_k`` in the ``Y`` update acts as a control variate.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
from numpy.typing import NDArray

from .chain import ChainPath, GeneratorMatrix, sample_chain
from .errors import NumericalAbort
from .forward import ParticleEnsemble, brownian_increments, simulate_forward
from .rng import generator
from .scenario import CoefficientSet, ControlModel

Array = NDArray[np.float64]
Driver = Callable[[int, float, Array, Array], Array]


# ---------------------------------------------------------------------------
# bases
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegressionBasis:
    """Polynomial features of the particle state at one step.

    Columns: ``X^1..X^degree``, ``mean^1..mean^mean_degree``, ``X*mean`` and a
    one-hot regime indicator (first regime dropped).  An intercept is always
    implicit.  Columns that are constant across particles are removed by the
    projector, so mean and regime columns only matter when particles do not
    share a chain path.
    """

    degree: int = 3
    mean_degree: int = 2
    interaction: bool = True
    regime_intercepts: bool = True
    ridge: float = 1e-8
    max_condition: float = 1e12

    def design(self, ensemble: ParticleEnsemble, k: int) -> Array:
        x = ensemble.X[k]
        n = x.size
        cols = [x ** d for d in range(1, self.degree + 1)]
        m = np.full(n, ensemble.mean[k])
        cols += [m ** d for d in range(1, self.mean_degree + 1)]
        if self.interaction:
            cols.append(x * m)
        if self.regime_intercepts:
            size = int(max(ensemble.chain.states.max(), ensemble.regimes[k]))
            for r in range(2, size + 1):
                cols.append(np.full(n, float(ensemble.regimes[k] == r)))
        return np.column_stack(cols) if cols else np.empty((n, 0))

    def describe(self) -> str:
        return (f"poly(x,{self.degree})+poly(mean,{self.mean_degree})"
                f"{'+x*mean' if self.interaction else ''}"
                f"{'+regime' if self.regime_intercepts else ''};ridge={self.ridge:g}")


@dataclass(frozen=True)
class JointPolynomialBasis:
    """Monomials up to total ``degree`` of several per-step factor arrays.

    ``factors`` are arrays of shape ``(steps + 1, N)``, for instance the base
    state together with variational processes.  Solving related BSDEs on one
    shared basis makes their regression errors cancel in differences.
    """

    factors: tuple[Array, ...]
    degree: int = 3
    ridge: float = 1e-8
    max_condition: float = 1e12
    names: tuple[str, ...] = ()

    def design(self, ensemble: ParticleEnsemble, k: int) -> Array:
        vals = [np.asarray(f[k]) for f in self.factors]
        n = vals[0].size
        cols = []
        for total in range(1, self.degree + 1):
            for combo in itertools.combinations_with_replacement(range(len(vals)), total):
                col = np.ones(n)
                for j in combo:
                    col = col * vals[j]
                cols.append(col)
        return np.column_stack(cols)

    def describe(self) -> str:
        label = ",".join(self.names) if self.names else f"{len(self.factors)} factors"
        return f"joint-poly({label};{self.degree});ridge={self.ridge:g}"


class Projector:
    """Ridge least-squares projection onto the span of a design matrix.

    Columns are standardised, columns that are constant or collinear (pivoted
    QR) are dropped, and the intercept is fitted without penalty by
    centring.  One factorisation serves any number of right-hand sides.
    """

    def __init__(self, design: Array, ridge: float = 1e-8, step: int | None = None,
                 max_condition: float = 1e12, rank_tol: float = 1e-9):
        A = np.asarray(design, dtype=float)
        if A.ndim == 1:
            A = A[:, None]
        self.n = A.shape[0]
        self.step = step
        if not np.all(np.isfinite(A)):
            raise NumericalAbort("non-finite regression features", step=step, stage="regression")
        if A.shape[1]:
            mu = A.mean(axis=0)
            sd = A.std(axis=0)
            keep = sd > 1e-12 * (1.0 + np.abs(mu))
            A = (A[:, keep] - mu[keep]) / sd[keep]
        if A.shape[1]:
            _, r, piv = sla.qr(A, mode="economic", pivoting=True)
            diag = np.abs(np.diag(r))
            rank = int(np.sum(diag > rank_tol * diag[0])) if diag.size else 0
            A = A[:, np.sort(piv[:rank])]
        self.C = A
        self.rank = A.shape[1]
        if self.rank:
            G = A.T @ A
            G[np.diag_indices_from(G)] += ridge * np.trace(G) / self.rank
            self.condition = float(np.linalg.cond(G))
            if not np.isfinite(self.condition) or self.condition > max_condition:
                raise NumericalAbort(f"regression condition number {self.condition:.3g} too large",
                                     step=step, stage="regression")
            self._chol = sla.cho_factor(G)
            self.leverage = 1.0 / self.n + np.sum(A * sla.cho_solve(self._chol, A.T).T, axis=1)
        else:
            self.condition = 1.0
            self._chol = None
            self.leverage = np.full(self.n, 1.0 / self.n)

    def fit(self, target: Array) -> Array:
        """Fitted values with the same shape as ``target`` (``(N,)`` or ``(N, m)``)."""
        Tg = np.asarray(target, dtype=float)
        flat = Tg.reshape(self.n, -1)
        out = np.empty_like(flat)
        const = np.ptp(flat, axis=0) == 0.0
        out[:, const] = flat[0, const]
        if np.any(~const):
            sub = flat[:, ~const]
            mu = sub.mean(axis=0)
            fitted = np.broadcast_to(mu, sub.shape).copy()
            if self.rank:
                coef = sla.cho_solve(self._chol, self.C.T @ (sub - mu))
                fitted += self.C @ coef
            out[:, ~const] = fitted
        return out.reshape(Tg.shape)

    def slope(self, target: Array, increment: Array, ridge: float = 1e-8) -> tuple[Array, Array]:
        """Per-particle coefficient of ``increment`` in a joint regression.

        Fits ``target ~ a(features) + s(features) * increment`` with ``s``
        affine in the reduced standardised features and returns ``s`` at
        every particle together with its standard error.  For ``increment``
        a Brownian increment this estimates ``E[target dW | features] / dt``
        without the ``dW**2`` noise of the direct product estimator.
        """
        Tg = np.asarray(target, dtype=float)
        flat = Tg.reshape(self.n, -1)
        dw = np.asarray(increment, dtype=float)
        E = np.column_stack([self.C, dw, self.C * dw[:, None]])
        E = E - E.mean(axis=0)
        G = E.T @ E
        G[np.diag_indices_from(G)] += ridge * np.trace(G) / E.shape[1]
        chol = sla.cho_factor(G)
        mu = flat.mean(axis=0)
        coef = sla.cho_solve(chol, E.T @ (flat - mu))
        r = self.rank
        U = np.column_stack([np.zeros((self.n, r)), np.ones(self.n), self.C])
        s = U[:, r:] @ coef[r:]
        res = flat - mu - E @ coef
        dof = max(self.n - E.shape[1] - 1, 1)
        sd = np.sqrt(np.sum(res * res, axis=0) / dof)
        lev = np.sum(U * sla.cho_solve(chol, U.T).T, axis=1)
        se = np.sqrt(np.maximum(lev, 0.0))[:, None] * sd[None, :]
        const = np.ptp(flat, axis=0) == 0.0
        s[:, const] = 0.0
        se[:, const] = 0.0
        return s.reshape(Tg.shape), se.reshape(Tg.shape)

    def standard_error(self, target: Array, fitted: Array) -> Array:
        """Per-particle standard error of the fitted conditional mean."""
        res = (np.asarray(target) - fitted).reshape(self.n, -1)
        dof = max(self.n - self.rank - 1, 1)
        sd = np.sqrt(np.sum(res * res, axis=0) / dof)
        se = np.sqrt(self.leverage)[:, None] * sd[None, :]
        return se.reshape(np.shape(target))


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------


@dataclass
class BackwardSolution:
    """Grid solution of a (possibly vector) backward equation.

    ``Y`` has shape ``(steps + 1, N)`` or ``(steps + 1, N, m)``; ``Z`` has
    one fewer time row.  ``y_se``/``z_se`` are per-particle regression
    standard errors, ``condition`` the per-step condition numbers and
    ``residual_mean``/``residual_se`` the cross-particle mean of the
    one-step martingale residual with its standard error.
    """

    Y: Array
    Z: Array
    y_se: Array
    z_se: Array
    condition: Array
    residual_mean: Array
    residual_se: Array
    basis: str
    times: Array

    @property
    def steps(self) -> int:
        return self.Z.shape[0]

    @property
    def initial_value(self) -> float | Array:
        v = self.Y[0].mean(axis=0)
        return float(v) if np.ndim(v) == 0 else v

    @property
    def initial_se(self) -> float | Array:
        v = self.y_se[0].mean(axis=0)
        return float(v) if np.ndim(v) == 0 else v

    def component(self, j: int) -> tuple[Array, Array]:
        if self.Y.ndim == 2:
            if j != 0:
                raise IndexError("scalar solution has a single component")
            return self.Y, self.Z
        return self.Y[..., j], self.Z[..., j]

    def summary_csv(self, target: str | Path | None = None, component: int = 0) -> str:
        """Rows ``t_k, mean Y, std Y, mean Z, std Z, condition``."""
        Y, Z = self.component(component)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_k", "mean_Y", "std_Y", "mean_Z", "std_Z", "condition"])
        for k, t in enumerate(self.times):
            row = [repr(float(t)), repr(float(Y[k].mean())), repr(float(Y[k].std(ddof=1)))]
            if k < self.steps:
                row += [repr(float(Z[k].mean())), repr(float(Z[k].std(ddof=1))),
                        repr(float(self.condition[k]))]
            else:
                row += ["", "", ""]
            w.writerow(row)
        text = buf.getvalue()
        if target is not None:
            Path(target).write_text(text)
        return text


def solve_bsde(
    driver: Driver,
    terminal: Array,
    ensemble: ParticleEnsemble,
    basis: RegressionBasis | JointPolynomialBasis | None = None,
    picard: int = 2,
    projectors: Sequence[Projector] | None = None,
    z_method: str = "joint",
) -> BackwardSolution:
    """Backward regression solve of ``dY = -driver dt + Z dW``, ``Y_T = terminal``.

    Parameters
    ----------
    driver : callable
        ``driver(k, t_k, Y_k, Z_k)`` returning an array shaped like ``Y_k``.
    terminal : ndarray, shape (N,) or (N, m)
    projectors : sequence of Projector, optional
        Pre-built per-step projectors (index ``k``) to reuse across solves.
    z_method : {"joint", "product"}
        ``"joint"`` reads ``Z`` off the increment slope of a joint regression
        (:meth:`Projector.slope`); ``"product"`` regresses
        ``(Y_{k+1} - Proj Y_{k+1}) dW / dt`` directly.
    """
    if z_method not in ("joint", "product"):
        raise ValueError(f"unknown z_method {z_method!r}")
    basis = basis or RegressionBasis()
    terminal = np.asarray(terminal, dtype=float)
    N, steps, dt = ensemble.particles, ensemble.steps, ensemble.dt
    if terminal.shape[0] != N or terminal.ndim not in (1, 2):
        raise ValueError(f"terminal must have shape (N,) or (N, m) with N={N}")
    if not np.all(np.isfinite(terminal)):
        raise NumericalAbort("non-finite terminal value", step=steps, stage="bsde")
    shape = terminal.shape
    Y = np.empty((steps + 1,) + shape)
    Z = np.empty((steps,) + shape)
    y_se = np.zeros_like(Y)
    z_se = np.zeros_like(Z)
    cond = np.empty(steps)
    res_mean = np.empty((steps,) + shape[1:])
    res_se = np.empty((steps,) + shape[1:])
    Y[steps] = terminal
    times = ensemble.times
    for k in range(steps - 1, -1, -1):
        proj = projectors[k] if projectors is not None else Projector(
            basis.design(ensemble, k), basis.ridge, step=k, max_condition=basis.max_condition)
        cond[k] = proj.condition
        dw = ensemble.dW[k] if terminal.ndim == 1 else ensemble.dW[k][:, None]
        nxt = Y[k + 1]
        ey = proj.fit(nxt)
        if z_method == "joint":
            z, z_se[k] = proj.slope(nxt, ensemble.dW[k], basis.ridge)
        else:
            ztarget = (nxt - ey) * dw / dt
            z = proj.fit(ztarget)
            z_se[k] = proj.standard_error(ztarget, z)
        y = ey
        ytarget = nxt
        for _ in range(max(picard, 1)):
            ytarget = nxt - z * dw + np.asarray(driver(k, times[k], y, z)) * dt
            y = proj.fit(ytarget)
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
            raise NumericalAbort("non-finite backward value", step=k, stage="bsde")
        Y[k], Z[k] = y, z
        se = proj.standard_error(ytarget, y)
        y_se[k] = np.sqrt(se * se + y_se[k + 1] ** 2)
        r = nxt - y + np.asarray(driver(k, times[k], y, z)) * dt - z * dw
        res_mean[k] = r.mean(axis=0)
        res_se[k] = r.std(axis=0, ddof=1) / np.sqrt(N)
    return BackwardSolution(Y, Z, y_se, z_se, cond, res_mean, res_se, basis.describe(), times)


def build_projectors(ensemble: ParticleEnsemble, basis) -> list[Projector]:
    """Per-step projectors for reuse across several solves on one basis."""
    return [Projector(basis.design(ensemble, k), basis.ridge, step=k, max_condition=basis.max_condition)
            for k in range(ensemble.steps)]


# ---------------------------------------------------------------------------
# state equation and cost
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    """Forward ensemble plus the solved cost equation for one control."""

    coeffs: CoefficientSet
    control: ControlModel
    ensemble: ParticleEnsemble
    solution: BackwardSolution

    @property
    def Y(self) -> Array:
        return self.solution.Y

    @property
    def Z(self) -> Array:
        return self.solution.Z

    @property
    def cost(self) -> float:
        return float(self.solution.initial_value)


def cost_driver(coeffs: CoefficientSet, ensemble: ParticleEnsemble) -> Driver:
    X, m, V, reg = ensemble.X, ensemble.mean, ensemble.controls, ensemble.regimes

    def driver(k: int, t: float, y: Array, z: Array) -> Array:
        return coeffs.f(t, X[k], m[k], y, z, V[k], int(reg[k]))

    return driver


def cost_terminal(coeffs: CoefficientSet, ensemble: ParticleEnsemble) -> Array:
    return np.broadcast_to(
        coeffs.phi(ensemble.X[-1], ensemble.mean[-1], ensemble.terminal_regime),
        (ensemble.particles,)).astype(float)


def solve_state(
    coeffs: CoefficientSet,
    ensemble: ParticleEnsemble,
    control: ControlModel,
    basis: RegressionBasis | JointPolynomialBasis | None = None,
    picard: int = 2,
) -> Trajectory:
    """Solve the cost equation along an already simulated ensemble."""
    sol = solve_bsde(cost_driver(coeffs, ensemble), cost_terminal(coeffs, ensemble),
                     ensemble, basis, picard)
    return Trajectory(coeffs, control, ensemble, sol)


@dataclass(frozen=True)
class CostEstimate:
    value: float
    se: float
    per_scenario: tuple[float, ...]


def evaluate_cost(
    coeffs: CoefficientSet,
    control: ControlModel,
    generator_matrix: GeneratorMatrix | Array,
    x0: float,
    horizon: float,
    steps: int,
    particles: int,
    seed: int,
    scenarios: int = 1,
    initial_regime: int = 1,
    basis: RegressionBasis | None = None,
    antithetic: bool = False,
) -> CostEstimate:
    """``J(v) = Y(0)`` averaged over ``scenarios`` independent chain paths.

    Scenario ``j`` uses chain stream ``j`` and Brownian stream ``j`` of
    ``seed``, so different controls evaluated with one seed share noise.
    """
    vals, ses = [], []
    for j in range(scenarios):
        chain = sample_chain(generator_matrix, horizon, steps, seed, initial_regime, index=j)
        dW = brownian_increments(seed, steps, particles, horizon / steps, j, antithetic)
        ens = simulate_forward(coeffs, control, chain, particles, seed, x0, dW=dW)
        traj = solve_state(coeffs, ens, control, basis)
        vals.append(traj.cost)
        ses.append(traj.solution.initial_se)
    vals_a = np.array(vals)
    if scenarios > 1:
        se = float(np.sqrt(vals_a.var(ddof=1) / scenarios + np.mean(np.square(ses)) / scenarios))
    else:
        se = float(ses[0])
    return CostEstimate(float(vals_a.mean()), se, tuple(float(v) for v in vals))


@dataclass(frozen=True)
class ClosedFormCheck:
    """Relative RMS errors of the solver on a linear problem with known solution."""

    y_error: float
    z_error: float
    rate: float
    particles: int
    steps: int


def closed_form_check(rate: float = 0.5, particles: int = 10_000, steps: int = 100, horizon: float = 1.0,
                      seed: int = 7, basis: RegressionBasis | None = None) -> ClosedFormCheck:
    """Solve ``dY = -rate Y dt + Z dW``, ``Y_T = W_T`` against ``Y = e^{rate(T-t)} W_t``, ``Z = e^{rate(T-t)}``."""
    chain = ChainPath(np.array([]), np.array([1], dtype=np.int64), float(horizon), int(steps))
    dt = horizon / steps
    dW = brownian_increments(seed, steps, particles, dt)
    W = np.vstack([np.zeros((1, particles)), np.cumsum(dW, axis=0)])
    ens = ParticleEnsemble(W, W.mean(axis=1), dW, np.zeros((steps, particles)), chain, 0.0, seed)
    sol = solve_bsde(lambda k, t, y, z: rate * y, W[-1], ens, basis)
    growth = np.exp(rate * (horizon - ens.times))
    y_true = growth[:, None] * W
    z_true = np.broadcast_to(growth[:-1, None], sol.Z.shape)

    def rel(a, b):
        return float(np.sqrt(np.mean((a - b) ** 2) / np.mean(b ** 2)))

    return ClosedFormCheck(rel(sol.Y, y_true), rel(sol.Z, z_true), rate, particles, steps)


@dataclass(frozen=True)
class NoiseFloor:
    """Regression noise of the solver on a problem whose exact solution is zero."""

    y_sup: float
    z_norm: float
    scale: float


def regression_noise_floor(
    ensemble: ParticleEnsemble,
    basis: RegressionBasis | None = None,
    scale: float = 1.0,
    index: int = 0,
) -> NoiseFloor:
    """Solve ``dY = Z dW`` with terminal ``scale * xi``, ``xi`` independent standard normal.

    ``xi`` comes from the ``"auxiliary"`` stream of the ensemble seed and is
    independent of the forward noise, so the exact solution is ``Y = Z = 0``
    before maturity.  Returns ``max_{k<steps} max_i |Y_k|`` and
    ``sqrt(mean_i sum_k Z_k^2 dt)``.
    """
    xi = generator(ensemble.seed, "auxiliary", index).standard_normal(ensemble.particles)
    sol = solve_bsde(lambda k, t, y, z: np.zeros_like(y), scale * xi, ensemble, basis)
    y_sup = float(np.max(np.abs(sol.Y[:-1])))
    z_norm = float(np.sqrt(np.mean(np.sum(sol.Z ** 2, axis=0) * ensemble.dt)))
    return NoiseFloor(y_sup, z_norm, float(scale))


# ---------------------------------------------------------------------------
# stability
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StabilityReport:
    """Difference norms of two solutions against the size of the data change."""

    y0_shift: float
    gamma_norm: float
    data_norm: float

    @property
    def ratio(self) -> float:
        if self.data_norm == 0.0:
            return 0.0 if self.gamma_norm == 0.0 else float("inf")
        return self.gamma_norm / self.data_norm


def stability_probe(
    first: tuple[Driver, Array],
    second: tuple[Driver, Array],
    ensemble: ParticleEnsemble,
    basis: RegressionBasis | None = None,
    gamma: float = 0.0,
) -> StabilityReport:
    """Compare two (driver, terminal) pairs solved on one ensemble.

    The solution distance is ``E[sup_k e^{gamma t}|dY|^2 + sum_k e^{gamma t}|dZ|^2 dt]``
    (square-rooted) and the data distance combines the terminal difference
    with the driver difference evaluated along the first solution.
    """
    basis = basis or RegressionBasis()
    projs = build_projectors(ensemble, basis)
    s1 = solve_bsde(first[0], first[1], ensemble, basis, projectors=projs)
    s2 = solve_bsde(second[0], second[1], ensemble, basis, projectors=projs)
    dt = ensemble.dt
    w = np.exp(gamma * ensemble.times)
    dY = (s1.Y - s2.Y).reshape(ensemble.steps + 1, ensemble.particles, -1)
    dZ = (s1.Z - s2.Z).reshape(ensemble.steps, ensemble.particles, -1)
    sup_y = np.max(w[:, None] * np.sum(dY ** 2, axis=2), axis=0)
    int_z = np.sum(w[:-1, None] * np.sum(dZ ** 2, axis=2), axis=0) * dt
    sol_norm = float(np.sqrt(np.mean(sup_y + int_z)))
    d_term = np.sum((np.asarray(first[1]) - np.asarray(second[1])).reshape(ensemble.particles, -1) ** 2, axis=1)
    d_drv = np.zeros(ensemble.particles)
    for k in range(ensemble.steps):
        a = np.asarray(first[0](k, ensemble.times[k], s1.Y[k], s1.Z[k]))
        b = np.asarray(second[0](k, ensemble.times[k], s1.Y[k], s1.Z[k]))
        d_drv += w[k] * np.sqrt(np.sum((a - b).reshape(ensemble.particles, -1) ** 2, axis=1)) * dt
    data_norm = float(np.sqrt(np.mean(w[-1] * d_term + d_drv ** 2)))
    shift = float(np.max(np.abs(np.atleast_1d(s1.initial_value - s2.initial_value))))
    return StabilityReport(shift, sol_norm, data_norm)
