"""First- and second-order adjoint equations, the spike expansion BSDE and Gamma.

All equations are solved along a :class:`~regime_mp.bsde.Trajectory` with
the regression solver.  Coefficient derivatives are evaluated once per
trajectory and cached in :class:`DerivativeFields`.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .bsde import (BackwardSolution, NoiseFloor, RegressionBasis, Trajectory, build_projectors,
                   regression_noise_floor, solve_bsde)

Array = NDArray[np.float64]


@dataclass
class DerivativeFields:
    """Coefficient derivatives along the base trajectory.

    Arrays indexed by step ``k = 0..steps-1`` have shape ``(steps, N)``;
    ``f_hess`` has shape ``(steps, N, 4, 4)``.  Terminal derivatives of the
    cost have shape ``(N,)``.
    """

    b_x: Array
    b_xp: Array
    b_xx: Array
    sigma_x: Array
    sigma_xp: Array
    sigma_xx: Array
    f_x: Array
    f_xp: Array
    f_y: Array
    f_z: Array
    f_hess: Array
    phi_x: Array
    phi_xp: Array
    phi_xx: Array

    @property
    def b_xp_mean(self) -> Array:
        return self.b_xp.mean(axis=1)

    @classmethod
    def along(cls, traj: Trajectory) -> "DerivativeFields":
        c, e = traj.coeffs, traj.ensemble
        steps, N = e.steps, e.particles
        out = {name: np.empty((steps, N)) for name in
               ("b_x", "b_xp", "b_xx", "sigma_x", "sigma_xp", "sigma_xx",
                "f_x", "f_xp", "f_y", "f_z")}
        hess = np.empty((steps, N, 4, 4))
        Y, Z = traj.Y, traj.Z
        for k in range(steps):
            t, x, m, v, i = e.times[k], e.X[k], e.mean[k], e.controls[k], int(e.regimes[k])
            for name in ("b_x", "b_xp", "b_xx", "sigma_x", "sigma_xp", "sigma_xx"):
                out[name][k] = getattr(c, name)(t, x, m, v, i)
            for name in ("f_x", "f_xp", "f_y", "f_z"):
                out[name][k] = getattr(c, name)(t, x, m, Y[k], Z[k], v, i)
            hess[k] = np.broadcast_to(c.f_hess(t, x, m, Y[k], Z[k], v, i), (N, 4, 4))
        xT, mT, iT = e.X[-1], e.mean[-1], e.terminal_regime
        term = {name: np.broadcast_to(getattr(c, name)(xT, mT, iT), (N,)).astype(float)
                for name in ("phi_x", "phi_xp", "phi_xx")}
        return cls(f_hess=hess, **out, **term)


@dataclass
class FirstOrderAdjoint:
    p0: Array
    p1: Array
    q0: Array
    q1: Array
    solution: BackwardSolution

    @property
    def p0_se(self) -> Array:
        return self.solution.y_se[..., 0]

    @property
    def p1_se(self) -> Array:
        return self.solution.y_se[..., 1]

    @property
    def q0_se(self) -> Array:
        return self.solution.z_se[..., 0]


@dataclass
class SecondOrderAdjoint:
    P0: Array
    P1: Array
    Q0: Array
    Q1: Array
    solution: BackwardSolution

    @property
    def P0_se(self) -> Array:
        return self.solution.y_se[..., 0]

    @property
    def P1_se(self) -> Array:
        return self.solution.y_se[..., 1]


@dataclass
class ExpansionProcesses:
    """Auxiliary pair ``(Ytil, Ztil)``, Gamma and the spike integrand.

    ``integrand`` (shape ``(steps, N)``) is the bracket multiplying the
    window indicator in the auxiliary driver; it is zero outside the window.
    """

    Ytil: Array
    Ztil: Array
    gamma: Array
    integrand: Array
    solution: BackwardSolution | None

    @property
    def initial_value(self) -> float:
        return float(self.Ytil[0].mean())


def clip_tails(values: Array, quantile: float = 0.999) -> Array:
    """Clip each row to its ``[1 - quantile, quantile]`` empirical range."""
    lo = np.quantile(values, 1.0 - quantile, axis=-1, keepdims=True)
    hi = np.quantile(values, quantile, axis=-1, keepdims=True)
    return np.clip(values, lo, hi)


def solve_first_order_adjoint(
    traj: Trajectory,
    fields: DerivativeFields | None = None,
    basis: RegressionBasis | None = None,
    picard: int = 2,
) -> FirstOrderAdjoint:
    """Two-dimensional linear adjoint ``(p0, p1)`` with terminal ``(phi_x, phi_xp)``."""
    d = fields or DerivativeFields.along(traj)
    bhat = d.b_xp_mean

    def driver(k, t, y, z):
        p0, p1, q0, q1 = y[:, 0], y[:, 1], z[:, 0], z[:, 1]
        g0 = ((d.b_x[k] + d.f_y[k] + d.f_z[k] * d.sigma_x[k]) * p0
              + (d.sigma_x[k] + d.f_z[k]) * q0 + d.f_x[k])
        g1 = ((d.b_xp[k] + d.f_z[k] * d.sigma_xp[k]) * p0
              + (d.b_x[k] + bhat[k] + d.f_y[k]) * p1
              + d.sigma_xp[k] * q0 + d.f_z[k] * q1 + d.f_xp[k])
        return np.column_stack([g0, g1])

    terminal = np.column_stack([d.phi_x, d.phi_xp])
    sol = solve_bsde(driver, terminal, traj.ensemble, basis, picard)
    return FirstOrderAdjoint(sol.Y[..., 0], sol.Y[..., 1], sol.Z[..., 0], sol.Z[..., 1], sol)


def hessian_form(first: FirstOrderAdjoint, d: DerivativeFields, k: int, q0: Array | None = None) -> Array:
    """``g^T D2_xyz f g`` with ``g = [1, p0, p0 sigma_x + q0]`` at step ``k``."""
    p0 = first.p0[k]
    q = first.q0[k] if q0 is None else q0
    g = np.stack([np.ones_like(p0), p0, p0 * d.sigma_x[k] + q], axis=-1)
    keep = np.array([0, 2, 3])
    H = d.f_hess[k][:, keep[:, None], keep[None, :]]
    return np.einsum("ni,nij,nj->n", g, H, g)


def solve_second_order_adjoint(
    traj: Trajectory,
    first: FirstOrderAdjoint,
    fields: DerivativeFields | None = None,
    basis: RegressionBasis | None = None,
    picard: int = 2,
    clip_q0: bool = False,
) -> SecondOrderAdjoint:
    """Two-dimensional linear adjoint ``(P0, P1)`` with terminal ``(phi_xx, 0)``.

    ``clip_q0`` clips ``q0`` at its 99.9th percentiles inside the Hessian
    term, as a diagnostic against noisy regression estimates.
    """
    d = fields or DerivativeFields.along(traj)
    q0 = clip_tails(first.q0) if clip_q0 else first.q0
    form = np.stack([hessian_form(first, d, k, q0[k]) for k in range(traj.ensemble.steps)])

    def driver(k, t, y, z):
        P0, P1, Q0, Q1 = y[:, 0], y[:, 1], z[:, 0], z[:, 1]
        bx, sx, fy, fz = d.b_x[k], d.sigma_x[k], d.f_y[k], d.f_z[k]
        g0 = ((fy + 2 * fz * sx + 2 * bx + sx * sx) * P0 + (2 * sx + fz) * Q0
              + (d.b_xx[k] + fz * d.sigma_xx[k]) * first.p0[k] + d.sigma_xx[k] * q0[k] + form[k])
        g1 = (fy + 2 * bx + sx * sx) * P1 + fz * Q1 + d.b_xx[k] * first.p1[k]
        return np.column_stack([g0, g1])

    terminal = np.column_stack([d.phi_xx, np.zeros(traj.ensemble.particles)])
    sol = solve_bsde(driver, terminal, traj.ensemble, basis, picard)
    return SecondOrderAdjoint(sol.Y[..., 0], sol.Y[..., 1], sol.Z[..., 0], sol.Z[..., 1], sol)


@dataclass
class SpikeDeltas:
    """Control differences along the base trajectory, shape ``(steps, N)``.

    ``alt`` holds the alternative control values evaluated along the base
    state; ``mask`` the window indicator per step.
    """

    alt: Array
    mask: NDArray[np.bool_]
    db: Array
    dsigma: Array
    db_x: Array
    dsigma_x: Array

    @property
    def active(self) -> Array:
        return self.mask[:, None].astype(float)

    @property
    def db_mean(self) -> Array:
        return self.db.mean(axis=1)

    @property
    def dsigma_sq_mean(self) -> Array:
        return (self.dsigma ** 2).mean(axis=1)

    @classmethod
    def along(cls, traj: Trajectory, alt_values: Array, mask: NDArray[np.bool_]) -> "SpikeDeltas":
        c, e = traj.coeffs, traj.ensemble
        shape = (e.steps, e.particles)
        out = {n: np.zeros(shape) for n in ("db", "dsigma", "db_x", "dsigma_x")}
        for k in range(e.steps):
            t, x, m, vb, i = e.times[k], e.X[k], e.mean[k], e.controls[k], int(e.regimes[k])
            v = alt_values[k]
            out["db"][k] = c.b(t, x, m, v, i) - c.b(t, x, m, vb, i)
            out["dsigma"][k] = c.sigma(t, x, m, v, i) - c.sigma(t, x, m, vb, i)
            out["db_x"][k] = c.b_x(t, x, m, v, i) - c.b_x(t, x, m, vb, i)
            out["dsigma_x"][k] = c.sigma_x(t, x, m, v, i) - c.sigma_x(t, x, m, vb, i)
        return cls(alt=np.asarray(alt_values, dtype=float), mask=np.asarray(mask, dtype=bool), **out)


def shifted_generator_difference(traj: Trajectory, first: FirstOrderAdjoint, deltas: SpikeDeltas) -> Array:
    """``f(.., Zbar + p0 dsigma, v) - f(.., Zbar, vbar)`` along the base trajectory."""
    c, e = traj.coeffs, traj.ensemble
    out = np.zeros((e.steps, e.particles))
    for k in range(e.steps):
        if not deltas.mask[k]:
            continue
        t, x, m, i = e.times[k], e.X[k], e.mean[k], int(e.regimes[k])
        y, z, vb = traj.Y[k], traj.Z[k], e.controls[k]
        out[k] = (c.f(t, x, m, y, z + first.p0[k] * deltas.dsigma[k], deltas.alt[k], i)
                  - c.f(t, x, m, y, z, vb, i))
    return out


def spike_integrand(
    traj: Trajectory,
    first: FirstOrderAdjoint,
    second: SecondOrderAdjoint,
    deltas: SpikeDeltas,
) -> Array:
    """Bracket of the auxiliary driver, multiplied by the window indicator."""
    df = shifted_generator_difference(traj, first, deltas)
    steps = traj.ensemble.steps
    g = (df + first.p0[:steps] * deltas.db + first.p1[:steps] * deltas.db_mean[:, None]
         + first.q0 * deltas.dsigma
         + 0.5 * (second.P0[:steps] * deltas.dsigma ** 2
                  + second.P1[:steps] * deltas.dsigma_sq_mean[:, None]))
    return g * deltas.active


def solve_gamma(traj: Trajectory, fields: DerivativeFields | None = None) -> Array:
    """Exact exponential steps of ``dGamma = f_y Gamma dt + f_z Gamma dW``, ``Gamma_0 = 1``."""
    d = fields or DerivativeFields.along(traj)
    e = traj.ensemble
    log_inc = (d.f_y - 0.5 * d.f_z ** 2) * e.dt + d.f_z * e.dW
    gamma = np.empty((e.steps + 1, e.particles))
    gamma[0] = 1.0
    gamma[1:] = np.exp(np.cumsum(log_inc, axis=0))
    return gamma


def solve_auxiliary(
    traj: Trajectory,
    first: FirstOrderAdjoint,
    second: SecondOrderAdjoint,
    deltas: SpikeDeltas,
    fields: DerivativeFields | None = None,
    basis: RegressionBasis | None = None,
    picard: int = 2,
) -> ExpansionProcesses:
    """Solve the scalar auxiliary BSDE with zero terminal and compute Gamma."""
    d = fields or DerivativeFields.along(traj)
    e = traj.ensemble
    g = spike_integrand(traj, first, second, deltas)
    gamma = solve_gamma(traj, d)
    if not np.any(g):
        zeros = np.zeros((e.steps + 1, e.particles))
        return ExpansionProcesses(zeros, zeros[:-1].copy(), gamma, g, None)

    def driver(k, t, y, z):
        return d.f_y[k] * y + d.f_z[k] * z + g[k]

    sol = solve_bsde(driver, np.zeros(e.particles), e, basis, picard)
    return ExpansionProcesses(sol.Y, sol.Z, gamma, g, sol)


@dataclass(frozen=True)
class RepresentationCheck:
    ytil0: float
    ytil0_se: float
    weighted_integral: float
    weighted_se: float

    @property
    def difference(self) -> float:
        return self.ytil0 - self.weighted_integral

    @property
    def se(self) -> float:
        return float(np.hypot(self.ytil0_se, self.weighted_se))

    def passes(self, n_se: float = 3.0) -> bool:
        return abs(self.difference) <= n_se * self.se


def representation_check(expansion: ExpansionProcesses, dt: float) -> RepresentationCheck:
    """Compare ``Ytil(0)`` with the Monte Carlo mean of ``sum_k Gamma_k g_k dt``."""
    per_particle = np.sum(expansion.gamma[:-1] * expansion.integrand, axis=0) * dt
    n = per_particle.size
    ytil_se = float(expansion.solution.initial_se) if expansion.solution is not None else 0.0
    return RepresentationCheck(
        expansion.initial_value, ytil_se,
        float(per_particle.mean()), float(per_particle.std(ddof=1) / np.sqrt(n)),
    )


@dataclass
class AdjointBundle:
    fields: DerivativeFields
    first: FirstOrderAdjoint
    second: SecondOrderAdjoint

    def summary_csv(self, target: str | Path | None = None,
                    expansion: ExpansionProcesses | None = None) -> str:
        """Rows ``t_k`` then ``(mean, std)`` for each adjoint process."""
        series = {"p0": self.first.p0, "p1": self.first.p1, "q0": self.first.q0, "q1": self.first.q1,
                  "P0": self.second.P0, "P1": self.second.P1}
        if expansion is not None:
            series["Ytil"] = expansion.Ytil
            series["Gamma"] = expansion.gamma
        times = self.first.solution.times
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["t_k"]
        for name in series:
            header += [f"{name}_mean", f"{name}_std"]
        w.writerow(header)
        for k, t in enumerate(times):
            row = [repr(float(t))]
            for arr in series.values():
                if k < arr.shape[0]:
                    row += [repr(float(arr[k].mean())), repr(float(arr[k].std(ddof=1)))]
                else:
                    row += ["", ""]
            w.writerow(row)
        text = buf.getvalue()
        if target is not None:
            Path(target).write_text(text)
        return text


def solve_adjoints(traj: Trajectory, basis: RegressionBasis | None = None, picard: int = 2,
                   clip_q0: bool = False) -> AdjointBundle:
    """Derivative fields, then first- and second-order adjoints, in that order."""
    fields = DerivativeFields.along(traj)
    first = solve_first_order_adjoint(traj, fields, basis, picard)
    second = solve_second_order_adjoint(traj, first, fields, basis, picard, clip_q0)
    return AdjointBundle(fields, first, second)


def reduced_adjoint_residual(traj: Trajectory, bundle: AdjointBundle) -> float:
    """Residual of ``p = p0 + mean(p1)`` in the scalar non-recursive adjoint equation.

    When ``f`` does not depend on ``(y, z)`` the combined process solves
    ``dp = -(b_x p + sigma_x q + f_x + mean(b_xp p + sigma_xp q + f_xp)) dt + q dW``
    with ``q = q0``.  Returns the RMS over steps of the cross-particle mean
    one-step residual, relative to the RMS of ``p``.
    """
    d, f = bundle.fields, bundle.first
    e = traj.ensemble
    p = f.p0 + f.p1.mean(axis=1, keepdims=True)
    q = f.q0
    res = []
    for k in range(e.steps):
        drift = (d.b_x[k] * p[k] + d.sigma_x[k] * q[k] + d.f_x[k]
                 + np.mean(d.b_xp[k] * p[k] + d.sigma_xp[k] * q[k] + d.f_xp[k]))
        r = p[k + 1] - p[k] + drift * e.dt - q[k] * e.dW[k]
        res.append(r.mean())
    scale = float(np.sqrt(np.mean(p ** 2))) or 1.0
    return float(np.sqrt(np.mean(np.square(res))) / scale)


@dataclass(frozen=True)
class DegeneracyReport:
    """Size of ``(p1, q1)`` against the solver noise floor."""

    p1_sup: float
    q1_norm: float
    floor: NoiseFloor
    factor: float = 5.0

    @property
    def passed(self) -> bool:
        return (self.p1_sup <= self.factor * self.floor.y_sup
                and self.q1_norm <= self.factor * self.floor.z_norm)


def degeneracy_check(traj: Trajectory, bundle: AdjointBundle, basis: RegressionBasis | None = None,
                     factor: float = 5.0) -> DegeneracyReport:
    """Compare ``max|p1|`` and the ``L2`` norm of ``q1`` with the regression noise floor.

    The floor is measured on the same ensemble and basis with a terminal
    scaled like ``phi_x(X_T)`` (unit scale when that is constant).
    """
    e = traj.ensemble
    scale = float(np.std(bundle.fields.phi_x)) or 1.0
    floor = regression_noise_floor(e, basis, scale)
    p1_sup = float(np.max(np.abs(bundle.first.p1)))
    q1_norm = float(np.sqrt(np.mean(np.sum(bundle.first.q1 ** 2, axis=0) * e.dt)))
    return DegeneracyReport(p1_sup, q1_norm, floor, factor)
