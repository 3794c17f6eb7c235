"""Interacting particle approximation of the conditional mean-field state.

All particles share one regime path, so the conditional mean given the
chain history is estimated by the cross-particle average at every step.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .chain import ChainPath
from .errors import NumericalAbort
from .rng import generator
from .scenario import CoefficientSet, ControlModel

Array = NDArray[np.float64]


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self) -> None:
        if self.horizon <= 0 or self.steps < 1:
            raise ValueError("grid needs horizon > 0 and steps >= 1")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> Array:
        return np.linspace(0.0, self.horizon, self.steps + 1)


def brownian_increments(seed: int, steps: int, particles: int, dt: float, index: int = 0,
                        antithetic: bool = False) -> Array:
    """Increments of shape ``(steps, particles)`` from the ``"brownian"`` stream.

    With ``antithetic`` the second half of the particles receives the negated
    increments of the first half, so every step has zero cross-particle mean
    (``particles`` must be even).
    """
    rng = generator(seed, "brownian", index)
    if not antithetic:
        return rng.standard_normal((steps, particles)) * np.sqrt(dt)
    if particles % 2:
        raise ValueError("antithetic increments need an even particle count")
    half = rng.standard_normal((steps, particles // 2)) * np.sqrt(dt)
    return np.concatenate([half, -half], axis=1)


@dataclass
class ParticleEnsemble:
    """Forward particle paths driven by one shared chain path.

    Attributes
    ----------
    X : ndarray, shape (steps + 1, N)
    mean : ndarray, shape (steps + 1,)
        Cross-particle average, the conditional-mean surrogate.
    dW : ndarray, shape (steps, N)
    controls : ndarray, shape (steps, N)
        Realised control values ``v_k`` used on ``[t_k, t_{k+1})``.
    regimes : ndarray of int, shape (steps + 1,)
        Regime used for coefficients at each node (left limits).
    """

    X: Array
    mean: Array
    dW: Array
    controls: Array
    chain: ChainPath
    x0: float
    seed: int

    @property
    def steps(self) -> int:
        return self.dW.shape[0]

    @property
    def particles(self) -> int:
        return self.dW.shape[1]

    @property
    def horizon(self) -> float:
        return self.chain.horizon

    @property
    def dt(self) -> float:
        return self.chain.dt

    @property
    def times(self) -> Array:
        return self.chain.times

    @property
    def regimes(self) -> NDArray[np.int64]:
        return self.chain.grid_states

    @property
    def terminal_regime(self) -> int:
        return self.chain.terminal_state

    @property
    def W(self) -> Array:
        return np.vstack([np.zeros((1, self.particles)), np.cumsum(self.dW, axis=0)])

    def summary_csv(self, target: str | Path | None = None) -> str:
        """Rows ``t_k, mean, std, min, max``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_k", "mean", "std", "min", "max"])
        for t, row, m in zip(self.times, self.X, self.mean):
            w.writerow([repr(float(t)), repr(float(m)), repr(float(row.std(ddof=1))),
                        repr(float(row.min())), repr(float(row.max()))])
        text = buf.getvalue()
        if target is not None:
            Path(target).write_text(text)
        return text

    def paths_csv(self, target: str | Path | None = None) -> str:
        """Full path dump: one row per node, one column per particle."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_k"] + [f"x{i}" for i in range(self.particles)])
        for t, row in zip(self.times, self.X):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        text = buf.getvalue()
        if target is not None:
            Path(target).write_text(text)
        return text


def simulate_forward(
    coeffs: CoefficientSet,
    control: ControlModel,
    chain: ChainPath,
    N: int,
    seed: int,
    x0: float = 0.0,
    dW: Array | None = None,
    brownian_index: int = 0,
    antithetic: bool = False,
) -> ParticleEnsemble:
    """Euler scheme for the particle system sharing ``chain``.

    Parameters
    ----------
    dW : ndarray, optional
        Pre-drawn increments of shape ``(chain.steps, N)``; drawn from the
        ``"brownian"`` stream of ``seed`` otherwise.  Passing the same array
        to several calls gives common random numbers.
    """
    if N < 2:
        raise ValueError("at least 2 particles are needed for a conditional mean")
    steps, dt = chain.steps, chain.dt
    if dW is None:
        dW = brownian_increments(seed, steps, N, dt, brownian_index, antithetic)
    elif dW.shape != (steps, N):
        raise ValueError(f"increments have shape {dW.shape}, expected {(steps, N)}")
    times = chain.times
    regimes = chain.grid_states
    X = np.empty((steps + 1, N))
    mean = np.empty(steps + 1)
    V = np.empty((steps, N))
    X[0] = x0
    mean[0] = float(x0)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            t, x, m, i = times[k], X[k], mean[k], int(regimes[k])
            v = control.evaluate(t, x, m, i)
            V[k] = v
            drift = coeffs.b(t, x, m, v, i)
            vol = coeffs.sigma(t, x, m, v, i)
            X[k + 1] = x + drift * dt + vol * dW[k]
            if not np.all(np.isfinite(X[k + 1])):
                raise NumericalAbort("non-finite particle state", step=k + 1, stage="forward")
            mean[k + 1] = X[k + 1].mean()
    bad = ~control.control_set.contains(V)
    if np.any(bad):
        k = int(np.argwhere(bad)[0][0])
        raise ValueError(f"policy produced a value outside the control set at step {k}")
    return ParticleEnsemble(X, mean, dW, V, chain, float(x0), int(seed))


def conditional_mean(ensemble: ParticleEnsemble, k: int) -> float:
    """Cross-particle average at node ``k``."""
    if not 0 <= k <= ensemble.steps:
        raise IndexError(f"step {k} outside 0..{ensemble.steps}")
    return float(ensemble.mean[k])


def sup_moment(paths: Array, beta: float) -> float:
    """``E[sup_k |path_k|^beta]`` for paths of shape ``(steps + 1, N)``."""
    return float(np.mean(np.max(np.abs(paths), axis=0) ** beta))


def moment_probe(ensemble: ParticleEnsemble, beta: float) -> float:
    """Empirical ``E[sup_k |X_k|^beta]`` for ``beta`` in ``[2, 8]``."""
    if not 2.0 <= beta <= 8.0:
        raise ValueError("beta must lie in [2, 8]")
    return sup_moment(ensemble.X, beta)
