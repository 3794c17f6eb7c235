"""Continuous-time Markov chain driving the regime switches.

Regimes are labelled ``1..I``.  Paths are sampled exactly with exponential
holding times and then projected onto a uniform grid, where the value used at
node ``t_k`` is the left limit: the state active on ``[t_{k-1}, t_k)``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from .rng import generator

_ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class GeneratorMatrix:
    """Transition-rate matrix of a finite-state chain.

    Parameters
    ----------
    rates : array_like, shape (I, I)
        Off-diagonal entries are jump intensities; rows must sum to zero.
    """

    rates: NDArray[np.float64]

    def __post_init__(self) -> None:
        q = np.array(self.rates, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] == 0:
            raise ValueError(f"generator must be a non-empty square matrix, got shape {q.shape}")
        if not np.all(np.isfinite(q)):
            raise ValueError("generator entries must be finite")
        off = q - np.diag(np.diag(q))
        if np.any(off < 0):
            i, j = np.argwhere(off < 0)[0]
            raise ValueError(f"negative off-diagonal rate at ({i + 1}, {j + 1}): {q[i, j]}")
        rows = q.sum(axis=1)
        scale = np.maximum(1.0, np.abs(q).max(axis=1))
        bad = np.abs(rows) > _ROW_SUM_TOL * scale
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ValueError(f"row {i + 1} of the generator sums to {rows[i]}, expected 0")
        q.setflags(write=False)
        object.__setattr__(self, "rates", q)

    @property
    def size(self) -> int:
        return int(self.rates.shape[0])

    def exit_rate(self, state: int) -> float:
        return float(-self.rates[state - 1, state - 1])


@dataclass(frozen=True)
class ChainPath:
    """A sampled regime trajectory on ``[0, horizon]``.

    Attributes
    ----------
    jump_times : ndarray
        Strictly increasing jump epochs in ``(0, horizon]``.
    states : ndarray of int
        ``states[j]`` is the regime on ``[jump_times[j-1], jump_times[j])``;
        one more entry than ``jump_times``.
    horizon : float
    steps : int
        Number of grid intervals used for the left-limit projection.
    """

    jump_times: NDArray[np.float64]
    states: NDArray[np.int64]
    horizon: float
    steps: int
    grid_states: NDArray[np.int64] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        jt = np.asarray(self.jump_times, dtype=float)
        st = np.asarray(self.states, dtype=np.int64)
        if st.ndim != 1 or st.size != jt.size + 1:
            raise ValueError("states must have exactly one more entry than jump_times")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if jt.size and (np.any(np.diff(jt) < 0) or jt[0] < 0 or jt[-1] > self.horizon):
            raise ValueError("jump times must be ordered inside [0, horizon]")
        if np.any(st < 1):
            raise ValueError("regime labels start at 1")
        jt.setflags(write=False)
        st.setflags(write=False)
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "states", st)
        nodes = self.times
        # node 0 carries alpha(0); node k >= 1 carries alpha(t_k-)
        idx = np.searchsorted(jt, nodes, side="left")
        idx[0] = np.searchsorted(jt, 0.0, side="right")
        grid = st[idx]
        grid.setflags(write=False)
        object.__setattr__(self, "grid_states", grid)

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> NDArray[np.float64]:
        return np.linspace(0.0, self.horizon, self.steps + 1)

    @property
    def initial_state(self) -> int:
        return int(self.states[0])

    def state_at(self, t: float) -> int:
        """Right-continuous value ``alpha(t)``."""
        if not 0.0 <= t <= self.horizon:
            raise ValueError(f"t={t} outside [0, {self.horizon}]")
        return int(self.states[np.searchsorted(self.jump_times, t, side="right")])

    @property
    def terminal_state(self) -> int:
        return self.state_at(self.horizon)

    def count_jumps(self) -> int:
        return int(self.jump_times.size)

    def to_csv(self, target: str | Path | io.TextIOBase | None = None) -> str:
        """Write the grid projection as ``t_k,state`` rows and return the text."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_k", "state"])
        for t, s in zip(self.times, self.grid_states):
            w.writerow([repr(float(t)), int(s)])
        text = buf.getvalue()
        if isinstance(target, (str, Path)):
            Path(target).write_text(text)
        elif target is not None:
            target.write(text)
        return text


def left_limit_state(path: ChainPath, t: float) -> int:
    """Regime active immediately before ``t``.

    Raises
    ------
    ValueError
        If ``t`` is not in ``(0, T]``.
    """
    if not 0.0 < t <= path.horizon:
        raise ValueError(f"left limit requested at t={t}, outside (0, {path.horizon}]")
    return int(path.states[np.searchsorted(path.jump_times, t, side="left")])


def sample_chain(
    gen: GeneratorMatrix | NDArray[np.float64] | Sequence[Sequence[float]],
    horizon: float,
    steps: int,
    seed: int,
    initial_state: int = 1,
    index: int = 0,
) -> ChainPath:
    """Sample a chain path with exact exponential holding times.

    Parameters
    ----------
    gen : GeneratorMatrix or array_like
        Rate matrix; validated on entry.
    horizon : float
        Time horizon ``T > 0``.
    steps : int
        Grid size for the left-limit projection.
    seed : int
        Master seed; the ``"chain"`` stream with ``index`` is used.
    initial_state : int
        Deterministic starting regime.
    index : int
        Scenario index, so several independent paths share one master seed.
    """
    if not isinstance(gen, GeneratorMatrix):
        gen = GeneratorMatrix(np.asarray(gen, dtype=float))
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if not 1 <= initial_state <= gen.size:
        raise ValueError(f"initial_state must lie in 1..{gen.size}")
    rng = generator(seed, "chain", index)
    q = gen.rates
    t = 0.0
    state = int(initial_state)
    times: list[float] = []
    states = [state]
    while True:
        rate = float(-q[state - 1, state - 1])
        if rate <= 0.0:
            break
        t += float(rng.standard_exponential()) / rate
        if t > horizon:
            break
        probs = q[state - 1].copy()
        probs[state - 1] = 0.0
        probs /= rate
        state = int(rng.choice(gen.size, p=probs)) + 1
        times.append(t)
        states.append(state)
    return ChainPath(np.array(times), np.array(states, dtype=np.int64), float(horizon), int(steps))


def constant_path(state: int, horizon: float, steps: int) -> ChainPath:
    """Path that never leaves ``state``."""
    return ChainPath(np.empty(0), np.array([state], dtype=np.int64), float(horizon), int(steps))


def empirical_generator(paths: Iterable[ChainPath], size: int) -> NDArray[np.float64]:
    """Maximum-likelihood rate matrix from jump counts and occupation times."""
    counts = np.zeros((size, size))
    occupancy = np.zeros(size)
    for p in paths:
        edges = np.concatenate([[0.0], p.jump_times, [p.horizon]])
        np.add.at(occupancy, p.states - 1, np.diff(edges))
        if p.jump_times.size:
            np.add.at(counts, (p.states[:-1] - 1, p.states[1:] - 1), 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        est = np.where(occupancy[:, None] > 0, counts / occupancy[:, None], 0.0)
    np.fill_diagonal(est, 0.0)
    np.fill_diagonal(est, -est.sum(axis=1))
    return est
