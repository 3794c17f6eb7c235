"""Problem data: coefficients with derivative oracles, controls, LQ family.

Every coefficient function is vectorised: arguments broadcast against each
other and the regime argument is an integer (array) with labels ``1..I``.
The mean-field argument is written ``xp`` (the conditional mean of the state).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Any, Callable, Mapping, Protocol, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .rng import generator

Array = NDArray[np.float64]
StateFn = Callable[..., Array]

_GRID_TOL = 1e-9


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientSet:
    """Drift ``b``, diffusion ``sigma``, generator ``f`` and terminal cost ``phi``.

    ``b``/``sigma`` and their derivatives take ``(t, x, xp, v, i)``; ``f`` and
    its derivatives take ``(t, x, xp, y, z, v, i)``; ``phi`` takes
    ``(x, xp, i)``.  ``f_hess`` returns the Hessian of ``f`` in
    ``(x, xp, y, z)`` with shape ``broadcast + (4, 4)``.

    ``field_adapted`` declares that ``b_x``, ``sigma_x`` and ``b_xx`` do not
    depend on ``(x, xp, v)``; :func:`check_assumptions` verifies the claim.
    """

    b: StateFn
    b_x: StateFn
    b_xp: StateFn
    b_xx: StateFn
    b_xxp: StateFn
    b_xpxp: StateFn
    sigma: StateFn
    sigma_x: StateFn
    sigma_xp: StateFn
    sigma_xx: StateFn
    sigma_xxp: StateFn
    sigma_xpxp: StateFn
    f: StateFn
    f_x: StateFn
    f_xp: StateFn
    f_y: StateFn
    f_z: StateFn
    f_hess: StateFn
    phi: StateFn
    phi_x: StateFn
    phi_xp: StateFn
    phi_xx: StateFn
    phi_xxp: StateFn
    phi_xpxp: StateFn
    L: float = 1.0
    field_adapted: bool = False
    name: str = "custom"
    n_regimes: int = 1

    def replace(self, **changes: Any) -> "CoefficientSet":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return CoefficientSet(**kw)

    def f_hess_xyz(self, t, x, xp, y, z, v, i) -> Array:
        """Hessian in ``(x, y, z)`` only (drops the mean-field row/column)."""
        h = self.f_hess(t, x, xp, y, z, v, i)
        keep = np.array([0, 2, 3])
        return h[..., keep[:, None], keep[None, :]]


def _zero(*args: ArrayLike) -> Array:
    return np.zeros(np.broadcast(*[np.asarray(a) for a in args]).shape)


@dataclass(frozen=True)
class LQCoefficients:
    """Per-regime constants of the linear-quadratic family.

    ``b = A0 + A1 x + A2 xp + A3 v``, ``sigma = B0 + B1 x + B2 xp + B3 v``,
    ``f = C0 + C1 x + C2 xp + C3 y + C4 z + C5 v`` and
    ``phi = D1 x^2 + D2 xp^2``.  The intercepts ``A0``, ``B0``, ``C0`` default
    to zero; they leave every derivative unchanged.
    """

    A0: tuple[float, ...] = (0.0,)
    A1: tuple[float, ...] = (0.0,)
    A2: tuple[float, ...] = (0.0,)
    A3: tuple[float, ...] = (0.0,)
    B0: tuple[float, ...] = (0.0,)
    B1: tuple[float, ...] = (0.0,)
    B2: tuple[float, ...] = (0.0,)
    B3: tuple[float, ...] = (0.0,)
    C0: tuple[float, ...] = (0.0,)
    C1: tuple[float, ...] = (0.0,)
    C2: tuple[float, ...] = (0.0,)
    C3: tuple[float, ...] = (0.0,)
    C4: tuple[float, ...] = (0.0,)
    C5: tuple[float, ...] = (0.0,)
    D1: tuple[float, ...] = (0.0,)
    D2: tuple[float, ...] = (0.0,)

    NAMES = ("A0", "A1", "A2", "A3", "B0", "B1", "B2", "B3",
             "C0", "C1", "C2", "C3", "C4", "C5", "D1", "D2")

    def __post_init__(self) -> None:
        n = self.n_regimes_declared()
        for name in self.NAMES:
            vals = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if vals.ndim != 1:
                raise ValueError(f"{name} must be a scalar or a per-regime list")
            if vals.size == 1 and n > 1:
                vals = np.repeat(vals, n)
            if vals.size != n:
                raise ValueError(f"{name} has {vals.size} entries, expected 1 or {n}")
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, tuple(float(v) for v in vals))

    def n_regimes_declared(self) -> int:
        return max(np.atleast_1d(np.asarray(getattr(self, n))).size for n in self.NAMES)

    @property
    def n_regimes(self) -> int:
        return len(self.A1)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "LQCoefficients":
        unknown = set(data) - set(cls.NAMES)
        if unknown:
            raise ValueError(f"unknown LQ coefficient(s): {sorted(unknown)}")
        return cls(**{k: tuple(np.atleast_1d(np.asarray(v, dtype=float))) for k, v in data.items()})

    def table(self, name: str) -> Array:
        return np.asarray(getattr(self, name))

    def lipschitz_constant(self) -> float:
        mags = [np.max(np.abs(self.table(n))) for n in self.NAMES if not n.startswith("D")]
        mags += [2.0 * np.max(np.abs(self.table("D1"))), 2.0 * np.max(np.abs(self.table("D2")))]
        return float(max(1.0, *mags))


def lq_to_general(lq: LQCoefficients) -> CoefficientSet:
    """Expand an :class:`LQCoefficients` table into a :class:`CoefficientSet`."""
    tab = {n: lq.table(n) for n in LQCoefficients.NAMES}

    def c(name: str, i: ArrayLike) -> Array:
        vals = tab[name]
        if vals.size == 1:
            return np.full(np.shape(i), vals[0])
        return vals[np.asarray(i, dtype=np.int64) - 1]

    def b(t, x, xp, v, i):
        return c("A0", i) + c("A1", i) * x + c("A2", i) * xp + c("A3", i) * v

    def sigma(t, x, xp, v, i):
        return c("B0", i) + c("B1", i) * x + c("B2", i) * xp + c("B3", i) * v

    def f(t, x, xp, y, z, v, i):
        return (c("C0", i) + c("C1", i) * x + c("C2", i) * xp + c("C3", i) * y
                + c("C4", i) * z + c("C5", i) * v)

    def phi(x, xp, i):
        return c("D1", i) * x * x + c("D2", i) * xp * xp

    def const(name: str, kind: str) -> StateFn:
        if kind == "bs":
            return lambda t, x, xp, v, i: c(name, i) + _zero(t, x, xp, v)
        return lambda t, x, xp, y, z, v, i: c(name, i) + _zero(t, x, xp, y, z, v)

    def zero_bs(t, x, xp, v, i):
        return _zero(t, x, xp, v, i)

    def f_hess(t, x, xp, y, z, v, i):
        return np.zeros(np.broadcast(*[np.asarray(a) for a in (t, x, xp, y, z, v, i)]).shape + (4, 4))

    return CoefficientSet(
        b=b, b_x=const("A1", "bs"), b_xp=const("A2", "bs"),
        b_xx=zero_bs, b_xxp=zero_bs, b_xpxp=zero_bs,
        sigma=sigma, sigma_x=const("B1", "bs"), sigma_xp=const("B2", "bs"),
        sigma_xx=zero_bs, sigma_xxp=zero_bs, sigma_xpxp=zero_bs,
        f=f, f_x=const("C1", "f"), f_xp=const("C2", "f"),
        f_y=const("C3", "f"), f_z=const("C4", "f"), f_hess=f_hess,
        phi=phi,
        phi_x=lambda x, xp, i: 2.0 * c("D1", i) * x,
        phi_xp=lambda x, xp, i: 2.0 * c("D2", i) * xp,
        phi_xx=lambda x, xp, i: 2.0 * c("D1", i) + _zero(x, xp),
        phi_xxp=lambda x, xp, i: _zero(x, xp, i),
        phi_xpxp=lambda x, xp, i: 2.0 * c("D2", i) + _zero(x, xp),
        L=lq.lipschitz_constant(),
        field_adapted=True,
        name="lq",
        n_regimes=lq.n_regimes,
    )


def sine_perturbed(lq: LQCoefficients, drift_amp: float, vol_amp: float) -> CoefficientSet:
    """LQ coefficients plus ``drift_amp*sin(x)`` in ``b`` and ``vol_amp*sin(x)`` in ``sigma``.

    The sine terms make ``b_x``, ``sigma_x`` and ``b_xx`` state dependent, so
    the second-order variational process no longer vanishes.
    """
    base = lq_to_general(lq)
    a, s = float(drift_amp), float(vol_amp)
    return base.replace(
        b=lambda t, x, xp, v, i: base.b(t, x, xp, v, i) + a * np.sin(x),
        b_x=lambda t, x, xp, v, i: base.b_x(t, x, xp, v, i) + a * np.cos(x),
        b_xx=lambda t, x, xp, v, i: base.b_xx(t, x, xp, v, i) - a * np.sin(x),
        sigma=lambda t, x, xp, v, i: base.sigma(t, x, xp, v, i) + s * np.sin(x),
        sigma_x=lambda t, x, xp, v, i: base.sigma_x(t, x, xp, v, i) + s * np.cos(x),
        sigma_xx=lambda t, x, xp, v, i: base.sigma_xx(t, x, xp, v, i) - s * np.sin(x),
        L=max(base.L, base.L + abs(a), base.L + abs(s)),
        field_adapted=(a == 0.0 and s == 0.0),
        name="lq_sine",
    )


# ---------------------------------------------------------------------------
# controls
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ControlSet:
    """Admissible control values: a finite list or a discretised interval."""

    values: tuple[float, ...] | None = None
    interval: tuple[float, float] | None = None
    resolution: int = 101

    def __post_init__(self) -> None:
        if (self.values is None) == (self.interval is None):
            raise ValueError("give exactly one of `values` or `interval`")
        if self.values is not None:
            vals = tuple(sorted(set(float(v) for v in self.values)))
            if not vals or not all(np.isfinite(vals)):
                raise ValueError("control values must be finite and non-empty")
            object.__setattr__(self, "values", vals)
        else:
            lo, hi = (float(v) for v in self.interval)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise ValueError("interval must satisfy lo <= hi")
            if self.resolution < 2 and lo < hi:
                raise ValueError("interval resolution must be at least 2")
            object.__setattr__(self, "interval", (lo, hi))

    @property
    def grid(self) -> Array:
        if self.values is not None:
            return np.array(self.values)
        lo, hi = self.interval
        return np.linspace(lo, hi, self.resolution if hi > lo else 1)

    @property
    def bound(self) -> float:
        return float(np.max(np.abs(self.grid)))

    def contains(self, v: ArrayLike) -> NDArray[np.bool_]:
        v = np.asarray(v, dtype=float)
        if self.values is not None:
            grid = self.grid
            return np.isclose(v[..., None], grid, rtol=0.0, atol=1e-12).any(axis=-1)
        lo, hi = self.interval
        return (v >= lo - 1e-12) & (v <= hi + 1e-12)

    def project(self, v: ArrayLike) -> Array:
        """Nearest admissible grid value; ties go to the smaller value."""
        grid = self.grid
        v = np.asarray(v, dtype=float)
        return grid[np.argmin(np.abs(v[..., None] - grid), axis=-1)]


class Policy(Protocol):
    def __call__(self, t: float, x: Array, xp: float, regime: int) -> Array: ...


@dataclass(frozen=True)
class ConstantPolicy:
    value: float

    def __call__(self, t, x, xp, regime):
        return np.full(np.shape(x), float(self.value))


@dataclass(frozen=True)
class BlockPolicy:
    """Deterministic piecewise-constant control on equal time blocks."""

    horizon: float
    values: tuple[float, ...]

    def __call__(self, t, x, xp, regime):
        n = len(self.values)
        j = min(int(np.floor(t / self.horizon * n + 1e-9)), n - 1)
        return np.full(np.shape(x), float(self.values[j]))


@dataclass(frozen=True)
class FeedbackPolicy:
    """``v = project(a + b_x x + b_m xp)`` onto a control set."""

    control_set: ControlSet
    intercept: float = 0.0
    slope_state: float = 0.0
    slope_mean: float = 0.0

    def __call__(self, t, x, xp, regime):
        raw = self.intercept + self.slope_state * np.asarray(x) + self.slope_mean * xp
        return self.control_set.project(raw)


@dataclass(frozen=True)
class OpenLoopPolicy:
    """Replay recorded per-particle control values on a uniform grid."""

    horizon: float
    values: Array  # shape (steps, N)

    def __call__(self, t, x, xp, regime):
        steps = self.values.shape[0]
        k = int(round(t / self.horizon * steps))
        if k < 0 or k >= steps:
            raise ValueError(f"t={t} outside the recorded grid")
        row = self.values[k]
        if np.shape(x) != row.shape:
            raise ValueError("open-loop control replayed on a different particle count")
        return row.copy()


@dataclass(frozen=True)
class SpikePolicy:
    """``alt`` on a union of half-open windows, ``base`` elsewhere."""

    base: Policy
    alt: Policy
    windows: tuple[tuple[float, float], ...]

    def active(self, t: float) -> bool:
        return any(a - _GRID_TOL <= t < b - _GRID_TOL for a, b in self.windows)

    def __call__(self, t, x, xp, regime):
        return (self.alt if self.active(t) else self.base)(t, x, xp, regime)


@dataclass(frozen=True)
class ControlModel:
    """Control set plus a policy evaluated along simulated states."""

    control_set: ControlSet
    policy: Policy
    label: str = "control"

    def evaluate(self, t: float, x: Array, xp: float, regime: int) -> Array:
        v = np.asarray(self.policy(t, x, xp, regime), dtype=float)
        return np.broadcast_to(v, np.shape(x)).astype(float, copy=True)

    def moment_bound(self, values: Array, power: float = 8.0) -> float:
        """``sup_k E|v_k|^power`` over a (steps, N) array of realised values."""
        return float(np.max(np.mean(np.abs(values) ** power, axis=1)))


def _aligned(t: float, dt: float) -> bool:
    r = t / dt
    return abs(r - round(r)) < 1e-7


def spike_overlay(
    base: ControlModel,
    alt: ControlModel,
    window: Sequence[tuple[float, float]],
    horizon: float,
    steps: int,
) -> ControlModel:
    """Return the spike variation equal to ``alt`` on ``window`` and ``base`` elsewhere.

    ``window`` is a finite union of half-open intervals whose end points must
    be grid nodes of the uniform grid with ``steps`` intervals on
    ``[0, horizon]``.
    """
    dt = horizon / steps
    clean: list[tuple[float, float]] = []
    for a, b in window:
        a, b = float(a), float(b)
        if not (0.0 <= a <= b <= horizon + _GRID_TOL):
            raise ValueError(f"window [{a}, {b}] is not inside [0, {horizon}]")
        if not (_aligned(a, dt) and _aligned(b, dt)):
            raise ValueError(f"window [{a}, {b}] is not aligned with grid step {dt}")
        if b > a:
            clean.append((a, b))
    if not clean or alt is base or alt.policy is base.policy:
        return base
    clean.sort()
    merged = [clean[0]]
    for a, b in clean[1:]:
        if a <= merged[-1][1] + _GRID_TOL:
            merged[-1] = (merged[-1][0], max(b, merged[-1][1]))
        else:
            merged.append((a, b))
    policy = SpikePolicy(base.policy, alt.policy, tuple(merged))
    return ControlModel(base.control_set, policy, label=f"{base.label}+spike")


def window_mask(windows: Sequence[tuple[float, float]], horizon: float, steps: int) -> NDArray[np.bool_]:
    """Indicator of the window on grid steps (left-point convention)."""
    t = np.linspace(0.0, horizon, steps + 1)[:-1]
    mask = np.zeros(steps, dtype=bool)
    for a, b in windows:
        mask |= (t >= a - _GRID_TOL) & (t < b - _GRID_TOL)
    return mask


# ---------------------------------------------------------------------------
# assumption checks
# ---------------------------------------------------------------------------


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    worst_ratio: float
    witness: dict[str, float] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "passed": bool(self.passed),
                "worst_ratio": float(self.worst_ratio), "witness": self.witness}


@dataclass
class AssumptionReport:
    checks: list[AssumptionCheck] = field(default_factory=list)
    field_adapted: bool = False

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {"passed": self.passed, "field_adapted": bool(self.field_adapted),
                "checks": [c.to_dict() for c in self.checks]}


def _worst(ratio: Array, limit: float, points: Mapping[str, Array], name: str) -> AssumptionCheck:
    ratio = np.where(np.isfinite(ratio), ratio, np.inf)
    j = int(np.argmax(ratio))
    worst = float(ratio[j])
    ok = worst <= limit
    witness = None if ok else {k: float(np.asarray(v)[j]) for k, v in points.items()}
    return AssumptionCheck(name, ok, worst, witness)


def check_assumptions(
    coeffs: CoefficientSet,
    budget: int = 1000,
    seed: int = 0,
    box: float = 10.0,
    control_set: ControlSet | None = None,
    horizon: float = 1.0,
    fd_tol: float = 1e-5,
) -> AssumptionReport:
    """Sample the standing assumptions on a box and report each verdict.

    Checks: derivative oracles against central differences, Lipschitz and
    growth bounds on ``b``/``sigma`` and on ``f``/``phi``, boundedness of the
    second derivatives and the declared field-adapted property.  Ratios are
    reported as observed/allowed, so a value above 1 is a violation (the
    derivative check reports relative error divided by ``fd_tol``).
    """
    if budget < 1000:
        raise ValueError("sample budget must be at least 1000")
    rng = generator(seed, "assumptions")
    n = int(budget)
    L = float(coeffs.L)
    vb = control_set.bound if control_set is not None else box
    t = rng.uniform(0.0, horizon, n)
    i = rng.integers(1, coeffs.n_regimes + 1, n)
    x, xp, y, z = (rng.uniform(-box, box, n) for _ in range(4))
    if control_set is not None:
        v = rng.choice(control_set.grid, n)
        vbar = rng.choice(control_set.grid, n)
    else:
        v, vbar = rng.uniform(-vb, vb, n), rng.uniform(-vb, vb, n)
    scale = 10.0 ** rng.uniform(-3.0, np.log10(2 * box), n)
    dx, dxp = rng.normal(size=n) * scale, rng.normal(size=n) * scale
    dy, dz = rng.normal(size=n) * scale, rng.normal(size=n) * scale
    x2, xp2, y2, z2 = x + dx, xp + dxp, y + dy, z + dz
    pts = {"t": t, "x": x, "xp": xp, "y": y, "z": z, "v": v, "regime": i.astype(float),
           "x_bar": x2, "xp_bar": xp2, "y_bar": y2, "z_bar": z2, "v_bar": vbar}
    report = AssumptionReport()

    # derivative oracles
    errs: list[Array] = []
    hx = 1e-4 * np.maximum(1.0, np.abs(x))
    hxp = 1e-4 * np.maximum(1.0, np.abs(xp))
    hy = 1e-4 * np.maximum(1.0, np.abs(y))
    hz = 1e-4 * np.maximum(1.0, np.abs(z))

    def rel(a: Array, fd: Array) -> Array:
        return np.abs(a - fd) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(fd)))

    for fn, d_x, d_xp, d_xx, d_xxp, d_xpxp in (
        (coeffs.b, coeffs.b_x, coeffs.b_xp, coeffs.b_xx, coeffs.b_xxp, coeffs.b_xpxp),
        (coeffs.sigma, coeffs.sigma_x, coeffs.sigma_xp, coeffs.sigma_xx, coeffs.sigma_xxp, coeffs.sigma_xpxp),
    ):
        errs.append(rel(d_x(t, x, xp, v, i), (fn(t, x + hx, xp, v, i) - fn(t, x - hx, xp, v, i)) / (2 * hx)))
        errs.append(rel(d_xp(t, x, xp, v, i), (fn(t, x, xp + hxp, v, i) - fn(t, x, xp - hxp, v, i)) / (2 * hxp)))
        errs.append(rel(d_xx(t, x, xp, v, i), (d_x(t, x + hx, xp, v, i) - d_x(t, x - hx, xp, v, i)) / (2 * hx)))
        errs.append(rel(d_xxp(t, x, xp, v, i), (d_x(t, x, xp + hxp, v, i) - d_x(t, x, xp - hxp, v, i)) / (2 * hxp)))
        errs.append(rel(d_xpxp(t, x, xp, v, i), (d_xp(t, x, xp + hxp, v, i) - d_xp(t, x, xp - hxp, v, i)) / (2 * hxp)))
    args = [x, xp, y, z]
    steps = [hx, hxp, hy, hz]
    firsts = [coeffs.f_x, coeffs.f_xp, coeffs.f_y, coeffs.f_z]

    def shifted(j: int, s: float) -> list[Array]:
        out = list(args)
        out[j] = args[j] + s * steps[j]
        return out

    hess = coeffs.f_hess(t, x, xp, y, z, v, i)
    for j in range(4):
        plus, minus = shifted(j, 1.0), shifted(j, -1.0)
        fd = (coeffs.f(t, *plus, v, i) - coeffs.f(t, *minus, v, i)) / (2 * steps[j])
        errs.append(rel(firsts[j](t, x, xp, y, z, v, i), fd))
        for m in range(4):
            fd2 = (firsts[m](t, *plus, v, i) - firsts[m](t, *minus, v, i)) / (2 * steps[j])
            errs.append(rel(hess[..., m, j], fd2))
    for a, d_a, h in ((0, coeffs.phi_x, hx), (1, coeffs.phi_xp, hxp)):
        e = np.zeros(2)
        e[a] = 1.0
        fd = (coeffs.phi(x + e[0] * h, xp + e[1] * h, i) - coeffs.phi(x - e[0] * h, xp - e[1] * h, i)) / (2 * h)
        errs.append(rel(d_a(x, xp, i), fd))
    errs.append(rel(coeffs.phi_xx(x, xp, i), (coeffs.phi_x(x + hx, xp, i) - coeffs.phi_x(x - hx, xp, i)) / (2 * hx)))
    errs.append(rel(coeffs.phi_xxp(x, xp, i), (coeffs.phi_x(x, xp + hxp, i) - coeffs.phi_x(x, xp - hxp, i)) / (2 * hxp)))
    errs.append(rel(coeffs.phi_xpxp(x, xp, i), (coeffs.phi_xp(x, xp + hxp, i) - coeffs.phi_xp(x, xp - hxp, i)) / (2 * hxp)))
    report.checks.append(_worst(np.max(np.vstack(errs), axis=0) / fd_tol, 1.0, pts, "derivative_oracles"))

    # Lipschitz and growth of b, sigma
    denom = np.abs(dx) + np.abs(dxp)
    for label, fn in (("b", coeffs.b), ("sigma", coeffs.sigma)):
        diff = np.abs(fn(t, x, xp, v, i) - fn(t, x2, xp2, v, i))
        report.checks.append(_worst(diff / (L * denom), 1.0 + 1e-9, pts, f"lipschitz_{label}"))
        growth = np.abs(fn(t, x, xp, v, i)) / (L * (1 + np.abs(x) + np.abs(xp) + np.abs(v)))
        report.checks.append(_worst(growth, 1.0 + 1e-9, pts, f"growth_{label}"))

    # local Lipschitz of f and phi, bounded data at the origin
    wt = 1 + np.abs(x) + np.abs(x2) + np.abs(xp) + np.abs(xp2) + np.abs(v) + np.abs(vbar)
    fdiff = np.abs(coeffs.f(t, x, xp, y, z, v, i) - coeffs.f(t, x2, xp2, y2, z2, vbar, i))
    fbound = L * (wt * (np.abs(dx) + np.abs(dxp) + np.abs(v - vbar)) + np.abs(dy) + np.abs(dz))
    report.checks.append(_worst(fdiff / fbound, 1.0 + 1e-9, pts, "lipschitz_f"))
    wphi = 1 + np.abs(x) + np.abs(xp) + np.abs(x2) + np.abs(xp2)
    pdiff = np.abs(coeffs.phi(x, xp, i) - coeffs.phi(x2, xp2, i))
    report.checks.append(_worst(pdiff / (L * wphi * denom), 1.0 + 1e-9, pts, "lipschitz_phi"))
    zero = np.zeros(n)
    origin = np.abs(coeffs.phi(zero, zero, i)) + np.abs(coeffs.f(t, zero, zero, zero, zero, zero, i))
    report.checks.append(_worst(origin / L, 1.0 + 1e-9, pts, "bounded_at_origin"))

    # derivative growth and second-derivative bounds
    g_f = np.maximum(np.abs(coeffs.f_x(t, x, xp, y, z, v, i)), np.abs(coeffs.f_xp(t, x, xp, y, z, v, i)))
    report.checks.append(_worst(g_f / (L * (1 + np.abs(x) + np.abs(xp) + np.abs(v))), 1.0 + 1e-9, pts,
                                "growth_f_derivatives"))
    g_p = np.maximum(np.abs(coeffs.phi_x(x, xp, i)), np.abs(coeffs.phi_xp(x, xp, i)))
    report.checks.append(_worst(g_p / (L * (1 + np.abs(x) + np.abs(xp))), 1.0 + 1e-9, pts,
                                "growth_phi_derivatives"))
    second = [np.abs(d(t, x, xp, v, i)) for d in (coeffs.b_xx, coeffs.b_xxp, coeffs.b_xpxp,
                                                   coeffs.sigma_xx, coeffs.sigma_xxp, coeffs.sigma_xpxp)]
    second += [np.abs(d(t, x, xp, v, i)) for d in (coeffs.b_x, coeffs.b_xp, coeffs.sigma_x, coeffs.sigma_xp)]
    second += [np.abs(d(x, xp, i)) for d in (coeffs.phi_xx, coeffs.phi_xxp, coeffs.phi_xpxp)]
    second.append(np.abs(hess).reshape(n, -1).max(axis=1))
    report.checks.append(_worst(np.max(np.vstack(second), axis=0) / L, 1.0 + 1e-9, pts,
                                "bounded_derivatives"))

    # field-adapted property: b_x, sigma_x, b_xx constant in (x, xp, v) at fixed (t, regime)
    spread = 0.0
    for d in (coeffs.b_x, coeffs.sigma_x, coeffs.b_xx):
        a1 = d(t, x, xp, v, i)
        a2 = d(t, x2, xp2, vbar, i)
        spread = max(spread, float(np.max(np.abs(a1 - a2) / np.maximum(1.0, np.abs(a1)))))
    adapted = spread < 1e-12
    report.field_adapted = adapted
    if coeffs.field_adapted:
        report.checks.append(AssumptionCheck("field_adapted", adapted, spread))
    return report
