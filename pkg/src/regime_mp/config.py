"""Scenario files: JSON parsing into dataclass configs with field/line diagnostics."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .bsde import RegressionBasis
from .chain import GeneratorMatrix
from .errors import ConfigError
from .mp import ConstraintFunction
from .scenario import (BlockPolicy, CoefficientSet, ConstantPolicy, ControlModel, ControlSet,
                       LQCoefficients, lq_to_general, sine_perturbed)
from .variation import DEFAULT_LADDER

FAMILIES = ("lq", "lq_sine")
POLICIES = ("constant", "block")


@dataclass(frozen=True)
class ModelConfig:
    family: str = "lq"
    coefficients: Mapping[str, Any] = field(default_factory=dict)
    drift_amp: float = 0.0
    vol_amp: float = 0.0


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "constant"
    value: float = 0.0
    values: tuple[float, ...] = ()

    def build(self, horizon: float):
        if self.kind == "constant":
            return ConstantPolicy(float(self.value))
        return BlockPolicy(horizon, tuple(self.values))

    def describe(self) -> str:
        if self.kind == "constant":
            return f"constant({self.value:g})"
        return "block(" + ",".join(f"{v:g}" for v in self.values) + ")"


@dataclass(frozen=True)
class RegressionConfig:
    degree: int = 3
    mean_degree: int = 2
    ridge: float = 1e-8
    max_condition: float = 1e12
    picard: int = 2


@dataclass(frozen=True)
class SpikeConfig:
    alternative: PolicyConfig = PolicyConfig("constant", 1.0)
    start: float = 0.25
    ladder: tuple[float, ...] = DEFAULT_LADDER
    beta: float = 2.0
    joint_degree: int = 3
    identity_eps: float = 0.05


@dataclass(frozen=True)
class MPConfig:
    quantile: float = 0.01
    se_multiplier: float = 3.0
    atol: float = 1e-10
    negative_control: PolicyConfig | None = None


@dataclass(frozen=True)
class BruteForceConfig:
    blocks: int = 2
    seeds: tuple[int, ...] = ()
    budget: int | None = None
    particles: int | None = None
    steps: int | None = None
    exhaustive_limit: int = 100_000


@dataclass(frozen=True)
class ConstraintConfig:
    a_x: float = 0.0
    a_xp: float = 0.0
    a_y: float = 0.0
    target: float = 0.0
    curvature: float = 0.0
    kappas: tuple[float, ...] = (2.4, 1.6, 0.8)
    feasibility_tol: float = 1e-2
    multiplier_tol: float = 1e-2
    terminal: str = "constraint"
    blocks: int = 1

    def build(self) -> ConstraintFunction:
        return ConstraintFunction.quadratic(self.a_x, self.a_xp, self.a_y, self.target, self.curvature)


@dataclass(frozen=True)
class ValidationConfig:
    budget: int = 1000
    box: float = 10.0
    fd_tol: float = 1e-5


@dataclass(frozen=True)
class ScenarioConfig:
    """A parsed scenario.  ``source`` is the raw JSON text, hashed into manifests."""

    name: str
    model: ModelConfig
    generator: tuple[tuple[float, ...], ...]
    initial_regime: int
    horizon: float
    steps: int
    particles: int
    seed: int
    x0: float
    antithetic: bool
    controls: ControlSet
    policy: PolicyConfig
    regression: RegressionConfig = RegressionConfig()
    spike: SpikeConfig = SpikeConfig()
    mp: MPConfig = MPConfig()
    brute_force: BruteForceConfig = BruteForceConfig()
    constraint: ConstraintConfig | None = None
    validation: ValidationConfig = ValidationConfig()
    source: str = ""

    def coefficients(self) -> CoefficientSet:
        lq = LQCoefficients.from_mapping(self.model.coefficients)
        if self.model.family == "lq":
            return lq_to_general(lq)
        return sine_perturbed(lq, self.model.drift_amp, self.model.vol_amp)

    def lq(self) -> LQCoefficients | None:
        if self.model.family != "lq":
            return None
        return LQCoefficients.from_mapping(self.model.coefficients)

    def control_model(self, policy: PolicyConfig | None = None) -> ControlModel:
        p = policy or self.policy
        return ControlModel(self.controls, p.build(self.horizon), p.describe())

    def basis(self) -> RegressionBasis:
        r = self.regression
        return RegressionBasis(degree=r.degree, mean_degree=r.mean_degree, ridge=r.ridge,
                               max_condition=r.max_condition)

    def with_overrides(self, **changes: Any) -> "ScenarioConfig":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update({k: v for k, v in changes.items() if v is not None})
        return ScenarioConfig(**kw)

    def check_grid(self) -> None:
        """Spike windows and block boundaries must sit on the time grid."""
        dt = self.horizon / self.steps
        for e in self.spike.ladder + (self.spike.identity_eps, self.spike.start):
            if abs(e / dt - round(e / dt)) > 1e-9:
                raise ConfigError(f"{e:g} is not a multiple of the step {dt:g}", "spike",
                                  _line_of(self.source, "spike"))
        if self.antithetic and self.particles % 2:
            raise ConfigError("antithetic sampling needs an even particle count", "particles",
                              _line_of(self.source, "particles"))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("source")
        d["controls"] = ({"values": list(self.controls.values)} if self.controls.values is not None
                         else {"interval": list(self.controls.interval),
                               "resolution": self.controls.resolution})
        return d


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------


def _line_of(text: str, path: str) -> int | None:
    """Line of the last key in a dotted ``path``, searching keys in order."""
    pos, line = 0, None
    for key in path.split("."):
        if key.isdigit():
            continue
        m = re.compile(r'"' + re.escape(key) + r'"\s*:').search(text, pos)
        if m is None:
            return line
        pos = m.end()
        line = text.count("\n", 0, m.start()) + 1
    return line


class _Reader:
    def __init__(self, text: str):
        self.text = text

    def fail(self, message: str, path: str) -> ConfigError:
        return ConfigError(message, field=path, line=_line_of(self.text, path))

    def section(self, data: Mapping, key: str, path: str, allowed: set[str]) -> Mapping:
        raw = data.get(key, {})
        where = f"{path}.{key}" if path else key
        if raw is None:
            return {}
        if not isinstance(raw, dict):
            raise self.fail("expected an object", where)
        unknown = set(raw) - allowed
        if unknown:
            bad = sorted(unknown)[0]
            raise self.fail(f"unknown key '{bad}'", f"{where}.{bad}")
        return raw

    def number(self, data: Mapping, key: str, path: str, default: Any = None, *,
               positive: bool = False, integer: bool = False, minimum: float | None = None) -> Any:
        where = f"{path}.{key}" if path else key
        if key not in data:
            if default is None:
                raise self.fail("missing required value", where)
            return default
        v = data[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.fail(f"expected a number, got {type(v).__name__}", where)
        if integer and (not float(v).is_integer()):
            raise self.fail("expected an integer", where)
        if not np.isfinite(v):
            raise self.fail("must be finite", where)
        if positive and v <= 0:
            raise self.fail("must be positive", where)
        if minimum is not None and v < minimum:
            raise self.fail(f"must be at least {minimum:g}", where)
        return int(v) if integer else float(v)

    def numbers(self, data: Mapping, key: str, path: str, default: Any = None, *,
                positive: bool = False, integer: bool = False) -> tuple:
        where = f"{path}.{key}" if path else key
        if key not in data:
            if default is None:
                raise self.fail("missing required list", where)
            return tuple(default)
        v = data[key]
        if not isinstance(v, list) or not v:
            raise self.fail("expected a non-empty list", where)
        out = []
        for j, item in enumerate(v):
            if isinstance(item, bool) or not isinstance(item, (int, float)) or not np.isfinite(item):
                raise self.fail(f"entry {j} is not a finite number", where)
            if positive and item <= 0:
                raise self.fail(f"entry {j} must be positive", where)
            if integer and not float(item).is_integer():
                raise self.fail(f"entry {j} must be an integer", where)
            out.append(int(item) if integer else float(item))
        return tuple(out)

    def policy(self, data: Mapping, key: str, path: str, controls: ControlSet, horizon: float,
               required: bool = True) -> PolicyConfig | None:
        where = f"{path}.{key}" if path else key
        if key not in data:
            if required:
                raise self.fail("missing policy", where)
            return None
        raw = self.section(data, key, path, {"kind", "value", "values"})
        kind = raw.get("kind", "constant")
        if kind not in POLICIES:
            raise self.fail(f"policy kind must be one of {POLICIES}", f"{where}.kind")
        if kind == "constant":
            value = self.number(raw, "value", where)
            vals = (value,)
            cfg = PolicyConfig("constant", value)
        else:
            vals = self.numbers(raw, "values", where)
            cfg = PolicyConfig("block", 0.0, vals)
        if not np.all(controls.contains(np.asarray(vals))):
            raise self.fail("policy value outside the control set", where)
        return cfg


def parse_scenario(text: str, name: str = "scenario") -> ScenarioConfig:
    """Parse scenario JSON text; raises :class:`ConfigError` with field and line."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", field=None, line=exc.lineno) from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", line=1)
    r = _Reader(text)
    top = {"name", "model", "chain", "horizon", "steps", "particles", "seed", "x0", "antithetic",
           "controls", "policy", "regression", "spike", "mp", "brute_force", "constraint",
           "validation", "description"}
    unknown = set(data) - top
    if unknown:
        bad = sorted(unknown)[0]
        raise r.fail(f"unknown key '{bad}'", bad)

    model_raw = r.section(data, "model", "", {"family", "coefficients", "drift_amp", "vol_amp"})
    family = model_raw.get("family", "lq")
    if family not in FAMILIES:
        raise r.fail(f"family must be one of {FAMILIES}", "model.family")
    coeffs = model_raw.get("coefficients", {})
    if not isinstance(coeffs, dict):
        raise r.fail("expected an object", "model.coefficients")
    for k, v in coeffs.items():
        if k not in LQCoefficients.NAMES:
            raise r.fail(f"unknown coefficient '{k}'", f"model.coefficients.{k}")
        vals = v if isinstance(v, list) else [v]
        if not vals or any(isinstance(x, bool) or not isinstance(x, (int, float)) or not np.isfinite(x)
                           for x in vals):
            raise r.fail("coefficient must be a finite number or list of numbers", f"model.coefficients.{k}")
    try:
        lq = LQCoefficients.from_mapping(coeffs)
    except ValueError as exc:
        raise r.fail(str(exc), "model.coefficients") from None
    model = ModelConfig(family, dict(coeffs), r.number(model_raw, "drift_amp", "model", 0.0),
                        r.number(model_raw, "vol_amp", "model", 0.0))

    chain_raw = r.section(data, "chain", "", {"generator", "initial_regime"})
    gen = chain_raw.get("generator")
    try:
        G = GeneratorMatrix(np.asarray(gen, dtype=float)).rates if gen is not None else None
    except (ValueError, TypeError) as exc:
        raise r.fail(str(exc), "chain.generator") from None
    if G is None:
        raise r.fail("missing generator matrix", "chain.generator")
    size = G.shape[0]
    if lq.n_regimes not in (1, size):
        raise r.fail(f"coefficients have {lq.n_regimes} regimes, generator has {size}", "model.coefficients")
    init = r.number(chain_raw, "initial_regime", "chain", 1, integer=True, minimum=1)
    if init > size:
        raise r.fail(f"initial regime must be in 1..{size}", "chain.initial_regime")

    horizon = r.number(data, "horizon", "", positive=True)
    steps = r.number(data, "steps", "", integer=True, minimum=1)
    particles = r.number(data, "particles", "", integer=True, minimum=2)
    seed = r.number(data, "seed", "", integer=True, minimum=0)
    x0 = r.number(data, "x0", "", 0.0)
    antithetic = data.get("antithetic", False)
    if not isinstance(antithetic, bool):
        raise r.fail("expected true or false", "antithetic")
    if antithetic and particles % 2:
        raise r.fail("antithetic increments need an even particle count", "particles")

    ctrl_raw = r.section(data, "controls", "", {"values", "interval", "resolution"})
    try:
        if "values" in ctrl_raw:
            controls = ControlSet(values=r.numbers(ctrl_raw, "values", "controls"))
        elif "interval" in ctrl_raw:
            controls = ControlSet(interval=r.numbers(ctrl_raw, "interval", "controls"),
                                  resolution=r.number(ctrl_raw, "resolution", "controls", 101,
                                                      integer=True, minimum=2))
        else:
            raise r.fail("give 'values' or 'interval'", "controls")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise r.fail(str(exc), "controls") from None
    policy = r.policy(data, "policy", "", controls, horizon)

    reg_raw = r.section(data, "regression", "", {"degree", "mean_degree", "ridge", "max_condition", "picard"})
    regression = RegressionConfig(
        r.number(reg_raw, "degree", "regression", 3, integer=True, minimum=1),
        r.number(reg_raw, "mean_degree", "regression", 2, integer=True, minimum=0),
        r.number(reg_raw, "ridge", "regression", 1e-8, minimum=0.0),
        r.number(reg_raw, "max_condition", "regression", 1e12, positive=True),
        r.number(reg_raw, "picard", "regression", 2, integer=True, minimum=1),
    )

    sp_raw = r.section(data, "spike", "", {"alternative", "start", "ladder", "beta", "joint_degree",
                                            "identity_eps"})
    alt = r.policy(sp_raw, "alternative", "spike", controls, horizon, required=False)
    spike = SpikeConfig(
        alt or PolicyConfig("constant", float(controls.grid[-1])),
        r.number(sp_raw, "start", "spike", 0.25, minimum=0.0),
        r.numbers(sp_raw, "ladder", "spike", DEFAULT_LADDER, positive=True),
        r.number(sp_raw, "beta", "spike", 2.0, minimum=2.0),
        r.number(sp_raw, "joint_degree", "spike", 3, integer=True, minimum=1),
        r.number(sp_raw, "identity_eps", "spike", 0.05, positive=True),
    )
    if spike.beta > 8:
        raise r.fail("must be at most 8", "spike.beta")
    if spike.start + max(spike.ladder + (spike.identity_eps,)) > horizon + 1e-12:
        raise r.fail("spike windows must fit inside the horizon", "spike.start")

    mp_raw = r.section(data, "mp", "", {"quantile", "se_multiplier", "atol", "negative_control"})
    mp = MPConfig(
        r.number(mp_raw, "quantile", "mp", 0.01, minimum=0.0),
        r.number(mp_raw, "se_multiplier", "mp", 3.0, minimum=0.0),
        r.number(mp_raw, "atol", "mp", 1e-10, minimum=0.0),
        r.policy(mp_raw, "negative_control", "mp", controls, horizon, required=False),
    )

    bf_raw = r.section(data, "brute_force", "", {"blocks", "seeds", "budget", "particles", "steps",
                                                  "exhaustive_limit"})
    budget = bf_raw.get("budget")
    brute = BruteForceConfig(
        r.number(bf_raw, "blocks", "brute_force", 2, integer=True, minimum=1),
        r.numbers(bf_raw, "seeds", "brute_force", (seed,), integer=True),
        None if budget is None else r.number(bf_raw, "budget", "brute_force", integer=True, minimum=1),
        None if "particles" not in bf_raw else r.number(bf_raw, "particles", "brute_force", integer=True, minimum=2),
        None if "steps" not in bf_raw else r.number(bf_raw, "steps", "brute_force", integer=True, minimum=1),
        r.number(bf_raw, "exhaustive_limit", "brute_force", 100_000, integer=True, minimum=1),
    )

    constraint = None
    if "constraint" in data:
        c_raw = r.section(data, "constraint", "", {"a_x", "a_xp", "a_y", "target", "curvature", "kappas",
                                                    "feasibility_tol", "multiplier_tol", "terminal", "blocks"})
        terminal = c_raw.get("terminal", "constraint")
        if terminal not in ("constraint", "displayed"):
            raise r.fail("terminal must be 'constraint' or 'displayed'", "constraint.terminal")
        constraint = ConstraintConfig(
            r.number(c_raw, "a_x", "constraint", 0.0), r.number(c_raw, "a_xp", "constraint", 0.0),
            r.number(c_raw, "a_y", "constraint", 0.0), r.number(c_raw, "target", "constraint", 0.0),
            r.number(c_raw, "curvature", "constraint", 0.0),
            r.numbers(c_raw, "kappas", "constraint", (2.4, 1.6, 0.8), positive=True),
            r.number(c_raw, "feasibility_tol", "constraint", 1e-2, positive=True),
            r.number(c_raw, "multiplier_tol", "constraint", 1e-2, positive=True),
            terminal,
            r.number(c_raw, "blocks", "constraint", 1, integer=True, minimum=1),
        )

    val_raw = r.section(data, "validation", "", {"budget", "box", "fd_tol"})
    validation = ValidationConfig(
        r.number(val_raw, "budget", "validation", 1000, integer=True, minimum=1000),
        r.number(val_raw, "box", "validation", 10.0, positive=True),
        r.number(val_raw, "fd_tol", "validation", 1e-5, positive=True),
    )
    label = data.get("name", name)
    if not isinstance(label, str):
        raise r.fail("expected a string", "name")
    cfg = ScenarioConfig(label, model, tuple(tuple(float(x) for x in row) for row in G), init, horizon,
                         steps, particles, seed, x0, antithetic, controls, policy, regression, spike,
                         mp, brute, constraint, validation, text)
    cfg.check_grid()
    return cfg


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Read a scenario file, or a shipped scenario by bare name (for example ``lq_demo``)."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and p.name in shipped_scenarios():
        return parse_scenario(shipped_text(p.name), p.name)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc.strerror}", field="--scenario") from None
    return parse_scenario(text, p.stem)


def shipped_scenarios() -> list[str]:
    root = resources.files("regime_mp") / "scenarios"
    return sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".json"))


def shipped_text(name: str) -> str:
    return (resources.files("regime_mp") / "scenarios" / f"{name}.json").read_text()
