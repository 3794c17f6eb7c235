import json

import pytest

from regime_mp.config import load_scenario, parse_scenario, shipped_scenarios, shipped_text
from regime_mp.errors import ConfigError

BASE = {
    "model": {"family": "lq", "coefficients": {"A3": 1.0, "B0": 1.0, "D1": 1.0}},
    "chain": {"generator": [[-1.0, 1.0], [1.0, -1.0]]},
    "horizon": 1.0,
    "steps": 20,
    "particles": 100,
    "seed": 4,
    "controls": {"values": [0.0, 1.0]},
    "policy": {"kind": "constant", "value": 0.0},
    "spike": {"start": 0.2, "ladder": [0.2, 0.1], "identity_eps": 0.1},
}


def text_with(**changes):
    data = json.loads(json.dumps(BASE))
    for key, value in changes.items():
        if value is None:
            data.pop(key)
        else:
            data[key] = value
    return json.dumps(data, indent=2)


def error_for(text):
    with pytest.raises(ConfigError) as info:
        parse_scenario(text)
    return info.value


def test_minimal_scenario_parses_with_defaults():
    cfg = parse_scenario(text_with())
    assert cfg.steps == 20 and cfg.x0 == 0.0 and not cfg.antithetic
    assert cfg.regression.degree == 3 and cfg.mp.se_multiplier == 3.0
    assert cfg.constraint is None and cfg.initial_regime == 1


def test_bad_row_sum_reports_field_and_line():
    text = text_with(chain={"generator": [[-1.0, 1.0], [1.0, -0.5]]})
    err = error_for(text)
    assert err.field == "chain.generator"
    assert text.splitlines()[err.line - 1].strip().startswith('"generator"')


@pytest.mark.parametrize("key", ["horizon", "seed", "steps", "particles", "policy"])
def test_missing_required_value(key):
    err = error_for(text_with(**{key: None}))
    assert err.field == key


def test_missing_generator():
    assert error_for(text_with(chain={})).field == "chain.generator"


def test_unknown_keys_rejected():
    assert error_for(text_with(colour=1)).field == "colour"
    err = error_for(text_with(model={"coefficients": {"A9": 1.0}}))
    assert err.field == "model.coefficients.A9"


def test_invalid_json_has_line():
    err = error_for('{\n  "horizon": 1.0,\n  oops\n}')
    assert err.line == 3


@pytest.mark.parametrize("change, field", [
    ({"horizon": -1.0}, "horizon"),
    ({"steps": 2.5}, "steps"),
    ({"particles": "many"}, "particles"),
    ({"policy": {"kind": "constant", "value": 3.0}}, "policy"),
    ({"policy": {"kind": "feedback"}}, "policy.kind"),
    ({"antithetic": True, "particles": 101}, "particles"),
    ({"chain": {"generator": [[-1.0, 1.0], [1.0, -1.0]], "initial_regime": 3}}, "chain.initial_regime"),
    ({"model": {"coefficients": {"C1": [1.0, 2.0, 3.0]}}}, "model.coefficients"),
    ({"model": {"family": "cubic"}}, "model.family"),
])
def test_field_diagnostics(change, field):
    assert error_for(text_with(**change)).field == field


def test_spike_must_sit_on_grid():
    err = error_for(text_with(spike={"start": 0.2, "ladder": [0.2, 0.07], "identity_eps": 0.1}))
    assert err.field == "spike" and err.line is not None


def test_spike_must_fit_horizon():
    err = error_for(text_with(spike={"start": 0.9, "ladder": [0.2], "identity_eps": 0.1}))
    assert err.field == "spike.start"


def test_overrides_and_regrid_check():
    cfg = parse_scenario(text_with())
    assert cfg.with_overrides(seed=9, particles=None).seed == 9
    assert cfg.with_overrides(particles=None).particles == 100
    with pytest.raises(ConfigError):
        cfg.with_overrides(steps=7).check_grid()


def test_message_names_field_and_line():
    err = error_for(text_with(horizon=0.0))
    assert "horizon" in str(err) and "line" in str(err)


def test_to_dict_round_trips_controls():
    d = parse_scenario(text_with(controls={"interval": [-1.0, 1.0], "resolution": 5},
                                 policy={"value": 0.5})).to_dict()
    assert d["controls"] == {"interval": [-1.0, 1.0], "resolution": 5}
    assert "source" not in d


@pytest.mark.parametrize("name", shipped_scenarios())
def test_shipped_scenarios_load(name):
    cfg = load_scenario(name)
    assert cfg.source == shipped_text(name)
    cfg.coefficients()


def test_missing_file():
    with pytest.raises(ConfigError) as info:
        load_scenario("/nonexistent/scenario.json")
    assert info.value.field == "--scenario"
