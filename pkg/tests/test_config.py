from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from core.errors import ConfigError, MissingRequiredError, ParseError, UnknownKeyError
from features.simulation.simulation import ICPreset, Scenario
from utils.config import KernelOptions, parse_config, parse_text

MINIMAL = "lambda1 = 20\nlambda2 = 10\nscenario = state_feedback\n"


def test_defaults_fill_everything_but_required_keys():
    cfg, options = parse_text(MINIMAL)
    assert options == KernelOptions(n=256, tol=1e-12, max_iter=200)
    assert (cfg.lambda1, cfg.lambda2) == (20.0, 10.0)
    assert cfg.scenario is Scenario.STATE_FEEDBACK
    assert (cfg.nx, cfg.dt, cfg.t_final, cfg.theta) == (200, 1e-4, 2.0, 0.5)
    assert cfg.ic == ICPreset("cos_half_pi", (1.0,))
    assert cfg.observer_ic == ICPreset("constant", (0.0,))
    assert cfg.actuation == "implicit" and cfg.plant_control == "feedback"


def test_empty_file_lists_missing_keys():
    with pytest.raises(MissingRequiredError) as info:
        parse_text("")
    assert info.value.keys == ("lambda1", "lambda2", "scenario")


def test_bad_value_reports_line():
    with pytest.raises(ParseError) as info:
        parse_text("# header\nlambda1 = abc\nlambda2 = 1\nscenario = open_loop\n")
    assert info.value.line == 2
    assert "line 2" in str(info.value)


def test_line_without_equals_is_rejected():
    with pytest.raises(ParseError) as info:
        parse_text(MINIMAL + "nx 100\n")
    assert info.value.line == 4


def test_unknown_key_is_rejected():
    with pytest.raises(UnknownKeyError) as info:
        parse_text(MINIMAL + "gamma = 3\n")
    assert info.value.key == "gamma"
    assert info.value.line == 4


@pytest.mark.parametrize("line", ["scenario = closed_loop", "ic = wave(1)", "actuation = eventually",
                                  "nx = 0", "n = -3"])
def test_invalid_values_are_parse_errors(line):
    with pytest.raises(ParseError):
        parse_text(MINIMAL + line + "\n")


def test_comments_and_blank_lines_are_ignored():
    text = "\n# plant\nlambda1 = 1.5   # trailing\n\nlambda2=2\nscenario = open_loop\nic = bump(0.5, 0.1, 2)\n"
    cfg, _ = parse_text(text)
    assert (cfg.lambda1, cfg.lambda2) == (1.5, 2.0)
    assert cfg.ic == ICPreset("bump", (0.5, 0.1, 2.0))


def test_overrides_win_over_file_values():
    cfg, options = parse_text(MINIMAL + "n = 64\nnx = 50\n",
                              {"n": 32, "nx": 40, "scenario": "open_loop"})
    assert options.n == 32
    assert cfg.nx == 40
    assert cfg.scenario is Scenario.OPEN_LOOP
    cfg, options = parse_text(MINIMAL + "n = 64\n", {"n": None})
    assert options.n == 64


def test_out_of_range_simulation_values_are_config_errors():
    with pytest.raises(ConfigError):
        parse_text(MINIMAL + "theta = 2\n")
    with pytest.raises(ConfigError):
        parse_text(MINIMAL + "tol = 0\n")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "absent.conf")


def test_example_configuration_parses():
    cfg, options = parse_config(Path(__file__).parent.parent / "configs" / "example.conf")
    assert cfg.scenario is Scenario.STATE_FEEDBACK
    assert options.n == 256


@given(st.floats(allow_nan=False, allow_infinity=False, min_value=-1e6, max_value=1e6))
def test_coupling_values_round_trip(value):
    cfg, _ = parse_text(f"lambda1 = {value!r}\nlambda2 = 0\nscenario = open_loop\n")
    assert cfg.lambda1 == value
