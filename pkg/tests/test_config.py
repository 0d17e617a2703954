import math

import numpy as np
import pytest

from movingbase.config import ConfigError, builtin_scenarios, data_path, load_scenario, load_vehicle_config

SCENARIO = """\
[meta]
schema_version = 1

[scenario]
name = custom
profile = x_forward
duration = 12.0
hover_altitude = 0.3

[platform]
segments =
    4.0 5.0 0.5 0.0 0.0
    7.0 8.0 -0.5 0.0 0.0

[measurement]
pos_sigma = 0.002
"""


def test_defaults_load():
    v = load_vehicle_config()
    assert v.params.mass == pytest.approx(0.033)
    assert v.filter.ts == 0.01
    assert v.filter.epsilon_fd == 1e-6
    assert v.attitude_filter.coupling == v.params.coupling
    keys = dict(v.header_items())
    assert "filter.q_d_diag" in keys and "controller.vel_xy" in keys


def test_builtin_scenarios():
    names = builtin_scenarios()
    for name in ("stationary", "x_forward_moderate", "x_forward_high", "yawed_xy_slow", "yawed_xy_fast"):
        assert name in names
    peaks = {n: max((abs(s.accel[0]) for s in load_scenario(n).platform.segments), default=0.0) for n in names}
    assert peaks["x_forward_moderate"] == pytest.approx(0.3)
    assert peaks["x_forward_high"] == pytest.approx(0.8)
    yawed = load_scenario("yawed_xy_slow").platform
    assert yawed.yaw_angle == pytest.approx(math.pi / 4)
    assert yawed.yaw_start == pytest.approx(5.0)


def test_custom_scenario(tmp_path):
    p = tmp_path / "custom.cfg"
    p.write_text(SCENARIO)
    s = load_scenario(p)
    assert s.name == "custom" and s.duration == 12.0 and s.dt_sim == 0.002
    assert s.measurement.pos_sigma == 0.002
    assert s.measurement.jitter_sigma == 0.002
    assert len(s.platform.segments) == 2
    assert s.altitude_setpoint(1.0) == pytest.approx(0.15)
    assert s.altitude_setpoint(6.0) == pytest.approx(0.3)
    assert s.altitude_setpoint(12.0) == 0.0


def test_per_axis_filter_values(tmp_path):
    text = data_path("default.cfg").read_text()
    text = text.replace("thrust_curve = thrust_curve.txt", f"thrust_curve = {data_path('thrust_curve.txt')}")
    p = tmp_path / "v.cfg"
    p.write_text(text)
    v = load_vehicle_config(p)
    np.testing.assert_array_equal(np.diag(v.filter.q_core)[1::2], [5e-9, 5e-9, 1e-9])
    np.testing.assert_array_equal(np.diag(v.filter.q_d), [4e-7, 4e-7, 1e-11])


@pytest.mark.parametrize(
    "old, new",
    [
        ("q_vel = 5e-9 5e-9 1e-9", "q_vel = 1 2"),
        ("q_vel = 5e-9 5e-9 1e-9", "q_vel = abc"),
        ("r_pos = 1e-6", "r_pos = -1"),
        ("[controller]", "[controllers]"),
        ("schema_version = 1", "schema_version = 99"),
    ],
)
def test_vehicle_config_errors(tmp_path, old, new):
    text = data_path("default.cfg").read_text()
    assert old in text
    text = text.replace(old, new).replace("thrust_curve = thrust_curve.txt", f"thrust_curve = {data_path('thrust_curve.txt')}")
    p = tmp_path / "bad.cfg"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_vehicle_config(p)


@pytest.mark.parametrize(
    "old, new",
    [
        ("profile = x_forward", "profile = orbit"),
        ("    7.0 8.0 -0.5 0.0 0.0\n", ""),
        ("duration = 12.0", "duration = -1"),
        ("    4.0 5.0 0.5 0.0 0.0", "    4.0 5.0 0.5"),
    ],
)
def test_scenario_errors(tmp_path, old, new):
    p = tmp_path / "bad.cfg"
    p.write_text(SCENARIO.replace(old, new))
    with pytest.raises(ConfigError):
        load_scenario(p)


def test_missing_scenario():
    with pytest.raises(ConfigError):
        load_scenario("no_such_scenario")
