"""Quadrotor state estimation relative to a moving platform.

Rigid-body simulation, rotor mixing, an EKF with unknown-input augmentation
next to a baseline EKF, a cascaded PID controller, platform scenarios with
dual motion-capture streams, and a CSV-producing experiment harness.
"""

from .actuation import ControlInput, Mixer, ThrustCurve, load_thrust_curve, pwm_to_thrust, thrust_to_pwm
from .config import ConfigError, Scenario, VehicleConfig, load_scenario, load_vehicle_config
from .dynamics import FullState, InertiaParams, PlatformAcceleration, inertial_derivative, integrate_step
from .estimators import FilterConfig, FilterState, ekf_baseline_step, ekfui_step, init_filter
from .harness import RunConfig, run_scenario, run_suite, simulate
from .metrics import RunMetrics, compute_metrics

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ControlInput",
    "FilterConfig",
    "FilterState",
    "FullState",
    "InertiaParams",
    "Mixer",
    "PlatformAcceleration",
    "RunConfig",
    "RunMetrics",
    "Scenario",
    "ThrustCurve",
    "VehicleConfig",
    "compute_metrics",
    "ekf_baseline_step",
    "ekfui_step",
    "inertial_derivative",
    "init_filter",
    "integrate_step",
    "load_scenario",
    "load_thrust_curve",
    "load_vehicle_config",
    "pwm_to_thrust",
    "run_scenario",
    "run_suite",
    "simulate",
    "thrust_to_pwm",
]
