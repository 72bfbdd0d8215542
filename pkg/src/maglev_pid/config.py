"""Experiment configuration.

A config is a YAML mapping with one optional section per subsystem. Every
key has a default in ``DEFAULTS``, so an empty file describes the bench
experiment: PID stiffness measurement on a plant calibrated to a current
coefficient of 7.5 N/A at a 3 mm gap.
"""

from __future__ import annotations

import copy
import math
import os
from dataclasses import asdict, dataclass, replace

import yaml

from . import sensing
from .control import AmplifierModel, DesignSpecs, PidGains, design_gains_from_specs
from .errors import ConfigError, MaglevError
from .plant import (
    PlantParams,
    PlantState,
    calibrate_to_current_coefficient,
    linearize,
    operating_point,
)
from .sim import Scenario, SimConfig, holding_bias
from .tuning import TuneProblem

DEFAULTS = {
    "plant": {
        "mass": 0.5,  # kg
        "spring_k": 2.0,  # N/mm
        "damping_c": 0.01,  # N*s/mm
        "gap0": 5.0,  # mm
        "gravity": 9810.0,  # mm/s^2
        "magnet_c": None,  # N*mm^2/A^2; None calibrates to current_coefficient
        "current_coefficient": 7.5,  # N/A
        "operating_gap": 3.0,  # mm
    },
    "sensor": {
        "gain": 2.0,  # V/mm
        "offset": 0.0,  # V
        "linear_lo": 2.0,  # mm
        "linear_hi": 5.0,  # mm
        "noise_sigma": 0.0,  # V
        "standoff": 6.0,  # mm
        "calibration_file": None,  # gap_mm,voltage_v CSV; overrides gain/offset/range
        "residual_tol": None,  # V; None is 2% of the sample voltage span
    },
    "amplifier": {
        "transconductance": 0.1,  # A/V
        "v_ceiling": 24.0,  # V
    },
    "control": {
        "mode": "pid",  # pid | pd
        "gains": None,  # {kp, td, ki}; None designs them from "design"
        "design": {"zeta": 0.7, "omega_n": 150.0, "ki_ratio": 0.1},
        "deriv_filter_n": 10.0,
        "out_min": 0.0,  # V
        "out_max": 24.0,  # V
        "bias": None,  # V; None holds the setpoint at zero load
    },
    "scenario": {
        "setpoint_gap": None,  # mm; None is plant.operating_gap
        "loads": [[0.5, 1.0]],  # [time_s, load_n] step events
        "initial_y": None,  # mm; None starts at the setpoint
        "initial_v": 0.0,  # mm/s
    },
    "sim": {
        "dt": 1e-4,
        "duration": 2.0,
        "controller_period": None,
        "record_decimation": 1,
        "out_of_range_grace": 0.1,
    },
    "stiffness": {
        "loads": [0.5, 1.0, 1.5, 2.0],  # N
        "compliance_tol": 1e-4,  # mm/N
        "load_time": 0.0,  # s
    },
    "sweep": {
        "zeta": [0.3, 0.5, 0.7, 0.9],
        "omega_n": [60.0, 100.0, 150.0, 200.0, 300.0],
        "ki_ratio": 0.0,
        "load": 1.0,  # N, step size
        "duration": 1.0,  # s
    },
    "tuning": {
        "cost": "ITAE",
        "bounds": {"kp": [2.0, 20.0], "td": [0.002, 0.02], "ki": [2.0, 40.0]},
        "seed_grid_points_per_axis": 4,
        "max_evals": 200,
        "duration": 0.5,  # s
        "load": 1.0,  # N
        "load_time": 0.01,  # s
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    params: PlantParams
    curve: sensing.SensorCurve
    amp: AmplifierModel
    gains: PidGains
    lm: object
    scenario: Scenario
    sim: SimConfig
    stiffness_loads: tuple
    compliance_tol: float
    load_time: float
    sweep_specs: tuple
    sweep_ki_ratio: float
    sweep_scenario: Scenario
    sweep_sim: SimConfig
    tuning: TuneProblem

    @property
    def loop_chain(self):
        return self.curve.gain * self.amp.transconductance


def _merge(defaults, given, path):
    if given is None:
        return copy.deepcopy(defaults)
    if not isinstance(given, dict):
        raise ConfigError(path, "expected a mapping")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown key")
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if isinstance(defaults[key], dict) and val is not None:
            out[key] = _merge(defaults[key], val, f"{path}.{key}")
        else:
            out[key] = val
    return out


def _num(sec, key, path, optional=False, integer=False):
    val = sec[key]
    if val is None and optional:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {val!r}")
    if not math.isfinite(val):
        raise ConfigError(f"{path}.{key}", "must be finite")
    if integer:
        if int(val) != val:
            raise ConfigError(f"{path}.{key}", f"expected an integer, got {val!r}")
        return int(val)
    return float(val)


def _numlist(val, path):
    if not isinstance(val, (list, tuple)) or not val:
        raise ConfigError(path, "expected a non-empty list of numbers")
    out = []
    for i, x in enumerate(val):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise ConfigError(f"{path}[{i}]", f"expected a finite number, got {x!r}")
        out.append(float(x))
    return out


def _build(field, factory, **kwargs):
    try:
        return factory(**kwargs)
    except MaglevError as exc:
        raise ConfigError(field, str(exc)) from None


def load_config(path=None, base_dir=None):
    """Read, validate and assemble an experiment config.

    ``path=None`` gives the all-defaults config. Any invalid value raises
    ConfigError naming the offending field before anything is simulated.
    """
    raw = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"invalid YAML: {exc}".splitlines()[0]) from None
        if base_dir is None:
            base_dir = os.path.dirname(os.path.abspath(path))
    return build_config(raw or {}, base_dir=base_dir)


def build_config(raw, base_dir=None):
    cfg = _merge(DEFAULTS, raw, "config")

    p = cfg["plant"]
    params = _build("plant", PlantParams,
                    mass=_num(p, "mass", "plant"),
                    spring_k=_num(p, "spring_k", "plant"),
                    damping_c=_num(p, "damping_c", "plant"),
                    gap0=_num(p, "gap0", "plant"),
                    gravity=_num(p, "gravity", "plant"))
    op_gap = _num(p, "operating_gap", "plant")
    if not op_gap > 0:
        raise ConfigError("plant.operating_gap", "must be > 0")

    a = cfg["amplifier"]
    amp = _build("amplifier", AmplifierModel,
                 transconductance=_num(a, "transconductance", "amplifier"),
                 v_ceiling=_num(a, "v_ceiling", "amplifier"))

    magnet_c = _num(p, "magnet_c", "plant", optional=True)
    if magnet_c is None:
        params = _build("plant.current_coefficient", calibrate_to_current_coefficient,
                        target_k_i=_num(p, "current_coefficient", "plant"),
                        gap_star=op_gap, params=params, i_max=amp.i_max)
    else:
        params = _build("plant", PlantParams, **{**asdict(params), "magnet_c": magnet_c})

    s = cfg["sensor"]
    curve = _build("sensor", sensing.SensorCurve,
                   gain=_num(s, "gain", "sensor"),
                   offset=_num(s, "offset", "sensor"),
                   linear_lo=_num(s, "linear_lo", "sensor"),
                   linear_hi=_num(s, "linear_hi", "sensor"),
                   noise_sigma=_num(s, "noise_sigma", "sensor"),
                   standoff=_num(s, "standoff", "sensor"))
    if s["calibration_file"] is not None:
        cal = str(s["calibration_file"])
        if base_dir is not None and not os.path.isabs(cal):
            cal = os.path.join(base_dir, cal)
        if not os.path.isfile(cal):
            raise ConfigError("sensor.calibration_file", f"file not found: {cal}")
        samples = _build("sensor.calibration_file", sensing.load_samples, path=cal)
        fit = _build("sensor.calibration_file", sensing.fit_calibration, samples=samples,
                     residual_tol=_num(s, "residual_tol", "sensor", optional=True),
                     curve_template=curve)
        curve = fit.curve

    sc = cfg["scenario"]
    setpoint = _num(sc, "setpoint_gap", "scenario", optional=True)
    if setpoint is None:
        setpoint = op_gap
    loads = sc["loads"] or []
    if not isinstance(loads, list):
        raise ConfigError("scenario.loads", "expected a list of [time_s, load_n] pairs")
    events = []
    for i, ev in enumerate(loads):
        pair = _numlist(ev, f"scenario.loads[{i}]")
        if len(pair) != 2:
            raise ConfigError(f"scenario.loads[{i}]", "expected [time_s, load_n]")
        events.append(tuple(pair))
    init_y = _num(sc, "initial_y", "scenario", optional=True)
    initial = None if init_y is None else PlantState(init_y, _num(sc, "initial_v", "scenario"))
    scenario = _build("scenario", Scenario, setpoint_gap=setpoint,
                      load_schedule=tuple(events), initial_state=initial)
    dist = curve.distance(setpoint)
    if not curve.linear_lo <= dist <= curve.linear_hi:
        raise ConfigError("scenario.setpoint_gap",
                          f"sensor distance {dist:.6g} mm at the setpoint is outside "
                          f"[{curve.linear_lo:.6g}, {curve.linear_hi:.6g}]")

    si = cfg["sim"]
    sim_kwargs = dict(
        dt=_num(si, "dt", "sim"),
        controller_period=_num(si, "controller_period", "sim", optional=True),
        record_decimation=_num(si, "record_decimation", "sim", integer=True),
        out_of_range_grace=_num(si, "out_of_range_grace", "sim"),
    )
    sim = _build("sim", SimConfig, duration=_num(si, "duration", "sim"), **sim_kwargs)

    op = _build("plant.operating_gap", operating_point, params=params, gap_star=setpoint)
    lm = _build("plant.operating_gap", linearize, params=params, op=op)
    chain = curve.gain * amp.transconductance

    c = cfg["control"]
    mode = c["mode"]
    if mode not in ("pid", "pd"):
        raise ConfigError("control.mode", f"expected 'pid' or 'pd', got {mode!r}")
    bias = _num(c, "bias", "control", optional=True)
    if bias is None:
        bias = _build("control.bias", holding_bias, params=params, amp=amp, gap_star=setpoint)
    common = dict(
        deriv_filter_n=_num(c, "deriv_filter_n", "control"),
        out_min=_num(c, "out_min", "control"),
        out_max=_num(c, "out_max", "control"),
        bias=bias,
    )
    if c["gains"] is not None:
        g = _merge({"kp": 1.0, "td": 0.0, "ki": 0.0}, c["gains"], "control.gains")
        ki = _num(g, "ki", "control.gains")
        gains = _build("control.gains", PidGains,
                       kp=_num(g, "kp", "control.gains"), td=_num(g, "td", "control.gains"),
                       ki=0.0 if mode == "pd" else ki, **common)
    else:
        d = c["design"]
        specs = _build("control.design", DesignSpecs,
                       zeta=_num(d, "zeta", "control.design"),
                       omega_n=_num(d, "omega_n", "control.design"))
        ki_ratio = 0.0 if mode == "pd" else _num(d, "ki_ratio", "control.design")
        _build("control", PidGains, **common)
        gains = _build("control.design", design_gains_from_specs, specs=specs, lm=lm,
                       loop_gain=chain, ki_ratio=ki_ratio, **common)

    st = cfg["stiffness"]
    st_loads = tuple(_numlist(st["loads"], "stiffness.loads"))
    tol = _num(st, "compliance_tol", "stiffness")
    if not tol > 0:
        raise ConfigError("stiffness.compliance_tol", "must be > 0")

    sw = cfg["sweep"]
    specs_grid = []
    for z in _numlist(sw["zeta"], "sweep.zeta"):
        for w in _numlist(sw["omega_n"], "sweep.omega_n"):
            specs_grid.append(_build("sweep", DesignSpecs, zeta=z, omega_n=w))
    sweep_ki = _num(sw, "ki_ratio", "sweep")
    if sweep_ki < 0:
        raise ConfigError("sweep.ki_ratio", "must be >= 0")
    sweep_load = _num(sw, "load", "sweep")
    if sweep_load == 0:
        raise ConfigError("sweep.load", "must be nonzero")
    sweep_scenario = Scenario(setpoint, ((0.0, sweep_load),))
    sweep_sim = _build("sweep.duration", SimConfig, duration=_num(sw, "duration", "sweep"),
                       **sim_kwargs)

    tu = cfg["tuning"]
    if str(tu["cost"]).upper() not in ("ITAE", "ISE"):
        raise ConfigError("tuning.cost", f"expected ITAE or ISE, got {tu['cost']!r}")
    b = _merge(DEFAULTS["tuning"]["bounds"], tu["bounds"], "tuning.bounds")
    bounds = []
    for name in ("kp", "td", "ki"):
        pair = _numlist(b[name], f"tuning.bounds.{name}")
        if len(pair) != 2:
            raise ConfigError(f"tuning.bounds.{name}", "expected [lo, hi]")
        bounds.append(tuple(pair))
    tune_scenario = _build("tuning", Scenario, setpoint_gap=setpoint,
                           load_schedule=((_num(tu, "load_time", "tuning"),
                                           _num(tu, "load", "tuning")),))
    tune_sim = _build("tuning.duration", SimConfig, duration=_num(tu, "duration", "tuning"),
                      **sim_kwargs)
    tuning = _build("tuning", TuneProblem,
                    bounds=tuple(bounds), cost_kind=str(tu["cost"]).upper(),
                    seed_grid_points_per_axis=_num(tu, "seed_grid_points_per_axis", "tuning",
                                                   integer=True),
                    max_evals=_num(tu, "max_evals", "tuning", integer=True),
                    params=params, curve=curve, amp=amp,
                    base_gains=replace(gains, kp=0.0, td=0.0, ki=0.0),
                    scenario=tune_scenario, cfg=tune_sim)

    return ExperimentConfig(
        params=params, curve=curve, amp=amp, gains=gains, lm=lm,
        scenario=scenario, sim=sim,
        stiffness_loads=st_loads, compliance_tol=tol,
        load_time=_num(st, "load_time", "stiffness"),
        sweep_specs=tuple(specs_grid), sweep_ki_ratio=sweep_ki,
        sweep_scenario=sweep_scenario, sweep_sim=sweep_sim,
        tuning=tuning,
    )
