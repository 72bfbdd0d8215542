"""PID-controlled magnetic levitation vibration isolator: simulation and analysis."""

from .control import (
    AmplifierModel,
    DesignSpecs,
    DiscretePidState,
    PidGains,
    amplifier_current,
    design_gains_from_specs,
    pid_step,
    pid_transfer_coeffs,
)
from .plant import (
    LinearModel,
    OperatingPoint,
    PlantParams,
    PlantState,
    calibrate_to_current_coefficient,
    dynamics,
    equilibrium_current,
    linearize,
    magnet_force,
    operating_point,
)
from .sensing import CalibrationSample, SensorCurve, SensorReading, fit_calibration, read
from .sim import (
    Scenario,
    SimConfig,
    StiffnessReport,
    Trace,
    gain_sweep,
    integrate_step,
    measure_stiffness,
    run_closed_loop,
    stability_analysis,
)
from .tuning import TuneProblem, TuneResult, trace_cost, tune_gains

__version__ = "0.1.0"
