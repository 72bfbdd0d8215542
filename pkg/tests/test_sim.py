import io
import math
from dataclasses import replace

import numpy as np
import pytest

from maglev_pid.control import AmplifierModel, DesignSpecs, PidGains, design_gains_from_specs
from maglev_pid.errors import ContactFault, DomainError
from maglev_pid.plant import (
    PlantParams,
    PlantState,
    calibrate_to_current_coefficient,
    linearize,
    operating_point,
)
from maglev_pid.sensing import SensorCurve
from maglev_pid.sim import (
    TRACE_HEADER,
    Scenario,
    SimConfig,
    gain_sweep,
    holding_bias,
    integrate_step,
    measure_stiffness,
    run_closed_loop,
    stability_analysis,
    step_metrics,
)

LOADS = [0.5, 1.0, 1.5, 2.0]


def damped_oscillator(params, y0, t):
    """Closed-form free response of m y'' + c y' + k y = 0 from (y0, 0), underdamped."""
    m = params.mass_eff
    wn = math.sqrt(params.spring_k / m)
    z = params.damping_c / (2 * math.sqrt(params.spring_k * m))
    wd = wn * math.sqrt(1 - z * z)
    return math.exp(-z * wn * t) * y0 * (math.cos(wd * t) + z * wn / wd * math.sin(wd * t))


def test_equilibrium_is_fixed_point(plant, op):
    st = PlantState(plant.gap0 - 3.0, 0.0)
    nxt = integrate_step(st, op.current_star, 0.0, plant, 1e-4)
    assert abs(nxt.y - st.y) < 1e-12
    assert abs(nxt.v) < 1e-12


def test_rk4_global_order_against_closed_form():
    p = PlantParams()
    y0, t_end = 1.0, 0.5
    errs = []
    for dt in (1e-3, 5e-4, 2.5e-4):
        st = PlantState(y0, 0.0)
        for _ in range(int(round(t_end / dt))):
            st = integrate_step(st, 0.0, 0.0, p, dt)
        errs.append(abs(st.y - damped_oscillator(p, y0, t_end)))
    orders = [math.log2(errs[0] / errs[1]), math.log2(errs[1] / errs[2])]
    for order in orders:
        assert 3.9 <= order <= 4.1


def test_energy_drift_undamped():
    p = PlantParams(damping_c=0.0)

    def energy(s):
        return 0.5 * p.mass_eff * s.v**2 + 0.5 * p.spring_k * s.y**2

    st = PlantState(1.0, 0.0)
    e0 = energy(st)
    for _ in range(10_000):
        st = integrate_step(st, 0.0, 0.0, p, 1e-4)
    assert abs(energy(st) - e0) / e0 < 1e-6


def test_integrate_contact_fault(plant):
    with pytest.raises(ContactFault):
        integrate_step(PlantState(plant.gap0 - 1e-4, 500.0), 3.0, 0.0, plant, 1e-3)


def test_open_loop_hold(plant, curve, amp):
    gains = PidGains(kp=0.0, td=0.0, ki=0.0, bias=holding_bias(plant, amp, 3.0))
    tr = run_closed_loop(plant, curve, gains, amp, Scenario(3.0), SimConfig(duration=0.2))
    assert not tr.faulted
    assert np.max(np.abs(tr.gap - 3.0)) < 1e-6


def test_trace_rows_consistent(plant, curve, amp, pid_gains):
    tr = run_closed_loop(plant, curve, pid_gains, amp, Scenario(3.0, ((0.1, 1.0),)),
                         SimConfig(duration=0.5))
    assert np.all(tr.gap == plant.gap0 - tr.y)
    assert np.allclose(np.diff(tr.time), 1e-4, rtol=1e-9)
    assert np.all((tr.current >= 0) & (tr.current <= amp.i_max))
    assert np.all(tr.load[tr.time < 0.1 - 1e-12] == 0.0)
    assert np.all(tr.load[tr.time >= 0.1] == 1.0)


def test_pd_step_settles_to_analytic_offset(plant, curve, amp, lm, chain, pid_gains):
    pd = replace(pid_gains, ki=0.0)
    load = 0.5
    tr = run_closed_loop(plant, curve, pd, amp, Scenario(3.0, ((1.0, load),)),
                         SimConfig(duration=2.5))
    assert tr.settled
    offset = tr.steady_y() - (plant.gap0 - 3.0)
    expected = -load / (lm.net_stiffness + lm.k_i * chain * pd.kp)
    assert offset == pytest.approx(expected, rel=0.05)


def test_pid_step_returns_to_setpoint(plant, curve, amp, pid_gains):
    tr = run_closed_loop(plant, curve, pid_gains, amp, Scenario(3.0, ((1.0, 1.0),)),
                         SimConfig(duration=3.0))
    assert tr.settled
    during = tr.gap[(tr.time > 1.0) & (tr.time < 1.2)]
    assert np.max(np.abs(during - 3.0)) > 1e-2
    assert abs(tr.gap[-1] - 3.0) < 1e-4


def test_controller_period_zero_order_hold(plant, curve, amp, pid_gains):
    cfg = SimConfig(dt=1e-4, duration=0.3, controller_period=5e-4)
    tr = run_closed_loop(plant, curve, pid_gains, amp, Scenario(3.0, ((0.05, 0.5),)), cfg)
    assert not tr.faulted
    # current only changes on controller ticks
    changes = np.flatnonzero(np.diff(tr.current) != 0) + 1
    assert np.all(changes % 5 == 0)


def test_record_decimation(plant, curve, amp, pid_gains):
    tr = run_closed_loop(plant, curve, pid_gains, amp, Scenario(3.0),
                         SimConfig(duration=0.1, record_decimation=10))
    assert len(tr) == 101
    assert tr.time[1] == pytest.approx(1e-3)


def test_contact_fault_ends_run(plant, curve, amp, pid_gains):
    tr = run_closed_loop(plant, curve, pid_gains, amp, Scenario(3.0, ((0.01, -40.0),)),
                         SimConfig(duration=1.0))
    assert tr.fault == "contact"
    assert tr.time[-1] < 1.0
    assert not tr.settled


def test_sensor_loss_fault(plant, curve, amp, pid_gains):
    tr = run_closed_loop(plant, curve, pid_gains, amp, Scenario(3.0, ((0.01, 40.0),)),
                         SimConfig(duration=1.0))
    assert tr.fault == "sensor-loss"
    assert np.all((tr.current >= 0) & (tr.current <= amp.i_max))


def test_setpoint_outside_sensor_range(plant, curve, amp, pid_gains):
    with pytest.raises(DomainError):
        run_closed_loop(plant, curve, pid_gains, amp, Scenario(0.5), SimConfig(duration=0.1))


def test_noisy_runs_are_deterministic(plant, amp, pid_gains):
    noisy = SensorCurve(noise_sigma=0.01)
    sc, cfg = Scenario(3.0, ((0.05, 1.0),)), SimConfig(duration=0.2)
    a = run_closed_loop(plant, noisy, pid_gains, amp, sc, cfg, seed=11)
    b = run_closed_loop(plant, noisy, pid_gains, amp, sc, cfg, seed=11)
    c = run_closed_loop(plant, noisy, pid_gains, amp, sc, cfg, seed=12)
    fa, fb, fc = io.StringIO(), io.StringIO(), io.StringIO()
    a.to_csv(fa), b.to_csv(fb), c.to_csv(fc)
    assert fa.getvalue() == fb.getvalue()
    assert fa.getvalue() != fc.getvalue()
    assert fa.getvalue().splitlines()[0] == ",".join(TRACE_HEADER)


def test_config_and_scenario_validation():
    with pytest.raises(DomainError):
        SimConfig(dt=0.0)
    with pytest.raises(DomainError):
        SimConfig(dt=1e-4, duration=1e-4)
    with pytest.raises(DomainError):
        SimConfig(dt=1e-4, controller_period=1.5e-4)
    with pytest.raises(DomainError):
        Scenario(3.0, ((0.2, 1.0), (0.1, 1.0)))
    with pytest.raises(DomainError):
        Scenario(3.0, ((0.2, float("inf")),))
    assert Scenario(3.0, ((0.1, 1.0), (0.5, 2.0))).load_at(0.3) == 1.0


def test_stiffness_pid_is_infinite(plant, curve, amp, pid_gains):
    rep = measure_stiffness(plant, curve, pid_gains, amp, LOADS, SimConfig(duration=2.0))
    assert rep.stiffness_class == "infinite-within-tolerance"
    assert abs(rep.compliance) < 1e-4


def test_stiffness_pd_matches_force_balance(plant, curve, amp, lm, chain, pid_gains):
    pd = replace(pid_gains, ki=0.0)
    rep = measure_stiffness(plant, curve, pd, amp, LOADS, SimConfig(duration=2.0))
    expected = 1.0 / (lm.net_stiffness + lm.k_i * chain * pd.kp)
    assert rep.stiffness_class == "finite"
    assert rep.compliance == pytest.approx(expected, rel=0.05)
    assert all(e.y_ss > 0 for e in rep.entries)


def test_stiffness_controller_off_matches_plant():
    # at a 4 mm gap the springs outweigh the magnetic negative stiffness
    p, amp = PlantParams(), AmplifierModel()
    lm = linearize(p, operating_point(p, 4.0))
    assert lm.net_stiffness > 0
    curve = SensorCurve(standoff=7.0)
    gains = PidGains(kp=0.0, td=0.0, ki=0.0, bias=holding_bias(p, amp, 4.0))
    rep = measure_stiffness(p, curve, gains, amp, [0.005, 0.01, 0.015, 0.02],
                            SimConfig(duration=2.0), setpoint_gap=4.0)
    assert rep.stiffness_class == "finite"
    assert rep.compliance == pytest.approx(1.0 / lm.net_stiffness, rel=0.05)


def test_stiffness_unsettled(plant, curve, amp, pid_gains):
    rep = measure_stiffness(plant, curve, pid_gains, amp, [1.0], SimConfig(duration=0.05))
    assert rep.stiffness_class == "unsettled"
    assert len(rep.entries) == 1


def test_open_loop_maglev_instability():
    p = PlantParams(spring_k=0.0, damping_c=0.0)
    lm = linearize(p, operating_point(p, 3.0, 1.0))
    eig, stable = stability_analysis(lm, PidGains(kp=0.0), 0.2)
    assert not stable
    assert sorted(eig.real) == pytest.approx(
        [-math.sqrt(-lm.k_x / lm.mass_eff), math.sqrt(-lm.k_x / lm.mass_eff)], rel=1e-12)


def test_open_loop_instability_with_damping():
    p = PlantParams(spring_k=0.0)
    lm = linearize(p, operating_point(p, 3.0, 1.0))
    eig, stable = stability_analysis(lm, PidGains(kp=0.0), 0.2)
    m, c, k = lm.mass_eff, lm.damping, lm.net_stiffness
    root = (-c + math.sqrt(c * c - 4 * m * k)) / (2 * m)
    assert not stable
    assert max(eig.real) == pytest.approx(root, rel=1e-12)


def test_designed_pd_eigenvalues(lm, chain):
    z, w = 0.6, 120.0
    g = design_gains_from_specs(DesignSpecs(z, w), lm, chain, ki_ratio=0.0)
    eig, stable = stability_analysis(lm, g, chain)
    assert stable and len(eig) == 2
    for e in eig:
        assert abs(e.real + z * w) < 1e-9
        assert abs(abs(e.imag) - w * math.sqrt(1 - z * z)) < 1e-9


def test_overdamped_limit():
    p = PlantParams(damping_c=100.0)
    lm = linearize(p, operating_point(p, p.gap0))
    eig, stable = stability_analysis(lm, PidGains(kp=0.0), 0.2)
    assert stable
    assert np.all(eig.imag == 0) and np.all(eig.real < 0)


def test_pid_stability_uses_third_state(lm, chain, pid_gains):
    eig, stable = stability_analysis(lm, pid_gains, chain)
    assert len(eig) == 3 and stable


def test_step_metrics_simple():
    t = np.arange(5) * 1.0
    ts, over = step_metrics(t, np.array([0.0, 1.5, 0.9, 1.0, 1.0]), 1.0, 1.0)
    assert ts == 3.0
    assert over == pytest.approx(50.0)


ZETAS = [0.3, 0.5, 0.7, 0.9]
OMEGAS = [60.0, 100.0, 150.0, 200.0, 300.0]


@pytest.fixture(scope="module")
def sweep_rows():
    p = calibrate_to_current_coefficient(7.5, 3.0, PlantParams())
    lm = linearize(p, operating_point(p, 3.0))
    chain = SensorCurve().gain * AmplifierModel().transconductance
    grid = [DesignSpecs(z, w) for z in ZETAS for w in OMEGAS]
    rows = gain_sweep(grid, lm, chain, Scenario(3.0, ((0.0, 1.0),)), SimConfig(dt=1e-5, duration=1.0))
    return {(r.zeta, r.omega_n): r for r in rows}


def test_sweep_settling_monotone(sweep_rows):
    for z in ZETAS:
        ts = [sweep_rows[(z, w)].settling_time for w in OMEGAS]
        assert all(np.isfinite(ts))
        assert all(b <= a for a, b in zip(ts, ts[1:]))


def test_sweep_settling_within_envelope_bound(sweep_rows):
    # |y - y_final| <= |y_final| * exp(-zeta*wn*t) / sqrt(1 - zeta^2)
    for (z, w), r in sweep_rows.items():
        bound = math.log(50.0 / math.sqrt(1 - z * z)) / (z * w)
        assert r.settling_time <= bound + 1e-5
        assert r.settling_time > 0.5 * 4.0 / (z * w)


def test_sweep_overshoot_matches_second_order(sweep_rows):
    for (z, w), r in sweep_rows.items():
        expected = 100.0 * math.exp(-math.pi * z / math.sqrt(1 - z * z))
        assert r.overshoot == pytest.approx(expected, rel=1e-3)
    for w in OMEGAS:
        over = [sweep_rows[(z, w)].overshoot for z in ZETAS]
        assert all(b < a for a, b in zip(over, over[1:]))


def test_sweep_flags_infeasible(lm, chain):
    rows = gain_sweep([DesignSpecs(0.3, 20.0), DesignSpecs(0.7, 150.0)], lm, chain,
                      Scenario(3.0, ((0.0, 1.0),)), SimConfig(duration=0.5))
    assert not rows[0].feasible and math.isnan(rows[0].settling_time)
    assert rows[1].feasible and rows[1].stable


def test_sweep_with_integral_action(lm, chain):
    rows = gain_sweep([DesignSpecs(0.7, 150.0)], lm, chain, Scenario(3.0, ((0.0, 1.0),)),
                      SimConfig(duration=1.0), ki_ratio=0.1)
    assert rows[0].ki == pytest.approx(15.0)
    assert rows[0].stable and np.isfinite(rows[0].settling_time)


def test_sweep_needs_a_load_step(lm, chain):
    with pytest.raises(DomainError):
        gain_sweep([DesignSpecs(0.7, 150.0)], lm, chain, Scenario(3.0), SimConfig())
    with pytest.raises(DomainError):
        gain_sweep([], lm, chain, Scenario(3.0, ((0.0, 1.0),)), SimConfig())
