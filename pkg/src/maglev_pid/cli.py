"""Command-line front end.

Exit codes: 0 success, 1 config or usage error, 2 runtime fault.
"""

from __future__ import annotations

import argparse
import io
import os
import sys
import tempfile
from dataclasses import replace

from . import sensing
from .config import load_config
from .errors import ConfigError, MaglevError, NoFeasibleStartError
from .sim import (
    gain_sweep,
    measure_stiffness,
    run_closed_loop,
    stability_analysis,
    write_sweep_csv,
)
from .tuning import tune_gains

EXIT_OK, EXIT_CONFIG, EXIT_FAULT = 0, 1, 2


def _emit(text, out):
    """Write ``text`` to ``out`` (replacing it atomically) or to stdout."""
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(out))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _info(args, msg):
    # keep stdout clean when it carries the CSV
    stream = sys.stderr if args.out in (None, "-") else sys.stdout
    print(msg, file=stream)


def _render(writer):
    buf = io.StringIO(newline="")
    writer(buf)
    return buf.getvalue()


def cmd_simulate(args):
    cfg = load_config(args.config)
    curve = cfg.curve
    tr = run_closed_loop(cfg.params, curve, cfg.gains, cfg.amp, cfg.scenario, cfg.sim,
                         seed=args.seed)
    _emit(_render(tr.to_csv), args.out)
    if tr.faulted:
        print(f"fault: {tr.fault}: {tr.fault_message}", file=sys.stderr)
        return EXIT_FAULT
    if not tr.settled:
        print("warning: run did not settle within the simulated duration", file=sys.stderr)
    _info(args, f"settled={int(tr.settled)} final_gap_mm={float(tr.gap[-1])!r} samples={len(tr)}")
    return EXIT_OK


def cmd_calibrate(args):
    if not args.samples:
        raise ConfigError("--samples", "a calibration CSV is required")
    if not os.path.isfile(args.samples):
        raise ConfigError("--samples", f"file not found: {args.samples}")
    try:
        samples = sensing.load_samples(args.samples)
        fit = sensing.fit_calibration(samples, residual_tol=args.residual_tol)
    except MaglevError as exc:
        raise ConfigError("--samples", str(exc)) from None
    c = fit.curve
    text = (
        "gain_v_per_mm,offset_v,linear_lo_mm,linear_hi_mm,max_residual_v,n_used,degraded\n"
        f"{c.gain!r},{c.offset!r},{c.linear_lo!r},{c.linear_hi!r},"
        f"{fit.max_residual!r},{fit.n_used},{int(fit.degraded)}\n"
    )
    _emit(text, args.out)
    if fit.degraded:
        print("warning: no linear window found; fitted all samples", file=sys.stderr)
    return EXIT_OK


def _parse_loads(text):
    try:
        loads = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError("--loads", f"expected comma-separated numbers, got {text!r}") from None
    if not loads:
        raise ConfigError("--loads", "at least one load is required")
    return loads


def cmd_stiffness(args):
    cfg = load_config(args.config)
    loads = _parse_loads(args.loads) if args.loads else list(cfg.stiffness_loads)
    rep = measure_stiffness(cfg.params, cfg.curve, cfg.gains, cfg.amp, loads, cfg.sim,
                            setpoint_gap=cfg.scenario.setpoint_gap,
                            compliance_tol=cfg.compliance_tol, load_time=cfg.load_time)
    _emit(_render(rep.to_csv), args.out)
    _info(args, f"compliance_mm_per_n={rep.compliance!r}")
    _info(args, f"stiffness_class={rep.stiffness_class}")
    return EXIT_FAULT if rep.stiffness_class == "unsettled" else EXIT_OK


def cmd_sweep(args):
    cfg = load_config(args.config)
    rows = gain_sweep(cfg.sweep_specs, cfg.lm, cfg.loop_chain, cfg.sweep_scenario,
                      cfg.sweep_sim, ki_ratio=cfg.sweep_ki_ratio)
    _emit(_render(lambda fh: write_sweep_csv(rows, fh)), args.out)
    n_bad = sum(not r.feasible for r in rows)
    _info(args, f"rows={len(rows)} infeasible={n_bad}")
    return EXIT_OK


def cmd_tune(args):
    cfg = load_config(args.config)
    try:
        res = tune_gains(cfg.tuning)
    except NoFeasibleStartError as exc:
        print(f"fault: {exc}", file=sys.stderr)
        return EXIT_FAULT
    _emit(_render(res.to_csv), args.out)
    g = res.gains
    _info(args, f"kp={g.kp!r} td={g.td!r} ki={g.ki!r} cost={res.cost!r} "
                f"evals={res.evals_used} converged={int(res.converged)}")
    return EXIT_OK


def cmd_stability(args):
    cfg = load_config(args.config)
    gains = cfg.gains
    if args.controller_off:
        gains = replace(gains, kp=0.0, td=0.0, ki=0.0)
    eig, stable = stability_analysis(cfg.lm, gains, cfg.loop_chain)
    lines = ["index,real,imag\n"]
    for i, z in enumerate(sorted(eig, key=lambda z: (z.real, z.imag))):
        lines.append(f"{i},{float(z.real)!r},{float(z.imag)!r}\n")
    _emit("".join(lines), args.out)
    _info(args, f"stable={int(stable)}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(
        prog="maglev-pid",
        description="Maglev vibration-isolation simulator with PD/PID control",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="YAML experiment config (defaults if omitted)")
        p.add_argument("--out", help="output CSV path (stdout if omitted)")
        p.add_argument("--seed", type=int, default=None, help="sensor-noise seed")
        p.set_defaults(func=func)
        return p

    add("simulate", cmd_simulate, "run one closed-loop scenario and write its trace")
    p = add("calibrate", cmd_calibrate, "fit a sensor curve to gap_mm,voltage_v samples")
    p.add_argument("--samples", help="calibration samples CSV")
    p.add_argument("--residual-tol", type=float, default=None, help="window residual limit (V)")
    p = add("stiffness", cmd_stiffness, "static load-deflection test")
    p.add_argument("--loads", help="comma-separated loads in N")
    add("sweep", cmd_sweep, "settling time and overshoot over (zeta, omega_n) designs")
    add("tune", cmd_tune, "derivative-free gain tuning")
    p = add("stability", cmd_stability, "eigenvalues of the linearised closed loop")
    p.add_argument("--controller-off", action="store_true", help="analyse the open loop")
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be a non-negative integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MaglevError as exc:
        print(f"fault: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
