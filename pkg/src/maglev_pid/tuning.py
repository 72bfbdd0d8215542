"""Derivative-free PID tuning on the nonlinear closed-loop simulation.

A coarse grid over the gain box seeds a bounded Nelder-Mead descent. The
search runs in coordinates normalised to the unit box, trial points are
clipped to it, and every simulation is cached, so the result is
deterministic and never worse than the best seed.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .control import AmplifierModel, PidGains
from .errors import DomainError, NoFeasibleStartError
from .plant import PlantParams
from .sensing import SensorCurve
from .sim import Scenario, SimConfig, holding_bias, run_closed_loop

PENALTY = 1e9
GAIN_NAMES = ("kp", "td", "ki")


def trace_cost(trace, kind="ITAE"):
    """Integral error cost of a trace, with ``e = setpoint gap - gap``.

    Faulted traces cost ``1e9 + max|e|`` so they rank behind every run
    that finishes.
    """
    if len(trace) == 0:
        raise DomainError("cannot score an empty trace")
    e = trace.setpoint_gap - trace.gap
    if trace.faulted or not np.all(np.isfinite(e)):
        finite = e[np.isfinite(e)]
        return PENALTY + (float(np.max(np.abs(finite))) if finite.size else PENALTY)
    dt = float(trace.time[1] - trace.time[0]) if len(trace) > 1 else 0.0
    kind = kind.upper()
    if kind == "ITAE":
        return float(np.sum(trace.time * np.abs(e)) * dt)
    if kind == "ISE":
        return float(np.sum(e * e) * dt)
    raise DomainError(f"unknown cost kind {kind!r}; expected ITAE or ISE")


@dataclass(frozen=True)
class TuneProblem:
    bounds: tuple = ((2.0, 20.0), (0.002, 0.02), (2.0, 40.0))
    cost_kind: str = "ITAE"
    seed_grid_points_per_axis: int = 4
    max_evals: int = 200
    params: PlantParams = field(default_factory=PlantParams)
    curve: SensorCurve = field(default_factory=SensorCurve)
    amp: AmplifierModel = field(default_factory=AmplifierModel)
    base_gains: PidGains | None = None  # bias/limits template; None holds the setpoint
    scenario: Scenario = field(default_factory=lambda: Scenario(3.0, ((0.01, 1.0),)))
    cfg: SimConfig = field(default_factory=lambda: SimConfig(duration=0.5))

    def __post_init__(self):
        if len(self.bounds) != 3:
            raise DomainError("bounds need one (lo, hi) pair for each of kp, td, ki")
        for name, (lo, hi) in zip(GAIN_NAMES, self.bounds):
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise DomainError(f"bounds for {name} must be finite with lo <= hi")
            if lo < 0:
                raise DomainError(f"bounds for {name} must be non-negative")
        if self.cost_kind.upper() not in ("ITAE", "ISE"):
            raise DomainError(f"unknown cost kind {self.cost_kind!r}")
        if self.seed_grid_points_per_axis < 1:
            raise DomainError("seed_grid_points_per_axis must be >= 1")
        if self.max_evals < self.seed_grid_points_per_axis ** 3:
            raise DomainError(
                f"max_evals ({self.max_evals}) is smaller than the seed grid "
                f"({self.seed_grid_points_per_axis ** 3} points)"
            )


@dataclass
class TuneResult:
    gains: PidGains
    cost: float
    evals_used: int
    converged: bool
    history: list
    best_seed_cost: float = float("nan")

    def to_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("eval", "kp", "td", "ki", "cost"))
        for i, (g, c) in enumerate(self.history):
            w.writerow((i, repr(g.kp), repr(g.td), repr(g.ki), repr(c)))


class _BudgetExhausted(Exception):
    pass


def simulation_objective(problem):
    def evaluate(gains):
        tr = run_closed_loop(problem.params, problem.curve, gains, problem.amp,
                             problem.scenario, problem.cfg)
        return trace_cost(tr, problem.cost_kind)
    return evaluate


def tune_gains(problem, evaluate=None, xtol=1e-4):
    """Grid-seeded bounded Nelder-Mead over (kp, td, ki).

    ``evaluate`` maps PidGains to a cost; it defaults to simulating the
    problem's scenario and scoring it with ``trace_cost``.
    """
    if evaluate is None:
        evaluate = simulation_objective(problem)
    lo = np.array([b[0] for b in problem.bounds], dtype=float)
    hi = np.array([b[1] for b in problem.bounds], dtype=float)
    span = hi - lo
    base = problem.base_gains
    if base is None:
        base = PidGains(bias=holding_bias(problem.params, problem.amp,
                                          problem.scenario.setpoint_gap))
    free = np.flatnonzero(span > 0)

    cache = {}
    history = []

    def to_gains(u):
        x = lo.copy()
        x[free] = np.clip(lo[free] + np.clip(u, 0.0, 1.0) * span[free], lo[free], hi[free])
        return replace(base, kp=float(x[0]), td=float(x[1]), ki=float(x[2]))

    def cost_of(u):
        g = to_gains(u)
        key = (g.kp, g.td, g.ki)
        if key not in cache:
            if len(cache) >= problem.max_evals:
                raise _BudgetExhausted
            c = float(evaluate(g))
            cache[key] = c
            history.append((g, c))
        return cache[key]

    n_axis = problem.seed_grid_points_per_axis
    axis = np.linspace(0.0, 1.0, n_axis) if n_axis > 1 else np.array([0.5])
    seeds = [np.array(p) for p in itertools.product(axis, repeat=len(free))]
    seed_costs = [cost_of(u) for u in seeds]
    best_idx = int(np.argmin(seed_costs))
    best_seed_cost = seed_costs[best_idx]
    if best_seed_cost >= PENALTY:
        raise NoFeasibleStartError("every seed-grid point faulted")

    converged = False
    if free.size:
        step = 0.5 / max(n_axis - 1, 1)
        x0 = seeds[best_idx]
        simplex = [x0]
        for j in range(free.size):
            v = x0.copy()
            v[j] = v[j] + step if v[j] + step <= 1.0 else v[j] - step
            simplex.append(v)
        try:
            converged = _nelder_mead(simplex, cost_of, xtol)
        except _BudgetExhausted:
            converged = False
    else:
        converged = True

    best_gains, best_cost = min(history, key=lambda gc: gc[1])
    return TuneResult(best_gains, best_cost, len(cache), converged, history, best_seed_cost)


def _nelder_mead(simplex, f, xtol, alpha=1.0, gamma=2.0, rho=0.5, sigma=0.5):
    pts = [np.clip(p, 0.0, 1.0) for p in simplex]
    vals = [f(p) for p in pts]
    while True:
        order = np.argsort(vals, kind="stable")
        pts = [pts[i] for i in order]
        vals = [vals[i] for i in order]
        diam = max(np.max(np.abs(p - pts[0])) for p in pts[1:])
        if diam < xtol:
            return True
        centroid = np.mean(pts[:-1], axis=0)
        worst = pts[-1]
        xr = np.clip(centroid + alpha * (centroid - worst), 0.0, 1.0)
        fr = f(xr)
        if fr < vals[0]:
            xe = np.clip(centroid + gamma * (centroid - worst), 0.0, 1.0)
            fe = f(xe)
            pts[-1], vals[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        if fr < vals[-2]:
            pts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[-1]:
            xc = np.clip(centroid + rho * (xr - centroid), 0.0, 1.0)
            fc = f(xc)
            if fc <= fr:
                pts[-1], vals[-1] = xc, fc
                continue
        else:
            xc = np.clip(centroid + rho * (worst - centroid), 0.0, 1.0)
            fc = f(xc)
            if fc < vals[-1]:
                pts[-1], vals[-1] = xc, fc
                continue
        for i in range(1, len(pts)):
            pts[i] = pts[0] + sigma * (pts[i] - pts[0])
            vals[i] = f(pts[i])
