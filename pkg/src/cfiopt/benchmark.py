"""State-of-practice benchmark signal plan.

Reconstruction of the practice procedure the comparison runs against: cycle
from the classical optimal-cycle rule over the main intersection's critical
flow ratios, splits proportional to those ratios, identical timings for the
two sub-intersections on opposite sides of the main one, and offsets that
release each crossover platoon so it reaches the main intersection exactly
at the start of its green (start-of-green progression; a mid-green variant
is available for sensitivity checks)."""

from __future__ import annotations

from dataclasses import dataclass

from . import bands as bandmath
from .model import MAIN, MOVEMENTS, DemandScenario, ModelParams, MovementTable
from .plan import SignalPlan

CROSSOVER = {1: 2, 2: 4, 3: 6, 4: 8}    # sub-intersection -> its crossover


class OversaturatedRatios(ValueError):
    """Critical flow ratios at or above one: no finite cycle clears demand."""


@dataclass(frozen=True)
class BenchmarkConfig:
    lost_time_factor: float = 1.5      # cycle-rule coefficient on lost time
    lost_time_offset: float = 5.0      # cycle-rule additive constant
    alignment: str = "start"           # progression target: "start" | "mid"

    def __post_init__(self):
        if self.lost_time_factor <= 0 or self.lost_time_offset <= 0:
            raise ValueError("cycle rule coefficients must be positive")
        if self.alignment not in ("start", "mid"):
            raise ValueError("alignment must be 'start' or 'mid'")


def webster_cycle(critical_ratios, lost_time, params: ModelParams,
                  config: BenchmarkConfig | None = None) -> int:
    """Optimal-cycle rule, rounded and clamped to the model's cycle bounds."""
    config = config or BenchmarkConfig()
    if lost_time <= 0:
        raise ValueError("lost time must be positive")
    y = sum(critical_ratios)
    if y >= 1.0:
        raise OversaturatedRatios(
            f"critical flow ratios sum to {y:.3f} >= 1")
    cycle = (config.lost_time_factor * lost_time
             + config.lost_time_offset) / (1.0 - y)
    return min(max(round(cycle), params.cycle_min), params.cycle_max)


def _ratio(scenario, table, params, l, i):
    return (params.alpha(table, l, i) * scenario.demand(i)
            / params.sat(l, i))


def _split(y_first, y_second, cycle, params):
    """Integer green of the first phase: proportional effective greens
    inflated by the startup lost time, clamped to the green bounds."""
    usable = cycle - 2 * params.lost_time
    total = y_first + y_second
    frac = 0.5 if total <= 0 else y_first / total
    g = round(frac * usable + params.lost_time)
    lo = max(params.green_min, cycle - min(params.green_max, cycle - 1))
    hi = cycle - lo
    return int(min(max(g, lo), hi))


def build_benchmark_plan(scenario: DemandScenario, table: MovementTable,
                         params: ModelParams,
                         config: BenchmarkConfig | None = None) -> SignalPlan:
    config = config or BenchmarkConfig()
    notes = []

    group_a, group_b = table.phase_groups[MAIN]
    y_a = max(_ratio(scenario, table, params, MAIN, i) for i in group_a)
    y_b = max(_ratio(scenario, table, params, MAIN, i) for i in group_b)
    try:
        cycle = webster_cycle([y_a, y_b], 2 * params.lost_time, params, config)
    except OversaturatedRatios:
        cycle = params.cycle_max
        notes.append("oversaturated: cycle forced to the maximum, "
                     "splits proportional")

    phase_green = {(MAIN, 0): _split(y_a, y_b, cycle, params)}
    phase_green[(MAIN, 1)] = cycle - phase_green[(MAIN, 0)]

    # Opposite subs share one timing: average the crossover and exit-group
    # critical ratios of the two, then split against each other.
    for pair in ((1, 3), (2, 4)):
        y_cross = 0.0
        y_exit = 0.0
        for sub in pair:
            cross_group, exit_group = table.phase_groups[sub]
            y_cross += max(_ratio(scenario, table, params, sub, i)
                           for i in cross_group) / 2.0
            y_exit += max(_ratio(scenario, table, params, sub, i)
                          for i in exit_group) / 2.0
        g_cross = _split(y_cross, y_exit, cycle, params)
        for sub in pair:
            phase_green[(sub, 0)] = g_cross
            phase_green[(sub, 1)] = cycle - g_cross

    starts = bandmath.phase_starts(table, phase_green)
    greens = {}
    for i in MOVEMENTS:
        for l in table.paths[i]:
            greens[(l, i)] = phase_green[(l, table.group_of(l, i))]

    theta = {MAIN: 0}
    for sub, mv in CROSSOVER.items():
        t = table.travel_time[(sub, MAIN, mv)]
        target = starts[(MAIN, mv)]
        if config.alignment == "mid":
            target += (greens[(MAIN, mv)] - greens[(sub, mv)]) / 2.0
        theta[sub] = int(round(target - t)) % cycle
    return SignalPlan("benchmark", cycle, greens, starts, theta, {}, notes)
