"""Deterministic mesoscopic queue simulator.

Every movement is an independent chain: an unbounded entry link feeding a
storage-limited stop-line queue at its first signalized intersection, then
alternating travel segments (fixed traversal time, finite storage) and
stop-line servers.  Vehicles are counts in point queues; a server discharges
during its effective green (green minus the startup lost time) at the
movement's saturation rate, and is blocked while the downstream bay is full,
which is how spillback propagates upstream.  Per-vehicle delays are
recovered from the cumulative arrival and exit curves (every chain is FIFO).

Vehicles that never left the entry link by the end of the horizon are the
denied-entry count; their waiting still enters the delay statistics from
their scheduled arrival instant.
"""

from __future__ import annotations

import statistics
from collections import deque
from dataclasses import dataclass

import numpy as np

from .model import MOVEMENTS, DemandScenario, ModelParams, MovementTable
from .plan import SignalPlan

PROFILE_BIN = 300      # seconds per delay-profile bin


@dataclass
class SimMetrics:
    scenario_id: str
    plan_model: str
    seed: int
    horizon: int
    avg_delay: float
    avg_queue: float
    per_movement_delay: dict[int, float]
    profile: list[tuple[int, float]]
    generated: int
    discharged: int
    in_network: int
    denied_entry: int

    def conservation_ok(self) -> bool:
        return self.generated == (self.discharged + self.in_network
                                  + self.denied_entry)


class MovementChain:
    """One movement's servers and bays, simulated on its own."""

    def __init__(self, movement, plan: SignalPlan, table: MovementTable,
                 params: ModelParams, horizon: float, step: float = 1.0):
        if step <= 0 or abs(round(1.0 / step) * step - 1.0) > 1e-9:
            raise ValueError("step must divide one second")
        self.movement = movement
        self.step = step
        self.nsteps = int(round(horizon / step))
        path = table.paths[movement]
        self.nservers = len(path)
        self.rates = [params.discharge_rate(table, l, movement) * step
                      for l in path]
        self.first_cap = table.stopline_capacity[movement]
        cycle = plan.cycle
        self.cycle_steps = int(round(cycle / step))
        self.active = []
        for l in path:
            start, _ = plan.green_window(l, movement)
            g = plan.greens[(l, movement)]
            win = np.zeros(self.cycle_steps, dtype=bool)
            for k in range(self.cycle_steps):
                phase = (k * step - start) % cycle
                win[k] = params.lost_time <= phase < g
            self.active.append(win.tolist())
        self.bays = []
        for (a, b) in table.consecutive_pairs(movement):
            self.bays.append((int(round(table.travel_time[(a, b, movement)]
                                        / step)),
                              table.bay_capacity[(a, b, movement)]))
        self.freeflow = sum(table.travel_time[(a, b, movement)]
                            for (a, b) in table.consecutive_pairs(movement))

    def run(self, arrivals):
        """Simulate the chain; `arrivals` holds per-step entry counts.

        Returns (exits-per-step, queue-seconds, entered, in-network, denied).
        """
        n = self.nservers
        queues = [0] * n
        credits = [0.0] * n
        occ = [0] * (n - 1)                   # bay occupancy (transit+queue)
        transit = [deque() for _ in range(n - 1)]
        entry = 0
        entered = 0
        exits = np.zeros(self.nsteps, dtype=np.int64)
        queue_sum = 0.0
        active, rates, bays = self.active, self.rates, self.bays
        csteps = self.cycle_steps

        for t in range(self.nsteps):
            ct = t % csteps
            for j in range(n - 1):
                tr = transit[j]
                while tr and tr[0][0] <= t:
                    queues[j + 1] += tr.popleft()[1]
            # Serve from the exit backwards so storage freed downstream is
            # usable upstream within the same step.
            for j in range(n - 1, -1, -1):
                if active[j][ct]:
                    credits[j] += rates[j]
                    move = min(int(credits[j] + 1e-9), queues[j])
                    if j < n - 1 and move > bays[j][1] - occ[j]:
                        move = bays[j][1] - occ[j]
                    if move > 0:
                        queues[j] -= move
                        credits[j] -= move
                        if j > 0:
                            occ[j - 1] -= move
                        if j < n - 1:
                            occ[j] += move
                            transit[j].append((t + bays[j][0], move))
                        else:
                            exits[t] += move
                else:
                    credits[j] = 0.0
            entry += int(arrivals[t])
            space = self.first_cap - queues[0]
            if space > 0 and entry > 0:
                mv = min(space, entry)
                entry -= mv
                queues[0] += mv
                entered += mv
            queue_sum += (entry + sum(queues)) * self.step
        travelling = sum(cnt for tr in transit for _, cnt in tr)
        return exits, queue_sum, entered, sum(queues) + travelling, entry


def _arrival_counts(rate, nsteps, step, rng, mode):
    if rate <= 0:
        return np.zeros(nsteps, dtype=np.int64)
    if mode == "poisson":
        return rng.poisson(rate * step, size=nsteps).astype(np.int64)
    if mode == "uniform":
        n = int(rate * nsteps * step)
        times = (np.arange(n) + 0.5) / rate
        counts, _ = np.histogram(times, bins=nsteps,
                                 range=(0.0, nsteps * step))
        return counts.astype(np.int64)
    raise ValueError(f"unknown arrival mode {mode!r}")


def run_simulation(plan: SignalPlan, scenario: DemandScenario,
                   table: MovementTable, params: ModelParams, seed: int,
                   horizon: int = 3600, step: float = 1.0,
                   arrival_mode: str = "poisson") -> SimMetrics:
    """Evaluate a plan on a scenario; deterministic given the seed."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    for i in MOVEMENTS:
        for l in table.paths[i]:
            if (l, i) not in plan.greens or (l, i) not in plan.starts:
                raise ValueError(f"plan misses movement {i} at {l}")
        if table.first(i) not in plan.theta:
            raise ValueError(f"plan misses offset {table.first(i)}")

    rng = np.random.default_rng(seed)
    nsteps = int(round(horizon / step))
    generated = discharged = in_network = denied = 0
    queue_sum = 0.0
    delay_total = 0.0
    per_move = {}
    bins = np.zeros(-(-horizon // PROFILE_BIN))
    bin_counts = np.zeros_like(bins)

    for i in MOVEMENTS:
        chain = MovementChain(i, plan, table, params, horizon, step)
        arrivals = _arrival_counts(scenario.demand(i), nsteps, step, rng,
                                   arrival_mode)
        exits, qsum, entered, in_net, left_outside = chain.run(arrivals)
        gen = int(arrivals.sum())
        out = int(exits.sum())
        generated += gen
        discharged += out
        in_network += in_net
        denied += left_outside
        queue_sum += qsum

        arr_times = np.repeat(np.arange(nsteps) * step, arrivals)
        exit_times = np.repeat(np.arange(nsteps) * step, exits)
        delays = np.empty(gen)
        ff = chain.freeflow
        delays[:out] = exit_times - arr_times[:out] - ff
        if entered > out:
            delays[out:entered] = np.maximum(
                0.0, horizon - arr_times[out:entered] - ff)
        if gen > entered:
            delays[entered:] = horizon - arr_times[entered:]
        np.clip(delays, 0.0, None, out=delays)
        per_move[i] = float(delays.mean()) if gen else 0.0
        delay_total += float(delays.sum())
        if gen:
            idx = (arr_times // PROFILE_BIN).astype(int)
            np.add.at(bins, idx, delays)
            np.add.at(bin_counts, idx, 1)

    profile = [(int(k * PROFILE_BIN),
                float(bins[k] / bin_counts[k]) if bin_counts[k] else 0.0)
               for k in range(len(bins))]
    metrics = SimMetrics(
        scenario_id=scenario.scenario_id, plan_model=plan.model, seed=seed,
        horizon=horizon,
        avg_delay=delay_total / generated if generated else 0.0,
        avg_queue=queue_sum / horizon,
        per_movement_delay=per_move, profile=profile,
        generated=generated, discharged=discharged,
        in_network=in_network, denied_entry=denied)
    if not metrics.conservation_ok():
        raise AssertionError("vehicle conservation violated "
                             f"({metrics.generated} generated vs "
                             f"{metrics.discharged}+{metrics.in_network}"
                             f"+{metrics.denied_entry})")
    return metrics


@dataclass
class SummaryStats:
    scenario_id: str
    plan_model: str
    n: int
    delay_mean: float
    delay_std: float
    queue_mean: float
    queue_std: float
    per_movement_delay_mean: dict[int, float]


def aggregate(metrics_list) -> SummaryStats:
    """Mean and sample standard deviation across replications of one
    (plan, scenario) pair; mixed inputs are rejected."""
    if not metrics_list:
        raise ValueError("need at least one replication")
    keys = {(m.scenario_id, m.plan_model, m.horizon) for m in metrics_list}
    if len(keys) > 1:
        raise ValueError(f"mixed scenarios in aggregate: {sorted(keys)}")
    delays = [m.avg_delay for m in metrics_list]
    queues = [m.avg_queue for m in metrics_list]
    per_move = {i: statistics.fmean(m.per_movement_delay.get(i, 0.0)
                                    for m in metrics_list)
                for i in MOVEMENTS}
    n = len(metrics_list)
    return SummaryStats(
        scenario_id=metrics_list[0].scenario_id,
        plan_model=metrics_list[0].plan_model, n=n,
        delay_mean=statistics.fmean(delays),
        delay_std=statistics.stdev(delays) if n > 1 else 0.0,
        queue_mean=statistics.fmean(queues),
        queue_std=statistics.stdev(queues) if n > 1 else 0.0,
        per_movement_delay_mean=per_move)


def write_metrics(metrics: SimMetrics, path) -> None:
    """Key/value metrics as delimited text."""
    lines = ["key,value",
             f"scenario,{metrics.scenario_id}",
             f"model,{metrics.plan_model}",
             f"seed,{metrics.seed}",
             f"horizon,{metrics.horizon}",
             f"avg_delay,{metrics.avg_delay:.6f}",
             f"avg_queue,{metrics.avg_queue:.6f}",
             f"generated,{metrics.generated}",
             f"discharged,{metrics.discharged}",
             f"in_network,{metrics.in_network}",
             f"denied_entry,{metrics.denied_entry}"]
    for i in sorted(metrics.per_movement_delay):
        lines.append(f"delay_movement_{i},{metrics.per_movement_delay[i]:.6f}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_profile(metrics: SimMetrics, path) -> None:
    """Time-binned delay profile (bin start, mean delay) as delimited text."""
    lines = ["bin_start,mean_delay"]
    lines.extend(f"{t},{d:.6f}" for t, d in metrics.profile)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
