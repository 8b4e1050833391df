"""First optimization stage: common cycle length and green splits.

The stage maximizes the sum of per-intersection capacity multipliers over
the reciprocal cycle length and per-phase green fractions.  Constraint
groups: saturation (demand within effective-green capacity scaled by the
multiplier), cycle and green-duration bounds, queue-reach limits at each
movement's first stop line (so queues never overrun the storage there), and
clearance (queues built during red must dissipate within one green).  The
queue-reach and clearance rows are the printed fractional forms multiplied
through by the positive reciprocal cycle, an exact algebraic identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .lp import LinearProblem, Solution
from .model import INTERSECTIONS, MAIN, MOVEMENTS, DemandScenario, ModelParams, MovementTable
from .solver import solve_lp

PHASES = (0, 1)


class OversaturatedDemand(ValueError):
    """Demand at or above saturation flow at a movement's first stop line."""


class InfeasibleTiming(RuntimeError):
    """No cycle/split combination satisfies the timing constraints."""


def queue_extent(Q, s, alpha, phi, delta, xi):
    """Longest queue reach (vehicles) behind a stop line within a cycle.

    The first factor converts the red-period accumulation into the farthest
    point the queue tail reaches while the head is already discharging.
    """
    if s <= alpha * Q:
        raise OversaturatedDemand(
            f"saturation flow {s} does not exceed lane demand {alpha * Q}")
    if xi <= 0:
        raise ValueError("reciprocal cycle must be positive")
    return (s / (s - alpha * Q)) * (1 - phi + delta * xi) * alpha * Q / xi


def phi_var(l: int, phase: int) -> str:
    return f"phi[{l},{phase}]"


def build_step1(scenario: DemandScenario, table: MovementTable,
                params: ModelParams) -> LinearProblem:
    """Assemble the splits LP.

    Green fractions are one variable per (intersection, phase); the
    phase-sharing equalities are realized by routing every movement of a
    phase group to that variable.  Raises OversaturatedDemand when some
    movement cannot be served at any split.
    """
    for i in MOVEMENTS:
        f = table.first(i)
        if params.sat(f, i) <= params.alpha(table, f, i) * scenario.demand(i):
            raise OversaturatedDemand(
                f"movement {i} oversaturated at intersection {f}: "
                f"lane demand {params.alpha(table, f, i) * scenario.demand(i):.4f}"
                f" veh/s >= saturation flow {params.sat(f, i)} veh/s")

    p = LinearProblem(f"splits[{scenario.scenario_id}]")
    p.add_var("xi", 1.0 / params.cycle_max, 1.0 / params.cycle_min)
    for l in INTERSECTIONS:
        p.add_var(f"mu[{l}]", 0.0, 1.0, obj=1.0)
    for l in INTERSECTIONS:
        for ph in PHASES:
            p.add_var(phi_var(l, ph), 0.0, 1.0)

    delta = params.lost_time
    for l in INTERSECTIONS:
        p.add_con(f"split[{l}]",
                  {phi_var(l, 0): 1.0, phi_var(l, 1): 1.0}, "==", 1.0)
        for ph in PHASES:
            group = table.phase_groups[l][ph]
            gmin = max(params.green_min for i in group)
            gmax = min(params.green_max for i in group)
            p.add_con(f"gmin[{l},{ph}]",
                      {phi_var(l, ph): 1.0, "xi": -float(gmin)}, ">=", 0.0)
            p.add_con(f"gmax[{l},{ph}]",
                      {phi_var(l, ph): 1.0, "xi": -float(gmax)}, "<=", 0.0)

    for i in MOVEMENTS:
        Q = scenario.demand(i)
        for l in table.paths[i]:
            a = params.alpha(table, l, i)
            s = params.sat(l, i)
            ph = table.group_of(l, i)
            p.add_con(f"sat[{l},{i}]",
                      {f"mu[{l}]": a * Q, phi_var(l, ph): -s, "xi": s * delta},
                      "<=", 0.0)
        f = table.first(i)
        a = params.alpha(table, f, i)
        s = params.sat(f, i)
        ph = table.group_of(f, i)
        if Q > 0:
            k = s * a * Q / (s - a * Q)
            z0 = table.stopline_capacity[i]
            p.add_con(f"reach[{i}]",
                      {phi_var(f, ph): -k, "xi": k * delta - z0}, "<=", -k)
            p.add_con(f"clear[{i}]",
                      {phi_var(f, ph): -s, "xi": a * Q * delta}, "<=", -a * Q)
    return p


@dataclass
class Step1Solution:
    """Optimal splits plus their integer-second realization."""

    xi: float
    mu: dict[int, float]
    phi: dict[tuple[int, int], float]       # (intersection, phase) -> fraction
    cycle: int
    phase_green: dict[tuple[int, int], int]  # (intersection, phase) -> seconds
    warnings: list[str] = field(default_factory=list)

    def green(self, table: MovementTable, l: int, i: int) -> int:
        return self.phase_green[(l, table.group_of(l, i))]

    def greens_by_movement(self, table: MovementTable) -> dict[tuple[int, int], int]:
        return {(l, i): self.green(table, l, i)
                for i in MOVEMENTS for l in table.paths[i]}


def _printed_split(phi_a: float, cycle: int) -> int:
    """Nearest-integer greens rebalanced onto the larger phase (ties keep the
    extra second with the first phase)."""
    ga = round(phi_a * cycle)
    gb = round((1.0 - phi_a) * cycle)
    r = cycle - ga - gb
    if r:
        if ga > gb or (ga == gb and r > 0):
            ga += r
    return int(ga)


def _intersection_residual(l, cycle, ga, scenario, table, params, mu):
    """Worst constraint residual at intersection l for integer greens."""
    xi = 1.0 / cycle
    gb = cycle - ga
    phi = {0: ga / cycle, 1: gb / cycle}
    delta = params.lost_time
    worst = -float("inf")
    for ph in PHASES:
        group = table.phase_groups[l][ph]
        g = ga if ph == 0 else gb
        worst = max(worst, max(params.green_min for i in group) - g)
        worst = max(worst, g - min(params.green_max for i in group))
    for i in MOVEMENTS:
        if l not in table.paths[i]:
            continue
        Q = scenario.demand(i)
        a = params.alpha(table, l, i)
        s = params.sat(l, i)
        ph = table.group_of(l, i)
        worst = max(worst, mu[l] * a * Q - s * (phi[ph] - delta * xi))
        if table.first(i) == l and Q > 0:
            z0 = table.stopline_capacity[i]
            tau = queue_extent(Q, s, a, phi[ph], delta, xi)
            worst = max(worst, (tau - z0) * xi)       # reach row, scaled form
            worst = max(worst, a * Q * (1 + delta * xi) - s * phi[ph])
    return worst


def extract_timings(solution: Solution, scenario: DemandScenario,
                    table: MovementTable, params: ModelParams) -> Step1Solution:
    """Integer cycle and greens from an optimal splits solution.

    Tries the nearest-integer rule first; when the rounded point violates a
    timing row, nearby cycle values and one-second green shifts are searched
    for a fully feasible integer point before falling back with warnings.
    """
    if solution.status == "infeasible":
        sat_rows = {k: abs(v) for k, v in solution.row_duals.items()
                    if k.startswith(("sat", "reach", "clear"))}
        hint = max(sat_rows, key=sat_rows.get) if sat_rows else "unknown"
        raise InfeasibleTiming(
            f"splits stage infeasible; most binding row: {hint}")
    if solution.status != "optimal":
        raise InfeasibleTiming(f"splits stage ended with {solution.status}")

    v = solution.values
    xi = v["xi"]
    mu = {l: v[f"mu[{l}]"] for l in INTERSECTIONS}
    phi = {(l, ph): v[phi_var(l, ph)] for l in INTERSECTIONS for ph in PHASES}

    raw_c = 1.0 / xi
    cycles = []
    for c in (round(raw_c), int(raw_c), int(raw_c) + 1):
        c = min(max(int(c), params.cycle_min), params.cycle_max)
        if c not in cycles:
            cycles.append(c)

    best = None          # (feasible, total_residual, cycle, greens, residuals)
    for cycle in cycles:
        greens = {}
        res = {}
        for l in INTERSECTIONS:
            target = phi[(l, 0)] * cycle
            primary = _printed_split(phi[(l, 0)], cycle)
            cands = []
            for g in (primary, int(target), int(target) + 1,
                      primary - 1, primary + 1):
                if g not in cands and 0 < g < cycle:
                    cands.append(g)
            scored = [(g, _intersection_residual(
                l, cycle, g, scenario, table, params, mu)) for g in cands]
            pick = next(((g, r) for g, r in scored if r <= 1e-9), None)
            if pick is None:
                pick = min(scored, key=lambda t: (t[1], abs(t[0] - target)))
            greens[l], res[l] = pick
        worst = max(res.values())
        entry = (worst > 1e-9, worst, cycle, greens, res)
        if best is None or entry < best:
            best = entry
        if not entry[0]:
            break
    infeasible, worst, cycle, greens, res = best

    warnings = []
    if worst > 1e-3:
        for l, r in res.items():
            if r > 1e-3:
                warnings.append(
                    f"intersection {l}: integer greens violate a timing row "
                    f"by {r:.4g}")
    phase_green = {}
    for l in INTERSECTIONS:
        phase_green[(l, 0)] = greens[l]
        phase_green[(l, 1)] = cycle - greens[l]
    return Step1Solution(xi=xi, mu=mu, phi=phi, cycle=cycle,
                         phase_green=phase_green, warnings=warnings)


def solve_step1(scenario: DemandScenario, table: MovementTable,
                params: ModelParams) -> Step1Solution:
    """Build, solve and integerize in one call.

    The capacity objective alone is degenerate once every multiplier reaches
    its cap, so the split that comes out of a single solve is an arbitrary
    vertex.  Ties are broken lexicographically: first the printed objective,
    then the shortest feasible cycle, then per-intersection max-min capacity
    slack (equal saturation).  The refinement makes the solution unique for
    practical inputs, hence symmetric for symmetric demand.
    """
    p1 = build_step1(scenario, table, params)
    s1 = solve_lp(p1)
    if s1.status != "optimal":
        return extract_timings(s1, scenario, table, params)  # raises
    opt1 = s1.objective

    p2 = build_step1(scenario, table, params)
    p2.add_con("lex_capacity", {f"mu[{l}]": 1.0 for l in INTERSECTIONS},
               ">=", opt1 - 1e-9)
    p2.set_objective({"xi": 1.0})
    s2 = solve_lp(p2)
    if s2.status != "optimal":
        return extract_timings(s1, scenario, table, params)
    opt2 = s2.values["xi"]

    p3 = build_step1(scenario, table, params)
    p3.add_con("lex_capacity", {f"mu[{l}]": 1.0 for l in INTERSECTIONS},
               ">=", opt1 - 1e-9)
    p3.add_con("lex_cycle", {"xi": 1.0}, ">=", opt2 - 1e-12)
    slack_obj = {}
    for l in INTERSECTIONS:
        p3.add_var(f"slack[{l}]", 0.0, 1.0)
        slack_obj[f"slack[{l}]"] = 1.0
    for i in MOVEMENTS:
        Q = scenario.demand(i)
        for l in table.paths[i]:
            a = params.alpha(table, l, i)
            s = params.sat(l, i)
            ph = table.group_of(l, i)
            p3.add_con(f"equalize[{l},{i}]",
                       {phi_var(l, ph): s, "xi": -s * params.lost_time,
                        f"mu[{l}]": -a * Q, f"slack[{l}]": -1.0}, ">=", 0.0)
    p3.set_objective(slack_obj)
    s3 = solve_lp(p3)
    if s3.status != "optimal":
        return extract_timings(s1, scenario, table, params)
    return extract_timings(s3, scenario, table, params)
