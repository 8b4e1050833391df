"""Second optimization stage: offsets, band lags and bandwidths.

Given the integer cycle and greens from the splits stage, this MILP places
an offset at every intersection and maximizes the demand-weighted green
bandwidth over the movements.  Binary case selectors pick one of six overlap
geometries per movement and intersection pair (big-M gated rows activate
only the selected case); cycle-wrap binaries let each movement interpret
clock differences modulo the cycle.  Phase starts are fixed by construction:
the first phase group opens the cycle, the second follows it, and the main
intersection's offset anchors the network clock at zero.

`brute_force_offsets` restricts the offsets to a grid and solves the inner
problem exactly per movement; it is the independent search the acceptance
suite compares the MILP against.
"""

from __future__ import annotations

import math
from itertools import product

import numpy as np

from . import bands as bandmath
from .lp import LinearProblem, Solution
from .model import MAIN, MOVEMENTS, SUBS, DemandScenario, ModelParams, MovementTable
from .plan import MovementBandInfo, SignalPlan
from .solver import solve_milp
from .step1 import Step1Solution

uncoordinated_period = bandmath.uncoordinated_period

# Rows that must hold for each overlap case (big-M released otherwise).
# Tags describe where the upstream green's image falls in downstream time.
CASE_ROWS = {
    1: ("prev_cycle_clear", "head_before_green", "tail_in_green",
        "tail_after_start"),
    2: ("head_in_green", "head_before_red", "tail_after_green",
        "tail_before_next"),
    3: ("head_before_red", "tail_into_next"),
    4: ("head_before_green", "tail_after_green"),
    5: ("head_in_green", "tail_in_green"),
    6: (),
}

# tag -> (relation, uses_green_a_end, rhs offset terms) realized in-line below.


def _weights(scenario: DemandScenario, params: ModelParams):
    if params.eta is not None:
        return dict(params.eta)
    return {i: scenario.weight(i) for i in MOVEMENTS}


def build_step2(timings: Step1Solution, scenario: DemandScenario,
                table: MovementTable, params: ModelParams,
                include_compound: bool = True) -> LinearProblem:
    """Assemble the offsets MILP from integer first-stage timings."""
    C = timings.cycle
    greens = timings.greens_by_movement(table)
    for i in MOVEMENTS:
        for l in table.paths[i]:
            if (l, i) not in greens or greens[(l, i)] <= 0:
                raise ValueError(f"first-stage timings miss movement {i} "
                                 f"at intersection {l}")
    starts = bandmath.phase_starts(table, timings.phase_green)
    eta = _weights(scenario, params)
    M = params.big_m

    p = LinearProblem(f"offsets[{scenario.scenario_id}]")
    for l in sorted(table.phase_groups):
        hi = 0.0 if l == MAIN else float(C)
        p.add_var(f"theta[{l}]", 0.0, hi)
    for i in MOVEMENTS:
        cap = min(greens[(l, i)] for l in table.paths[i])
        p.add_var(f"band[{i}]", 0.0, float(cap), obj=eta[i])
        for l in table.paths[i]:
            p.add_var(f"lag[{l},{i}]", 0.0, float(greens[(l, i)]))
        for l in table.paths[i]:
            p.add_var(f"wrap[{l},{i}]", binary=True)
        for (a, b) in table.movement_pairs(i, include_compound):
            for k in bandmath.CASES:
                p.add_var(f"skip[{a}-{b},{i},{k}]", binary=True)

    def gate_m(coeffs, rel, rhs):
        """Smallest big-M that frees this row anywhere in the variable box."""
        lo_sum = hi_sum = 0.0
        for var, c in coeffs.items():
            v = p.variables[p.index[var]]
            lo_sum += c * (v.lb if c > 0 else v.ub)
            hi_sum += c * (v.ub if c > 0 else v.lb)
        need = (hi_sum - rhs) if rel == "<=" else (rhs - lo_sum)
        return min(M, max(need, 0.0) + 1.0)

    for i in MOVEMENTS:
        Q = scenario.demand(i)
        for l in table.paths[i]:
            p.add_con(f"fit[{l},{i}]",
                      {f"lag[{l},{i}]": 1.0, f"band[{i}]": 1.0},
                      "<=", float(greens[(l, i)]))
        for (a, b) in table.movement_pairs(i, include_compound):
            d = f"{a}-{b},{i}"
            t = float(table.travel_time[(a, b, i)])
            g_a, g_b = float(greens[(a, i)]), float(greens[(b, i)])
            r_a, r_b = float(starts[(a, i)]), float(starts[(b, i)])
            ta, tb = f"theta[{a}]", f"theta[{b}]"
            na, nb = f"wrap[{a},{i}]", f"wrap[{b},{i}]"

            p.add_con(f"pick[{d}]",
                      {f"skip[{d},{k}]": 1.0 for k in bandmath.CASES},
                      "==", float(len(bandmath.CASES) - 1))
            mb = gate_m({f"band[{i}]": 1.0}, ">=", params.min_bandwidth)
            p.add_con(f"min_band[{d}]",
                      {f"band[{i}]": 1.0, f"skip[{d},6]": -mb},
                      ">=", params.min_bandwidth - mb)
            prog = {ta: 1.0, tb: -1.0, f"lag[{a},{i}]": 1.0,
                    f"lag[{b},{i}]": -1.0, na: float(C), nb: -float(C)}
            mlo = gate_m(prog, ">=", (r_b - r_a) - t)
            mhi = gate_m(prog, "<=", (r_b - r_a) - t)
            p.add_con(f"prog_lo[{d}]", dict(prog, **{f"skip[{d},6]": -mlo}),
                      ">=", (r_b - r_a) - t - mlo)
            p.add_con(f"prog_hi[{d}]", dict(prog, **{f"skip[{d},6]": mhi}),
                      "<=", (r_b - r_a) - t + mhi)

            # Uncoordinated-period expression per case: (coeffs, constant).
            pcoeffs = {
                1: ({ta: -1.0, tb: 1.0, na: -float(C), nb: float(C)},
                    (r_b - r_a) - t),
                2: ({ta: 1.0, tb: -1.0, na: float(C), nb: -float(C)},
                    g_a - g_b + (r_a - r_b) + t),
                3: ({}, float(C) - g_b),
                4: ({}, g_a - g_b),
                5: ({}, 0.0),
                6: ({}, g_a),
            }
            for k in bandmath.CASES:
                y = f"skip[{d},{k}]"
                coeffs, const = pcoeffs[k]
                row = {f"band[{i}]": 1.0}
                for var, c in coeffs.items():
                    row[var] = row.get(var, 0.0) + c
                mk = gate_m(row, "<=", g_a - const)
                p.add_con(f"band_cap[{d},{k}]", dict(row, **{y: -mk}),
                          "<=", g_a - const)
                kappa = Q * C / g_a
                row = {}
                for var, c in coeffs.items():
                    row[var] = row.get(var, 0.0) + kappa * c
                zcap = table.bay_capacity[(a, b, i)] - kappa * const
                mk = gate_m(row, "<=", zcap)
                p.add_con(f"storage[{d},{k}]", dict(row, **{y: -mk}),
                          "<=", zcap)

            base = {ta: 1.0, tb: -1.0, na: float(C), nb: -float(C)}
            rows = {
                "prev_cycle_clear": (">=", (r_b - r_a) + g_b - t - float(C)),
                "head_before_green": ("<=", (r_b - r_a) - t),
                "head_in_green": (">=", (r_b - r_a) - t),
                "head_before_red": ("<=", (r_b - r_a) + g_b - t),
                "tail_in_green": ("<=", (r_b - r_a) + g_b - g_a - t),
                "tail_after_green": (">=", (r_b - r_a) + g_b - g_a - t),
                "tail_before_next": ("<=", (r_b - r_a) + float(C) - g_a - t),
                "tail_into_next": (">=", (r_b - r_a) + float(C) - g_a - t),
                "tail_after_start": (">=", (r_b - r_a) - g_a - t),
            }
            for k in bandmath.CASES:
                for tag in CASE_ROWS[k]:
                    rel, rhs = rows[tag]
                    y = f"skip[{d},{k}]"
                    mk = gate_m(base, rel, rhs)
                    gate = mk if rel == ">=" else -mk
                    p.add_con(f"case[{tag},{d},{k}]",
                              dict(base, **{y: gate}), rel, rhs)
    return p


def _selected_cases(solution: Solution, table: MovementTable,
                    include_compound: bool):
    sel = {}
    for i in MOVEMENTS:
        for (a, b) in table.movement_pairs(i, include_compound):
            vals = [(solution.values[f"skip[{a}-{b},{i},{k}]"], k)
                    for k in bandmath.CASES]
            sel[(a, b, i)] = min(vals)[1]
    return sel


def _derive_all(theta, timings, scenario, table, params, include_compound):
    greens = timings.greens_by_movement(table)
    starts = bandmath.phase_starts(table, timings.phase_green)
    out = {}
    for i in MOVEMENTS:
        mb = bandmath.derive_movement_bands(
            i, timings.cycle, greens, starts, theta, table, params,
            scenario.demand(i), include_compound)
        if mb is None:
            return None
        out[i] = mb
    return out


def _bands_to_info(derived) -> dict[int, MovementBandInfo]:
    return {i: MovementBandInfo(
        banded=mb.banded, band=int(round(mb.band)),
        lag={l: int(round(w)) for l, w in mb.lag.items()},
        wrap=dict(mb.wrap), case=dict(mb.case))
        for i, mb in derived.items()}


def band_objective(plan: SignalPlan, scenario: DemandScenario,
                   params: ModelParams) -> float:
    eta = _weights(scenario, params)
    return sum(eta[i] * plan.bands[i].band for i in plan.bands)


def extract_plan(solution: Solution, timings: Step1Solution,
                 scenario: DemandScenario, table: MovementTable,
                 params: ModelParams,
                 include_compound: bool = True) -> SignalPlan:
    """Integer plan from a MILP incumbent.

    Offsets are rounded to whole seconds (the main stays at zero) and the
    band diagnostics are re-derived exactly on the integer point.  When
    rounding changes some movement's selected case, nearby floor/ceil offset
    combinations are tried to preserve the solver's choice before accepting
    the re-derived one.
    """
    if not solution.has_values:
        raise RuntimeError(f"no incumbent to extract ({solution.status})")
    C = timings.cycle
    raw = {l: (0.0 if l == MAIN else solution.values[f"theta[{l}]"])
           for l in sorted(table.phase_groups)}
    milp_cases = _selected_cases(solution, table, include_compound)

    options = {}
    for l, v in raw.items():
        cands = []
        for c in (round(v), math.floor(v), math.ceil(v)):
            c = int(c) % C
            if c not in cands:
                cands.append(c)
        options[l] = cands
    combos = sorted(
        product(*(options[l] for l in sorted(options))),
        key=lambda combo: (sum(abs(c - raw[l]) for c, l
                               in zip(combo, sorted(options))), combo))

    chosen = None
    first_valid = None
    notes = []
    for combo in combos:
        theta = dict(zip(sorted(options), combo))
        derived = _derive_all(theta, timings, scenario, table, params,
                              include_compound)
        if derived is None:
            continue
        if first_valid is None:
            first_valid = (theta, derived)
        if all(derived[i].case[(a, b)] == milp_cases[(a, b, i)]
               for (a, b, i) in milp_cases):
            chosen = (theta, derived)
            break
    if chosen is None:
        if first_valid is None:
            raise RuntimeError(
                "no integer offset rounding keeps the plan feasible")
        chosen = first_valid
        notes.append("offset rounding changed the selected overlap cases")
    theta, derived = chosen
    greens = timings.greens_by_movement(table)
    starts = bandmath.phase_starts(table, timings.phase_green)
    return SignalPlan("proposed", C, greens, starts,
                      {l: int(t) for l, t in theta.items()},
                      _bands_to_info(derived), notes)


def _grid_search(timings, scenario, table, params, grid, include_compound):
    """Best offsets over an explicit candidate list per sub-intersection.

    Per-movement value tables over each movement's free offsets are combined
    by broadcasting, so the joint search over all four subs costs one argmax.
    Returns (theta, derived, objective) or None when no grid point works.
    """
    C = timings.cycle
    G = len(grid)
    greens = timings.greens_by_movement(table)
    starts = bandmath.phase_starts(table, timings.phase_green)
    eta = _weights(scenario, params)

    total = np.zeros((G,) * len(SUBS))
    pressure = np.zeros((G,) * len(SUBS))
    for i in MOVEMENTS:
        free = [l for l in table.paths[i] if l != MAIN]
        vals = np.full((G,) * len(free), -np.inf)
        mids = np.zeros((G,) * len(free))
        for idx in product(range(G), repeat=len(free)):
            theta = {MAIN: 0}
            theta.update({l: grid[k] for l, k in zip(free, idx)})
            mb = bandmath.derive_movement_bands(
                i, C, greens, starts, theta, table, params,
                scenario.demand(i), include_compound)
            if mb is not None:
                vals[idx] = eta[i] * mb.band
                mids[idx] = eta[i] * mb.mid_pressure
        # Broadcast the movement's tables onto the 4-D offset grid.
        order = np.argsort(free)
        shape = [G if (s in free) else 1 for s in SUBS]
        arr = np.transpose(vals, order) if len(free) > 1 else vals
        total = total + arr.reshape(shape)
        arr = np.transpose(mids, order) if len(free) > 1 else mids
        pressure = pressure + arr.reshape(shape)

    best = total.max()
    if not np.isfinite(best):
        return None
    # Among maximum-band assignments prefer the one whose uncoordinated
    # vehicles stop at path exits rather than mid-path (least spill risk);
    # remaining ties resolve to the lexicographically first grid point.
    ties = total >= best - 1e-9
    masked = np.where(ties, pressure, np.inf)
    best_idx = np.unravel_index(int(np.argmin(masked)), total.shape)
    theta = {MAIN: 0}
    theta.update({s: grid[k] for s, k in zip(SUBS, best_idx)})
    derived = _derive_all(theta, timings, scenario, table, params,
                          include_compound)
    return theta, derived, float(total[best_idx])


def _warm_grid(C: int) -> list[int]:
    """Offset candidates: fine for short cycles, always containing the
    5-second lattice when it exists so the seed dominates the default
    grid oracle."""
    if C <= 24:
        step = 1
    elif C <= 60:
        step = 2
    else:
        step = -(-C // 30)
    vals = set(range(0, C, step))
    if C % 5 == 0:
        vals |= set(range(0, C, 5))
    return sorted(vals)


def warm_start_values(problem: LinearProblem, timings: Step1Solution,
                      scenario: DemandScenario, table: MovementTable,
                      params: ModelParams, include_compound: bool = True):
    """Feasible MILP assignment from a coarse offset lattice, or None."""
    C = timings.cycle
    hit = _grid_search(timings, scenario, table, params, _warm_grid(C),
                       include_compound)
    if hit is None:
        return None
    theta, derived, _ = hit
    values = {v.name: 0.0 for v in problem.variables}
    for l, th in theta.items():
        values[f"theta[{l}]"] = float(th)
    for i, mb in derived.items():
        values[f"band[{i}]"] = float(mb.band)
        for l in table.paths[i]:
            values[f"lag[{l},{i}]"] = float(mb.lag[l])
            values[f"wrap[{l},{i}]"] = float(mb.wrap[l])
        for (a, b), k in mb.case.items():
            for kk in bandmath.CASES:
                values[f"skip[{a}-{b},{i},{kk}]"] = 0.0 if kk == k else 1.0
    return values


def solve_step2(timings: Step1Solution, scenario: DemandScenario,
                table: MovementTable, params: ModelParams,
                time_limit: float = 20.0,
                include_compound: bool = True):
    """Build and solve the offsets MILP; returns (plan, solver solution).

    A coarse lattice search seeds the incumbent so the branch-and-bound
    starts with a cutoff and a fallback answer inside the time limit.
    """
    problem = build_step2(timings, scenario, table, params, include_compound)
    warm = warm_start_values(problem, timings, scenario, table, params,
                             include_compound)
    solution = solve_milp(problem, time_limit, warm_values=warm)
    if not solution.has_values:
        return None, solution
    plan = extract_plan(solution, timings, scenario, table, params,
                        include_compound)
    return plan, solution


def brute_force_offsets(timings: Step1Solution, scenario: DemandScenario,
                        table: MovementTable, params: ModelParams,
                        grid_step: int = 5, budget: int = 3_000_000,
                        include_compound: bool = True):
    """Exhaustive offset search on a grid; the main intersection stays at 0.

    For each assignment the per-movement inner problem (wrap indicators,
    case selection, lags, bandwidth) is solved exactly, so the result is the
    true optimum of the stage-2 model restricted to the grid.  Returns
    (plan, objective).
    """
    C = timings.cycle
    if C % grid_step:
        raise ValueError(f"grid step {grid_step} must divide the cycle {C}")
    G = C // grid_step
    if G ** 4 > budget:
        raise RuntimeError(
            f"enumeration budget exceeded: {G ** 4} grid assignments "
            f"(budget {budget}); use a coarser step")
    hit = _grid_search(timings, scenario, table, params,
                       [k * grid_step for k in range(G)], include_compound)
    if hit is None:
        raise RuntimeError("no feasible offset assignment on the grid")
    theta, derived, objective = hit
    plan = SignalPlan("grid-search", C,
                      timings.greens_by_movement(table),
                      bandmath.phase_starts(table, timings.phase_green),
                      dict(theta), _bands_to_info(derived), [])
    return plan, objective


def write_time_space(plan: SignalPlan, table: MovementTable, path) -> None:
    """Per-movement green and band windows, one row per window, for external
    time-space plotting."""
    lines = ["movement,intersection,kind,start,end"]
    for i in MOVEMENTS:
        for l in table.paths[i]:
            s, e = plan.green_window(l, i)
            lines.append(f"{i},{l},green,{s % plan.cycle},"
                         f"{s % plan.cycle + plan.greens[(l, i)]}")
            info = plan.bands.get(i)
            if info and info.banded:
                bs = s + info.lag[l]
                lines.append(f"{i},{l},band,{bs % plan.cycle},"
                             f"{bs % plan.cycle + info.band}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
