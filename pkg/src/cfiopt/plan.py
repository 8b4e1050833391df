"""Signal plans: the common data structure both models emit, its text
serialization (integer seconds only) and the independent constraint-replay
validator used as the acceptance oracle for optimizer output."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import bands as bandmath
from .lp import Violation
from .model import INTERSECTIONS, MOVEMENTS, DemandScenario, ModelParams, MovementTable
from .step1 import queue_extent

PLAN_HEADER = "# cfi signal plan v1"


@dataclass
class MovementBandInfo:
    banded: bool
    band: int
    lag: dict[int, int]            # intersection -> seconds from green start
    wrap: dict[int, int]           # intersection -> cycle indicator
    case: dict[tuple[int, int], int]   # (a, b) -> overlap case


@dataclass
class SignalPlan:
    model: str
    cycle: int
    greens: dict[tuple[int, int], int]     # (intersection, movement) -> s
    starts: dict[tuple[int, int], int]     # (intersection, movement) -> s
    theta: dict[int, int]                  # intersection -> offset s
    bands: dict[int, MovementBandInfo] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def green_window(self, l: int, i: int) -> tuple[int, int]:
        """Absolute [start, end) of the green serving movement i at l."""
        s = self.theta[l] + self.starts[(l, i)]
        return s, s + self.greens[(l, i)]


def write_plan(plan: SignalPlan, path) -> None:
    lines = [PLAN_HEADER, f"model = {plan.model}", f"cycle = {plan.cycle}"]
    for l in sorted(plan.theta):
        lines.append(f"theta.{l} = {plan.theta[l]}")
    for (l, i) in sorted(plan.greens):
        lines.append(f"green.{l}.{i} = {plan.greens[(l, i)]}")
    for (l, i) in sorted(plan.starts):
        lines.append(f"start.{l}.{i} = {plan.starts[(l, i)]}")
    for i in sorted(plan.bands):
        info = plan.bands[i]
        lines.append(f"banded.{i} = {int(info.banded)}")
        lines.append(f"band.{i} = {int(info.band)}")
        for l in sorted(info.lag):
            lines.append(f"lag.{l}.{i} = {int(info.lag[l])}")
        for l in sorted(info.wrap):
            lines.append(f"wrap.{l}.{i} = {int(info.wrap[l])}")
        for (a, b) in sorted(info.case):
            lines.append(f"case.{a}-{b}.{i} = {info.case[(a, b)]}")
    for note in plan.notes:
        lines.append(f"note = {note}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_plan(path) -> SignalPlan:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != PLAN_HEADER:
        raise ValueError(f"{path}: not a recognised plan file")
    model, cycle = "", 0
    greens, starts, theta, notes = {}, {}, {}, []
    raw_bands: dict[int, MovementBandInfo] = {}

    def info(i):
        if i not in raw_bands:
            raw_bands[i] = MovementBandInfo(False, 0, {}, {}, {})
        return raw_bands[i]

    for ln in lines[1:]:
        key, _, val = ln.partition("=")
        key, val = key.strip(), val.strip()
        if key == "model":
            model = val
        elif key == "cycle":
            cycle = int(val)
        elif key == "note":
            notes.append(val)
        elif key.startswith("theta."):
            theta[int(key.split(".")[1])] = int(val)
        elif key.startswith("green."):
            _, l, i = key.split(".")
            greens[(int(l), int(i))] = int(val)
        elif key.startswith("start."):
            _, l, i = key.split(".")
            starts[(int(l), int(i))] = int(val)
        elif key.startswith("banded."):
            info(int(key.split(".")[1])).banded = bool(int(val))
        elif key.startswith("band."):
            info(int(key.split(".")[1])).band = int(val)
        elif key.startswith("lag."):
            _, l, i = key.split(".")
            info(int(i)).lag[int(l)] = int(val)
        elif key.startswith("wrap."):
            _, l, i = key.split(".")
            info(int(i)).wrap[int(l)] = int(val)
        elif key.startswith("case."):
            _, pair, i = key.split(".")
            a, b = pair.split("-")
            info(int(i)).case[(int(a), int(b))] = int(val)
        else:
            raise ValueError(f"{path}: unknown plan entry {key!r}")
    return SignalPlan(model, cycle, greens, starts, theta, raw_bands, notes)


def validate_plan(plan: SignalPlan, scenario: DemandScenario,
                  table: MovementTable, params: ModelParams,
                  tol: float = 1e-6) -> list[Violation]:
    """Replay every applicable constraint against the integer plan.

    Structural coverage and ranges first; then the splits-stage rows in the
    fractional variable space (reach, clearance, bounds); then, for plans
    carrying band diagnostics, the full progression system (lags, case
    geometry, uncoordinated periods, storage).  Plans without diagnostics
    (the benchmark) skip the band section.  Returns an empty list when the
    plan satisfies everything within `tol`.
    """
    out: list[Violation] = []
    C = plan.cycle

    def bad(kind, name, resid, detail=""):
        out.append(Violation(kind, name, float(resid), detail))

    # ---------------- structural ----------------
    if not (params.cycle_min <= C <= params.cycle_max):
        bad("structural", "cycle", min(abs(C - params.cycle_min),
                                       abs(C - params.cycle_max)),
            f"cycle {C} outside [{params.cycle_min}, {params.cycle_max}]")
    for l in INTERSECTIONS:
        if l not in plan.theta:
            bad("structural", f"theta[{l}]", float("inf"), "missing offset")
            continue
        th = plan.theta[l]
        if not (0 <= th < C):
            bad("structural", f"theta[{l}]", abs(th), "offset out of range")
    missing = False
    for i in MOVEMENTS:
        for l in table.paths[i]:
            if (l, i) not in plan.greens or (l, i) not in plan.starts:
                bad("structural", f"timing[{l},{i}]", float("inf"),
                    "missing green or phase start")
                missing = True
    if missing or any(v.name.startswith("theta") for v in out):
        return out

    for l in INTERSECTIONS:
        ga, gb = table.phase_groups[l]
        g0 = {plan.greens[(l, i)] for i in ga}
        g1 = {plan.greens[(l, i)] for i in gb}
        if len(g0) > 1 or len(g1) > 1:
            bad("structural", f"phase_green[{l}]", max(len(g0), len(g1)) - 1,
                "movements of one phase carry different greens")
            continue
        if g0.pop() + g1.pop() != C:
            bad("structural", f"phase_sum[{l}]",
                abs(plan.greens[(l, ga[0])] + plan.greens[(l, gb[0])] - C),
                "phase greens must sum to the cycle")
        r0 = {plan.starts[(l, i)] for i in ga}
        r1 = {plan.starts[(l, i)] for i in gb}
        if len(r0) > 1 or len(r1) > 1:
            bad("structural", f"phase_start[{l}]", 1,
                "movements of one phase carry different starts")
            continue
        r0, r1 = r0.pop(), r1.pop()
        first = min((r0, 0), (r1, 1))
        second = (r1, 1) if first[1] == 0 else (r0, 0)
        glead = plan.greens[(l, (ga if first[1] == 0 else gb)[0])]
        if first[0] != 0 or second[0] != glead:
            bad("structural", f"phase_schedule[{l}]",
                abs(second[0] - glead) + abs(first[0]),
                "phases must partition the cycle back to back")

    for (l, i), g in plan.greens.items():
        if g < params.green_min - tol or g > min(params.green_max, C) + tol:
            bad("row", f"green_bounds[{l},{i}]",
                max(params.green_min - g, g - min(params.green_max, C)),
                f"green {g} outside bounds")
    if out:
        return out

    # ---------------- splits-stage rows ----------------
    xi = 1.0 / C
    delta = params.lost_time
    for i in MOVEMENTS:
        Q = scenario.demand(i)
        for l in table.paths[i]:
            phi = plan.greens[(l, i)] / C
            s = params.sat(l, i)
            a = params.alpha(table, l, i)
            if phi - delta * xi <= tol:
                bad("row", f"capacity[{l},{i}]", delta * xi - phi,
                    "effective green not positive")
        f = table.first(i)
        if Q > 0:
            s = params.sat(f, i)
            a = params.alpha(table, f, i)
            phi = plan.greens[(f, i)] / C
            if s <= a * Q + tol:
                bad("row", f"reach[{i}]", a * Q - s, "demand at saturation")
                continue
            tau = queue_extent(Q, s, a, phi, delta, xi)
            z0 = table.stopline_capacity[i]
            if (tau - z0) * xi > tol:
                bad("row", f"reach[{i}]", (tau - z0) * xi,
                    f"queue reach {tau:.2f} veh exceeds storage {z0}")
            if a * Q * (1 + delta * xi) - s * phi > tol:
                bad("row", f"clear[{i}]",
                    a * Q * (1 + delta * xi) - s * phi,
                    "queue cannot clear within one green")

    # ---------------- band rows ----------------
    if not plan.bands:
        return out
    be = params.min_bandwidth
    for i in MOVEMENTS:
        if i not in plan.bands:
            bad("structural", f"bands[{i}]", float("inf"),
                "missing band diagnostics")
            continue
        info = plan.bands[i]
        path = table.paths[i]
        pairs = list(info.case)
        Q = scenario.demand(i)
        b = info.band
        if b < -tol:
            bad("row", f"band_nonneg[{i}]", -b, "negative bandwidth")
        for l in path:
            if l not in info.lag or l not in info.wrap:
                bad("structural", f"band_lag[{l},{i}]", float("inf"),
                    "missing lag or wrap entry")
                continue
            w = info.lag[l]
            if w < -tol:
                bad("row", f"lag_nonneg[{l},{i}]", -w, "negative lag")
            if w + b > plan.greens[(l, i)] + tol:
                bad("row", f"band_fit[{l},{i}]", w + b - plan.greens[(l, i)],
                    "lag plus band exceeds green")
        if info.banded and b < be - tol:
            bad("row", f"min_band[{i}]", be - b,
                f"bandwidth {b} below minimum {be}")
        if not info.banded and abs(b) > tol:
            bad("row", f"no_band[{i}]", abs(b),
                "movement without progression must carry zero bandwidth")
        start_abs = {l: plan.theta[l] + plan.starts[(l, i)]
                     + info.wrap.get(l, 0) * C for l in path}
        for (a, bb) in pairs:
            k = info.case[(a, bb)]
            t = table.travel_time[(a, bb, i)]
            g_a, g_b = plan.greens[(a, i)], plan.greens[(bb, i)]
            if info.banded and k == 6:
                bad("row", f"case_mix[{a}-{bb},{i}]", 1,
                    "banded movement selects the no-band case")
                continue
            if not info.banded and k != 6:
                bad("row", f"case_mix[{a}-{bb},{i}]", 1,
                    "unbanded movement selects an overlap case")
                continue
            if k != 6 and not bandmath.case_feasible(
                    k, g_a, g_b, start_abs[a], start_abs[bb], t, C, tol):
                bad("row", f"case_geometry[{a}-{bb},{i}]", 1,
                    f"case {k} geometry does not hold")
            P = bandmath.uncoordinated_period(
                k, g_a, g_b, plan.theta[a], plan.theta[bb],
                plan.starts[(a, i)], plan.starts[(bb, i)],
                info.wrap.get(a, 0), info.wrap.get(bb, 0), t, C)
            if k != 6 and not (-tol <= P <= g_a + tol):
                bad("row", f"period_range[{a}-{bb},{i}]",
                    max(-P, P - g_a), f"uncoordinated period {P} outside green")
            if b - (g_a - P) > tol:
                bad("row", f"band_cap[{a}-{bb},{i}]", b - (g_a - P),
                    "band exceeds coordinated green")
            if g_a > 0 and Q * C * P / g_a > table.bay_capacity[(a, bb, i)] + tol:
                bad("row", f"storage[{a}-{bb},{i}]",
                    Q * C * P / g_a - table.bay_capacity[(a, bb, i)],
                    "uncoordinated arrivals overflow the bay")
            if info.banded:
                drift = (start_abs[a] + info.lag[a] + t
                         - start_abs[bb] - info.lag[bb])
                if abs(drift) > tol:
                    bad("row", f"progression[{a}-{bb},{i}]", abs(drift),
                        "band does not arrive at the downstream band start")
    return out
