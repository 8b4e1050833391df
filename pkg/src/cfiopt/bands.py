"""Green-band geometry between consecutive intersections.

A platoon released at intersection `a` during its green arrives at `b`
shifted by the travel time.  Six overlap cases relate the shifted green to
the downstream green window: (1) the band starts late and ends with the
upstream green's image, (2) starts with it and is cut at the downstream
green end, (3) is split by the downstream red, (4) covers the whole
downstream green, (5) the image lies inside the downstream green, and
(6) there is no overlap at all.  Each case defines an uncoordinated period:
the part of the upstream green whose vehicles will stop downstream.

The functions here are the single source of truth for case admissibility,
uncoordinated periods and the per-movement inner maximization (best case
selection, lags and bandwidth for fixed offsets), shared by the MILP
builder, the brute-force offset search, plan extraction and the validator.
"""

from __future__ import annotations

from itertools import product

from .model import ModelParams, MovementTable

CASES = (1, 2, 3, 4, 5, 6)
BAND_CASES = (1, 2, 3, 4, 5)


def uncoordinated_period(k, g_a, g_b, theta_a, theta_b, r_a, r_b,
                         n_a, n_b, t, C):
    """Uncoordinated seconds of the upstream green for overlap case k."""
    if k == 1:
        return g_a - (theta_a + r_a + n_a * C + g_a
                      - theta_b - r_b - n_b * C + t)
    if k == 2:
        return g_a - (theta_b + r_b + n_b * C + g_b
                      - theta_a - r_a - n_a * C - t)
    if k == 3:
        return C - g_b
    if k == 4:
        return g_a - g_b
    if k == 5:
        return 0.0
    if k == 6:
        return g_a
    raise ValueError(f"unknown case {k}")


def case_feasible(k, g_a, g_b, start_a, start_b, t, C, tol=1e-9):
    """Whether case k's geometry holds for absolute green starts
    `start_a`/`start_b` (offset + phase start + cycle wrap)."""
    arr_s = start_a + t            # arrival of the upstream green start
    arr_e = start_a + g_a + t      # arrival of the upstream green end
    if k == 1:
        return (arr_s >= start_b + g_b - C - tol and arr_s <= start_b + tol
                and arr_e <= start_b + g_b + tol and arr_e >= start_b - tol)
    if k == 2:
        return (arr_s >= start_b - tol and arr_s <= start_b + g_b + tol
                and arr_e >= start_b + g_b - tol and arr_e <= start_b + C + tol)
    if k == 3:
        return arr_s <= start_b + g_b + tol and arr_e >= start_b + C - tol
    if k == 4:
        return arr_s <= start_b + tol and arr_e >= start_b + g_b - tol
    if k == 5:
        return arr_s >= start_b - tol and arr_e <= start_b + g_b + tol
    if k == 6:
        return True                # selectable whenever storage allows
    raise ValueError(f"unknown case {k}")


class MovementBands:
    """Band diagnostics of one movement at fixed offsets."""

    __slots__ = ("movement", "banded", "band", "lag", "wrap", "case",
                 "mid_pressure")

    def __init__(self, movement, banded, band, lag, wrap, case,
                 mid_pressure=0.0):
        self.movement = movement
        self.banded = banded
        self.band = band            # seconds (0 when not banded)
        self.lag = lag              # {intersection: seconds}
        self.wrap = wrap            # {intersection: 0|1}
        self.case = case            # {(a, b): case index}
        # Uncoordinated seconds on pairs that end before the exit: vehicles
        # outside the band there stop mid-path, where queues spill upstream.
        self.mid_pressure = mid_pressure


def derive_movement_bands(i, cycle, greens, starts, theta, table: MovementTable,
                          params: ModelParams, demand,
                          include_compound=True) -> MovementBands | None:
    """Best feasible band assignment for movement i at fixed offsets.

    `greens`: {(l, i): g}, `starts`: {(l, i): phase start r}, `theta`: {l: s}.
    Maximizes the bandwidth over cycle-wrap indicators and per-pair cases;
    falls back to the no-band assignment when every pair can absorb a whole
    cycle of arrivals within its storage.  Returns None when no assignment
    is feasible at all.
    """
    path = table.paths[i]
    exit_sub = path[-1]
    pairs = table.movement_pairs(i, include_compound)
    hops = table.consecutive_pairs(i)
    Q = demand
    be = params.min_bandwidth

    best = None
    for n_vec in product((0, 1), repeat=len(path)):
        nmap = dict(zip(path, n_vec))
        start_abs = {l: theta[l] + starts[(l, i)] + nmap[l] * cycle
                     for l in path}
        cases = {}
        mid_pressure = 0.0
        cap = min(greens[(l, i)] for l in path)
        feasible = True
        for (a, b) in pairs:
            t = table.travel_time[(a, b, i)]
            g_a, g_b = greens[(a, i)], greens[(b, i)]
            pick = None
            for k in BAND_CASES:
                if not case_feasible(k, g_a, g_b, start_abs[a], start_abs[b],
                                     t, cycle):
                    continue
                P = uncoordinated_period(k, g_a, g_b, theta[a], theta[b],
                                         starts[(a, i)], starts[(b, i)],
                                         nmap[a], nmap[b], t, cycle)
                if Q * cycle * P / g_a > table.bay_capacity[(a, b, i)] + 1e-9:
                    continue
                if pick is None or g_a - P > pick[1] + 1e-12:
                    pick = (k, g_a - P, P)
            if pick is None:
                feasible = False
                break
            cases[(a, b)] = pick
            if b != exit_sub:
                mid_pressure += pick[2]
        if not feasible:
            continue
        # Lags chain along the physical hops; the first one absorbs any
        # negative cumulative shift so that every lag stays non-negative.
        cum = [0.0]
        for (a, b) in hops:
            t = table.travel_time[(a, b, i)]
            cum.append(cum[-1] + start_abs[a] + t - start_abs[b])
        w0 = max(0.0, max(-c for c in cum))
        lag = {}
        chain_cap = cap
        for l, c in zip(path, cum):
            lag[l] = w0 + c
            chain_cap = min(chain_cap, greens[(l, i)] - lag[l])
        b_val = min(chain_cap, min(c[1] for c in cases.values()))
        if b_val >= be - 1e-9:
            cand = MovementBands(i, True, b_val, lag, dict(nmap),
                                 {d: k for d, (k, _, _) in cases.items()},
                                 mid_pressure)
            if best is None or cand.band > best.band + 1e-12 or (
                    abs(cand.band - best.band) <= 1e-12
                    and cand.mid_pressure < best.mid_pressure - 1e-12):
                best = cand
    if best is not None:
        return best

    # No-band fallback: every pair must absorb a full cycle of arrivals.
    mid_pressure = 0.0
    for (a, b) in pairs:
        if Q * cycle > table.bay_capacity[(a, b, i)] + 1e-9:
            return None
        if b != exit_sub:
            mid_pressure += greens[(a, i)]
    return MovementBands(i, False, 0.0, {l: 0.0 for l in path},
                         {l: 0 for l in path}, {d: 6 for d in pairs},
                         mid_pressure)


def phase_starts(table: MovementTable, phase_green) -> dict[tuple[int, int], int]:
    """Phase start offsets r(l, i): the first phase group opens the cycle,
    the second starts when it ends."""
    starts = {}
    for l, groups in table.phase_groups.items():
        for ph, group in enumerate(groups):
            r = 0 if ph == 0 else phase_green[(l, 0)]
            for i in group:
                starts[(l, i)] = r
    return starts
