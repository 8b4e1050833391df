"""Geometry, movement topology and input parameters for a full symmetric
continuous-flow intersection (CFI).

The layout has four crossover sub-intersections (1=south, 2=east, 3=north,
4=west) around one main intersection (5).  Eight movements cross the main
intersection: odd indices are through movements, even indices are displaced
right turns that cross over at an upstream sub-intersection.  Everything else
in the package consumes the immutable tables built here.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

MAIN = 5
SUBS = (1, 2, 3, 4)
INTERSECTIONS = (1, 2, 3, 4, 5)
MOVEMENTS = (1, 2, 3, 4, 5, 6, 7, 8)
THROUGH = (1, 3, 5, 7)
RIGHT_TURN = (2, 4, 6, 8)

# Travel times in seconds (crossover sub -> main, main -> exit sub,
# crossover sub -> exit sub).
T_SUB_TO_MAIN = 15
T_MAIN_TO_SUB = 11
T_SUB_TO_SUB = 26

# Storage in vehicles: right-turn bay ahead of the crossover stop line,
# bay between a sub and the main intersection, and the segment between the
# main intersection and the bay entrance.
Z_RIGHT_TURN_BAY = 9
Z_SUB_MAIN_BAY = 10
Z_MAIN_SEGMENT = 30


@dataclass(frozen=True)
class MovementTable:
    """Topology of the CFI: per-movement paths, pair travel times/storages
    and the two conflict-free phase groups at every intersection."""

    paths: dict[int, tuple[int, ...]]
    kinds: dict[int, str]                       # "through" | "right"
    pairs: dict[int, tuple[tuple[int, int], ...]]
    travel_time: dict[tuple[int, int, int], int]    # (a, b, movement) -> s
    bay_capacity: dict[tuple[int, int, int], int]   # (a, b, movement) -> veh
    stopline_capacity: dict[int, int]               # movement -> veh at first(i)
    phase_groups: dict[int, tuple[tuple[int, ...], tuple[int, ...]]]

    def first(self, movement: int) -> int:
        return self.paths[movement][0]

    def exit_sub(self, movement: int) -> int:
        return self.paths[movement][-1]

    def is_through(self, movement: int) -> bool:
        return self.kinds[movement] == "through"

    def group_of(self, intersection: int, movement: int) -> int:
        """0 or 1: index of the phase group serving `movement` there."""
        a, b = self.phase_groups[intersection]
        if movement in a:
            return 0
        if movement in b:
            return 1
        raise KeyError(f"movement {movement} not signalised at {intersection}")

    def consecutive_pairs(self, movement: int) -> tuple[tuple[int, int], ...]:
        """Physical hops along the path (excludes the compound sub-to-sub pair)."""
        p = self.paths[movement]
        return tuple((p[k], p[k + 1]) for k in range(len(p) - 1))

    def movement_pairs(self, movement: int, include_compound: bool = True):
        if include_compound:
            return self.pairs[movement]
        return self.consecutive_pairs(movement)


def build_topology() -> MovementTable:
    """Construct the canonical full-CFI movement table.

    Through movements first stop at the main intersection and then pass the
    sub-intersection on the far side; displaced right turns pass their
    crossover sub, the main intersection and the exit sub.  The layout is
    closed under the 90-degree rotation (1,3,5,7)(2,4,6,8) on movements with
    (1,2,3,4)->(2,3,4,1) on the sub-intersections.
    """
    paths = {
        1: (5, 3), 3: (5, 4), 5: (5, 1), 7: (5, 2),
        2: (1, 5, 2), 4: (2, 5, 3), 6: (3, 5, 4), 8: (4, 5, 1),
    }
    kinds = {i: ("through" if i in THROUGH else "right") for i in MOVEMENTS}

    pairs: dict[int, tuple[tuple[int, int], ...]] = {}
    travel_time: dict[tuple[int, int, int], int] = {}
    bay_capacity: dict[tuple[int, int, int], int] = {}
    for i in MOVEMENTS:
        p = paths[i]
        if kinds[i] == "through":
            pl = [(p[0], p[1])]
        else:
            pl = [(p[0], p[1]), (p[1], p[2]), (p[0], p[2])]
        pairs[i] = tuple(pl)
        for (a, b) in pl:
            if a == MAIN:
                travel_time[(a, b, i)] = T_MAIN_TO_SUB
                bay_capacity[(a, b, i)] = Z_MAIN_SEGMENT
            elif b == MAIN:
                travel_time[(a, b, i)] = T_SUB_TO_MAIN
                bay_capacity[(a, b, i)] = Z_SUB_MAIN_BAY
            else:
                travel_time[(a, b, i)] = T_SUB_TO_SUB
                # Compound pair: binds at its tightest segment.
                bay_capacity[(a, b, i)] = min(Z_SUB_MAIN_BAY, Z_MAIN_SEGMENT)

    stopline = {i: (Z_MAIN_SEGMENT if kinds[i] == "through" else Z_RIGHT_TURN_BAY)
                for i in MOVEMENTS}

    phase_groups = {
        5: ((1, 2, 5, 6), (3, 4, 7, 8)),
        1: ((2,), (5, 8)),
        2: ((4,), (2, 7)),
        3: ((6,), (1, 4)),
        4: ((8,), (3, 6)),
    }
    return MovementTable(paths, kinds, pairs, travel_time, bay_capacity,
                         stopline, phase_groups)


def rotate_movement(i: int) -> int:
    """90-degree rotation on movement indices: (1,3,5,7)(2,4,6,8)."""
    return i + 2 if i <= 6 else i - 6


def rotate_intersection(l: int) -> int:
    """90-degree rotation on intersections: subs cycle, main is fixed."""
    return l if l == MAIN else (l % 4) + 1


@dataclass(frozen=True)
class ModelParams:
    """Model input parameters shared by the optimization pipeline, the
    benchmark procedure and the simulator."""

    alpha_single: float = 1.0       # lane-use factor, single-lane section
    alpha_multi: float = 0.65       # lane-use factor, two-lane section
    sat_flow: float = 0.75          # veh/s per lane
    lost_time: float = 3.0          # s at each green onset
    cycle_min: int = 40
    cycle_max: int = 150
    green_min: int = 10
    green_max: int = 140
    min_bandwidth: float = 5.0      # s
    big_m: float = 10_000.0
    eta: dict[int, float] | None = None   # movement weights; None = demand shares

    def __post_init__(self):
        if not (0 < self.alpha_multi <= 1 and 0 < self.alpha_single <= 1):
            raise ValueError("lane-use factors must lie in (0, 1]")
        if self.sat_flow <= 0:
            raise ValueError("saturation flow must be positive")
        if not (0 < self.cycle_min < self.cycle_max):
            raise ValueError("cycle bounds must satisfy 0 < min < max")
        if not (self.green_min < self.green_max):
            raise ValueError("green bounds must satisfy min < max")
        if self.min_bandwidth <= 0:
            raise ValueError("minimum bandwidth must be positive")
        if self.big_m < 10 * self.cycle_max * 3:
            raise ValueError("big_m too small for the disjunctive rows")
        if self.eta is not None:
            tot = sum(self.eta.values())
            if any(v < 0 for v in self.eta.values()) or abs(tot - 1.0) > 1e-9:
                raise ValueError("movement weights must be >= 0 and sum to 1")

    def alpha(self, table: MovementTable, l: int, i: int) -> float:
        """Lane-use factor of movement i at intersection l.

        Two-lane sections: through movements at the main intersection and
        every approach from the main intersection to an exit sub.  The
        right-turn bays (crossover stop line, main-intersection right turn)
        are single-lane.
        """
        path = table.paths[i]
        if l == MAIN:
            return self.alpha_multi if table.is_through(i) else self.alpha_single
        if l == path[-1] and path.index(l) > 0:
            return self.alpha_multi      # reached via the two-lane exit approach
        return self.alpha_single         # crossover bay

    def sat(self, l: int, i: int) -> float:
        return self.sat_flow

    def discharge_rate(self, table: MovementTable, l: int, i: int) -> float:
        """Movement discharge capacity in veh/s at a stop line (s / alpha)."""
        return self.sat(l, i) / self.alpha(table, l, i)


def default_params() -> ModelParams:
    return ModelParams()


BALANCE_GROUP_A = (1, 2, 5, 6)
BALANCE_GROUP_B = (3, 4, 7, 8)
SHARE_MIN = 0.03
SHARE_MAX = 0.34


@dataclass(frozen=True)
class DemandScenario:
    """Per-movement hourly demand plus taxonomy labels."""

    scenario_id: str
    total_veh_h: float
    shares: tuple[float, ...]            # 8 entries, sum to 1
    balance: str = ""                    # "balanced" | "imbalanced"
    turn_class: str = ""                 # "equal" | "through-heavy" | "right-heavy"
    base_id: str = ""                    # for scaled variants
    multiplier: float = 1.0

    def __post_init__(self):
        if len(self.shares) != 8:
            raise ValueError("a scenario needs exactly 8 movement shares")
        if self.total_veh_h < 0:
            raise ValueError("total demand must be non-negative")
        if self.total_veh_h > 0:
            if abs(sum(self.shares) - 1.0) > 1e-9:
                raise ValueError("movement shares must sum to 1")
            if any(s <= 0 for s in self.shares):
                raise ValueError("movement shares must be positive")

    def share(self, i: int) -> float:
        return self.shares[i - 1]

    def demand(self, i: int) -> float:
        """Average demand of movement i in veh/s."""
        return self.total_veh_h * self.share(i) / 3600.0

    def weight(self, i: int) -> float:
        """Movement weight (demand share of the total)."""
        return self.share(i)

    def scaled(self, multiplier: float, scenario_id: str) -> "DemandScenario":
        return replace(self, scenario_id=scenario_id,
                       total_veh_h=self.total_veh_h * multiplier,
                       base_id=self.base_id or self.scenario_id,
                       multiplier=round(self.multiplier * multiplier, 9))

    def rotated(self, scenario_id: str | None = None) -> "DemandScenario":
        """Shares permuted by the 90-degree topology rotation."""
        shf = [0.0] * 8
        for i in MOVEMENTS:
            shf[rotate_movement(i) - 1] = self.share(i)
        return replace(self, scenario_id=scenario_id or self.scenario_id + "-rot",
                       shares=tuple(shf))


def classify_shares(shares) -> tuple[str, str]:
    """(balance, turn-intensity) labels for a share vector.

    Balanced when the two opposing groups {1,2,5,6} / {3,4,7,8} differ by at
    most 0.10 of the total; turn intensity compares through vs right-turn
    totals with the same 0.10 threshold.
    """
    ga = sum(shares[i - 1] for i in BALANCE_GROUP_A)
    gb = sum(shares[i - 1] for i in BALANCE_GROUP_B)
    balance = "balanced" if abs(ga - gb) <= 0.10 + 1e-12 else "imbalanced"
    th = sum(shares[i - 1] for i in THROUGH)
    rt = sum(shares[i - 1] for i in RIGHT_TURN)
    if abs(th - rt) <= 0.10 + 1e-12:
        turn = "equal"
    elif th > rt:
        turn = "through-heavy"
    else:
        turn = "right-heavy"
    return balance, turn


SCENARIO_HEADER = ("id,total_veh_h,share1,share2,share3,share4,share5,share6,"
                   "share7,share8,balance,turn_class,base_id,multiplier")


def write_scenarios(scenarios, path) -> None:
    """Write scenarios as delimited text, one record per scenario.

    Shares carry exactly six decimals; generated vectors are quantised so the
    printed values still sum to one.
    """
    lines = [SCENARIO_HEADER]
    for sc in scenarios:
        shares = ",".join(f"{s:.6f}" for s in sc.shares)
        lines.append(f"{sc.scenario_id},{sc.total_veh_h:.3f},{shares},"
                     f"{sc.balance},{sc.turn_class},{sc.base_id},{sc.multiplier:g}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_scenarios(path) -> list[DemandScenario]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != SCENARIO_HEADER:
        raise ValueError(f"{path}: unrecognised scenario file header")
    out = []
    for ln in lines[1:]:
        f = ln.split(",")
        out.append(DemandScenario(
            scenario_id=f[0], total_veh_h=float(f[1]),
            shares=tuple(float(x) for x in f[2:10]),
            balance=f[10], turn_class=f[11], base_id=f[12],
            multiplier=float(f[13])))
    return out
