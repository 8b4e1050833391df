"""Sparse maximization problems, solver results and the solver-independent
point checker used as the oracle throughout the test suite."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

FEAS_TOL = 1e-7
INT_TOL = 1e-6

LESS, GREATER, EQUAL = "<=", ">=", "=="


@dataclass
class Variable:
    name: str
    lb: float = 0.0
    ub: float = math.inf
    binary: bool = False


@dataclass
class Constraint:
    name: str
    coeffs: dict[str, float]
    relation: str
    rhs: float


@dataclass
class Violation:
    kind: str        # "bound" | "row" | "integrality" | "structural"
    name: str
    residual: float
    detail: str = ""

    def __str__(self):
        return f"[{self.kind}] {self.name}: residual {self.residual:.3e} {self.detail}"


class LinearProblem:
    """Maximization problem over bounded variables with sparse rows."""

    def __init__(self, name: str = "problem"):
        self.name = name
        self.variables: list[Variable] = []
        self.index: dict[str, int] = {}
        self.objective: dict[str, float] = {}
        self.constraints: list[Constraint] = []

    def add_var(self, name, lb=0.0, ub=math.inf, binary=False, obj=0.0):
        if name in self.index:
            raise ValueError(f"duplicate variable {name!r}")
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        if not (lb <= ub):
            raise ValueError(f"{name}: lower bound exceeds upper bound")
        for v in (lb, ub, obj):
            if math.isnan(v):
                raise ValueError(f"{name}: NaN bound or coefficient")
        self.index[name] = len(self.variables)
        self.variables.append(Variable(name, lb, ub, binary))
        if obj:
            self.objective[name] = obj
        return name

    def add_con(self, name, coeffs, relation, rhs):
        if relation not in (LESS, GREATER, EQUAL):
            raise ValueError(f"unknown relation {relation!r}")
        for var, c in coeffs.items():
            if var not in self.index:
                raise ValueError(f"constraint {name!r} references unknown {var!r}")
            if not math.isfinite(c):
                raise ValueError(f"constraint {name!r}: non-finite coefficient")
        if not math.isfinite(rhs):
            raise ValueError(f"constraint {name!r}: non-finite rhs")
        self.constraints.append(Constraint(name, dict(coeffs), relation, rhs))
        return name

    def set_objective(self, coeffs):
        for var in coeffs:
            if var not in self.index:
                raise ValueError(f"objective references unknown {var!r}")
        self.objective = dict(coeffs)

    @property
    def binaries(self) -> list[str]:
        return [v.name for v in self.variables if v.binary]

    def objective_value(self, values) -> float:
        return sum(c * values[v] for v, c in self.objective.items())

    def copy_with_bounds(self) -> "LinearProblem":
        """Clone sharing the rows but owning its variable bounds."""
        out = LinearProblem(self.name)
        out.index = dict(self.index)
        out.variables = [Variable(v.name, v.lb, v.ub, v.binary)
                         for v in self.variables]
        out.objective = dict(self.objective)
        out.constraints = self.constraints
        return out

    def tighten_bound(self, name, lb=None, ub=None):
        v = self.variables[self.index[name]]
        if lb is not None:
            v.lb = max(v.lb, lb)
        if ub is not None:
            v.ub = min(v.ub, ub)
        if v.lb > v.ub:
            raise ValueError(f"{name}: bound tightening made the domain empty")


def check_point(problem: LinearProblem, values, tol: float = FEAS_TOL):
    """Residuals of every bound, row and binary requirement violated by
    `values`.  Missing variables are reported as structural violations."""
    out: list[Violation] = []
    for v in problem.variables:
        if v.name not in values:
            out.append(Violation("structural", v.name, math.inf, "missing value"))
    if out:
        return out
    for v in problem.variables:
        x = values[v.name]
        if x < v.lb - tol:
            out.append(Violation("bound", v.name, v.lb - x, f"below lower {v.lb}"))
        if x > v.ub + tol:
            out.append(Violation("bound", v.name, x - v.ub, f"above upper {v.ub}"))
        if v.binary and min(abs(x), abs(1 - x)) > INT_TOL:
            out.append(Violation("integrality", v.name,
                                 min(abs(x), abs(1 - x)), "fractional binary"))
    for con in problem.constraints:
        lhs = sum(c * values[var] for var, c in con.coeffs.items())
        resid = 0.0
        if con.relation == LESS:
            resid = lhs - con.rhs
        elif con.relation == GREATER:
            resid = con.rhs - lhs
        else:
            resid = abs(lhs - con.rhs)
        if resid > tol:
            out.append(Violation("row", con.name, resid, con.relation))
    return out


@dataclass
class Solution:
    """Solver result.  `objective` is always recomputed from `values`."""

    status: str                  # optimal | feasible-incumbent | infeasible |
                                 # unbounded | timeout-with-incumbent |
                                 # timeout-no-incumbent | solver-failure
    values: dict[str, float] = field(default_factory=dict)
    objective: float = math.nan
    iterations: int = 0
    nodes: int = 0
    wall_time: float = 0.0
    bound: float = math.nan      # best proven bound (maximization)
    message: str = ""
    row_duals: dict[str, float] = field(default_factory=dict)

    @property
    def has_values(self) -> bool:
        return self.status in ("optimal", "feasible-incumbent",
                               "timeout-with-incumbent")

    def signature(self) -> str:
        """Deterministic payload (excludes wall-clock time)."""
        vals = ";".join(f"{k}={self.values[k]:.12g}" for k in sorted(self.values))
        return (f"{self.status}|{self.objective:.12g}|{self.iterations}|"
                f"{self.nodes}|{vals}")


def write_lp_format(problem: LinearProblem, path) -> None:
    """Dump the problem in LP text format for external cross-checking."""

    def term(c, v):
        sign = "+" if c >= 0 else "-"
        return f"{sign} {abs(c):.12g} {v}"

    lines = [f"\\ {problem.name}", "Maximize", " obj: " +
             " ".join(term(c, v) for v, c in problem.objective.items())]
    lines.append("Subject To")
    rel = {LESS: "<=", GREATER: ">=", EQUAL: "="}
    for con in problem.constraints:
        body = " ".join(term(c, v) for v, c in con.coeffs.items())
        lines.append(f" {con.name}: {body} {rel[con.relation]} {con.rhs:.12g}")
    lines.append("Bounds")
    for v in problem.variables:
        lo = f"{v.lb:.12g}" if math.isfinite(v.lb) else "-inf"
        hi = f"{v.ub:.12g}" if math.isfinite(v.ub) else "+inf"
        lines.append(f" {lo} <= {v.name} <= {hi}")
    bins = problem.binaries
    if bins:
        lines.append("Binary")
        lines.extend(f" {b}" for b in bins)
    lines.append("End")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
