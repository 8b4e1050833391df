"""LP solving and branch-and-bound over binary variables.

The MILP search explores nodes in best-bound order with a deterministic
effort budget expressed in simplex pivots.  The budget, not the wall clock,
is the primary stopping rule, so identical problems produce identical
solutions; a wall-clock backstop still guarantees the solver returns within
the caller's time limit on slow or contended machines.  Each node re-solves
the shared tableau with the dual simplex after changing only variable
bounds, which keeps per-node work small.
"""

from __future__ import annotations

import heapq
import math
import time

import numpy as np

from . import simplex
from .lp import (FEAS_TOL, INT_TOL, LinearProblem, Solution, Violation,
                 check_point)

# Conservative pivots-per-second rating: budget-terminated solves finish well
# inside the wall limit even with other workers on the machine.
PIVOTS_PER_SECOND = 450.0
MIN_PIVOT_BUDGET = 3000
NODE_DUAL_ITERS = 4000
NODE_PRIMAL_ITERS = 20000
GAP_TOL = 1e-6


def _build_tableau(problem: LinearProblem) -> simplex.SimplexTableau:
    n = len(problem.variables)
    m = len(problem.constraints)
    a = np.zeros((m, n))
    b = np.zeros(m)
    relations = []
    for r, con in enumerate(problem.constraints):
        for var, c in con.coeffs.items():
            a[r, problem.index[var]] += c
        b[r] = con.rhs
        relations.append(con.relation)
    cost = np.zeros(n)
    for var, c in problem.objective.items():
        cost[problem.index[var]] = -c          # maximize -> minimize
    lo = np.array([v.lb for v in problem.variables])
    up = np.array([v.ub for v in problem.variables])
    return simplex.SimplexTableau(a, b, cost, lo, up, relations)


def _values_dict(problem, x):
    return {v.name: float(x[k]) for k, v in enumerate(problem.variables)}


def _solve_unconstrained(problem, t0):
    """Bound-only problem: each variable independently at its best bound."""
    values = {}
    for v in problem.variables:
        c = problem.objective.get(v.name, 0.0)
        if c > 0:
            if not math.isfinite(v.ub):
                return Solution("unbounded", wall_time=time.perf_counter() - t0)
            values[v.name] = v.ub
        elif c < 0:
            if not math.isfinite(v.lb):
                return Solution("unbounded", wall_time=time.perf_counter() - t0)
            values[v.name] = v.lb
        else:
            values[v.name] = v.lb if math.isfinite(v.lb) else (
                v.ub if math.isfinite(v.ub) else 0.0)
    return Solution("optimal", values, problem.objective_value(values),
                    wall_time=time.perf_counter() - t0,
                    bound=problem.objective_value(values))


def solve_lp(problem: LinearProblem, max_iter=None) -> Solution:
    """Optimal basic solution of an LP (no binary variables allowed)."""
    if problem.binaries:
        raise ValueError("solve_lp expects a problem without binaries")
    t0 = time.perf_counter()
    if not problem.constraints:
        return _solve_unconstrained(problem, t0)
    tab = _build_tableau(problem)
    status = tab.solve_primal(max_iter)
    if status == simplex.ITER_LIMIT or status == simplex.SINGULAR:
        if tab.refresh():
            status = tab.primal(max_iter)
    wall = time.perf_counter() - t0

    def duals():
        # Row dual = -reduced cost of the row's slack (minimization form);
        # after an infeasible phase 1 these are the certificate weights.
        return {con.name: float(-tab.z[tab.slack[r]])
                for r, con in enumerate(problem.constraints)}

    if status == simplex.INFEASIBLE:
        return Solution("infeasible", iterations=tab.pivots, wall_time=wall,
                        row_duals=duals())
    if status == simplex.UNBOUNDED:
        return Solution("unbounded", iterations=tab.pivots, wall_time=wall)
    if status != simplex.OPTIMAL:
        return Solution("solver-failure", iterations=tab.pivots,
                        wall_time=wall, message=f"simplex status {status}")
    values = _values_dict(problem, tab.clean_values())
    if check_point(problem, values, FEAS_TOL):
        tab.refresh()
        tab.primal(max_iter)
        values = _values_dict(problem, tab.clean_values())
        if check_point(problem, values, FEAS_TOL):
            return Solution("solver-failure", iterations=tab.pivots,
                            wall_time=wall, message="residuals after re-solve")
    obj = problem.objective_value(values)
    return Solution("optimal", values, obj, iterations=tab.pivots,
                    wall_time=time.perf_counter() - t0, bound=obj,
                    row_duals=duals())


class _Search:
    """Shared state of one branch-and-bound run."""

    def __init__(self, problem, tab, bin_idx, deadline):
        self.problem = problem
        self.tab = tab
        self.bin_idx = bin_idx
        self.base_lo = tab.lo.copy()
        self.base_up = tab.up.copy()
        self.deadline = deadline
        self.incumbent = None           # (objective, values dict)
        self.exact = True               # no node was abandoned unsolved
        tab.interrupt = lambda: time.perf_counter() > deadline

    def node_lp(self, fixes):
        """Re-solve with the given {column: (lo, up)} overrides.

        Returns (status, objective_max, x); x comes straight from the
        tableau (clean re-solves happen only for incumbent candidates).
        """
        tab = self.tab
        tab.lo[:] = self.base_lo
        tab.up[:] = self.base_up
        for j, (lj, uj) in fixes.items():
            tab.lo[j], tab.up[j] = lj, uj
        if tab.set_statuses_by_cost_sign():
            tab.recompute_xb()
            status = tab.dual(NODE_DUAL_ITERS)
        else:
            status = simplex.ITER_LIMIT
        if status in (simplex.ITER_LIMIT, simplex.SINGULAR):
            tab.refresh()
            status = tab.solve_primal(NODE_PRIMAL_ITERS)
        if status == simplex.OPTIMAL:
            x = tab.values()
            obj = -float(tab.cost @ x)
            return "optimal", obj, x
        if status == simplex.INFEASIBLE:
            return "infeasible", -math.inf, None
        if status == simplex.UNBOUNDED:
            return "unbounded", math.inf, None
        if status == simplex.INTERRUPTED:
            return "interrupted", -math.inf, None
        self.exact = False
        return "failed", -math.inf, None

    def fractional(self, x):
        """Most fractional binary column, ties to the lowest index."""
        best_j, best_f = -1, INT_TOL
        for j in self.bin_idx:
            f = min(x[j] - math.floor(x[j]), math.ceil(x[j]) - x[j])
            if f > best_f + 1e-12:
                best_j, best_f = j, f
        return best_j

    def try_incumbent(self):
        """Clean-solve the current basis and accept it if feasible/integral."""
        values = _values_dict(self.problem, self.tab.clean_values())
        if check_point(self.problem, values, FEAS_TOL):
            return False
        obj = self.problem.objective_value(values)
        if self.incumbent is None or obj > self.incumbent[0] + 1e-12:
            self.incumbent = (obj, values)
            return True
        return False

    def cutoff(self):
        if self.incumbent is None:
            return -math.inf
        inc = self.incumbent[0]
        return inc + GAP_TOL * max(1.0, abs(inc))

    def dive(self, x0):
        """Round-and-fix dive from the relaxation point for a first incumbent."""
        fixes = {}
        x = x0
        for _ in range(len(self.bin_idx) + 1):
            j = self.fractional(x)
            if j < 0:
                self.try_incumbent()
                return
            v = 1.0 if x[j] >= 0.5 else 0.0
            fixes[j] = (v, v)
            status, _, x = self.node_lp(fixes)
            if status == "optimal":
                continue
            if status in ("interrupted", "failed"):
                return
            fixes[j] = (1.0 - v, 1.0 - v)
            status, _, x = self.node_lp(fixes)
            if status != "optimal":
                return


def tighten_bounds(problem: LinearProblem, passes: int = 3):
    """Constraint-propagation bound tightening (in place).

    For every row, each variable's bound implied by the others' ranges is
    intersected with its declared bound; binaries whose range excludes one
    of {0, 1} get fixed (valid for the integer problem, so the tightened
    relaxation still bounds the MILP).  Returns (changes, feasible).
    """
    changes = 0
    for _ in range(passes):
        before = changes
        for con in problem.constraints:
            modes = ("<=", ">=") if con.relation == "==" else (con.relation,)
            for rel in modes:
                sense = 1.0 if rel == "<=" else -1.0
                rhs = sense * con.rhs
                terms = [(problem.index[v], sense * c)
                         for v, c in con.coeffs.items() if c]
                mins = []
                for j, c in terms:
                    v = problem.variables[j]
                    mins.append(c * v.lb if c > 0 else c * v.ub)
                if any(not math.isfinite(x) for x in mins):
                    continue
                total_min = sum(mins)
                for (j, c), mn in zip(terms, mins):
                    v = problem.variables[j]
                    room = rhs - (total_min - mn)
                    if c > 0:
                        if room / c < v.ub - 1e-9:
                            v.ub = room / c
                            changes += 1
                    elif room / c > v.lb + 1e-9:
                        v.lb = room / c
                        changes += 1
        for v in problem.variables:
            if v.binary:
                if 1e-9 < v.lb < 1.0:
                    v.lb = 1.0
                    changes += 1
                if 0.0 < v.ub < 1.0 - 1e-9:
                    v.ub = 0.0
                    changes += 1
            if v.lb > v.ub + 1e-9:
                return changes, False
        if changes == before:
            break
    return changes, True


def solve_milp(problem: LinearProblem, time_limit: float = 20.0,
               warm_values: dict | None = None) -> Solution:
    """Branch-and-bound over the binary variables of `problem`.

    Returns the best incumbent when the deterministic pivot budget (derived
    from `time_limit`) or the wall-clock backstop expires; proves optimality
    when the tree is exhausted first.  `warm_values`, when given and
    feasible, seeds the incumbent before the search starts.
    """
    t0 = time.perf_counter()
    bin_names = problem.binaries
    if not bin_names:
        return solve_lp(problem)
    budget = max(MIN_PIVOT_BUDGET, int(PIVOTS_PER_SECOND * time_limit))
    deadline = t0 + max(0.2, time_limit * 0.92)
    work = problem.copy_with_bounds()
    _, feasible = tighten_bounds(work)
    if not feasible:
        return Solution("infeasible", wall_time=time.perf_counter() - t0,
                        message="bound propagation proved infeasibility")
    tab = _build_tableau(work)
    search = _Search(problem, tab, [problem.index[b] for b in bin_names],
                     deadline)
    if warm_values is not None and not check_point(problem, warm_values,
                                                   FEAS_TOL):
        search.incumbent = (problem.objective_value(warm_values),
                            dict(warm_values))

    root_status = tab.solve_primal()
    if root_status == simplex.INFEASIBLE:
        return Solution("infeasible", iterations=tab.pivots, nodes=1,
                        wall_time=time.perf_counter() - t0)
    if root_status == simplex.UNBOUNDED:
        return Solution("unbounded", iterations=tab.pivots, nodes=1,
                        wall_time=time.perf_counter() - t0)
    if root_status != simplex.OPTIMAL:
        return Solution("solver-failure", iterations=tab.pivots, nodes=1,
                        wall_time=time.perf_counter() - t0,
                        message=f"root status {root_status}")
    xroot = tab.clean_values()
    root_bound = -float(tab.cost @ xroot)
    nodes = 1

    jroot = search.fractional(xroot)
    if jroot < 0:
        search.try_incumbent()
        obj, values = search.incumbent
        return Solution("optimal", values, obj, iterations=tab.pivots,
                        nodes=nodes, wall_time=time.perf_counter() - t0,
                        bound=root_bound)

    search.dive(xroot)

    counter = 0
    heap = [(-root_bound, jroot, counter, {})]
    stop = None
    while heap:
        if tab.pivots > budget:
            stop = "budget"
            break
        if time.perf_counter() > deadline:
            stop = "wall"
            break
        neg_bound, jfrac, _, fixes = heapq.heappop(heap)
        if -neg_bound <= search.cutoff():
            continue
        status, obj, x = search.node_lp(fixes)
        nodes += 1
        if status == "interrupted":
            stop = "wall"
            break
        if status in ("infeasible", "failed"):
            continue
        if obj <= search.cutoff():
            continue
        j = search.fractional(x)
        if j < 0:
            search.try_incumbent()
            continue
        for v in (0.0, 1.0):
            child = dict(fixes)
            child[j] = (v, v)
            counter += 1
            heapq.heappush(heap, (-obj, j, counter, child))

    wall = time.perf_counter() - t0
    open_bound = max((-h[0] for h in heap), default=-math.inf)
    if search.incumbent is not None:
        obj, values = search.incumbent
        bound = max(obj, open_bound) if stop else obj
        if stop is None and search.exact:
            status = "optimal"
        elif stop == "wall":
            status = "timeout-with-incumbent"
        else:
            status = "feasible-incumbent"
        return Solution(status, values, obj, iterations=tab.pivots,
                        nodes=nodes, wall_time=wall, bound=bound)
    if stop is None and search.exact:
        return Solution("infeasible", iterations=tab.pivots, nodes=nodes,
                        wall_time=wall)
    return Solution("timeout-no-incumbent", iterations=tab.pivots,
                    nodes=nodes, wall_time=wall, bound=open_bound)
