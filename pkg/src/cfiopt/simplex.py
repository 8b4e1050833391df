"""Bounded-variable tableau simplex.

One tableau instance carries a minimization problem in computational form
(rows are equalities over structural + slack columns, every column has lower
and upper bounds).  The primal algorithm solves from scratch with an
artificial-variable phase 1; artificials are virtual basis members only
(identity columns that can leave the basis but never enter), so they cost
nothing in the pivot updates.  The dual algorithm re-optimizes after bound
changes, which is what makes warm-started branch-and-bound nodes cheap: the
tableau depends only on the basis, never on the bounds.

Pivot selection is largest-coefficient (Dantzig) with a switch to Bland's
rule after a run of degenerate steps; ties break on the lowest index so
repeated solves of the same problem take identical paths.
"""

from __future__ import annotations

import numpy as np

AT_LO, AT_UP, BASIC, FREE = 0, 1, 2, 3

COST_TOL = 1e-7        # reduced-cost threshold for entering candidates
FEAS_TOL = 1e-7        # bound violation threshold (dual leaving test)
PIVOT_TOL = 1e-9       # smallest acceptable pivot magnitude
RATIO_EPS = 1e-12
DEGENERATE_STEP = 1e-10
BLAND_AFTER = 60       # degenerate pivots before switching to Bland's rule
REFRESH_EVERY = 3000   # pivots between full tableau recomputations

OPTIMAL, UNBOUNDED, INFEASIBLE, ITER_LIMIT, INTERRUPTED, SINGULAR = (
    "optimal", "unbounded", "infeasible", "iteration-limit", "interrupted",
    "singular")


class SimplexTableau:
    """Minimize cost @ x subject to A x (rel) b and lo <= x <= up."""

    def __init__(self, a, b, cost, lo, up, relations):
        a = np.asarray(a, dtype=float)
        m, n = a.shape
        self.m, self.nstruct = m, n
        self.ncols = n + m                         # structurals + slacks
        self.a = np.zeros((m, self.ncols))
        self.a[:, :n] = a
        self.a[:, n:] = np.eye(m)
        self.b = np.asarray(b, dtype=float).copy()
        self.cost = np.zeros(self.ncols)
        self.cost[:n] = cost
        self.lo = np.full(self.ncols, -np.inf)
        self.up = np.full(self.ncols, np.inf)
        self.lo[:n] = lo
        self.up[:n] = up
        for r, rel in enumerate(relations):
            s = n + r
            if rel == "<=":
                self.lo[s], self.up[s] = 0.0, np.inf
            elif rel == ">=":
                self.lo[s], self.up[s] = -np.inf, 0.0
            else:
                self.lo[s], self.up[s] = 0.0, 0.0

        self.slack = np.arange(n, n + m)
        # Basis entries >= ncols denote the virtual artificial of row
        # (entry - ncols); such columns are identity vectors that only ever
        # leave the basis, so the tableau never stores them.
        self.art_lo = np.zeros(m)
        self.art_up = np.zeros(m)
        self.art_cost = np.zeros(m)
        self.basis = self.slack.copy()
        self.stat = np.full(self.ncols, AT_LO, dtype=np.int8)
        self.tab = self.a.copy()                   # B^-1 A
        self.rhs0 = self.b.copy()                  # B^-1 b
        self.z = np.zeros(self.ncols)              # reduced costs (min form)
        self.xb = np.zeros(m)
        self.pivots = 0
        self._since_refresh = 0
        self._buf = np.empty_like(self.tab)
        self.interrupt = None                      # callable -> bool

    # ------------------------------------------------------------------
    # state helpers
    # ------------------------------------------------------------------

    def _basis_arrays(self, source, art_source):
        out = np.empty(self.m)
        real = self.basis < self.ncols
        out[real] = source[self.basis[real]]
        virt = ~real
        if np.any(virt):
            out[virt] = art_source[self.basis[virt] - self.ncols]
        return out

    def basis_lo(self):
        return self._basis_arrays(self.lo, self.art_lo)

    def basis_up(self):
        return self._basis_arrays(self.up, self.art_up)

    def basis_cost(self, phase1=False):
        if phase1:
            return self._basis_arrays(np.zeros(self.ncols), self.art_cost)
        return self._basis_arrays(self.cost, np.zeros(self.m))

    def compute_z(self, phase1=False):
        base = np.zeros(self.ncols) if phase1 else self.cost
        self.z = base - self.basis_cost(phase1) @ self.tab

    def nonbasic_values(self):
        vals = np.where(self.stat == AT_LO, self.lo,
                        np.where(self.stat == AT_UP, self.up, 0.0))
        vals[~np.isfinite(vals)] = 0.0
        vals[self.stat == BASIC] = 0.0
        return vals

    def recompute_xb(self):
        self.xb = self.rhs0 - self.tab @ self.nonbasic_values()

    def _basis_matrix(self):
        bmat = np.zeros((self.m, self.m))
        for r, j in enumerate(self.basis):
            if j < self.ncols:
                bmat[:, r] = self.a[:, j]
            else:
                bmat[j - self.ncols, r] = 1.0
        return bmat

    def refresh(self, phase1=False):
        """Recompute tableau, reduced costs and basic values from scratch."""
        rhs = np.hstack([self.a, self.b[:, None]])
        try:
            sol = np.linalg.solve(self._basis_matrix(), rhs)
        except np.linalg.LinAlgError:
            return False
        self.tab = sol[:, :-1]
        self.rhs0 = sol[:, -1]
        self._buf = np.empty_like(self.tab)
        self.compute_z(phase1)
        self.recompute_xb()
        self._since_refresh = 0
        return True

    def set_statuses_by_cost_sign(self):
        """Dual-feasible nonbasic placement for the current reduced costs.

        Returns False when a column demands a bound it does not have.
        """
        stat, z = self.stat, self.z
        lo_fin = np.isfinite(self.lo)
        up_fin = np.isfinite(self.up)
        nb = stat != BASIC
        pos = nb & (z > COST_TOL)
        neg = nb & (z < -COST_TOL)
        if np.any(pos & ~lo_fin) or np.any(neg & ~up_fin):
            return False
        stat[pos] = AT_LO
        stat[neg] = AT_UP
        mid = nb & ~pos & ~neg
        keep = (((stat == AT_LO) & lo_fin) | ((stat == AT_UP) & up_fin)
                | ((stat == FREE) & ~lo_fin & ~up_fin))
        move = mid & ~keep
        stat[move & lo_fin] = AT_LO
        stat[move & ~lo_fin & up_fin] = AT_UP
        stat[move & ~lo_fin & ~up_fin] = FREE
        return True

    def values(self):
        x = self.nonbasic_values()
        real = self.basis < self.ncols
        x[self.basis[real]] = self.xb[real]
        return x

    def clean_values(self):
        """Re-solve the basic values exactly for the current basis."""
        x = self.nonbasic_values()
        resid = self.b - self.a @ x
        bmat = self._basis_matrix()
        try:
            xb = np.linalg.solve(bmat, resid)
        except np.linalg.LinAlgError:
            xb, *_ = np.linalg.lstsq(bmat, resid, rcond=None)
        real = self.basis < self.ncols
        x[self.basis[real]] = xb[real]
        return x

    def _interrupted(self):
        return self.interrupt is not None and self.interrupt()

    # ------------------------------------------------------------------
    # pivoting
    # ------------------------------------------------------------------

    def _apply_pivot(self, r, j, phase1=False):
        piv = self.tab[r, j]
        if abs(piv) < PIVOT_TOL:
            return False
        self.tab[r, :] /= piv
        self.rhs0[r] /= piv
        col = self.tab[:, j].copy()
        col[r] = 0.0
        np.multiply(col[:, None], self.tab[r, :][None, :], out=self._buf)
        self.tab -= self._buf
        self.rhs0 -= col * self.rhs0[r]
        self.z = self.z - self.z[j] * self.tab[r, :]
        self.pivots += 1
        self._since_refresh += 1
        return True

    def _leave_status(self, leave, at_lower):
        if leave < self.ncols:
            self.stat[leave] = AT_LO if at_lower else AT_UP

    def _maybe_refresh(self, phase1=False):
        if self._since_refresh >= REFRESH_EVERY:
            self.refresh(phase1)

    # ------------------------------------------------------------------
    # primal simplex
    # ------------------------------------------------------------------

    def primal(self, max_iter=None, phase1=False):
        m, ncols = self.m, self.ncols
        if max_iter is None:
            max_iter = 100 * (m + ncols)
        bland = False
        degenerate_run = 0
        movable = self.up - self.lo > PIVOT_TOL     # fixed columns never enter
        for it in range(max_iter):
            if it % 64 == 0 and self._interrupted():
                return INTERRUPTED
            at_lo = (self.stat == AT_LO) & movable
            at_up = (self.stat == AT_UP) & movable
            free = self.stat == FREE
            score = np.zeros(ncols)
            score[at_lo] = self.z[at_lo]
            score[at_up] = -self.z[at_up]
            score[free] = -np.abs(self.z[free])
            if bland:
                cand = np.flatnonzero(score < -COST_TOL)
                if cand.size == 0:
                    return OPTIMAL
                j = int(cand[0])
            else:
                j = int(np.argmin(score))
                if score[j] >= -COST_TOL:
                    return OPTIMAL
            if self.stat[j] == AT_LO:
                direction = 1.0
            elif self.stat[j] == AT_UP:
                direction = -1.0
            else:
                direction = -np.sign(self.z[j]) or 1.0

            col = self.tab[:, j]
            step = -direction * col
            blo = self.basis_lo()
            bup = self.basis_up()
            tmax = np.full(m, np.inf)
            dn = step < -PIVOT_TOL
            upm = step > PIVOT_TOL
            with np.errstate(invalid="ignore"):
                tmax[dn] = (self.xb[dn] - blo[dn]) / (-step[dn])
                tmax[upm] = (bup[upm] - self.xb[upm]) / step[upm]
            np.clip(tmax, 0.0, None, out=tmax)
            row_t = tmax.min() if m else np.inf
            self_t = self.up[j] - self.lo[j]
            if not np.isfinite(self_t):
                self_t = np.inf
            tstar = min(row_t, self_t)
            if not np.isfinite(tstar):
                return UNBOUNDED

            if tstar <= DEGENERATE_STEP:
                degenerate_run += 1
                if degenerate_run > BLAND_AFTER:
                    bland = True
            else:
                degenerate_run = 0
                bland = False

            if self_t <= row_t:
                # Bound flip: the entering column runs to its other bound.
                self.xb += tstar * step
                self.stat[j] = AT_UP if self.stat[j] == AT_LO else AT_LO
                self.pivots += 1
                continue

            ties = np.flatnonzero(tmax <= tstar + RATIO_EPS)
            r = int(ties[np.argmin(self.basis[ties])])
            leave = self.basis[r]
            self.xb += tstar * step
            if self.stat[j] == AT_LO:
                enter_val = self.lo[j] + direction * tstar
            elif self.stat[j] == AT_UP:
                enter_val = self.up[j] + direction * tstar
            else:
                enter_val = direction * tstar
            self._leave_status(leave, step[r] < 0)
            if not self._apply_pivot(r, j, phase1):
                if leave < self.ncols:
                    self.stat[leave] = BASIC
                if not self.refresh(phase1):
                    return SINGULAR
                continue
            self.basis[r] = j
            self.stat[j] = BASIC
            self.xb[r] = enter_val
            self._maybe_refresh(phase1)
        return ITER_LIMIT

    # ------------------------------------------------------------------
    # dual simplex
    # ------------------------------------------------------------------

    def dual(self, max_iter=None):
        m, ncols = self.m, self.ncols
        if max_iter is None:
            max_iter = 100 * (m + ncols)
        bland = False
        degenerate_run = 0
        movable = self.up - self.lo > PIVOT_TOL
        for it in range(max_iter):
            if it % 64 == 0 and self._interrupted():
                return INTERRUPTED
            blo = self.basis_lo()
            bup = self.basis_up()
            below = blo - self.xb
            above = self.xb - bup
            viol = np.maximum(below, above)
            viol[~np.isfinite(viol)] = -np.inf
            r = int(np.argmax(viol))
            if viol[r] <= FEAS_TOL:
                return OPTIMAL
            going_up = below[r] > above[r]          # basic sits under its bound
            target = blo[r] if going_up else bup[r]
            row = self.tab[r, :]
            arow = row if going_up else -row

            at_lo = (self.stat == AT_LO) & movable
            at_up = (self.stat == AT_UP) & movable
            free = self.stat == FREE
            elig = ((at_lo & (arow < -PIVOT_TOL)) |
                    (at_up & (arow > PIVOT_TOL)) |
                    (free & (np.abs(arow) > PIVOT_TOL)))
            idx = np.flatnonzero(elig)
            if idx.size == 0:
                return INFEASIBLE
            ratios = np.abs(self.z[idx]) / np.abs(arow[idx])
            best = ratios.min()
            ties = idx[np.flatnonzero(ratios <= best + RATIO_EPS)]
            if bland:
                j = int(ties[0])
            else:
                j = int(ties[np.argmax(np.abs(arow[ties]))])
            if np.abs(self.z[j]) <= COST_TOL * max(1.0, np.abs(self.z).max()):
                degenerate_run += 1
                if degenerate_run > BLAND_AFTER:
                    bland = True
            else:
                degenerate_run = 0
                bland = False

            delta = (self.xb[r] - target) / self.tab[r, j]
            if self.stat[j] == AT_LO:
                enter_val = self.lo[j] + delta
            elif self.stat[j] == AT_UP:
                enter_val = self.up[j] + delta
            else:
                enter_val = delta
            col = self.tab[:, j].copy()
            leave = self.basis[r]
            self.xb -= delta * col
            self._leave_status(leave, going_up)
            if not self._apply_pivot(r, j):
                if leave < self.ncols:
                    self.stat[leave] = BASIC
                if not self.refresh():
                    return SINGULAR
                continue
            self.basis[r] = j
            self.stat[j] = BASIC
            self.xb[r] = enter_val
            self._maybe_refresh()
        return ITER_LIMIT

    # ------------------------------------------------------------------
    # full primal solve (phase 1 + phase 2)
    # ------------------------------------------------------------------

    def solve_primal(self, max_iter=None):
        """Artificial phase 1 (virtual columns) + phase 2 from slack basis."""
        n, m = self.nstruct, self.m
        self.basis = self.slack.copy()
        self.tab = self.a.copy()
        self.rhs0 = self.b.copy()
        self._buf = np.empty_like(self.tab)
        self._since_refresh = 0
        self.art_lo[:] = 0.0
        self.art_up[:] = 0.0
        self.art_cost[:] = 0.0
        self.stat[:] = AT_LO
        self.stat[self.basis] = BASIC
        for j in range(n):
            if np.isfinite(self.lo[j]):
                self.stat[j] = AT_LO
            elif np.isfinite(self.up[j]):
                self.stat[j] = AT_UP
            else:
                self.stat[j] = FREE
        self.recompute_xb()

        needs_phase1 = False
        for r in range(m):
            s = self.slack[r]
            val = self.xb[r]
            if val < self.lo[s] - FEAS_TOL or val > self.up[s] + FEAS_TOL:
                needs_phase1 = True
                self.basis[r] = self.ncols + r
                # Slack parks at the bound nearest the computed value.
                if val > self.up[s]:
                    self.stat[s] = AT_UP
                    art_val = val - self.up[s]
                else:
                    self.stat[s] = AT_LO
                    art_val = val - self.lo[s]
                if art_val >= 0:
                    self.art_lo[r], self.art_up[r] = 0.0, np.inf
                    self.art_cost[r] = 1.0
                else:
                    self.art_lo[r], self.art_up[r] = -np.inf, 0.0
                    self.art_cost[r] = -1.0
                self.xb[r] = art_val

        if needs_phase1:
            self.compute_z(phase1=True)
            status = self.primal(max_iter, phase1=True)
            if status in (INTERRUPTED, SINGULAR, ITER_LIMIT):
                return status
            virt = self.basis >= self.ncols
            infeas = float(np.abs(self.xb[virt]).sum()) if np.any(virt) else 0.0
            self.art_lo[:] = 0.0
            self.art_up[:] = 0.0
            self.art_cost[:] = 0.0
            if infeas > 1e-6:
                return INFEASIBLE
            # Pin any artificial still in the basis at zero.
            self.xb[virt] = 0.0
        self.compute_z()
        return self.primal(max_iter)

    def objective(self):
        return float(self.cost @ self.values())
