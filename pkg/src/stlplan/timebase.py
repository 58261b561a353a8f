"""Incremental time-constraint store with exact integer bound queries.

Holds one integer box per time variable plus linear constraints whose left
side is a 0-1 combination of variables.  Feasibility and bound extremes are
decided exactly by bounds propagation plus domain-splitting search, which is
cheap at the sizes produced by formula decomposition.  Mutations are
journaled so a depth-first search can snapshot and restore the store while
backtracking.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

from .decompose import Decomposition, SymbolicBound

__all__ = ["ConstraintStore", "InfeasibleStoreError", "StaleTokenError", "store_from"]

LE = "<="
GE = ">="


class InfeasibleStoreError(RuntimeError):
    """Raised when querying an infeasible store."""


class StaleTokenError(RuntimeError):
    """Raised when restoring to a token newer than the current version."""


class ConstraintStore:
    def __init__(self, boxes: Sequence[Tuple[int, int]]):
        self._lo = [int(a) for a, _ in boxes]
        self._hi = [int(b) for _, b in boxes]
        if any(a > b for a, b in zip(self._lo, self._hi)):
            raise ValueError("empty initial box")
        if any(a < 0 for a in self._lo):
            raise ValueError("time variables are non-negative")
        # (sorted var tuple, LE|GE, integer right-hand side)
        self._linear: List[Tuple[Tuple[int, ...], str, int]] = []
        self._journal: List[tuple] = []
        self._infeasible = False

    # -- bookkeeping --------------------------------------------------------

    @property
    def var_count(self) -> int:
        return len(self._lo)

    @property
    def version(self) -> int:
        return len(self._journal)

    @property
    def feasible(self) -> bool:
        return not self._infeasible

    def clone(self) -> "ConstraintStore":
        other = ConstraintStore.__new__(ConstraintStore)
        other._lo = list(self._lo)
        other._hi = list(self._hi)
        other._linear = list(self._linear)
        other._journal = []
        other._infeasible = self._infeasible
        return other

    def snapshot(self) -> int:
        return len(self._journal)

    def restore(self, token: int) -> None:
        if token > len(self._journal):
            raise StaleTokenError(
                f"token {token} is newer than version {len(self._journal)}"
            )
        while len(self._journal) > token:
            entry = self._journal.pop()
            tag = entry[0]
            if tag == "box":
                _, i, lo, hi = entry
                self._lo[i] = lo
                self._hi[i] = hi
            elif tag == "lin":
                self._linear.pop()
            else:  # "inf"
                self._infeasible = entry[1]

    def _narrow_box(self, i: int, lo: int, hi: int) -> None:
        self._journal.append(("box", i, self._lo[i], self._hi[i]))
        self._lo[i] = lo
        self._hi[i] = hi

    def _mark_infeasible(self) -> None:
        if not self._infeasible:
            self._journal.append(("inf", False))
            self._infeasible = True

    # -- mutation -----------------------------------------------------------

    def add_constraint(self, bound: SymbolicBound, op: str, rhs: int) -> bool:
        """Record ``bound op rhs`` and report whether the store stays feasible.

        ``op`` is one of ``<=``, ``>=``, ``<``; the strict form is normalised
        to ``<= rhs-1`` over the integers.
        """
        for v in bound.vars:
            if not 0 <= v < len(self._lo):
                raise KeyError(f"unknown time variable l{v}")
        if op == "<":
            op, rhs = LE, rhs - 1
        if op not in (LE, GE):
            raise ValueError(f"unsupported operator {op!r}")
        rhs = int(rhs) - bound.const
        vs = tuple(sorted(bound.vars))

        if not vs:
            if (op == LE and 0 > rhs) or (op == GE and 0 < rhs):
                self._mark_infeasible()
            return self.feasible
        if len(vs) == 1:
            i = vs[0]
            lo, hi = self._lo[i], self._hi[i]
            if op == LE:
                hi = min(hi, rhs)
            else:
                lo = max(lo, max(rhs, 0))
            if (lo, hi) != (self._lo[i], self._hi[i]):
                self._narrow_box(i, lo, hi)
            if lo > hi:
                self._mark_infeasible()
            return self.feasible

        self._linear.append((vs, op, rhs))
        self._journal.append(("lin",))
        if self._infeasible:
            return False
        if _search(list(self._lo), list(self._hi), self._linear) is None:
            self._mark_infeasible()
        return self.feasible

    # -- queries ------------------------------------------------------------

    def _require_feasible(self) -> None:
        if self._infeasible:
            raise InfeasibleStoreError("store is infeasible")

    def find_assignment(self) -> List[int]:
        """Some feasible assignment (not necessarily the lexicographic min)."""
        self._require_feasible()
        sol = _search(list(self._lo), list(self._hi), self._linear)
        if sol is None:  # box-empty stores are flagged at mutation time
            raise InfeasibleStoreError("store is infeasible")
        return sol

    def bound_extreme(self, bound: SymbolicBound, direction: str) -> int:
        """Exact min or max of ``bound`` over all feasible assignments."""
        self._require_feasible()
        if direction not in ("min", "max"):
            raise ValueError("direction must be 'min' or 'max'")
        for v in bound.vars:
            if not 0 <= v < len(self._lo):
                raise KeyError(f"unknown time variable l{v}")
        vs = tuple(sorted(bound.vars))
        if not vs:
            return bound.const
        witness = self.find_assignment()
        value = bound.const + sum(witness[v] for v in vs)
        if direction == "max":
            lo = value
            hi = bound.const + sum(self._hi[v] for v in vs)
            while lo < hi:
                mid = (lo + hi + 1) // 2
                if self._feasible_with(vs, GE, mid - bound.const):
                    lo = mid
                else:
                    hi = mid - 1
            return lo
        lo = bound.const + sum(self._lo[v] for v in vs)
        hi = value
        while lo < hi:
            mid = (lo + hi) // 2
            if self._feasible_with(vs, LE, mid - bound.const):
                hi = mid
            else:
                lo = mid + 1
        return lo

    def _feasible_with(self, vs, op, rhs) -> bool:
        extra = self._linear + [(vs, op, rhs)]
        return _search(list(self._lo), list(self._hi), extra) is not None

    def pick_assignment(self) -> List[int]:
        """Lexicographically smallest feasible assignment."""
        self._require_feasible()
        lo = list(self._lo)
        hi = list(self._hi)
        for i in range(len(lo)):
            lo_i, hi_i = lo[i], hi[i]
            while lo_i < hi_i:
                mid = (lo_i + hi_i) // 2
                probe_hi = list(hi)
                probe_hi[i] = mid
                if _search(list(lo), probe_hi, self._linear) is not None:
                    hi_i = mid
                else:
                    lo_i = mid + 1
            lo[i] = hi[i] = lo_i
            if _search(list(lo), list(hi), self._linear) is None:
                raise InfeasibleStoreError("store is infeasible")
        return lo


def store_from(d: Decomposition) -> ConstraintStore:
    """Fresh store holding the decomposition's interval constraints."""
    return ConstraintStore(d.boxes())


# ---------------------------------------------------------------------------
# Exact solver: bounds propagation + domain-splitting DFS
# ---------------------------------------------------------------------------


def _propagate(lo, hi, linear) -> bool:
    changed = True
    while changed:
        changed = False
        for vs, op, rhs in linear:
            if op == LE:
                smin = sum(lo[v] for v in vs)
                if smin > rhs:
                    return False
                for v in vs:
                    cap = rhs - (smin - lo[v])
                    if cap < hi[v]:
                        hi[v] = cap
                        if hi[v] < lo[v]:
                            return False
                        changed = True
            else:
                smax = sum(hi[v] for v in vs)
                if smax < rhs:
                    return False
                for v in vs:
                    floor = rhs - (smax - hi[v])
                    if floor > lo[v]:
                        lo[v] = floor
                        if lo[v] > hi[v]:
                            return False
                        changed = True
    return True


def _entailed(lo, hi, linear) -> bool:
    for vs, op, rhs in linear:
        if op == LE:
            if sum(hi[v] for v in vs) > rhs:
                return False
        elif sum(lo[v] for v in vs) < rhs:
            return False
    return True


def _search(lo, hi, linear) -> Optional[List[int]]:
    """Exact feasibility: a witness assignment, or None."""
    if not _propagate(lo, hi, linear):
        return None
    if _entailed(lo, hi, linear):
        return list(lo)
    # branch on the widest variable among the not-yet-entailed constraints
    branch_var, width = -1, 0
    for vs, op, rhs in linear:
        ok = (
            sum(hi[v] for v in vs) <= rhs
            if op == LE
            else sum(lo[v] for v in vs) >= rhs
        )
        if ok:
            continue
        for v in vs:
            if hi[v] - lo[v] > width:
                branch_var, width = v, hi[v] - lo[v]
    # a fixed-variable constraint is either violated (propagation fails) or
    # entailed, so an unentailed constraint always offers a branch variable
    assert branch_var >= 0
    mid = (lo[branch_var] + hi[branch_var]) // 2
    left_hi = list(hi)
    left_hi[branch_var] = mid
    sol = _search(list(lo), left_hi, linear)
    if sol is not None:
        return sol
    right_lo = list(lo)
    right_lo[branch_var] = mid + 1
    return _search(right_lo, list(hi), linear)
