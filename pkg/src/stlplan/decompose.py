"""Disjunction elimination and progress-condition decomposition.

A disjunction-free formula is turned into reachability conditions
("some state in the window satisfies the predicate") and invariance
conditions ("all states in the window do"), whose window endpoints are 0-1
linear combinations of integer time variables, each boxed by an interval
constraint.  Fresh time variables are numbered in post-order (a temporal
operator's variable is allocated after its subformula has been decomposed),
which is the numbering consistent with the worked assignment we use as a
golden fixture.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .stl import (
    And,
    Atom,
    F,
    Formula,
    FormulaError,
    G,
    Or,
    Predicate,
    TrueNode,
    U,
    as_signal,
)

__all__ = [
    "SymbolicBound",
    "ProgressCondition",
    "Decomposition",
    "REACH",
    "INVAR",
    "eliminate_disjunctions",
    "decompose",
    "preprocess",
    "satisfied_under",
    "dump_decomposition",
]

REACH = "R"
INVAR = "I"


@dataclass(frozen=True)
class SymbolicBound:
    """Integer bound of the form ``constant + sum of time variables``."""

    const: int
    vars: frozenset = frozenset()

    def shift_const(self, k: int) -> "SymbolicBound":
        return SymbolicBound(self.const + k, self.vars)

    def shift_var(self, var: int) -> "SymbolicBound":
        if var in self.vars:
            raise ValueError(f"variable l{var} already present in bound")
        return SymbolicBound(self.const, self.vars | {var})

    def value(self, lam: Sequence[int]) -> int:
        return self.const + sum(lam[v] for v in self.vars)

    def render(self) -> str:
        parts = [f"l{v}" for v in sorted(self.vars)]
        if self.const or not parts:
            parts.insert(0, str(self.const))
        return "+".join(parts)

    def __str__(self) -> str:
        return self.render()


@dataclass(frozen=True)
class ProgressCondition:
    kind: str  # REACH or INVAR
    lo: SymbolicBound
    hi: SymbolicBound
    pred: Predicate
    id: int = -1
    trigger_of: Optional[int] = None  # invariance only: id of its trigger reach

    def is_reach(self) -> bool:
        return self.kind == REACH

    def render(self) -> str:
        parts = [self.kind, self.lo.render(), self.hi.render(), self.pred.name]
        if self.trigger_of is not None:
            parts.append(str(self.trigger_of))
        return " ".join(parts)


@dataclass
class Decomposition:
    """Progress conditions plus the box constraints over time variables."""

    reach: List[ProgressCondition]
    invar: List[ProgressCondition]
    constraints: List[Tuple[int, int, int]]  # (var, a, b)
    lambda_count: int
    # reach id -> invar id, filled by preprocess for trigger reaches
    trigger_residual: Dict[int, int] = field(default_factory=dict)
    preprocessed: bool = False

    def all_conditions(self) -> List[ProgressCondition]:
        return sorted(self.reach + self.invar, key=lambda c: c.id)

    def condition(self, cond_id: int) -> ProgressCondition:
        for c in self.reach + self.invar:
            if c.id == cond_id:
                return c
        raise KeyError(f"no condition with id {cond_id}")

    def boxes(self) -> List[Tuple[int, int]]:
        by_var = {v: (a, b) for v, a, b in self.constraints}
        return [by_var[i] for i in range(self.lambda_count)]


class _VarAllocator:
    def __init__(self):
        self.constraints: List[Tuple[int, int, int]] = []

    def fresh(self, interval: Tuple[int, int]) -> int:
        var = len(self.constraints)
        self.constraints.append((var, interval[0], interval[1]))
        return var


def _shift_const(conds, k: int):
    return [
        replace(c, lo=c.lo.shift_const(k), hi=c.hi.shift_const(k)) for c in conds
    ]


def _shift_var(conds, var: int):
    return [replace(c, lo=c.lo.shift_var(var), hi=c.hi.shift_var(var)) for c in conds]


# ---------------------------------------------------------------------------
# Disjunction elimination
# ---------------------------------------------------------------------------


def eliminate_disjunctions(f: Formula) -> List[Formula]:
    """Rewrite into disjunction-free branches; satisfying any branch
    satisfies ``f``.  Distribution under F is exact; under G and U it is a
    conservative strengthening.  Branches are deduplicated structurally."""
    return list(dict.fromkeys(_branches(f)))


def _branches(f: Formula) -> List[Formula]:
    if isinstance(f, (TrueNode, Atom)):
        return [f]
    if isinstance(f, Or):
        out: List[Formula] = []
        for c in f.children:
            out.extend(_branches(c))
        return out
    if isinstance(f, And):
        combos: List[Tuple[Formula, ...]] = [()]
        for c in f.children:
            combos = [prev + (b,) for prev in combos for b in _branches(c)]
        return [And(combo) for combo in combos]
    if isinstance(f, F):
        return [F(f.interval, b) for b in _branches(f.child)]
    if isinstance(f, G):
        return [G(f.interval, b) for b in _branches(f.child)]
    return [
        U(f.interval, p, s)
        for p in _branches(f.prefix)
        for s in _branches(f.suffix)
    ]


# ---------------------------------------------------------------------------
# Decomposition
# ---------------------------------------------------------------------------


def decompose(f: Formula) -> Decomposition:
    """Decompose a disjunction-free formula into progress conditions.

    Raises :class:`~stlplan.stl.FormulaError` on disjunctions, unbounded G,
    or an until prefix outside the restricted fragment.
    """
    alloc = _VarAllocator()
    conds = _decompose(f, alloc)
    reach, invar = [], []
    for i, c in enumerate(conds):
        c = replace(c, id=i)
        (reach if c.is_reach() else invar).append(c)
    return Decomposition(reach, invar, alloc.constraints, len(alloc.constraints))


def _decompose(f: Formula, alloc: _VarAllocator) -> List[ProgressCondition]:
    if isinstance(f, TrueNode):
        return []
    if isinstance(f, Atom):
        zero = SymbolicBound(0)
        return [ProgressCondition(REACH, zero, zero, f.pred)]
    if isinstance(f, Or):
        raise FormulaError("decompose requires a disjunction-free formula")
    if isinstance(f, And):
        out: List[ProgressCondition] = []
        for c in f.children:
            out.extend(_decompose(c, alloc))
        return out
    if isinstance(f, F):
        a, b = f.interval
        conds = _decompose(f.child, alloc)
        if a == b:
            return _shift_const(conds, a)
        var = alloc.fresh((a, b))
        return _shift_var(conds, var)
    if isinstance(f, G):
        return _decompose_g(f, alloc)
    # Until: the restricted prefix yields invariances only (atoms count as
    # width-zero invariances), each extended up to the chosen until time.
    prefix_conds = _decompose_prefix(f.prefix)
    suffix_conds = _decompose(f.suffix, alloc)
    var = alloc.fresh(f.interval)
    out = _shift_var(suffix_conds, var)
    for c in prefix_conds:
        out.append(replace(c, hi=c.hi.shift_var(var)))
    return out


def _decompose_g(f: G, alloc: _VarAllocator) -> List[ProgressCondition]:
    if f.interval is None:
        raise FormulaError("decompose requires bounded G; close it first")
    a, b = f.interval
    child = f.child
    if isinstance(child, TrueNode):
        return []
    if isinstance(child, Atom):
        return [
            ProgressCondition(INVAR, SymbolicBound(a), SymbolicBound(b), child.pred)
        ]
    if isinstance(child, And):
        # G distributes over conjunction exactly
        out: List[ProgressCondition] = []
        for c in child.children:
            out.extend(_decompose_g(G(f.interval, c), alloc))
        return out
    if isinstance(child, G):
        # nested windows cover a single contiguous interval
        c, d = child.interval if child.interval is not None else (None, None)
        if child.interval is None:
            raise FormulaError("decompose requires bounded G; close it first")
        return _decompose_g(G((a + c, b + d), child.child), alloc)
    # Child holds an F or U: unfold into independent shifted copies, one per
    # step of the outer window, merging invariance families with constant
    # endpoints back into a single contiguous condition.
    out = []
    merged: Dict[Tuple[str, int, int], int] = {}
    for k in range(a, b + 1):
        for cond in _shift_const(_decompose(child, alloc), k):
            if cond.kind == INVAR and not cond.lo.vars and not cond.hi.vars:
                key = (cond.pred.name, cond.lo.const - k, cond.hi.const - k)
                if key in merged:
                    continue
                merged[key] = 1
                out.append(
                    ProgressCondition(
                        INVAR,
                        SymbolicBound(key[1] + a),
                        SymbolicBound(key[2] + b),
                        cond.pred,
                    )
                )
            else:
                out.append(cond)
    return out


def _decompose_prefix(f: Formula) -> List[ProgressCondition]:
    if isinstance(f, TrueNode):
        return []
    if isinstance(f, Atom):
        zero = SymbolicBound(0)
        return [ProgressCondition(INVAR, zero, zero, f.pred)]
    if isinstance(f, And):
        out: List[ProgressCondition] = []
        for c in f.children:
            out.extend(_decompose_prefix(c))
        return out
    if isinstance(f, G):
        if f.interval is None:
            raise FormulaError("decompose requires bounded G; close it first")
        a, b = f.interval
        child = f.child
        if isinstance(child, Atom):
            return [
                ProgressCondition(
                    INVAR, SymbolicBound(a), SymbolicBound(b), child.pred
                )
            ]
        inner = _decompose_prefix(child)
        return [
            replace(c, lo=c.lo.shift_const(a), hi=c.hi.shift_const(b)) for c in inner
        ]
    raise FormulaError("until prefix may only contain atoms, conjunction, and G")


# ---------------------------------------------------------------------------
# Preprocessing: trigger reachability + residual invariance
# ---------------------------------------------------------------------------


def preprocess(d: Decomposition) -> Decomposition:
    """Split every invariance into a triggering reach plus a residual.

    The trigger ``R(a, a, mu)`` pins the start of the invariance window; the
    residual ``I(a+1, b, mu)`` keeps the original condition id and points at
    its trigger.  Residuals that are empty under every feasible assignment
    are dropped.
    """
    boxes = {v: (a, b) for v, a, b in d.constraints}
    next_id = 1 + max((c.id for c in d.reach + d.invar), default=-1)
    reach = list(d.reach)
    invar = []
    trigger_residual: Dict[int, int] = {}
    for inv in d.invar:
        trigger = ProgressCondition(REACH, inv.lo, inv.lo, inv.pred, id=next_id)
        next_id += 1
        reach.append(trigger)
        if _residual_nonempty(inv, boxes):
            residual = replace(inv, lo=inv.lo.shift_const(1), trigger_of=trigger.id)
            invar.append(residual)
            trigger_residual[trigger.id] = residual.id
    return Decomposition(
        reach,
        invar,
        list(d.constraints),
        d.lambda_count,
        trigger_residual,
        preprocessed=True,
    )


def _residual_nonempty(inv: ProgressCondition, boxes) -> bool:
    # width hi - lo is maximised at the box maxima of the variables that
    # appear only in hi; lo's variables always reappear in hi by construction
    if not inv.lo.vars <= inv.hi.vars:
        raise ValueError("invariance with lo variables not contained in hi")
    width = inv.hi.const - inv.lo.const
    width += sum(boxes[v][1] for v in inv.hi.vars - inv.lo.vars)
    return width >= 1


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------


def satisfied_under(d: Decomposition, signal, lam: Sequence[int]) -> bool:
    """Check every condition of ``d`` on the signal under a concrete
    assignment; this is the enumeration side of the decomposition-soundness
    tests."""
    lam = [int(v) for v in lam]
    if len(lam) != d.lambda_count:
        raise ValueError(
            f"assignment has {len(lam)} entries, expected {d.lambda_count}"
        )
    for var, a, b in d.constraints:
        if not a <= lam[var] <= b:
            raise ValueError(f"l{var}={lam[var]} violates [{a},{b}]")
    s = as_signal(signal)
    last = s.shape[0] - 1
    for cond in d.reach + d.invar:
        lo, hi = cond.lo.value(lam), cond.hi.value(lam)
        if cond.is_reach():
            if lo > hi:
                return False
            if hi > last:
                raise ValueError(f"signal too short: condition needs index {hi}")
            if not any(cond.pred.eval(s[t]) >= 0 for t in range(lo, hi + 1)):
                return False
        else:
            if lo > hi:
                continue  # truncated window
            if hi > last:
                raise ValueError(f"signal too short: condition needs index {hi}")
            if not all(cond.pred.eval(s[t]) >= 0 for t in range(lo, hi + 1)):
                return False
    return True


def dump_decomposition(d: Decomposition) -> str:
    """Text dump used by golden-fixture tests: one line per condition,
    then one ``lam i a b`` line per interval constraint."""
    lines = [c.render() for c in d.all_conditions()]
    lines.extend(f"lam {v} {a} {b}" for v, a, b in d.constraints)
    return "\n".join(lines) + "\n"
