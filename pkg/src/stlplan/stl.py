"""Formula representation, parsing, and discrete-time semantics.

Formulas are kept in positive normal form: there is no negation node, and
``~id`` in concrete syntax resolves to the complement predicate.  Until
prefixes are restricted to F/U-free subformulas, which is validated at
construction time.  Time is measured in integer planning steps and all
intervals are closed integer intervals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

__all__ = [
    "Predicate",
    "Formula",
    "TrueNode",
    "Atom",
    "And",
    "Or",
    "F",
    "G",
    "U",
    "TRUE",
    "FormulaError",
    "ParseError",
    "parse_formula",
    "horizon",
    "close_unbounded",
    "eval_boolean",
    "eval_robustness",
    "eval_robustness_downsampled",
    "as_signal",
]


class FormulaError(ValueError):
    """Malformed formula (bad interval, prefix restriction, unbounded G)."""


class ParseError(FormulaError):
    """Syntax or resolution error in concrete formula text, with position."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


# ---------------------------------------------------------------------------
# Predicates
# ---------------------------------------------------------------------------

BALL = "ball"
BALL_COMPLEMENT = "ball-complement"
HALFSPACE = "halfspace"
CUSTOM = "custom"


@dataclass(frozen=True)
class Predicate:
    """Atomic predicate with evaluation function h; satisfied iff h(x) >= 0.

    ``eval`` accepts state vectors whose leading coordinates are the
    workspace position; built-in kinds only look at the first ``len(center)``
    (or ``len(normal)``) entries, so full simulator states can be evaluated
    directly.
    """

    name: str
    kind: str
    params: tuple = ()
    func: Optional[Callable[[np.ndarray], float]] = None

    @staticmethod
    def ball(name: str, center: Sequence[float], radius: float) -> "Predicate":
        if radius <= 0:
            raise ValueError(f"ball {name}: radius must be positive")
        return Predicate(name, BALL, (tuple(float(c) for c in center), float(radius)))

    @staticmethod
    def ball_complement(name: str, center: Sequence[float], radius: float) -> "Predicate":
        if radius <= 0:
            raise ValueError(f"ball-complement {name}: radius must be positive")
        return Predicate(
            name, BALL_COMPLEMENT, (tuple(float(c) for c in center), float(radius))
        )

    @staticmethod
    def halfspace(name: str, normal: Sequence[float], offset: float) -> "Predicate":
        return Predicate(
            name, HALFSPACE, (tuple(float(c) for c in normal), float(offset))
        )

    @staticmethod
    def custom(name: str, func: Callable[[np.ndarray], float]) -> "Predicate":
        return Predicate(name, CUSTOM, (), func)

    @property
    def center(self) -> np.ndarray:
        if self.kind not in (BALL, BALL_COMPLEMENT):
            raise AttributeError(f"predicate {self.name} has no center")
        return np.asarray(self.params[0], dtype=float)

    @property
    def radius(self) -> float:
        if self.kind not in (BALL, BALL_COMPLEMENT):
            raise AttributeError(f"predicate {self.name} has no radius")
        return self.params[1]

    def eval(self, state: Union[np.ndarray, Sequence[float], float]) -> float:
        x = np.atleast_1d(np.asarray(state, dtype=float))
        if self.kind == BALL:
            c, r = self.params
            return float(r - np.linalg.norm(x[: len(c)] - np.asarray(c)))
        if self.kind == BALL_COMPLEMENT:
            c, r = self.params
            # exact negation of the ball value, by construction
            return float(np.linalg.norm(x[: len(c)] - np.asarray(c)) - r)
        if self.kind == HALFSPACE:
            n, b = self.params
            return float(b - np.dot(np.asarray(n), x[: len(n)]))
        return float(self.func(x))

    def complement(self) -> "Predicate":
        """Predicate whose value is the exact negation at every state."""
        if self.kind == BALL:
            return Predicate("~" + self.name, BALL_COMPLEMENT, self.params)
        if self.kind == BALL_COMPLEMENT:
            return Predicate("~" + self.name, BALL, self.params)
        if self.kind == HALFSPACE:
            n, b = self.params
            return Predicate(
                "~" + self.name, HALFSPACE, (tuple(-v for v in n), -b)
            )
        raise FormulaError(
            f"complement of custom predicate {self.name!r} is not supported"
        )

    def __repr__(self) -> str:
        return f"Predicate({self.name!r}, {self.kind})"


# ---------------------------------------------------------------------------
# Formula AST
# ---------------------------------------------------------------------------

Interval = Tuple[int, int]


def _check_interval(interval: Interval) -> Interval:
    a, b = interval
    if not (isinstance(a, (int, np.integer)) and isinstance(b, (int, np.integer))):
        raise FormulaError(f"interval bounds must be integers, got {interval}")
    a, b = int(a), int(b)
    if a < 0 or b < 0:
        raise FormulaError(f"interval bounds must be non-negative, got [{a},{b}]")
    if a > b:
        raise FormulaError(f"empty interval [{a},{b}]")
    return (a, b)


@dataclass(frozen=True)
class TrueNode:
    def __str__(self) -> str:
        return "TRUE"


@dataclass(frozen=True)
class Atom:
    pred: Predicate

    def __str__(self) -> str:
        return self.pred.name


@dataclass(frozen=True)
class And:
    children: Tuple["Formula", ...]

    def __post_init__(self):
        if len(self.children) < 2:
            raise FormulaError("And needs at least two children")

    def __str__(self) -> str:
        return "(" + " & ".join(str(c) for c in self.children) + ")"


@dataclass(frozen=True)
class Or:
    children: Tuple["Formula", ...]

    def __post_init__(self):
        if len(self.children) < 2:
            raise FormulaError("Or needs at least two children")

    def __str__(self) -> str:
        return "(" + " | ".join(str(c) for c in self.children) + ")"


@dataclass(frozen=True)
class F:
    interval: Interval
    child: "Formula"

    def __post_init__(self):
        object.__setattr__(self, "interval", _check_interval(self.interval))

    def __str__(self) -> str:
        return f"F[{self.interval[0]},{self.interval[1]}] {self.child}"


@dataclass(frozen=True)
class G:
    """Always over a closed interval; ``interval is None`` means a bare G
    whose bound is supplied later via :func:`close_unbounded`."""

    interval: Optional[Interval]
    child: "Formula"

    def __post_init__(self):
        if self.interval is not None:
            object.__setattr__(self, "interval", _check_interval(self.interval))

    def __str__(self) -> str:
        if self.interval is None:
            return f"G {self.child}"
        return f"G[{self.interval[0]},{self.interval[1]}] {self.child}"


@dataclass(frozen=True)
class U:
    interval: Interval
    prefix: "Formula"
    suffix: "Formula"

    def __post_init__(self):
        object.__setattr__(self, "interval", _check_interval(self.interval))
        if _contains_f_or_u(self.prefix):
            raise FormulaError(
                "until prefix may only contain atoms, conjunction, and G"
            )

    def __str__(self) -> str:
        return f"({self.prefix} U[{self.interval[0]},{self.interval[1]}] {self.suffix})"


Formula = Union[TrueNode, Atom, And, Or, F, G, U]

TRUE = TrueNode()


def _contains_f_or_u(f: Formula) -> bool:
    if isinstance(f, (TrueNode, Atom)):
        return False
    if isinstance(f, (And, Or)):
        return any(_contains_f_or_u(c) for c in f.children)
    if isinstance(f, G):
        return _contains_f_or_u(f.child)
    return True  # F or U


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_KEYWORDS = {"TRUE", "F", "G", "U"}


def _tokenize(text: str):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "()[],&|~":
            tokens.append((ch, ch, i))
            i += 1
            continue
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            tokens.append(("NUM", text[i:j], i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            kind = word if word in _KEYWORDS else "ID"
            tokens.append((kind, word, i))
            i = j
            continue
        raise ParseError(f"unexpected character {ch!r}", i)
    tokens.append(("EOF", "", n))
    return tokens


class _Parser:
    def __init__(self, tokens, predicate_table: Mapping[str, Predicate]):
        self.tokens = tokens
        self.pos = 0
        self.table = predicate_table

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str):
        tok = self.next()
        if tok[0] != kind:
            raise ParseError(f"expected {kind!r}, found {tok[1]!r}", tok[2])
        return tok

    def parse_interval(self) -> Interval:
        self.expect("[")
        a = int(self.expect("NUM")[1])
        self.expect(",")
        b = int(self.expect("NUM")[1])
        self.expect("]")
        if a > b:
            raise ParseError(f"interval [{a},{b}] has a > b", self.tokens[self.pos - 1][2])
        return (a, b)

    def lookup(self, name: str, pos: int, complemented: bool) -> Predicate:
        pred = self.table.get(name)
        if pred is None:
            raise ParseError(f"unknown predicate {name!r}", pos)
        if complemented:
            if pred.kind == CUSTOM:
                raise ParseError(
                    f"'~' is not supported on custom predicate {name!r}", pos
                )
            return pred.complement()
        return pred

    def parse_formula(self) -> Formula:
        tok = self.peek()
        kind, _, pos = tok
        if kind == "TRUE":
            self.next()
            return TRUE
        if kind == "ID":
            self.next()
            return Atom(self.lookup(tok[1], pos, complemented=False))
        if kind == "~":
            self.next()
            name_tok = self.expect("ID")
            return Atom(self.lookup(name_tok[1], name_tok[2], complemented=True))
        if kind == "F":
            self.next()
            interval = self.parse_interval()
            return F(interval, self.parse_formula())
        if kind == "G":
            self.next()
            if self.peek()[0] == "[":
                interval = self.parse_interval()
                return G(interval, self.parse_formula())
            return G(None, self.parse_formula())
        if kind == "(":
            self.next()
            first = self.parse_formula()
            op_tok = self.peek()
            if op_tok[0] == "U":
                self.next()
                interval = self.parse_interval()
                suffix = self.parse_formula()
                self.expect(")")
                try:
                    return U(interval, first, suffix)
                except FormulaError as exc:
                    raise ParseError(str(exc), op_tok[2]) from None
            if op_tok[0] in ("&", "|"):
                op = op_tok[0]
                children = [first]
                while self.peek()[0] == op:
                    self.next()
                    children.append(self.parse_formula())
                closing = self.peek()
                if closing[0] in ("&", "|"):
                    raise ParseError(
                        "mixed '&' and '|' in one group; add parentheses", closing[2]
                    )
                self.expect(")")
                node = And if op == "&" else Or
                return node(tuple(children))
            raise ParseError(f"expected '&', '|' or 'U', found {op_tok[1]!r}", op_tok[2])
        raise ParseError(f"unexpected token {tok[1]!r}", pos)


def parse_formula(text: str, predicate_table: Mapping[str, Predicate]) -> Formula:
    """Parse concrete formula syntax against a table of named predicates.

    Grammar::

        phi := TRUE | id | ~id | (phi & phi) | (phi "|" phi)
             | F[a,b] phi | G[a,b] phi | G phi | (phi U[a,b] phi)

    ``~id`` resolves to the predicate's complement (built-in kinds only).
    A bare ``G phi`` is recorded with an unbounded interval and must be
    closed with :func:`close_unbounded` before evaluation or decomposition.
    """
    parser = _Parser(_tokenize(text), predicate_table)
    formula = parser.parse_formula()
    tok = parser.peek()
    if tok[0] != "EOF":
        raise ParseError(f"trailing input {tok[1]!r}", tok[2])
    return formula


# ---------------------------------------------------------------------------
# Horizon and closure of bare G
# ---------------------------------------------------------------------------


def horizon(f: Formula) -> int:
    """Smallest T such that satisfaction is determined by states 0..T."""
    if isinstance(f, (TrueNode, Atom)):
        return 0
    if isinstance(f, (And, Or)):
        return max(horizon(c) for c in f.children)
    if isinstance(f, F):
        return f.interval[1] + horizon(f.child)
    if isinstance(f, G):
        if f.interval is None:
            raise FormulaError("unbounded G: close it with close_unbounded first")
        return f.interval[1] + horizon(f.child)
    return f.interval[1] + max(horizon(f.prefix), horizon(f.suffix))


def close_unbounded(f: Formula, task_horizon: int) -> Formula:
    """Replace every bare ``G phi`` by ``G[0, task_horizon] phi``."""
    if isinstance(f, (TrueNode, Atom)):
        return f
    if isinstance(f, And):
        return And(tuple(close_unbounded(c, task_horizon) for c in f.children))
    if isinstance(f, Or):
        return Or(tuple(close_unbounded(c, task_horizon) for c in f.children))
    if isinstance(f, F):
        return F(f.interval, close_unbounded(f.child, task_horizon))
    if isinstance(f, G):
        interval = f.interval if f.interval is not None else (0, task_horizon)
        return G(interval, close_unbounded(f.child, task_horizon))
    return U(
        f.interval,
        close_unbounded(f.prefix, task_horizon),
        close_unbounded(f.suffix, task_horizon),
    )


def has_unbounded(f: Formula) -> bool:
    if isinstance(f, (TrueNode, Atom)):
        return False
    if isinstance(f, (And, Or)):
        return any(has_unbounded(c) for c in f.children)
    if isinstance(f, F):
        return has_unbounded(f.child)
    if isinstance(f, G):
        return f.interval is None or has_unbounded(f.child)
    return has_unbounded(f.prefix) or has_unbounded(f.suffix)


# ---------------------------------------------------------------------------
# Semantics
# ---------------------------------------------------------------------------


def as_signal(states) -> np.ndarray:
    """Coerce a state sequence into a (T+1, d) float array."""
    s = np.asarray(states, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    if s.ndim != 2 or s.shape[0] == 0:
        raise ValueError("signal must be a nonempty sequence of state vectors")
    return s


def _check_length(f: Formula, s: np.ndarray, t: int) -> None:
    if t + horizon(f) > s.shape[0] - 1:
        raise ValueError(
            f"signal too short: need index {t + horizon(f)}, have {s.shape[0] - 1}"
        )


def eval_boolean(f: Formula, signal, t: int = 0) -> bool:
    """Boolean satisfaction of ``f`` by the signal at step ``t``."""
    s = as_signal(signal)
    _check_length(f, s, t)
    return _bool(f, s, t)


def _bool(f: Formula, s: np.ndarray, t: int) -> bool:
    if isinstance(f, TrueNode):
        return True
    if isinstance(f, Atom):
        return f.pred.eval(s[t]) >= 0
    if isinstance(f, And):
        return all(_bool(c, s, t) for c in f.children)
    if isinstance(f, Or):
        return any(_bool(c, s, t) for c in f.children)
    if isinstance(f, F):
        a, b = f.interval
        return any(_bool(f.child, s, tp) for tp in range(t + a, t + b + 1))
    if isinstance(f, G):
        a, b = f.interval
        return all(_bool(f.child, s, tp) for tp in range(t + a, t + b + 1))
    a, b = f.interval
    for tp in range(t + a, t + b + 1):
        if _bool(f.suffix, s, tp) and all(
            _bool(f.prefix, s, tau) for tau in range(t, tp + 1)
        ):
            return True
    return False


def eval_robustness(f: Formula, signal, t: int = 0) -> float:
    """Quantitative robustness; non-negative iff (ties at zero) satisfied."""
    s = as_signal(signal)
    _check_length(f, s, t)
    return _rho(f, s, t)


def _rho(f: Formula, s: np.ndarray, t: int) -> float:
    if isinstance(f, TrueNode):
        return float("inf")
    if isinstance(f, Atom):
        return f.pred.eval(s[t])
    if isinstance(f, And):
        return min(_rho(c, s, t) for c in f.children)
    if isinstance(f, Or):
        return max(_rho(c, s, t) for c in f.children)
    if isinstance(f, F):
        a, b = f.interval
        return max(_rho(f.child, s, tp) for tp in range(t + a, t + b + 1))
    if isinstance(f, G):
        a, b = f.interval
        return min(_rho(f.child, s, tp) for tp in range(t + a, t + b + 1))
    a, b = f.interval
    best = -float("inf")
    for tp in range(t + a, t + b + 1):
        val = min(
            _rho(f.suffix, s, tp),
            min(_rho(f.prefix, s, tau) for tau in range(t, tp + 1)),
        )
        best = max(best, val)
    return best


def eval_robustness_downsampled(f: Formula, traj, eta: int) -> float:
    """Robustness of a fine-resolution trajectory at planning scale.

    Keeps indices 0, eta, 2*eta, ... and evaluates at t=0; the trajectory
    must contain at least eta*horizon(f)+1 states.
    """
    if eta < 1:
        raise ValueError("eta must be a positive integer")
    s = as_signal(traj)
    need = eta * horizon(f) + 1
    if s.shape[0] < need:
        raise ValueError(
            f"trajectory too short for downsampling: need {need} states, have {s.shape[0]}"
        )
    return eval_robustness(f, s[::eta], 0)
