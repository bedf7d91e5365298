"""Formula AST for discrete-time Signal Temporal Logic.

Formulas are immutable trees of :class:`Formula` nodes. Atoms are linear
inequalities over named signals; names are resolved to column indices only
when a formula is evaluated against a trace batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Sequence

import numpy as np

from ppstl.errors import FragmentError, IntervalError

INF = math.inf

MAX_HEIGHT = 17

# operator tags
TRUE = "true"
ATOM = "atom"
NOT = "not"
OR = "or"
AND = "and"
NEXT = "next"
WNEXT = "wnext"
UNTIL = "until"
RELEASE = "release"
EVENTUALLY = "eventually"
GLOBALLY = "globally"
YESTERDAY = "yesterday"
WYESTERDAY = "wyesterday"
SINCE = "since"
TRIGGERS = "triggers"
ONCE = "once"
HISTORICALLY = "historically"

UNARY = frozenset({NOT, NEXT, WNEXT, EVENTUALLY, GLOBALLY, YESTERDAY, WYESTERDAY, ONCE, HISTORICALLY})
BINARY = frozenset({OR, AND, UNTIL, RELEASE, SINCE, TRIGGERS})
TIMED = frozenset({UNTIL, RELEASE, EVENTUALLY, GLOBALLY, SINCE, TRIGGERS, ONCE, HISTORICALLY})
FUTURE = frozenset({NEXT, WNEXT, UNTIL, RELEASE, EVENTUALLY, GLOBALLY})
PAST = frozenset({YESTERDAY, WYESTERDAY, SINCE, TRIGGERS, ONCE, HISTORICALLY})
CORE = frozenset({TRUE, ATOM, NOT, OR, NEXT, UNTIL, YESTERDAY, SINCE})

COMPARISONS = (">=", "<", "<=", ">")


@dataclass(frozen=True)
class Interval:
    """Discrete interval ``[lo, hi]``; ``hi`` may be ``math.inf``."""

    lo: int = 0
    hi: float = INF

    def __post_init__(self):
        if self.lo < 0 or not float(self.lo).is_integer():
            raise IntervalError(f"interval lower bound must be a natural number, got {self.lo}")
        if self.hi != INF and not float(self.hi).is_integer():
            raise IntervalError(f"interval upper bound must be a natural number or inf, got {self.hi}")
        if self.lo > self.hi:
            raise IntervalError(f"malformed interval [{self.lo},{self.hi}]: lower bound exceeds upper bound")
        object.__setattr__(self, "lo", int(self.lo))
        if self.hi != INF:
            object.__setattr__(self, "hi", int(self.hi))

    @property
    def bounded(self) -> bool:
        return self.hi != INF

    @property
    def is_default(self) -> bool:
        return self.lo == 0 and self.hi == INF

    def __str__(self) -> str:
        hi = "inf" if self.hi == INF else str(self.hi)
        return f"[{self.lo},{hi}]"


UNBOUNDED = Interval()


@dataclass(frozen=True)
class Atom:
    """Linear inequality ``sum(w * x) <op> threshold``.

    ``op`` is kept as written so that printing round-trips; only ``>=`` is
    part of the core logic and :func:`rewrite_to_core` removes the others.
    """

    terms: tuple[tuple[str, float], ...]
    threshold: float
    op: str = ">="

    def __post_init__(self):
        if not self.terms:
            raise ValueError("atom needs at least one term")
        if self.op not in COMPARISONS:
            raise ValueError(f"unknown comparison {self.op!r}")
        if not math.isfinite(self.threshold):
            raise ValueError("atom threshold must be finite")
        object.__setattr__(self, "terms", tuple((str(n), float(w)) for n, w in self.terms))
        object.__setattr__(self, "threshold", float(self.threshold))

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.terms)

    def with_threshold(self, c: float) -> "Atom":
        return Atom(self.terms, c, self.op)

    def negated_terms(self) -> tuple[tuple[str, float], ...]:
        return tuple((n, -w) for n, w in self.terms)


class Formula:
    """Immutable formula node.

    Structural equality and hashing are cached, so formulas are cheap to use
    as dictionary keys (the engine shares common subtrees this way).
    """

    __slots__ = ("op", "args", "interval", "atom", "_hash", "_height", "_size")

    def __init__(self, op: str, args: Sequence["Formula"] = (), interval: Interval | None = None,
                 atom: Atom | None = None):
        args = tuple(args)
        if op == ATOM:
            if atom is None or args:
                raise ValueError("atom node needs an Atom payload and no arguments")
        elif op == TRUE:
            if args:
                raise ValueError("TRUE takes no arguments")
        elif op in UNARY:
            if len(args) != 1:
                raise ValueError(f"{op} takes one argument")
        elif op in BINARY:
            if len(args) != 2:
                raise ValueError(f"{op} takes two arguments")
        else:
            raise ValueError(f"unknown operator {op!r}")
        if op in TIMED:
            interval = UNBOUNDED if interval is None else interval
        elif interval is not None:
            raise ValueError(f"{op} does not take an interval")
        set_ = object.__setattr__
        set_(self, "op", op)
        set_(self, "args", args)
        set_(self, "interval", interval)
        set_(self, "atom", atom)
        set_(self, "_hash", hash((op, args, interval, atom)))
        set_(self, "_height", 1 + max((a._height for a in args), default=0))
        set_(self, "_size", 1 + sum(a._size for a in args))

    def __setattr__(self, name, value):
        raise AttributeError("Formula is immutable")

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if not isinstance(other, Formula) or self._hash != other._hash:
            return False
        return (self.op == other.op and self.interval == other.interval
                and self.atom == other.atom and self.args == other.args)

    def __reduce__(self):
        return (Formula, (self.op, self.args, self.interval, self.atom))

    @property
    def height(self) -> int:
        return self._height

    @property
    def size(self) -> int:
        return self._size

    def __repr__(self) -> str:
        from ppstl.parser import to_text

        return f"Formula({to_text(self)!r})"

    def __str__(self) -> str:
        from ppstl.parser import to_text

        return to_text(self)

    def replace(self, args=None, interval=None, atom=None, op=None) -> "Formula":
        op = self.op if op is None else op
        return Formula(op, self.args if args is None else args,
                       interval if interval is not None else (self.interval if op in TIMED else None),
                       self.atom if atom is None else atom)


# constructors

def true() -> Formula:
    return Formula(TRUE)


def atom(terms, threshold: float, op: str = ">=") -> Formula:
    """``atom({"x": 1.0, "y": 1.0}, 6)`` or ``atom("x", 3)``."""
    if isinstance(terms, str):
        terms = ((terms, 1.0),)
    elif isinstance(terms, dict):
        terms = tuple(terms.items())
    return Formula(ATOM, atom=Atom(tuple(terms), threshold, op))


def not_(a: Formula) -> Formula:
    return Formula(NOT, (a,))


def or_(a: Formula, b: Formula) -> Formula:
    return Formula(OR, (a, b))


def and_(a: Formula, b: Formula) -> Formula:
    return Formula(AND, (a, b))


def _iv(interval) -> Interval:
    if interval is None:
        return UNBOUNDED
    if isinstance(interval, Interval):
        return interval
    lo, hi = interval
    return Interval(lo, hi)


def next_(a): return Formula(NEXT, (a,))
def wnext(a): return Formula(WNEXT, (a,))
def yesterday(a): return Formula(YESTERDAY, (a,))
def wyesterday(a): return Formula(WYESTERDAY, (a,))
def eventually(a, interval=None): return Formula(EVENTUALLY, (a,), _iv(interval))
def globally(a, interval=None): return Formula(GLOBALLY, (a,), _iv(interval))
def once(a, interval=None): return Formula(ONCE, (a,), _iv(interval))
def historically(a, interval=None): return Formula(HISTORICALLY, (a,), _iv(interval))
def until(a, b, interval=None): return Formula(UNTIL, (a, b), _iv(interval))
def release(a, b, interval=None): return Formula(RELEASE, (a, b), _iv(interval))
def since(a, b, interval=None): return Formula(SINCE, (a, b), _iv(interval))
def triggers(a, b, interval=None): return Formula(TRIGGERS, (a, b), _iv(interval))


# traversal

def nodes(f: Formula) -> Iterator[tuple[tuple[int, ...], Formula]]:
    """Pre-order walk yielding ``(path, node)``; a path is a tuple of child indices."""
    stack = [((), f)]
    while stack:
        path, node = stack.pop()
        yield path, node
        for k in range(len(node.args) - 1, -1, -1):
            stack.append((path + (k,), node.args[k]))


def subtree(f: Formula, path: tuple[int, ...]) -> Formula:
    for k in path:
        f = f.args[k]
    return f


def replace_at(f: Formula, path: tuple[int, ...], new: Formula) -> Formula:
    if not path:
        return new
    k = path[0]
    args = list(f.args)
    args[k] = replace_at(args[k], path[1:], new)
    return f.replace(args=args)


def depth_of(path: tuple[int, ...]) -> int:
    return len(path)


def variables(f: Formula) -> set[str]:
    return {n for _, node in nodes(f) if node.op == ATOM for n in node.atom.variables}


def atoms(f: Formula) -> list[Formula]:
    return [node for _, node in nodes(f) if node.op == ATOM]


def thresholds(f: Formula) -> np.ndarray:
    return np.array([node.atom.threshold for node in atoms(f)], dtype=float)


def with_thresholds(f: Formula, values) -> Formula:
    """Replace atom thresholds in pre-order with ``values``."""
    it = iter([float(v) for v in values])

    def go(node: Formula) -> Formula:
        if node.op == ATOM:
            return Formula(ATOM, atom=node.atom.with_threshold(next(it)))
        if not node.args:
            return node
        return node.replace(args=[go(a) for a in node.args])

    return go(f)


# fragments

class Fragment(str, Enum):
    PPSTL = "ppSTL"
    GPPSTL = "GppSTL"
    FPPSTL = "FppSTL"
    FULL = "fullSTL"


def is_pure_past(f: Formula) -> bool:
    return not any(node.op in FUTURE for _, node in nodes(f))


def fragment_of(f: Formula) -> Fragment:
    if is_pure_past(f):
        return Fragment.PPSTL
    if f.op in (GLOBALLY, EVENTUALLY) and f.interval.is_default and is_pure_past(f.args[0]):
        return Fragment.GPPSTL if f.op == GLOBALLY else Fragment.FPPSTL
    return Fragment.FULL


def safety_wrap(f: Formula) -> Formula:
    """``phi`` -> ``G(!phi)``: the safety property violated whenever ``phi`` fires."""
    if not is_pure_past(f):
        raise FragmentError(f"safety_wrap needs a pure-past formula, got {f}")
    return globally(not_(f))


def detector_of(f: Formula) -> Formula:
    """Inner detector ``phi`` of a ``G(!phi)`` safety formula (negation absorbed).

    For ``G(psi)`` whose body is not a negation, the detector is ``!psi``.
    """
    if fragment_of(f) != Fragment.GPPSTL:
        raise FragmentError(f"not a G(ppSTL) formula: {f}")
    body = f.args[0]
    return body.args[0] if body.op == NOT else not_(body)


# rewriting

def _core_atom(a: Atom) -> Formula:
    if a.op == ">=":
        return Formula(ATOM, atom=a)
    if a.op == "<":
        return not_(Formula(ATOM, atom=Atom(a.terms, a.threshold, ">=")))
    flipped = Formula(ATOM, atom=Atom(a.negated_terms(), -a.threshold, ">="))
    return flipped if a.op == "<=" else not_(flipped)


def rewrite_to_core(f: Formula) -> Formula:
    """Express ``f`` with TRUE, >=-atoms, !, |, X, U_I, Y and S_I only."""
    memo: dict[Formula, Formula] = {}

    def go(node: Formula) -> Formula:
        hit = memo.get(node)
        if hit is not None:
            return hit
        op, iv = node.op, node.interval
        a = [go(x) for x in node.args]
        if op == TRUE:
            out = node
        elif op == ATOM:
            out = _core_atom(node.atom)
        elif op == NOT:
            out = not_(a[0])
        elif op == OR:
            out = or_(a[0], a[1])
        elif op == AND:
            out = not_(or_(not_(a[0]), not_(a[1])))
        elif op == NEXT:
            out = next_(a[0])
        elif op == WNEXT:
            out = not_(next_(not_(a[0])))
        elif op == YESTERDAY:
            out = yesterday(a[0])
        elif op == WYESTERDAY:
            out = not_(yesterday(not_(a[0])))
        elif op == UNTIL:
            out = until(a[0], a[1], iv)
        elif op == SINCE:
            out = since(a[0], a[1], iv)
        elif op == EVENTUALLY:
            out = until(true(), a[0], iv)
        elif op == ONCE:
            out = since(true(), a[0], iv)
        elif op == GLOBALLY:
            out = not_(until(true(), not_(a[0]), iv))
        elif op == HISTORICALLY:
            out = not_(since(true(), not_(a[0]), iv))
        elif op == RELEASE:
            out = not_(until(not_(a[0]), not_(a[1]), iv))
        elif op == TRIGGERS:
            out = not_(since(not_(a[0]), not_(a[1]), iv))
        else:  # pragma: no cover
            raise ValueError(op)
        memo[node] = out
        return out

    return go(f)


# random generation

PAST_UNARY = (NOT, YESTERDAY, WYESTERDAY, ONCE, HISTORICALLY)
PAST_BINARY = (OR, AND, SINCE, TRIGGERS)
ALL_UNARY = tuple(sorted(UNARY))
ALL_BINARY = tuple(sorted(BINARY))


@dataclass
class GenConfig:
    """Settings for random formula generation.

    ``bound_cap`` caps interval bounds (the learner sets it to the longest
    training trace). ``multisignal`` enables ``x_i - x_j`` atoms.
    """

    names: Sequence[str]
    height: tuple[int, int] = (2, 6)
    bound_cap: int = 10
    multisignal: bool = False
    multisignal_prob: float = 0.3
    unbounded_prob: float = 0.5
    leaf_prob: float = 0.3
    comparisons: tuple[str, ...] = (">=", "<")
    unary_ops: tuple[str, ...] = PAST_UNARY
    binary_ops: tuple[str, ...] = PAST_BINARY

    def __post_init__(self):
        lo, hi = self.height
        if not 1 <= lo <= hi <= MAX_HEIGHT:
            raise ValueError(f"height range must satisfy 1 <= lo <= hi <= {MAX_HEIGHT}, got {self.height}")
        if not self.names:
            raise ValueError("need at least one signal name")


def random_interval(rng: np.random.Generator, cfg: GenConfig) -> Interval:
    if rng.random() < cfg.unbounded_prob:
        return Interval(int(rng.integers(0, 2)) if rng.random() < 0.2 else 0, INF)
    a, b = sorted(int(v) for v in rng.integers(0, cfg.bound_cap + 1, size=2))
    return Interval(a, b)


def random_atom(rng: np.random.Generator, cfg: GenConfig) -> Formula:
    names = list(cfg.names)
    op = cfg.comparisons[int(rng.integers(len(cfg.comparisons)))]
    c = float(rng.random())
    i = int(rng.integers(len(names)))
    if cfg.multisignal and len(names) > 1 and rng.random() < cfg.multisignal_prob:
        j = int(rng.integers(len(names) - 1))
        j = j + 1 if j >= i else j
        return atom(((names[i], 1.0), (names[j], -1.0)), c, op)
    return atom(names[i], c, op)


def random_operator_node(rng: np.random.Generator, cfg: GenConfig, args: list[Formula]) -> Formula:
    ops = cfg.unary_ops if len(args) == 1 else cfg.binary_ops
    op = ops[int(rng.integers(len(ops)))]
    return Formula(op, args, random_interval(rng, cfg) if op in TIMED else None)


def sample_formula(rng: np.random.Generator, cfg: GenConfig, height: int | None = None) -> Formula:
    """Grow a random tree whose height is exactly ``height``.

    One child of every node on a designated spine is forced to full depth;
    the remaining subtrees grow freely below it.
    """
    if height is None:
        lo, hi = cfg.height
        height = int(rng.integers(lo, hi + 1))

    def grow(h: int, exact: bool) -> Formula:
        if h == 1 or (not exact and rng.random() < cfg.leaf_prob):
            return random_atom(rng, cfg)
        n_unary, n_binary = len(cfg.unary_ops), len(cfg.binary_ops)
        binary = rng.random() < n_binary / (n_unary + n_binary)
        if binary:
            spine = int(rng.integers(2))
            args = [grow(h - 1, exact and k == spine) if k == spine else grow(int(rng.integers(1, h)), False)
                    for k in range(2)]
        else:
            args = [grow(h - 1, exact)]
        return random_operator_node(rng, cfg, args)

    return grow(height, True)


def sample_ppstl(rng: np.random.Generator, cfg: GenConfig) -> Formula:
    """Random pure-past formula with height in ``cfg.height``."""
    if any(op in FUTURE for op in cfg.unary_ops + cfg.binary_ops):
        raise ValueError("sample_ppstl needs past/boolean operators only")
    return sample_formula(rng, cfg)
