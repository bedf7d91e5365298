"""Unvectorized robustness evaluator, one position at a time.

Every operator, derived ones included, is evaluated by its own window clause
rather than through the core rewrite, so this module is an independent
check of :mod:`ppstl.engine`.
"""

from __future__ import annotations

import math
from typing import Sequence

from ppstl import formula as fm
from ppstl.errors import UnknownVariableError
from ppstl.formula import Formula
from ppstl.trace import Trace

INF = math.inf


class _Ref:
    def __init__(self, values, names: Sequence[str]):
        self.x = [list(map(float, row)) for row in values]
        self.n = len(self.x)
        self.col = {name: k for k, name in enumerate(names)}
        self.memo: dict[tuple[int, int], float] = {}

    def atom(self, a, i: int) -> float:
        row = self.x[i]
        acc = None
        for name, w in a.terms:
            if name not in self.col:
                raise UnknownVariableError(f"variable {name!r} not among trace signals")
            term = w * row[self.col[name]]
            acc = term if acc is None else acc + term
        if a.op in (">=", ">"):
            return acc - a.threshold
        return a.threshold - acc

    def rho(self, f: Formula, i: int) -> float:
        key = (id(f), i)
        hit = self.memo.get(key)
        if hit is None:
            hit = self._rho(f, i)
            self.memo[key] = hit
        return hit

    def _future_window(self, iv, i):
        hi = self.n - 1 if iv.hi == INF else i + int(iv.hi)
        if iv.hi != INF and hi >= self.n:
            return None
        if i + iv.lo > hi:
            return None
        return i + iv.lo, hi

    def _past_window(self, iv, i):
        lo = 0 if iv.hi == INF else i - int(iv.hi)
        if lo < 0 or i - iv.lo < lo:
            return None
        return lo, i - iv.lo

    def _rho(self, f: Formula, i: int) -> float:
        op, r = f.op, self.rho
        if op == fm.TRUE:
            return INF
        if op == fm.ATOM:
            return self.atom(f.atom, i)
        if op == fm.NOT:
            return -r(f.args[0], i)
        if op == fm.OR:
            return max(r(f.args[0], i), r(f.args[1], i))
        if op == fm.AND:
            return min(r(f.args[0], i), r(f.args[1], i))
        if op == fm.NEXT:
            return r(f.args[0], i + 1) if i + 1 < self.n else -INF
        if op == fm.WNEXT:
            return r(f.args[0], i + 1) if i + 1 < self.n else INF
        if op == fm.YESTERDAY:
            return r(f.args[0], i - 1) if i > 0 else -INF
        if op == fm.WYESTERDAY:
            return r(f.args[0], i - 1) if i > 0 else INF

        if op in (fm.EVENTUALLY, fm.GLOBALLY, fm.UNTIL, fm.RELEASE):
            w = self._future_window(f.interval, i)
            if op == fm.EVENTUALLY:
                return -INF if w is None else max(r(f.args[0], j) for j in range(w[0], w[1] + 1))
            if op == fm.GLOBALLY:
                return INF if w is None else min(r(f.args[0], j) for j in range(w[0], w[1] + 1))
            a, b = f.args
            if op == fm.UNTIL:
                if w is None:
                    return -INF
                best, hold = -INF, INF
                for k in range(i, w[0]):
                    hold = min(hold, r(a, k))
                for j in range(w[0], w[1] + 1):
                    best = max(best, min(r(b, j), hold))
                    hold = min(hold, r(a, j))
                return best
            # release: phi2 holds at j unless phi1 held somewhere in [i, j)
            if w is None:
                return INF
            worst, rel = INF, -INF
            for k in range(i, w[0]):
                rel = max(rel, r(a, k))
            for j in range(w[0], w[1] + 1):
                worst = min(worst, max(r(b, j), rel))
                rel = max(rel, r(a, j))
            return worst

        if op in (fm.ONCE, fm.HISTORICALLY, fm.SINCE, fm.TRIGGERS):
            w = self._past_window(f.interval, i)
            if op == fm.ONCE:
                return -INF if w is None else max(r(f.args[0], j) for j in range(w[0], w[1] + 1))
            if op == fm.HISTORICALLY:
                return INF if w is None else min(r(f.args[0], j) for j in range(w[0], w[1] + 1))
            a, b = f.args
            if op == fm.SINCE:
                if w is None:
                    return -INF
                best, hold = -INF, INF
                for k in range(i, w[1], -1):
                    hold = min(hold, r(a, k))
                for j in range(w[1], w[0] - 1, -1):
                    best = max(best, min(r(b, j), hold))
                    hold = min(hold, r(a, j))
                return best
            if w is None:
                return INF
            worst, rel = INF, -INF
            for k in range(i, w[1], -1):
                rel = max(rel, r(a, k))
            for j in range(w[1], w[0] - 1, -1):
                worst = min(worst, max(r(b, j), rel))
                rel = max(rel, r(a, j))
            return worst
        raise ValueError(f"unknown operator {op}")


def robustness_ref(f: Formula, t, i: int, names: Sequence[str] | None = None) -> float:
    """Robustness of ``f`` on trace ``t`` (a :class:`Trace` or matrix) at position ``i``."""
    values = t.values if isinstance(t, Trace) else t
    if names is None:
        names = [f"x{k}" for k in range(len(values[0]))]
    if not 0 <= i < len(values):
        raise IndexError(f"position {i} outside trace of length {len(values)}")
    return _Ref(values, names).rho(f, i)


def robustness_ref_vector(f: Formula, t, names: Sequence[str] | None = None) -> list[float]:
    values = t.values if isinstance(t, Trace) else t
    if names is None:
        names = [f"x{k}" for k in range(len(values[0]))]
    ev = _Ref(values, names)
    return [ev.rho(f, i) for i in range(len(values))]
