"""Vectorized robustness evaluation and trace-checking monitors.

Formulas are rewritten to the core operators (TRUE, atoms, !, |, X, U_I, Y,
S_I), merged into one DAG so shared subformulas are computed once, and each
node is evaluated for the whole ``(traces, time)`` block in a single pass.

Interval conventions follow the finite-trace semantics: a bounded window that
does not fit inside the trace yields -inf; an unbounded ``[a, inf)`` window is
clipped to the trace, so ``O`` is a running maximum.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ppstl import formula as fm
from ppstl.errors import FragmentError, UnknownVariableError
from ppstl.formula import Formula, Fragment, fragment_of, rewrite_to_core
from ppstl.reference import robustness_ref, robustness_ref_vector  # noqa: F401
from ppstl.trace import Trace, TraceBatch, batch as make_batch

NEG_INF = -np.inf
POS_INF = np.inf


@dataclass(frozen=True, eq=False)
class RobustnessMatrix:
    """``values[q, k, j]`` is the robustness of formula ``q`` on trace ``k`` at ``j``.

    Entries with ``j >= lengths[k]`` are padding and hold -inf.
    """

    values: np.ndarray
    lengths: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.values.shape[-1])[None, :] < self.lengths[:, None]

    def trace(self, q: int, k: int) -> np.ndarray:
        return self.values[q, k, : self.lengths[k]]


class Verdict(enum.Enum):
    TOP = "T"
    BOT = "F"
    UNKNOWN = "?"

    def __str__(self):
        return {"T": "Top", "F": "Bot", "?": "Unknown"}[self.value]


@dataclass(frozen=True)
class MonitorTrace:
    verdicts: tuple[Verdict, ...]
    first_decision: int | None


# kernels; all operate on (m, L) float arrays

def _shift_prev(a: np.ndarray, fill: float) -> np.ndarray:
    out = np.empty_like(a)
    out[:, 1:] = a[:, :-1]
    out[:, 0] = fill
    return out


def _shift_next(a: np.ndarray, fill: float) -> np.ndarray:
    out = np.empty_like(a)
    out[:, :-1] = a[:, 1:]
    out[:, -1] = fill
    return out


def _maxmin_scan(hold: np.ndarray, hit: np.ndarray) -> np.ndarray:
    """``r[i] = max(hit[i], min(hold[i], r[i-1]))`` with ``r[-1] = -inf``, along axis 1.

    Each step is the map ``r -> max(B, min(A, r))``; these compose in closed
    form, so the recurrence is evaluated by log2(L) doubling steps. Only min
    and max are involved, so the result is exact.
    """
    A = hold.copy()
    B = hit.copy()
    L = A.shape[1]
    s = 1
    while s < L:
        prevA = A[:, :-s]
        prevB = B[:, :-s]
        curA = A[:, s:]
        newB = np.maximum(B[:, s:], np.minimum(curA, prevB))
        newA = np.minimum(curA, prevA)
        B[:, s:] = newB
        A[:, s:] = newA
        s *= 2
    return B


def _since(a, b, lo, hi, left_true, L):
    m = b.shape[0]
    if hi == fm.INF:
        if left_true:
            s0 = np.maximum.accumulate(b, axis=1)
        else:
            s0 = _maxmin_scan(a, b)
        if lo == 0:
            return s0
        out = np.full((m, L), NEG_INF)
        if lo >= L:
            return out
        shifted = s0[:, : L - lo]
        if not left_true:
            # min of a over (i - lo, i]
            win = a[:, lo:].copy()
            for d in range(1, lo):
                np.minimum(win, a[:, lo - d: L - d], out=win)
            shifted = np.minimum(shifted, win)
        out[:, lo:] = shifted
        return out
    out = np.full((m, L), NEG_INF)
    if hi >= L:
        return out
    n = L - hi  # positions i = hi .. L-1
    best = np.full((m, n), NEG_INF)
    run = None if left_true else np.full((m, n), POS_INF)
    for d in range(0, hi + 1):
        if d > 0 and run is not None:
            np.minimum(run, a[:, hi - d + 1: L - d + 1], out=run)
        if d >= lo:
            term = b[:, hi - d: L - d]
            if run is not None:
                term = np.minimum(term, run)
            np.maximum(best, term, out=best)
    out[:, hi:] = best
    return out


def _until(a, b, lo, hi, left_true, lengths, L):
    m = b.shape[0]
    idx = np.arange(L)[None, :]
    valid = idx < lengths[:, None]
    if hi == fm.INF:
        bm = np.where(valid, b, NEG_INF)
        if left_true:
            u0 = np.maximum.accumulate(bm[:, ::-1], axis=1)[:, ::-1]
        else:
            u0 = _maxmin_scan(a[:, ::-1], bm[:, ::-1])[:, ::-1]
        if lo == 0:
            return np.where(valid, u0, NEG_INF)
        out = np.full((m, L), NEG_INF)
        if lo >= L:
            return out
        shifted = u0[:, lo:]
        if not left_true:
            # min of a over [i, i + lo)
            win = a[:, : L - lo].copy()
            for d in range(1, lo):
                np.minimum(win, a[:, d: L - lo + d], out=win)
            shifted = np.minimum(shifted, win)
        out[:, : L - lo] = shifted
        return np.where(idx + lo < lengths[:, None], out, NEG_INF)
    out = np.full((m, L), NEG_INF)
    if hi >= L:
        return out
    n = L - hi  # positions i = 0 .. L-hi-1
    best = np.full((m, n), NEG_INF)
    run = None if left_true else np.full((m, n), POS_INF)
    for d in range(0, hi + 1):
        if d > 0 and run is not None:
            np.minimum(run, a[:, d - 1: n + d - 1], out=run)
        if d >= lo:
            term = b[:, d: n + d]
            if run is not None:
                term = np.minimum(term, run)
            np.maximum(best, term, out=best)
    out[:, :n] = best
    return np.where(idx + hi < lengths[:, None], out, NEG_INF)


class Program:
    """A set of formulas compiled into one evaluation DAG over named signals."""

    def __init__(self, formulas: Sequence[Formula], names: Sequence[str]):
        self.names = tuple(names)
        index = {n: k for k, n in enumerate(self.names)}
        self.steps: list[tuple] = []
        self.outputs: list[int] = []
        slot: dict[Formula, int] = {}

        def emit(node: Formula) -> int:
            hit = slot.get(node)
            if hit is not None:
                return hit
            args = tuple(emit(a) for a in node.args)
            if node.op == fm.ATOM:
                try:
                    cols = tuple(index[n] for n, _ in node.atom.terms)
                except KeyError as exc:
                    raise UnknownVariableError(
                        f"variable {exc.args[0]!r} not among trace signals {list(self.names)}") from None
                payload = (cols, tuple(w for _, w in node.atom.terms), node.atom.threshold)
            elif node.op in fm.TIMED:
                payload = (node.interval.lo, node.interval.hi, node.args[0].op == fm.TRUE)
            else:
                payload = None
            self.steps.append((node.op, args, payload))
            slot[node] = len(self.steps) - 1
            return slot[node]

        for f in formulas:
            self.outputs.append(emit(rewrite_to_core(f)))

    def run(self, block: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        m, L, _ = block.shape
        lengths = np.asarray(lengths)
        vals: list[np.ndarray | None] = [None] * len(self.steps)
        for k, (op, args, payload) in enumerate(self.steps):
            if op == fm.TRUE:
                v = np.broadcast_to(POS_INF, (m, L))
            elif op == fm.ATOM:
                cols, weights, c = payload
                v = weights[0] * block[:, :, cols[0]]
                for col, w in zip(cols[1:], weights[1:]):
                    v = v + w * block[:, :, col]
                v = v - c
            elif op == fm.NOT:
                v = -vals[args[0]]
            elif op == fm.OR:
                v = np.maximum(vals[args[0]], vals[args[1]])
            elif op == fm.YESTERDAY:
                v = _shift_prev(vals[args[0]], NEG_INF)
            elif op == fm.NEXT:
                v = _shift_next(vals[args[0]], NEG_INF)
                v[np.arange(m), lengths - 1] = NEG_INF
            elif op == fm.SINCE:
                lo, hi, left_true = payload
                v = _since(vals[args[0]], vals[args[1]], lo, hi, left_true, L)
            elif op == fm.UNTIL:
                lo, hi, left_true = payload
                v = _until(vals[args[0]], vals[args[1]], lo, hi, left_true, lengths, L)
            else:  # pragma: no cover
                raise ValueError(f"non-core operator {op}")
            vals[k] = v
        out = np.empty((len(self.outputs), m, L))
        for q, k in enumerate(self.outputs):
            out[q] = vals[k]
        if lengths.min() < L:
            out[:, np.arange(L)[None, :] >= lengths[:, None]] = NEG_INF
        return out


def robustness(formulas: Sequence[Formula], batch: TraceBatch) -> RobustnessMatrix:
    """Robustness of every formula on every trace at every position."""
    if isinstance(formulas, Formula):
        formulas = [formulas]
    prog = Program(formulas, batch.names)
    values = prog.run(batch.block, batch.lengths)
    assert not np.isnan(values).any(), "NaN in robustness output"
    return RobustnessMatrix(values, np.asarray(batch.lengths))


def _as_batch(traces, names) -> TraceBatch:
    if isinstance(traces, TraceBatch):
        return traces
    if isinstance(traces, Trace):
        traces = [traces]
    return make_batch(list(traces), names)


def robustness_of(f: Formula, t: Trace, names: Sequence[str] | None = None) -> np.ndarray:
    """Robustness vector of one formula on one trace."""
    b = _as_batch(t, names)
    return robustness([f], b).values[0, 0, : len(t)]


def _monitor_kind(f: Formula) -> Fragment:
    frag = fragment_of(f)
    if frag not in (Fragment.GPPSTL, Fragment.FPPSTL):
        raise FragmentError(f"monitoring needs a G(ppSTL) or F(ppSTL) formula, got {frag.value}: {f}")
    return frag


def decisions(formulas: Sequence[Formula], b: TraceBatch) -> np.ndarray:
    """Boolean ``(r, m, L)`` array: monitor has decided (Bot for G, Top for F) by position j."""
    kinds = [_monitor_kind(f) for f in formulas]
    detectors = [fm.detector_of(f) if k == Fragment.GPPSTL else f.args[0] for f, k in zip(formulas, kinds)]
    rob = robustness(detectors, b)
    fired = np.empty(rob.values.shape, dtype=bool)
    for q, k in enumerate(kinds):
        fired[q] = rob.values[q] > 0 if k == Fragment.GPPSTL else rob.values[q] >= 0
    fired &= rob.mask[None]
    return np.maximum.accumulate(fired, axis=2)


def monitor(f: Formula, traces, names: Sequence[str] | None = None) -> list[MonitorTrace]:
    """Prefix verdicts of a G(ppSTL) / F(ppSTL) formula on each trace.

    F(phi) turns Top at the first position where phi holds; G(!phi) turns Bot
    at the first position where phi's robustness is strictly positive.
    """
    b = _as_batch(traces, names)
    kind = _monitor_kind(f)
    decided = decisions([f], b)[0]
    verdict = Verdict.BOT if kind == Fragment.GPPSTL else Verdict.TOP
    out = []
    for k in range(len(b)):
        row = decided[k, : b.lengths[k]]
        first = int(np.argmax(row)) if row.any() else None
        vs = tuple(verdict if d else Verdict.UNKNOWN for d in row)
        out.append(MonitorTrace(vs, first))
    return out


def first_firing(detectors: Sequence[Formula], traces, names: Sequence[str] | None = None) -> list[int | None]:
    """Per trace, earliest position where any detector's robustness is > 0."""
    b = _as_batch(traces, names)
    out: list[int | None] = [None] * len(b)
    if not detectors:
        return out
    rob = robustness(list(detectors), b)
    fired = (rob.values > 0).any(axis=0) & rob.mask
    for k in range(len(b)):
        if fired[k].any():
            out[k] = int(np.argmax(fired[k]))
    return out


def earliest_violation(pool_bodies: Sequence[Formula], t: Trace, names: Sequence[str] | None = None) -> int | None:
    """First position where some pool detector fires (robustness > 0), or None."""
    return first_firing(pool_bodies, [t], names)[0]


def trace_check(f: Formula, t: Trace, names: Sequence[str] | None = None) -> bool:
    """Does ``t`` satisfy ``f``? Pure-past formulas are read at the last position,
    all others at the first."""
    rob = robustness_of(f, t, names)
    pos = len(t) - 1 if fm.is_pure_past(f) else 0
    return bool(rob[pos] >= 0)
