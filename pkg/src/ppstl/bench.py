"""Timing harness: all-prefix monitoring by three strategies.

``naive-prefix`` re-checks the formula on every prefix, ``incremental``
updates per-node state one sample at a time, ``vectorized`` runs one engine
pass over the whole block. All three produce the same verdicts; the harness
checks that too.
"""

from __future__ import annotations

import csv
import ctypes
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ppstl import formula as fm
from ppstl.engine import Program
from ppstl.formula import Formula, GenConfig
from ppstl.parser import parse

WORKLOAD = "O(x1 >= 0.3) -> H(x2 >= 0.1)"
STRATEGIES = ("naive-prefix", "incremental", "vectorized")
MODES = ("length", "traces", "formulas")

# glibc mallopt parameters
_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


@dataclass(frozen=True)
class BenchSpec:
    mode: str
    sweep: tuple[int, ...]
    strategies: tuple[str, ...] = STRATEGIES
    budget: float = 180.0
    reps: int = 3
    base_length: int = 1000
    base_traces: int = 1
    base_formulas: int = 1
    seed: int = 0
    pin_allocator: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not self.sweep or any(v < 1 for v in self.sweep):
            raise ValueError("sweep must be a nonempty list of positive integers")
        bad = set(self.strategies) - set(STRATEGIES)
        if bad or not self.strategies:
            raise ValueError(f"unknown strategies {sorted(bad)}; choose from {STRATEGIES}")
        if self.budget <= 0 or self.reps < 1:
            raise ValueError("budget must be > 0 and reps >= 1")


@dataclass(frozen=True)
class BenchRow:
    mode: str
    size: int
    strategy: str
    reps: int
    mean_s: float | None
    std_s: float | None
    status: str


class IncrementalMonitor:
    """Robustness of a pure-past formula at the newest sample, updated per sample.

    Unbounded operators keep O(1) state; bounded windows read back through
    the stored history of their operands.
    """

    def __init__(self, f: Formula, names: Sequence[str]):
        if not fm.is_pure_past(f):
            raise ValueError("incremental monitoring needs a pure-past formula")
        col = {n: k for k, n in enumerate(names)}
        self.nodes: list[tuple] = []
        slot: dict[Formula, int] = {}

        def emit(node: Formula) -> int:
            if node in slot:
                return slot[node]
            args = tuple(emit(a) for a in node.args)
            payload = None
            if node.op == fm.ATOM:
                payload = ([col[n] for n, _ in node.atom.terms], [w for _, w in node.atom.terms],
                           node.atom.threshold)
            elif node.op == fm.SINCE:
                payload = (node.interval.lo, node.interval.hi)
            self.nodes.append((node.op, args, payload))
            slot[node] = len(self.nodes) - 1
            return slot[node]

        self.root = emit(fm.rewrite_to_core(f))
        self.hist: list[list[float]] = [[] for _ in self.nodes]
        self.state = [-math.inf] * len(self.nodes)
        self.i = -1

    def step(self, row) -> float:
        self.i += 1
        i = self.i
        for k, (op, args, payload) in enumerate(self.nodes):
            if op == fm.TRUE:
                v = math.inf
            elif op == fm.ATOM:
                cols, ws, c = payload
                acc = ws[0] * row[cols[0]]
                for col, w in zip(cols[1:], ws[1:]):
                    acc = acc + w * row[col]
                v = acc - c
            elif op == fm.NOT:
                v = -self.hist[args[0]][i]
            elif op == fm.OR:
                v = max(self.hist[args[0]][i], self.hist[args[1]][i])
            elif op == fm.YESTERDAY:
                v = self.hist[args[0]][i - 1] if i > 0 else -math.inf
            else:  # SINCE
                lo, hi = payload
                a, b = self.hist[args[0]], self.hist[args[1]]
                if hi == fm.INF and lo == 0:
                    v = max(b[i], min(a[i], self.state[k]))
                    self.state[k] = v
                else:
                    v = self._window_since(a, b, i, lo, hi)
            self.hist[k].append(v)
        return self.hist[self.root][i]

    @staticmethod
    def _window_since(a, b, i, lo, hi):
        first = 0 if hi == fm.INF else i - int(hi)
        if first < 0 or i - lo < first:
            return -math.inf
        hold = math.inf
        for k in range(i, i - lo, -1):
            hold = min(hold, a[k])
        best = -math.inf
        for j in range(i - lo, first - 1, -1):
            best = max(best, min(b[j], hold))
            hold = min(hold, a[j])
        return best


def pin_allocator() -> bool:
    """Keep array temporaries on the heap and never hand memory back mid-run.

    With glibc defaults, arrays above a dynamic size threshold are mapped
    fresh on every allocation, and the page faults add a size-dependent step
    to otherwise linear timings. Returns False where this is unavailable.
    """
    try:
        libc = ctypes.CDLL("libc.so.6")
        return bool(libc.mallopt(_M_MMAP_THRESHOLD, 32 << 20) and libc.mallopt(_M_TRIM_THRESHOLD, 64 << 20))
    except (OSError, AttributeError):
        return False


def verdicts_naive(prog: Program, block: np.ndarray) -> np.ndarray:
    """Per trace and prefix: does the prefix satisfy the formula (checked afresh)?"""
    m, L, _ = block.shape
    r = len(prog.outputs)
    out = np.empty((r, m, L), dtype=bool)
    one = np.ones(1, dtype=np.int64)
    for k in range(m):
        for v in range(1, L + 1):
            vals = prog.run(block[k: k + 1, :v], one * v)
            out[:, k, v - 1] = vals[:, 0, v - 1] >= 0
    return out


def verdicts_incremental(formulas: Sequence[Formula], names, block: np.ndarray) -> np.ndarray:
    m, L, _ = block.shape
    out = np.empty((len(formulas), m, L), dtype=bool)
    for q, f in enumerate(formulas):
        for k in range(m):
            mon = IncrementalMonitor(f, names)
            rows = block[k].tolist()
            for j in range(L):
                out[q, k, j] = mon.step(rows[j]) >= 0
    return out


def verdicts_vectorized(prog: Program, block: np.ndarray) -> np.ndarray:
    m, L, _ = block.shape
    vals = prog.run(block, np.full(m, L, dtype=np.int64))
    return vals >= 0


def workload(spec: BenchSpec, size: int, rng: np.random.Generator):
    names = ("x1", "x2")
    length = size if spec.mode == "length" else spec.base_length
    n_traces = size if spec.mode == "traces" else spec.base_traces
    n_formulas = size if spec.mode == "formulas" else spec.base_formulas
    formulas = [parse(WORKLOAD)]
    gen = GenConfig(names, height=(2, 4), bound_cap=10)
    while len(formulas) < n_formulas:
        formulas.append(fm.sample_ppstl(rng, gen))
    block = rng.random((n_traces, length, len(names)))
    return formulas, names, block


def run_bench(spec: BenchSpec) -> list[BenchRow]:
    """Time every strategy at every sweep point; a strategy whose cumulative
    time passes the budget is marked timed-out for the remaining points."""
    if spec.pin_allocator:
        pin_allocator()
    rng = np.random.default_rng(spec.seed)
    used = {s: 0.0 for s in spec.strategies}
    rows: list[BenchRow] = []
    for size in spec.sweep:
        formulas, names, block = workload(spec, size, rng)
        reference = None
        for strat in spec.strategies:
            if used[strat] > spec.budget:
                rows.append(BenchRow(spec.mode, size, strat, 0, None, None, "timeout"))
                continue
            times = []
            result = None
            for _ in range(spec.reps):
                prog = Program(formulas, names)  # compilation is not timed
                t0 = time.perf_counter()
                if strat == "naive-prefix":
                    result = verdicts_naive(prog, block)
                elif strat == "incremental":
                    result = verdicts_incremental(formulas, names, block)
                else:
                    result = verdicts_vectorized(prog, block)
                dt = time.perf_counter() - t0
                times.append(dt)
                used[strat] += dt
                if used[strat] > spec.budget:
                    break
            status = "ok"
            if reference is None:
                reference = result
            elif not np.array_equal(reference, result):
                status = "mismatch"
            if used[strat] > spec.budget and len(times) < spec.reps:
                status = "timeout"
            rows.append(BenchRow(spec.mode, size, strat, len(times), float(np.mean(times)),
                                 float(np.std(times)), status))
    return rows


def loglog_slope(sizes: Sequence[float], times: Sequence[float]) -> float:
    return float(np.polyfit(np.log(sizes), np.log(times), 1)[0])


def write_rows(rows: Sequence[BenchRow], path) -> None:
    cols = list(BenchRow.__dataclass_fields__)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if getattr(r, c) is None else getattr(r, c) for c in cols])


def format_rows(rows: Sequence[BenchRow]) -> str:
    head = f"{'mode':<8} {'size':>8} {'strategy':<13} {'reps':>4} {'mean_s':>12} {'std_s':>12} status"
    lines = [head]
    for r in rows:
        mean = "-" if r.mean_s is None else f"{r.mean_s:.6f}"
        std = "-" if r.std_s is None else f"{r.std_s:.6f}"
        lines.append(f"{r.mode:<8} {r.size:>8} {r.strategy:<13} {r.reps:>4} {mean:>12} {std:>12} {r.status}")
    return "\n".join(lines)
