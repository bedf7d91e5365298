"""Scoring a formula pool on labeled test traces."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ppstl.engine import robustness
from ppstl.errors import TraceFormatError
from ppstl.trace import Dataset, NormalizationParams, Trace, batch as make_batch, normalize_apply


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be >= 0")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    far: float
    mcc: float


def compute_metrics(cm: ConfusionMatrix) -> Metrics:
    """Precision, recall, F1, false alarm rate and MCC; zero denominators give 0."""
    tp, fp, tn, fn = cm.tp, cm.fp, cm.tn, cm.fn
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    far = fp / (fp + tn) if fp + tn else 0.0
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(denom) if denom else 0.0
    return Metrics(p, r, f1, far, mcc)


def _bodies(pool) -> list:
    return [e.body for e in pool]


def first_positions(pool, traces: Sequence[Trace], names: Sequence[str]) -> np.ndarray:
    """``out[q, k]``: first position where entry ``q`` fires on trace ``k`` (-1 if never)."""
    out = np.full((len(pool), len(traces)), -1, dtype=np.int64)
    if not pool or not traces:
        return out
    rob = robustness(_bodies(pool), make_batch(list(traces), names))
    fired = (rob.values > 0) & rob.mask[None]
    any_fired = fired.any(axis=2)
    out[any_fired] = np.argmax(fired, axis=2)[any_fired]
    return out


def classify_trace(pool, t: Trace, names: Sequence[str]) -> tuple[bool, int | None]:
    """(alarm raised, earliest alarm position) for the pool's monitors on ``t``."""
    if t.arity != len(names):
        raise TraceFormatError(f"trace {t.id!r} has arity {t.arity}, expected {len(names)}")
    firsts = first_positions(pool, [t], names)[:, 0]
    hits = firsts[firsts >= 0]
    if len(hits) == 0:
        return False, None
    return True, int(hits.min())


def preemptiveness(t: Trace, first_bot: int | None) -> int:
    """Samples between the first alarm and the end of a detected failure trace."""
    if first_bot is None:
        raise ValueError(f"trace {t.id!r} was not detected")
    if not t.is_failure:
        raise ValueError(f"trace {t.id!r} is not a failure trace")
    return len(t) - 1 - first_bot


@dataclass(frozen=True)
class TraceResult:
    id: str
    is_failure: bool
    predicted: bool
    first_bot: int | None
    preemptiveness: int | None


@dataclass(frozen=True)
class Report:
    confusion: ConfusionMatrix
    metrics: Metrics
    mean_preemptiveness: float | None
    unit: str
    traces: tuple[TraceResult, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "confusion": asdict(self.confusion),
            "metrics": asdict(self.metrics),
            "mean_preemptiveness": self.mean_preemptiveness,
            "unit": self.unit,
            "traces": [asdict(t) for t in self.traces],
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def _report(traces: Sequence[Trace], firsts: np.ndarray) -> Report:
    """``firsts[k]``: earliest alarm on trace k, -1 if none."""
    tp = fp = tn = fn = 0
    rows = []
    lead = []
    for t, v in zip(traces, firsts):
        hit = v >= 0
        fb = int(v) if hit else None
        pre = None
        if t.is_failure and hit:
            tp += 1
            pre = preemptiveness(t, fb)
            lead.append(pre)
        elif t.is_failure:
            fn += 1
        elif hit:
            fp += 1
        else:
            tn += 1
        rows.append(TraceResult(t.id, t.is_failure, bool(hit), fb, pre))
    cm = ConfusionMatrix(tp, fp, tn, fn)
    unit = traces[0].sampling_unit if traces else "step"
    mean = float(np.mean(lead)) if lead else None
    return Report(cm, compute_metrics(cm), mean, unit, tuple(rows))


def evaluate(pool, test: Dataset, norm: NormalizationParams | None) -> Report:
    """Classify every test trace (positive = failure) and aggregate the metrics."""
    data = normalize_apply(norm, test) if norm is not None else test
    traces = list(data.traces)
    firsts = first_positions(pool, traces, data.names)
    earliest = np.where(firsts >= 0, firsts, np.iinfo(np.int64).max).min(axis=0) if len(pool) else \
        np.full(len(traces), np.iinfo(np.int64).max)
    earliest = np.where(earliest == np.iinfo(np.int64).max, -1, earliest)
    return _report(traces, earliest)


@dataclass(frozen=True)
class CurvePoint:
    step: int
    epoch: int | None
    batch: int | None
    pool_size: int
    precision: float
    recall: float
    f1: float
    far: float
    mcc: float
    mean_preemptiveness: float | None


def curve(pool, test: Dataset, norm: NormalizationParams | None) -> list[CurvePoint]:
    """Metrics after each (epoch, batch) checkpoint of pool growth.

    Entries without provenance (hand-written) form the initial checkpoint.
    """
    data = normalize_apply(norm, test) if norm is not None else test
    traces = list(data.traces)
    firsts = first_positions(pool, traces, data.names)
    big = np.iinfo(np.int64).max
    fire = np.where(firsts >= 0, firsts, big)
    keys = [(e.epoch, e.batch) for e in pool]
    ends = []
    n_initial = 0
    while n_initial < len(pool) and keys[n_initial][0] is None:
        n_initial += 1
    ends.append((n_initial, None, None))
    for q in range(n_initial, len(pool)):
        if q + 1 == len(pool) or keys[q + 1] != keys[q]:
            ends.append((q + 1, keys[q][0], keys[q][1]))
    points = []
    for step, (end, ep, bt) in enumerate(ends):
        earliest = fire[:end].min(axis=0) if end else np.full(len(traces), big)
        rep = _report(traces, np.where(earliest == big, -1, earliest))
        m = rep.metrics
        points.append(CurvePoint(step, ep, bt, end, m.precision, m.recall, m.f1, m.far, m.mcc,
                                 rep.mean_preemptiveness))
    return points


def write_curve_csv(points: Sequence[CurvePoint], path) -> None:
    cols = list(CurvePoint.__dataclass_fields__)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for p in points:
            w.writerow(["" if getattr(p, c) is None else getattr(p, c) for c in cols])


def verdict_rows(pool, test: Dataset, norm: NormalizationParams | None):
    """(trace_id, position, verdict) for every prefix until the first alarm."""
    data = normalize_apply(norm, test) if norm is not None else test
    traces = list(data.traces)
    firsts = first_positions(pool, traces, data.names)
    for k, t in enumerate(traces):
        hits = firsts[:, k][firsts[:, k] >= 0] if len(pool) else np.array([], dtype=np.int64)
        stop = int(hits.min()) if len(hits) else len(t) - 1
        for i in range(stop + 1):
            yield t.id, i, "Bot" if len(hits) and i == stop else "Unknown"
