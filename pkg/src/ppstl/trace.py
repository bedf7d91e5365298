"""Labeled multivariate traces: loading, normalization, augmentation, batching."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ppstl.errors import TraceFormatError


@dataclass(frozen=True, eq=False)
class Trace:
    """A finite, nonempty sequence of states (rows of ``values``)."""

    id: str
    values: np.ndarray
    is_failure: bool = False
    sampling_unit: str = "step"

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1:
            raise TraceFormatError(f"trace {self.id!r} must be a nonempty (length x arity) matrix")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "is_failure", bool(self.is_failure))

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def arity(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other) -> bool:
        return (isinstance(other, Trace) and self.id == other.id and self.is_failure == other.is_failure
                and self.sampling_unit == other.sampling_unit and np.array_equal(self.values, other.values))

    def with_values(self, values, id: str | None = None) -> "Trace":
        return Trace(self.id if id is None else id, values, self.is_failure, self.sampling_unit)


@dataclass(frozen=True)
class Dataset:
    traces: tuple[Trace, ...]
    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "traces", tuple(self.traces))
        object.__setattr__(self, "names", tuple(self.names))
        seen = set()
        for t in self.traces:
            if t.arity != len(self.names):
                raise TraceFormatError(f"trace {t.id!r} has arity {t.arity}, expected {len(self.names)}")
            if t.id in seen:
                raise TraceFormatError(f"duplicate trace id {t.id!r}")
            seen.add(t.id)

    def __len__(self) -> int:
        return len(self.traces)

    @property
    def failures(self) -> list[Trace]:
        return [t for t in self.traces if t.is_failure]

    @property
    def good(self) -> list[Trace]:
        return [t for t in self.traces if not t.is_failure]


def load_csv(path, sampling_unit: str = "step") -> Dataset:
    """Read ``trace_id,t,<vars...>,is_failure`` rows into a :class:`Dataset`.

    Rows of one trace may be interleaved with others; each trace is sorted by
    ``t``, which must be strictly increasing once sorted (no duplicates).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise TraceFormatError(f"{path}: empty file") from None
        for col in ("trace_id", "t", "is_failure"):
            if col not in header:
                raise TraceFormatError(f"{path}: missing column {col!r}")
        id_col, t_col, f_col = header.index("trace_id"), header.index("t"), header.index("is_failure")
        var_cols = [k for k in range(len(header)) if k not in (id_col, t_col, f_col)]
        if not var_cols:
            raise TraceFormatError(f"{path}: no signal columns")
        names = [header[k] for k in var_cols]

        rows: dict[str, list[tuple[float, list[float]]]] = {}
        flags: dict[str, bool] = {}
        for r, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise TraceFormatError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
            tid = row[id_col].strip()
            try:
                t = float(row[t_col])
                vals = [float(row[k]) for k in var_cols]
                flag = row[f_col].strip()
            except ValueError as exc:
                raise TraceFormatError(f"{path}: non-numeric value at row {r}: {exc}") from None
            if not math.isfinite(t) or not all(math.isfinite(v) for v in vals):
                raise TraceFormatError(f"non-finite value at row {r}")
            if flag not in ("0", "1"):
                raise TraceFormatError(f"{path}: is_failure must be 0 or 1 at row {r}")
            if tid in flags and flags[tid] != (flag == "1"):
                raise TraceFormatError(f"{path}: inconsistent failure flag for trace {tid!r} at row {r}")
            flags[tid] = flag == "1"
            rows.setdefault(tid, []).append((t, vals))

    traces = []
    for tid, items in rows.items():
        items.sort(key=lambda p: p[0])
        ts = [p[0] for p in items]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise TraceFormatError(f"{path}: non-monotone time in trace {tid!r}")
        traces.append(Trace(tid, np.array([p[1] for p in items]), flags[tid], sampling_unit))
    return Dataset(tuple(traces), tuple(names))


def write_csv(dataset: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trace_id", "t", *dataset.names, "is_failure"])
        for tr in dataset.traces:
            for t, row in enumerate(tr.values):
                w.writerow([tr.id, t, *(repr(float(v)) for v in row), int(tr.is_failure)])


@dataclass(frozen=True)
class NormalizationParams:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("lo/hi length mismatch")
        if any(h < l for l, h in zip(self.lo, self.hi)):
            raise ValueError("max must be >= min for every variable")

    def to_dict(self) -> dict:
        return {"min": list(self.lo), "max": list(self.hi)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationParams":
        return cls(tuple(float(v) for v in d["min"]), tuple(float(v) for v in d["max"]))


def normalize_fit(train: Dataset) -> NormalizationParams:
    block = np.concatenate([t.values for t in train.traces], axis=0)
    return NormalizationParams(tuple(block.min(axis=0).tolist()), tuple(block.max(axis=0).tolist()))


def normalize_values(p: NormalizationParams, values: np.ndarray) -> np.ndarray:
    lo = np.asarray(p.lo)
    span = np.asarray(p.hi) - lo
    degenerate = span == 0
    out = (values - lo) / np.where(degenerate, 1.0, span)
    out[:, degenerate] = 0.5
    return out


def normalize_apply(p: NormalizationParams, d: Dataset) -> Dataset:
    """Affine min-max map; values outside the fitted range are not clipped."""
    if len(p.lo) != len(d.names):
        raise TraceFormatError(f"normalization has {len(p.lo)} variables, dataset has {len(d.names)}")
    return Dataset(tuple(t.with_values(normalize_values(p, t.values)) for t in d.traces), d.names)


def augment(t: Trace, count: int, noise_std: float, rng: np.random.Generator) -> list[Trace]:
    """``count`` noisy copies of ``t`` (i.i.d. Gaussian per cell, clipped to [0, 1])."""
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    out = []
    for k in range(count):
        noisy = np.clip(t.values + rng.normal(0.0, noise_std, size=t.values.shape), 0.0, 1.0)
        out.append(t.with_values(noisy, id=f"{t.id}#aug{k}"))
    return out


@dataclass(frozen=True, eq=False)
class TraceBatch:
    """Padded ``(m, l_max, n)`` block of traces plus their true lengths."""

    block: np.ndarray
    lengths: np.ndarray
    names: tuple[str, ...]
    ids: tuple[str, ...] = ()

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.block.shape

    def __len__(self) -> int:
        return self.block.shape[0]


def batch(traces: Sequence[Trace], names: Sequence[str] | None = None) -> TraceBatch:
    if not traces:
        raise ValueError("cannot batch an empty list of traces")
    n = traces[0].arity
    if any(t.arity != n for t in traces):
        raise TraceFormatError("all traces in a batch must have the same arity")
    if names is None:
        names = tuple(f"x{k}" for k in range(n))
    if len(names) != n:
        raise TraceFormatError(f"{len(names)} names for arity {n}")
    lengths = np.array([len(t) for t in traces], dtype=np.int64)
    block = np.zeros((len(traces), int(lengths.max()), n))
    for k, t in enumerate(traces):
        block[k, : len(t)] = t.values
    return TraceBatch(block, lengths, tuple(names), tuple(t.id for t in traces))


def unbatch(b: TraceBatch) -> list[np.ndarray]:
    return [b.block[k, : b.lengths[k]].copy() for k in range(len(b))]


def cut(t: Trace, v: int) -> Trace:
    """Prefix of length ``v`` (positions ``0 .. v-1``)."""
    if not 1 <= v <= len(t):
        raise ValueError(f"cut position {v} out of range 1..{len(t)}")
    return t.with_values(t.values[:v])


@dataclass(frozen=True)
class AugmentedPair:
    """A failure trace together with its noisy augmentations."""

    original: Trace
    augmentations: tuple[Trace, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "augmentations", tuple(self.augmentations))
        for a in self.augmentations:
            if a.values.shape != self.original.values.shape:
                raise TraceFormatError("augmentations must match the original trace's shape")

    @property
    def traces(self) -> list[Trace]:
        return [self.original, *self.augmentations]

    def __len__(self) -> int:
        return len(self.original)

    def cut(self, v: int) -> "AugmentedPair":
        return AugmentedPair(cut(self.original, v), tuple(cut(a, v) for a in self.augmentations))


def derived_rng(seed: int, *keys: Iterable) -> np.random.Generator:
    """Independent generator for ``(seed, keys...)``; keys may be strings or ints."""
    entropy = [int(seed)]
    for k in keys:
        if isinstance(k, str):
            entropy.extend(k.encode("utf-8"))
            entropy.append(256)
        else:
            entropy.append(int(k))
    return np.random.default_rng(np.random.SeedSequence(entropy))
