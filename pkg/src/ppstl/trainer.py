"""Training loop: grow a pool of safety formulas epoch by epoch.

Between epochs every failure trace is cut just before the earliest point
where the current pool already detects it, so later epochs have to learn
detectors that fire earlier.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ppstl import formula as fm
from ppstl.engine import first_firing
from ppstl.errors import FragmentError, PoolFormatError, TraceFormatError, UnknownVariableError
from ppstl.formula import Formula, Fragment
from ppstl.learner import EAConfig, LearnResult, learn_formulas
from ppstl.parser import parse
from ppstl.trace import (AugmentedPair, Dataset, NormalizationParams, Trace, augment, derived_rng,
                         normalize_apply, normalize_fit)


@dataclass(frozen=True)
class TrainConfig:
    ea: EAConfig = field(default_factory=EAConfig)
    n_aug_fail: int = 5
    n_aug_good: int = 0
    epochs: int = 2
    batch_size: int = 5
    noise_std: float = 0.01
    seed: int = 0
    workers: int = 1
    timestamps: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs (e) and batch size (b) must be >= 1")
        if self.n_aug_fail < 0 or self.n_aug_good < 0 or self.noise_std < 0:
            raise ValueError("augmentation counts and noise_std must be >= 0")


# config file keys use the hyperparameter names of the training procedure
_TOP_KEYS = {"n_aug_fail": "n_aug_fail", "n_aug_good": "n_aug_good", "e": "epochs", "b": "batch_size",
             "noise_std": "noise_std", "seed": "seed", "workers": "workers", "timestamps": "timestamps"}
_EA_KEYS = {f.name for f in fields(EAConfig)}


def config_from_dict(d: dict) -> TrainConfig:
    flat = dict(d)
    flat.update(flat.pop("ea", {}) or {})
    top, ea = {}, {}
    for key, value in flat.items():
        if key in _TOP_KEYS:
            top[_TOP_KEYS[key]] = value
        elif key in _EA_KEYS:
            ea[key] = tuple(value) if isinstance(value, list) else value
        else:
            raise ValueError(f"unknown config key {key!r}")
    return TrainConfig(ea=EAConfig(**ea), **top)


def config_to_dict(cfg: TrainConfig) -> dict:
    out = {key: getattr(cfg, attr) for key, attr in _TOP_KEYS.items()}
    ea = asdict(cfg.ea)
    ea["init_height"] = list(ea["init_height"])
    out.update(ea)
    return out


def load_config(path) -> TrainConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON config: {exc}") from None
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return config_from_dict(data)


@dataclass(frozen=True)
class PoolEntry:
    formula: Formula
    epoch: int | None = None
    batch: int | None = None
    acc: float | None = None
    far: float | None = None
    margin: float | None = None
    source: str | None = None
    timestamp: str | None = None

    def __post_init__(self):
        if fm.fragment_of(self.formula) != Fragment.GPPSTL:
            raise FragmentError(f"pool entries must be G(ppSTL) formulas, got {self.formula}")

    @property
    def body(self) -> Formula:
        return fm.detector_of(self.formula)

    @classmethod
    def learned(cls, body: Formula, **meta) -> "PoolEntry":
        return cls(fm.safety_wrap(body), **meta)


_POOL_FIELDS = ("formula", "epoch", "batch", "acc", "far", "margin", "source", "timestamp")


def save_pool(pool: Sequence[PoolEntry], path) -> None:
    """One JSON object per line, so the file diffs and hand-edits cleanly."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for e in pool:
            rec = {k: getattr(e, k) for k in _POOL_FIELDS}
            rec["formula"] = str(e.formula)
            fh.write(json.dumps(rec) + "\n")


def load_pool(path) -> list[PoolEntry]:
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise PoolFormatError(f"{path}:{n}: malformed record: {exc}") from None
        if not isinstance(rec, dict) or "formula" not in rec:
            raise PoolFormatError(f"{path}:{n}: record needs a 'formula' field")
        extra = set(rec) - set(_POOL_FIELDS)
        if extra:
            raise PoolFormatError(f"{path}:{n}: unknown fields {sorted(extra)}")
        try:
            f = parse(rec["formula"])
            out.append(PoolEntry(f, **{k: rec.get(k) for k in _POOL_FIELDS[1:]}))
        except (ValueError, KeyError) as exc:
            raise PoolFormatError(f"{path}:{n}: {exc}") from None
    return out


def cut_pairs(pairs: Sequence[AugmentedPair], bodies: Sequence[Formula],
              names: Sequence[str]) -> list[AugmentedPair]:
    """Cut each pair where the pool first detects its original trace.

    The same cut applies to the augmentations; pairs detected at position 0
    are dropped, undetected pairs pass through unchanged.
    """
    if not bodies or not pairs:
        return list(pairs)
    firsts = first_firing(list(bodies), [p.original for p in pairs], names)
    out = []
    for p, v in zip(pairs, firsts):
        if v is None:
            out.append(p)
        elif v > 0:
            out.append(p.cut(v))
    return out


def generate_batches(pairs: Sequence[AugmentedPair], b: int, rng: np.random.Generator) -> list[list[AugmentedPair]]:
    if b < 1:
        raise ValueError("batch size must be >= 1")
    order = rng.permutation(len(pairs))
    return [[pairs[k] for k in order[s: s + b]] for s in range(0, len(order), b)]


@dataclass
class BatchRecord:
    """What one learning call saw and produced; handed to training observers."""

    epoch: int
    batch: int
    pairs: list[AugmentedPair]
    good: list[Trace]
    result: LearnResult
    entries: list[PoolEntry]


@dataclass
class TrainResult:
    pool: list[PoolEntry]
    norm: NormalizationParams
    names: tuple[str, ...]
    records: list[BatchRecord] = field(default_factory=list)


def _check_pool_vars(pool: Sequence[PoolEntry], names: Sequence[str]) -> None:
    known = set(names)
    for e in pool:
        missing = fm.variables(e.formula) - known
        if missing:
            raise UnknownVariableError(f"pool formula {e.formula} uses unknown signals {sorted(missing)}")


def _learn_job(args):
    batch, good, names, ea, seed, epoch, bi = args
    return learn_formulas(batch, good, names, ea, derived_rng(seed, "learn", epoch, bi))


def train(data: Dataset, pool: Sequence[PoolEntry] = (), cfg: TrainConfig = TrainConfig(),
          observer: Callable[[BatchRecord], None] | None = None) -> TrainResult:
    """Normalize, augment, then for each epoch cut, batch and learn; returns the grown pool."""
    if not data.failures:
        raise TraceFormatError("no failure traces")
    names = tuple(data.names)
    pool = list(pool)
    _check_pool_vars(pool, names)
    norm = normalize_fit(data)
    nd = normalize_apply(norm, data)

    good = list(nd.good)
    for t in nd.good:
        good.extend(augment(t, cfg.n_aug_good, cfg.noise_std, derived_rng(cfg.seed, "aug-good", t.id)))
    if not good:
        raise TraceFormatError("no good traces")
    pairs = [AugmentedPair(t, augment(t, cfg.n_aug_fail, cfg.noise_std, derived_rng(cfg.seed, "aug-fail", t.id)))
             for t in nd.failures]

    records: list[BatchRecord] = []
    for epoch in range(1, cfg.epochs + 1):
        cut = cut_pairs(pairs, [e.body for e in pool], names)
        batches = generate_batches(cut, cfg.batch_size, derived_rng(cfg.seed, "batches", epoch))
        jobs = [(b, good, names, cfg.ea, cfg.seed, epoch, bi) for bi, b in enumerate(batches)]
        if cfg.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
                results = list(ex.map(_learn_job, jobs))
        else:
            results = [_learn_job(j) for j in jobs]
        for bi, (b, res) in enumerate(zip(batches, results)):
            entries = []
            for item in res.formulas:
                stamp = None
                if cfg.timestamps:
                    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
                rec = item.fitness
                entries.append(PoolEntry.learned(item.formula, epoch=epoch, batch=bi, acc=rec.acc, far=rec.far,
                                                 margin=rec.margin, source=b[item.pair_id].original.id,
                                                 timestamp=stamp))
            pool.extend(entries)
            record = BatchRecord(epoch, bi, b, good, res, entries)
            records.append(record)
            if observer is not None:
                observer(record)
    return TrainResult(pool, norm, names, records)


def save_norm(norm: NormalizationParams, names: Sequence[str], path) -> None:
    Path(path).write_text(json.dumps({"names": list(names), **norm.to_dict()}, indent=2) + "\n", encoding="utf-8")


def load_norm(path) -> tuple[NormalizationParams, tuple[str, ...] | None]:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    names = tuple(d["names"]) if "names" in d else None
    return NormalizationParams.from_dict(d), names


def batch_count(n_pairs: int, b: int) -> int:
    return math.ceil(n_pairs / b)
