"""Planted synthetic datasets: traces labeled by a known pure-past detector."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from ppstl import formula as fm
from ppstl.engine import robustness
from ppstl.errors import FragmentError, SynthesisError
from ppstl.formula import Formula
from ppstl.trace import Dataset, Trace, batch as make_batch

_CANDIDATES = 64


def _walk(rng, count, length, start, step, target, pull):
    """Reflected walk in [0, 1] pulled towards ``target`` at rate ``pull``."""
    out = np.empty((count, length, start.shape[1]))
    x = start.copy()
    for t in range(length):
        out[:, t] = x
        x = x + pull * (target - x) + rng.normal(0.0, step, size=x.shape)
        x = np.abs(x)
        x = 1.0 - np.abs(1.0 - x)  # reflect into [0, 1]
        x = np.clip(x, 0.0, 1.0)
    return out


def atom_polarity(f: Formula, names: Sequence[str]) -> np.ndarray:
    """Direction per signal that pushes ``f`` towards satisfaction: +1, -1 or 0."""
    col = {n: k for k, n in enumerate(names)}
    votes = np.zeros(len(names))

    def go(node: Formula, sign: int):
        if node.op == fm.ATOM:
            a = node.atom
            s = sign if a.op in (">=", ">") else -sign
            for name, w in a.terms:
                votes[col[name]] += s * np.sign(w)
            return
        flip = -1 if node.op == fm.NOT else 1
        for arg in node.args:
            go(arg, sign * flip)

    go(f, 1)
    return np.sign(votes)


def _firing(f: Formula, block: np.ndarray, names) -> np.ndarray:
    traces = [Trace(str(k), v) for k, v in enumerate(block)]
    return robustness([f], make_batch(traces, names)).values[0]


def synth_generate(planted: Formula, n_good: int, n_fail: int, length: int, rng: np.random.Generator,
                   names: Sequence[str] | None = None, step: float = 0.03, revert: float = 0.1,
                   pull: float = 0.15, nominal: tuple[float, float] = (0.1, 0.6), max_tries: int = 2000,
                   allow_empty: bool = False, clearance: float = 0.0) -> Dataset:
    """Good traces are walks that revert (rate ``revert``) to a per-trace
    nominal level drawn from ``nominal``, kept only if ``planted`` never fires
    (robustness below ``-clearance`` everywhere). Each failure trace shares
    that behavior up to an onset in [l/3, 2l/3], then drifts (rate ``pull``)
    towards the region where ``planted`` holds until it fires (robustness > 0).
    ``revert = 0`` with ``nominal = (0, 1)`` gives plain reflected walks."""
    if clearance < 0:
        raise ValueError("clearance must be >= 0")
    if not fm.is_pure_past(planted):
        raise FragmentError(f"planted formula must be pure past: {planted}")
    if names is None:
        names = sorted(fm.variables(planted))
    names = tuple(names)
    if n_good < 0 or n_fail < 0 or length < 3:
        raise ValueError("need n_good, n_fail >= 0 and length >= 3")
    if n_good + n_fail == 0 and not allow_empty:
        raise ValueError("nothing to generate (n_good = n_fail = 0)")
    n = len(names)
    polarity = atom_polarity(planted, names)
    target = np.where(polarity > 0, 1.0, np.where(polarity < 0, 0.0, 0.5))

    def clean_walks(count: int, budget: list[int]) -> list[np.ndarray]:
        got: list[np.ndarray] = []
        while len(got) < count:
            if budget[0] <= 0:
                raise SynthesisError(
                    f"could not sample traces avoiding {planted} within {max_tries} candidates")
            c = min(_CANDIDATES, budget[0])
            budget[0] -= c
            center = rng.uniform(nominal[0], nominal[1], size=(c, n))
            block = _walk(rng, c, length, center, step, center, revert)
            rob = _firing(planted, block, names)
            for k in np.flatnonzero((rob < -clearance).all(axis=1)):
                if len(got) < count:
                    got.append(block[k])
        return got

    budget = [max_tries]
    good = clean_walks(n_good, budget)
    fails: list[np.ndarray] = []
    while len(fails) < n_fail:
        base = clean_walks(1, budget)[0]
        onset = int(rng.integers(length // 3, 2 * length // 3 + 1))
        for _ in range(_CANDIDATES):
            if budget[0] <= 0:
                raise SynthesisError(f"could not make {planted} fire within {max_tries} candidates")
            budget[0] -= 1
            tail = _walk(rng, 1, length - onset + 1, base[onset - 1][None, :], step, target, pull)[0]
            trace = np.concatenate([base[:onset], tail[1:]])
            rob = _firing(planted, trace[None], names)[0]
            if rob[0] < 0 and (rob > 0).any():
                fails.append(trace)
                break
    traces = [Trace(f"good{k:04d}", v, False) for k, v in enumerate(good)]
    traces += [Trace(f"fail{k:04d}", v, True) for k, v in enumerate(fails)]
    return Dataset(tuple(traces), names)


def write_metadata(path, planted: Formula, seed: int | None, **extra) -> Path:
    """Sidecar ``<path>.meta.json`` recording the planted formula and seed."""
    meta_path = Path(str(path) + ".meta.json")
    meta = {"planted": str(planted), "seed": seed, **extra}
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return meta_path
