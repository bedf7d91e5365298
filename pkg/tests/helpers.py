"""Shared generators for tests."""

import numpy as np

from ppstl import formula as fm
from ppstl.trace import Trace


def any_formula_config(names, height=(1, 6), bound_cap=8, **kw):
    return fm.GenConfig(names, height=height, bound_cap=bound_cap, multisignal=True,
                        comparisons=fm.COMPARISONS, unary_ops=fm.ALL_UNARY, binary_ops=fm.ALL_BINARY, **kw)


def past_config(names, height=(1, 5), bound_cap=8, **kw):
    return fm.GenConfig(names, height=height, bound_cap=bound_cap, multisignal=True,
                        comparisons=fm.COMPARISONS, **kw)


def random_traces(rng, count, n, max_len, lo=-0.5, hi=1.5):
    return [Trace(f"t{k}", rng.uniform(lo, hi, size=(int(rng.integers(1, max_len + 1)), n)))
            for k in range(count)]


def names_for(n):
    return [f"v{k}" for k in range(n)]


def fig1_trace():
    return Trace("fig1", np.array([[1.0, 0.0], [4.0, 3.0], [2.0, 1.0], [5.0, 2.0]]))
