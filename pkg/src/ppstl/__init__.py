"""Pure-past STL monitoring by trace checking, and evolutionary learning of
failure-detection formulas from labeled multivariate traces."""

from ppstl.formula import (
    Atom,
    Formula,
    Fragment,
    GenConfig,
    Interval,
    detector_of,
    fragment_of,
    rewrite_to_core,
    safety_wrap,
    sample_ppstl,
)
from ppstl.parser import parse, to_text

__all__ = [
    "Atom",
    "Formula",
    "Fragment",
    "GenConfig",
    "Interval",
    "detector_of",
    "fragment_of",
    "parse",
    "rewrite_to_core",
    "safety_wrap",
    "sample_ppstl",
    "to_text",
]

__version__ = "0.1.0"
