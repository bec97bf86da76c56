"""Channel knowledge map construction: degradations, classical baselines, metrics and a
conditional diffusion sampler, backed by the C++ core."""

from ._ckmforge import (
    CapacityError,
    IoError,
    NumericalError,
    Observation,
    PreconditionError,
    RangeError,
    ShapeError,
    UnsupportedError,
    degrade,
    evaluate,
    generate_corpus,
    load_split,
    methods,
    reconstruct,
    sample,
    selftest,
)

__all__ = [
    "CapacityError",
    "IoError",
    "NumericalError",
    "Observation",
    "PreconditionError",
    "RangeError",
    "ShapeError",
    "UnsupportedError",
    "degrade",
    "evaluate",
    "generate_corpus",
    "load_split",
    "methods",
    "reconstruct",
    "sample",
    "selftest",
]
