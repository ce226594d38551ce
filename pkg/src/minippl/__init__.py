"""A small embedded probabilistic programming library.

Programs are plain Python functions that build named random variables.
Tracers intercept those constructions to score, intervene on, or record a
program, and inference is ordinary numerical code on top.
"""
from minippl.autodiff import Scalar, Tape, gradient, value_and_gradient
from minippl.core import (
    Bernoulli,
    Beta,
    Categorical,
    Deterministic,
    Normal,
    RandomVariable,
    Uniform,
    backend,
    capture_trace,
    descendants,
    factor_terms,
    run,
    trace,
    traceable,
)
from minippl.transforms import Alignment, align_bindings, intervene, make_log_joint

__version__ = "0.1.0"
