"""Math that works on plain floats and on Scalars alike.

Programs and log-densities are written against these helpers so the same body
runs under either backend. Float paths mirror the Scalar arithmetic exactly,
which is what makes the two backends agree bit-for-bit.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from minippl import special
from minippl.autodiff import DomainError, Scalar, add_n, matvec as _scalar_matvec

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def value(x):
    """Strip Scalars down to floats, elementwise for lists."""
    if isinstance(x, Scalar):
        return x.value
    if isinstance(x, (list, tuple)):
        return [value(v) for v in x]
    return x


def is_traced(x) -> bool:
    if isinstance(x, Scalar):
        return True
    if isinstance(x, (list, tuple)):
        return any(isinstance(v, Scalar) for v in x)
    return False


def _float_op(name, fn, x):
    try:
        return fn(x)
    except (ValueError, OverflowError, ZeroDivisionError):
        raise DomainError(name, x) from None


def log(x):
    if isinstance(x, Scalar):
        return x.log()
    if not x > 0.0:
        raise DomainError("log", x)
    return math.log(x)


def log1p(x):
    if isinstance(x, Scalar):
        return x.log1p()
    return _float_op("log1p", math.log1p, x)


def exp(x):
    if isinstance(x, Scalar):
        return x.exp()
    return _float_op("exp", math.exp, x)


def sqrt(x):
    if isinstance(x, Scalar):
        return x.sqrt()
    if not x > 0.0:
        raise DomainError("sqrt", x)
    return math.sqrt(x)


def tanh(x):
    return x.tanh() if isinstance(x, Scalar) else math.tanh(x)


def sigmoid(x):
    return x.sigmoid() if isinstance(x, Scalar) else special.sigmoid(x)


def softplus(x):
    return x.softplus() if isinstance(x, Scalar) else special.softplus(x)


def log_sigmoid(x):
    return x.log_sigmoid() if isinstance(x, Scalar) else special.log_sigmoid(x)


def lgamma(x):
    if isinstance(x, Scalar):
        return x.lgamma()
    if not x > 0.0:
        raise DomainError("lgamma", x)
    return special.lgamma(x)


def total(terms: Sequence):
    """Left-to-right sum; one tape record when any term is a Scalar."""
    return add_n(terms)


def matvec(matrix, vector: Sequence, bias=None) -> list:
    """``matrix @ vector (+ bias)`` as a list, traced or plain."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if is_traced(vector) or isinstance(bias, Scalar):
        return _scalar_matvec(matrix, vector, bias)
    if matrix.ndim != 2 or matrix.shape[1] != len(vector):
        raise ValueError(f"matvec: shape {matrix.shape} incompatible with vector of length {len(vector)}")
    out = matrix @ np.asarray(vector, dtype=np.float64)
    if bias is not None:
        out = out + bias
    return out.tolist()


def log_sum_exp(xs: Sequence):
    m = max(value(x) for x in xs)
    return m + log(total([exp(x - m) for x in xs]))
