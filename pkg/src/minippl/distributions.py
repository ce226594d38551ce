"""Parameterized families with ``sample`` and per-element ``log_prob``.

Parameters may be floats, Scalars, or (for a 1-D batch) lists of either.
Continuous families sample by reparameterization, so a Normal whose location
is a Scalar returns a Scalar draw that is differentiable in that location.
Discrete draws are Python ints.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from minippl import ops
from minippl.ops import HALF_LOG_2PI

NEG_INF = -math.inf


class ParameterError(ValueError):
    """A distribution parameter violates its family's constraint."""

    def __init__(self, family: str, field: str, detail: str):
        super().__init__(f"{family}: parameter {field!r} {detail}")
        self.family = family
        self.field = field


def normal_log_density(x, loc, scale):
    z = (x - loc) / scale
    return -0.5 * (z * z) - ops.log(scale) - HALF_LOG_2PI


def bernoulli_logit_log_mass(x, logit):
    """log p(x | logit) for x in {0, 1}; stable for large |logit|."""
    return ops.log_sigmoid(logit) if x == 1 else ops.log_sigmoid(-logit)


def _is_seq(x) -> bool:
    return isinstance(x, (list, tuple, np.ndarray))


def _resolve_batch(family: str, params: dict, shape) -> tuple:
    n = None
    for name, p in params.items():
        if _is_seq(p):
            if n is not None and len(p) != n:
                raise ParameterError(family, name, f"has length {len(p)}, expected {n}")
            n = len(p)
    if shape is not None:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        if len(shape) > 1:
            raise ValueError(f"{family}: only 1-D batches are supported, got shape {shape}")
        if shape and n is not None and shape[0] != n:
            raise ParameterError(family, "shape", f"{shape} disagrees with parameter length {n}")
        return shape
    return () if n is None else (n,)


def _as_param(p):
    if isinstance(p, np.ndarray):
        return p.astype(np.float64).tolist()
    if isinstance(p, tuple):
        return list(p)
    if isinstance(p, (int, np.integer, np.floating)) and not isinstance(p, bool):
        return float(p)
    return p


def _check(family, field, p, ok, detail):
    for v in ops.value(p) if _is_seq(p) else [ops.value(p)]:
        if isinstance(v, float) and math.isnan(v):
            raise ParameterError(family, field, "is NaN")
        if not ok(v):
            raise ParameterError(family, field, detail)


class Distribution:
    family = "Distribution"
    support = "real"
    discrete = False

    def __init__(self, shape=None, **params):
        self.params = {k: _as_param(v) for k, v in params.items()}
        self.batch_shape = _resolve_batch(self.family, self.params, shape)
        self._validate()

    def _validate(self) -> None:
        pass

    def _param(self, name, i):
        p = self.params[name]
        return p[i] if _is_seq(p) else p

    @property
    def size(self) -> int:
        return self.batch_shape[0] if self.batch_shape else 1

    def snapshot(self) -> dict:
        """Parameter values as plain floats, for trace comparison."""
        return {k: ops.value(v) for k, v in self.params.items()}

    def sample(self, rng: np.random.Generator):
        draws = self._sample_all(rng)
        return draws if self.batch_shape else draws[0]

    def _sample_all(self, rng):
        raise NotImplementedError

    def log_prob(self, x):
        """Per-element log-density; a list for batched distributions."""
        if self.batch_shape:
            if not _is_seq(x) or len(x) != self.batch_shape[0]:
                raise ValueError(f"{self.family}: value does not match batch shape {self.batch_shape}")
            return [self._log_prob_one(i, x[i]) for i in range(self.batch_shape[0])]
        return self._log_prob_one(0, x)

    def _log_prob_one(self, i, x):
        raise NotImplementedError

    def __repr__(self) -> str:
        shape = f", shape={self.batch_shape}" if self.batch_shape else ""
        return f"{self.family}({', '.join(f'{k}={ops.value(v)!r}' for k, v in self.params.items())}{shape})"


class Normal(Distribution):
    family = "Normal"

    def __init__(self, loc, scale, shape=None):
        super().__init__(shape, loc=loc, scale=scale)

    def _validate(self):
        _check(self.family, "loc", self.params["loc"], math.isfinite, "must be finite")
        _check(self.family, "scale", self.params["scale"], lambda v: v > 0.0, "must be positive")

    def _sample_all(self, rng):
        eps = rng.standard_normal(self.size).tolist()
        return [self._param("loc", i) + self._param("scale", i) * e for i, e in enumerate(eps)]

    def _log_prob_one(self, i, x):
        return normal_log_density(x, self._param("loc", i), self._param("scale", i))


class Bernoulli(Distribution):
    """Bernoulli by ``probs`` or by ``logits`` (exactly one)."""

    family = "Bernoulli"
    support = "binary"
    discrete = True

    def __init__(self, probs=None, logits=None, shape=None):
        if (probs is None) == (logits is None):
            raise ParameterError(self.family, "probs/logits", "exactly one must be given")
        if probs is not None:
            super().__init__(shape, probs=probs)
        else:
            super().__init__(shape, logits=logits)

    def _validate(self):
        if "probs" in self.params:
            _check(self.family, "probs", self.params["probs"], lambda v: 0.0 <= v <= 1.0, "must lie in [0, 1]")
        else:
            _check(self.family, "logits", self.params["logits"], math.isfinite, "must be finite")

    def _prob_value(self, i) -> float:
        if "probs" in self.params:
            return ops.value(self._param("probs", i))
        return ops.sigmoid(ops.value(self._param("logits", i)))

    def _sample_all(self, rng):
        u = rng.random(self.size).tolist()
        return [int(u[i] < self._prob_value(i)) for i in range(self.size)]

    def _log_prob_one(self, i, x):
        x = ops.value(x)
        if x != 0 and x != 1:
            return NEG_INF
        if "logits" in self.params:
            return bernoulli_logit_log_mass(x, self._param("logits", i))
        p = self._param("probs", i)
        pv = ops.value(p)
        if x == 1:
            return ops.log(p) if pv > 0.0 else NEG_INF
        return ops.log1p(-p) if pv < 1.0 else NEG_INF


class Beta(Distribution):
    family = "Beta"
    support = "unit_interval"

    def __init__(self, concentration1, concentration0, shape=None):
        super().__init__(shape, concentration1=concentration1, concentration0=concentration0)

    def _validate(self):
        for name in ("concentration1", "concentration0"):
            _check(self.family, name, self.params[name], lambda v: v > 0.0 and math.isfinite(v), "must be positive")

    def _sample_all(self, rng):
        a = [ops.value(self._param("concentration1", i)) for i in range(self.size)]
        b = [ops.value(self._param("concentration0", i)) for i in range(self.size)]
        return rng.beta(a, b).tolist()

    def _log_prob_one(self, i, x):
        a, b = self._param("concentration1", i), self._param("concentration0", i)
        xv = ops.value(x)
        if not 0.0 <= xv <= 1.0:
            return NEG_INF
        log_norm = ops.lgamma(a) + ops.lgamma(b) - ops.lgamma(a + b)
        if xv == 0.0 or xv == 1.0:
            # density is finite at the boundary only when that concentration is 1
            edge = a if xv == 0.0 else b
            if ops.value(edge) != 1.0:
                return NEG_INF
            return -log_norm
        return (a - 1.0) * ops.log(x) + (b - 1.0) * ops.log1p(-x) - log_norm


class Categorical(Distribution):
    """Categorical over ``range(len(logits))``; the batch replicates one logit vector."""

    family = "Categorical"
    support = "categorical"
    discrete = True

    def __init__(self, logits: Sequence, shape=None):
        logits = _as_param(logits)
        if not _is_seq(logits) or len(logits) == 0:
            raise ParameterError(self.family, "logits", "must be a non-empty vector")
        self.logits = list(logits)
        _check(self.family, "logits", self.logits, math.isfinite, "must be finite")
        self.params = {"logits": self.logits}
        self.batch_shape = _resolve_batch(self.family, {}, shape)

    def _sample_all(self, rng):
        lv = [ops.value(v) for v in self.logits]
        m = max(lv)
        w = [math.exp(v - m) for v in lv]
        cdf = np.cumsum(w) / sum(w)
        u = rng.random(self.size)
        return [int(min(np.searchsorted(cdf, ui, side="right"), len(w) - 1)) for ui in u]

    def _log_prob_one(self, i, x):
        x = ops.value(x)
        k = len(self.logits)
        if x != int(x) or not 0 <= x < k:
            return NEG_INF
        return self.logits[int(x)] - ops.log_sum_exp(self.logits)


class Uniform(Distribution):
    """Uniform on the half-open interval [low, high)."""

    family = "Uniform"
    support = "interval"

    def __init__(self, low, high, shape=None):
        super().__init__(shape, low=low, high=high)

    def _validate(self):
        lo, hi = self.params["low"], self.params["high"]
        _check(self.family, "low", lo, math.isfinite, "must be finite")
        _check(self.family, "high", hi, math.isfinite, "must be finite")
        for i in range(self.size):
            if not ops.value(self._param("low", i)) < ops.value(self._param("high", i)):
                raise ParameterError(self.family, "high", "must exceed low")

    def _sample_all(self, rng):
        u = rng.random(self.size).tolist()
        out = []
        for i, ui in enumerate(u):
            lo, hi = self._param("low", i), self._param("high", i)
            out.append(lo + (hi - lo) * ui)
        return out

    def _log_prob_one(self, i, x):
        lo, hi = self._param("low", i), self._param("high", i)
        if not ops.value(lo) <= ops.value(x) < ops.value(hi):
            return NEG_INF
        return -ops.log(hi - lo)


class Deterministic(Distribution):
    """Point mass; what an intervention puts in place of a variable's mechanism."""

    family = "Deterministic"
    support = "point"

    def __init__(self, loc):
        loc = _as_param(loc)
        self.params = {"loc": loc}
        self.batch_shape = (len(loc),) if _is_seq(loc) else ()

    def _sample_all(self, rng):
        loc = self.params["loc"]
        return list(loc) if _is_seq(loc) else [loc]

    def _log_prob_one(self, i, x):
        return 0.0 if ops.value(x) == ops.value(self._param("loc", i)) else NEG_INF
