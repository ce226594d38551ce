"""Example programs, each paired with a handwritten log-joint and known facts."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from minippl import ops
from minippl.core import Bernoulli, Beta, Normal
from minippl.distributions import bernoulli_logit_log_mass, normal_log_density


class DimensionError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class ModelZooEntry:
    """A program plus what tests need to check it.

    ``handwritten_log_joint(bindings)`` computes the same density as
    ``make_log_joint(program)(bindings, *args)`` without any tracing; it
    accepts floats or Scalars. ``supports`` gives each latent's support so
    samplers know which bijection to apply.
    """

    name: str
    program: Callable
    handwritten_log_joint: Callable
    latent: list
    observed: list
    args: tuple = ()
    supports: dict = field(default_factory=dict)
    shapes: dict = field(default_factory=dict)
    facts: dict = field(default_factory=dict)

    def __call__(self, *args, **kwargs):
        return self.program(*(args or self.args), **kwargs)


def beta_bernoulli(n: int = 50) -> ModelZooEntry:
    """p ~ Beta(1, 1); x ~ Bernoulli(p) repeated ``n`` times."""

    def program():
        p = Beta(1.0, 1.0, name="p")
        return Bernoulli(probs=p, shape=n, name="x")

    def handwritten(bindings):
        p, x = bindings["p"], bindings["x"]
        k = sum(ops.value(v) for v in x)
        # Beta(1, 1) has unit density on (0, 1)
        return k * ops.log(p) + (n - k) * ops.log1p(-p)

    def posterior(k: int) -> tuple[float, float]:
        return (1.0 + k, 1.0 + n - k)

    return ModelZooEntry(
        "beta_bernoulli", program, handwritten, ["p"], ["x"],
        supports={"p": "unit_interval"}, shapes={"p": (), "x": (n,)},
        facts={"posterior": posterior},
    )


_BRANCH_A = np.array([[1.0, -0.5, 0.25], [0.3, 0.8, -1.1]])
_BRANCH_B = np.array([[0.5, 0.5, 0.0], [-1.0, 0.2, 0.7], [0.0, 1.5, -0.3], [0.9, -0.4, 0.1]])
_BRANCH_NOISE = 0.1


def branching_program() -> ModelZooEntry:
    """A fair coin picks one of two affine decoders of a shared latent code.

    Heads emits a length-2 observation ``out_a``, tails a length-4 ``out_b``,
    so the set of variables in a trace depends on the draw.
    """

    def program():
        coin = Bernoulli(probs=0.5, name="coin")
        z = Normal(0.0, 1.0, shape=3, name="z")
        if coin.value == 1:
            out = Normal(ops.matvec(_BRANCH_A, z.value), _BRANCH_NOISE, name="out_a")
        else:
            out = Normal(ops.matvec(_BRANCH_B, z.value), _BRANCH_NOISE, name="out_b")
        return out.value

    def handwritten(bindings):
        z = bindings["z"]
        total = math.log(0.5)
        for v in z:
            total = total - 0.5 * v * v - 0.5 * math.log(2 * math.pi)
        if ops.value(bindings["coin"]) == 1:
            matrix, out = _BRANCH_A, bindings["out_a"]
        else:
            matrix, out = _BRANCH_B, bindings["out_b"]
        for row, y in zip(matrix, out):
            mean = sum(float(c) * zj for c, zj in zip(row, z))
            r = (y - mean) / _BRANCH_NOISE
            total = total - 0.5 * r * r - math.log(_BRANCH_NOISE) - 0.5 * math.log(2 * math.pi)
        return total

    return ModelZooEntry(
        "branching", program, handwritten, ["z"], ["coin", "out_a", "out_b"],
        supports={"z": "real"}, shapes={"z": (3,)},
    )


def _check_features(features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"features must be a matrix, got shape {x.shape}")
    if x.shape[1] < 1 or x.shape[0] < 1:
        raise DimensionError(f"features need at least one row and one column, got shape {x.shape}")
    return x


def linear_regression(features) -> ModelZooEntry:
    """w ~ Normal(0, 1)^d, b ~ Normal(0, 1), y ~ Normal(Xw + b, 1)."""
    x = _check_features(features)
    n, d = x.shape

    def program(features=x):
        features = _check_features(features)
        if features.shape[1] != d:
            raise DimensionError(f"expected {d} feature columns, got {features.shape[1]}")
        w = Normal(0.0, 1.0, shape=d, name="w")
        b = Normal(0.0, 1.0, name="b")
        return Normal(ops.matvec(features, w.value, b.value), 1.0, name="y")

    def handwritten(bindings):
        w, b, y = bindings["w"], bindings["b"], bindings["y"]
        const = -0.5 * math.log(2 * math.pi)
        total = 0.0
        for wj in w:
            total = total + (-0.5 * wj * wj + const)
        total = total + (-0.5 * b * b + const)
        for i in range(n):
            mean = b
            for j in range(d):
                mean = mean + float(x[i, j]) * w[j]
            r = y[i] - mean
            total = total + (-0.5 * r * r + const)
        return total

    return ModelZooEntry(
        "linear_regression", program, handwritten, ["w", "b"], ["y"], args=(x,),
        supports={"w": "real", "b": "real"}, shapes={"w": (d,), "b": (), "y": (n,)},
    )


def standardize(features: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance per column; constant columns are only centered."""
    x = np.asarray(features, dtype=np.float64)
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    flat = sd == 0.0
    if flat.any():
        warnings.warn(f"constant feature columns left unscaled: {np.flatnonzero(flat).tolist()}", stacklevel=2)
    sd = np.where(flat, 1.0, sd)
    return (x - mean) / sd


def logistic_regression(features, labels, standardize_features: bool = True) -> ModelZooEntry:
    """w ~ Normal(0, 1)^d, b ~ Normal(0, 1), y ~ Bernoulli(logits = Xw + b).

    The handwritten log-joint performs the identical arithmetic as the traced
    program in the identical order, so NUTS chains driven by either agree
    bit-for-bit; only the dispatch differs.
    """
    x = _check_features(features)
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise DimensionError(f"labels shape {y.shape} does not match {x.shape[0]} rows")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be 0 or 1")
    if standardize_features:
        x = standardize(x)
    y = y.astype(int)
    n, d = x.shape

    def program(features=x):
        w = Normal(0.0, 1.0, shape=d, name="w")
        b = Normal(0.0, 1.0, name="b")
        return Bernoulli(logits=ops.matvec(features, w.value, b.value), name="y")

    def handwritten(bindings):
        w, b, labels_ = bindings["w"], bindings["b"], bindings["y"]
        prior_w = ops.total([normal_log_density(wj, 0.0, 1.0) for wj in w])
        prior_b = normal_log_density(b, 0.0, 1.0)
        logits = ops.matvec(x, w, b)
        lik = ops.total([bernoulli_logit_log_mass(yi, li) for yi, li in zip(labels_, logits)])
        return ops.total([prior_w, prior_b, lik])

    return ModelZooEntry(
        "logistic_regression", program, handwritten, ["w", "b"], ["y"], args=(x,),
        supports={"w": "real", "b": "real"}, shapes={"w": (d,), "b": (), "y": (n,)},
        facts={"labels": y.tolist(), "features": x},
    )


CONJUGATE_LOG_MARGINAL = -0.5 * math.log(4.0 * math.pi) - 0.25


def conjugate_normal() -> ModelZooEntry:
    """z ~ N(0, 1), x ~ N(z, 1); given x = 1 the posterior is N(0.5, 0.5)."""

    def program():
        z = Normal(0.0, 1.0, name="z")
        return Normal(z, 1.0, name="x")

    def handwritten(bindings):
        z, x = bindings["z"], bindings["x"]
        r = x - z
        return -0.5 * z * z - 0.5 * r * r - math.log(2 * math.pi)

    return ModelZooEntry(
        "conjugate_normal", program, handwritten, ["z"], ["x"],
        supports={"z": "real"}, shapes={"z": (), "x": ()},
        facts={
            "observed_x": 1.0,
            "posterior_mean": 0.5,
            "posterior_var": 0.5,
            "posterior_sd": math.sqrt(0.5),
            "log_marginal": CONJUGATE_LOG_MARGINAL,
        },
    )
