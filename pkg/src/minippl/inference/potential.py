"""Flat, unconstrained views of a log-joint for gradient-based samplers."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from minippl import ops
from minippl.autodiff import DomainError, value_and_gradient

_SUPPORTS = ("real", "positive", "unit_interval")


@dataclass(frozen=True)
class LatentSpec:
    name: str
    shape: tuple = ()
    support: str = "real"

    @property
    def size(self) -> int:
        return self.shape[0] if self.shape else 1


def _to_constrained(u, support):
    """Map one unconstrained coordinate; returns (value, log|Jacobian|)."""
    if support == "real":
        return u, 0.0
    if support == "positive":
        return ops.exp(u), u
    if support == "unit_interval":
        return ops.sigmoid(u), ops.log_sigmoid(u) + ops.log_sigmoid(-u)
    raise ValueError(f"unsupported support {support!r}; expected one of {_SUPPORTS}")


def _to_unconstrained(x: float, support: str) -> float:
    if support == "real":
        return x
    if support == "positive":
        return float(np.log(x))
    if support == "unit_interval":
        return float(np.log(x) - np.log1p(-x))
    raise ValueError(f"unsupported support {support!r}")


class Potential:
    """Log-density over a flat unconstrained vector.

    ``log_joint(bindings)`` must accept a dict of latent values (floats or
    Scalars, lists for batched latents) merged with ``data``. Constrained
    latents are reached through fixed bijections and their log-Jacobians are
    added, so the result is a proper density on R^dim.
    """

    def __init__(self, log_joint: Callable, latents: list[LatentSpec], data: Mapping | None = None):
        self.log_joint = log_joint
        self.latents = list(latents)
        self.data = dict(data or {})
        self.dim = sum(s.size for s in self.latents)

    @classmethod
    def from_entry(cls, entry, log_joint: Callable, data: Mapping) -> Potential:
        specs = [LatentSpec(n, tuple(entry.shapes.get(n, ())), entry.supports.get(n, "real")) for n in entry.latent]
        return cls(log_joint, specs, data)

    def _bindings(self, flat):
        bindings = dict(self.data)
        log_jac = []
        k = 0
        for spec in self.latents:
            vals = []
            for u in flat[k : k + spec.size]:
                x, lj = _to_constrained(u, spec.support)
                vals.append(x)
                if spec.support != "real":
                    log_jac.append(lj)
            k += spec.size
            bindings[spec.name] = vals if spec.shape else vals[0]
        return bindings, log_jac

    def log_density(self, flat):
        """Differentiable in ``flat`` when it holds Scalars."""
        bindings, log_jac = self._bindings(flat)
        lp = self.log_joint(bindings)
        return ops.total([lp] + log_jac) if log_jac else lp

    def logp(self, theta) -> float:
        try:
            return float(ops.value(self.log_density([float(t) for t in theta])))
        except DomainError:
            return -np.inf

    def logp_and_grad(self, theta) -> tuple[float, np.ndarray]:
        """Value and gradient as floats; a domain error reads as -inf."""
        try:
            val, grad = value_and_gradient(self.log_density, np.asarray(theta, dtype=np.float64).tolist(), create_graph=False)
        except DomainError:
            return -np.inf, np.zeros(self.dim)
        return float(val), np.asarray(grad, dtype=np.float64)

    def constrain(self, theta) -> dict:
        bindings, _ = self._bindings([float(t) for t in theta])
        return {s.name: ops.value(bindings[s.name]) for s in self.latents}

    def unconstrain(self, values: Mapping) -> np.ndarray:
        out = []
        for spec in self.latents:
            v = values[spec.name]
            vals = list(v) if spec.shape else [v]
            out.extend(_to_unconstrained(float(ops.value(x)), spec.support) for x in vals)
        return np.asarray(out, dtype=np.float64)
