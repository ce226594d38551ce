"""Program transformations built from tracers: log-joint, intervention, alignment."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

from minippl import distributions as dists
from minippl import ops
from minippl.core import RandomVariable, detached, execution, has_random_source, tracing


class MissingBindingError(KeyError):
    """The model constructed a random variable that the bindings do not cover."""

    def __init__(self, name: str):
        super().__init__(f"no binding for random variable {name!r}")
        self.name = name


class UnusedBindingWarning(UserWarning):
    pass


class AlignmentError(ValueError):
    def __init__(self, message: str, names):
        super().__init__(f"{message}: {sorted(names)}")
        self.names = sorted(names)


class LogJoint:
    """``log_joint(bindings, *model_args)`` -> summed log-density of the model.

    Runs the model under a tracer that pins every random variable to its
    binding and accumulates ``log_prob`` at the pinned value. Control flow in
    the model sees bound values, so which names are required can depend on
    the bindings. Bound Scalars keep their tape records; floats enter as
    constants.
    """

    def __init__(self, model: Callable):
        self.model = model
        self.last_names: list[str] = []

    def __call__(self, bindings: Mapping, *args, **kwargs):
        terms = []
        used = []

        def tracer(constructor, *cargs, **ckwargs):
            name = ckwargs.get("name")
            if constructor.kind == "Deterministic" and name not in bindings:
                return constructor(*cargs, **ckwargs)
            if name not in bindings:
                raise MissingBindingError(name)
            ckwargs["value"] = bindings[name]
            rv = constructor(*cargs, **ckwargs)
            lp = rv.distribution.log_prob(rv.value)
            terms.append(ops.total(lp) if isinstance(lp, list) else lp)
            used.append(name)
            return rv

        with execution(), tracing(tracer):
            self.model(*args, **kwargs)
        self.last_names = used
        unused = set(bindings) - set(used)
        if unused:
            warnings.warn(f"bindings never consumed: {sorted(unused)}", UnusedBindingWarning, stacklevel=2)
        return ops.total(terms)


def make_log_joint(model: Callable) -> LogJoint:
    return LogJoint(model)


@dataclass
class InterventionReport:
    applied: set = field(default_factory=set)
    ignored: set = field(default_factory=set)


class Intervened:
    """``model`` with the named variables' mechanisms replaced by point masses.

    The replacement happens above every lower tracer, so wrapping this program
    in a log-joint scores the mutilated graph: intervened variables contribute
    no density and need no binding. The replaced mechanism still draws from
    the random source, so variables that are not descendants get bit-identical
    values per seed. ``report`` describes the latest run.
    """

    def __init__(self, model: Callable, do: Mapping):
        self.model = model
        self.do = dict(do)
        self.report = InterventionReport()

    def __call__(self, *args, **kwargs):
        applied = set()

        def tracer(constructor, *cargs, **ckwargs):
            name = ckwargs.get("name")
            if name in self.do:
                applied.add(name)
                if "value" not in ckwargs and has_random_source():
                    # draw the replaced mechanism anyway so later variables see
                    # the same random stream as in the unintervened program
                    with detached():
                        constructor(*cargs, **ckwargs)
                value = self.do[name]
                return RandomVariable(dists.Deterministic(value), name, value=value)
            return constructor(*cargs, **ckwargs)

        with tracing(tracer):
            out = self.model(*args, **kwargs)
        self.report = InterventionReport(applied, set(self.do) - applied)
        return out


def intervene(model: Callable, do: Mapping) -> Intervened:
    return Intervened(model, do)


@dataclass
class Alignment:
    """Which variational variable or data key stands in for each model variable.

    ``latent`` pairs prior variables with variational ones, ``observed`` pairs
    observed variables with data keys.
    """

    latent: dict = field(default_factory=dict)
    observed: dict = field(default_factory=dict)

    def __post_init__(self):
        both = set(self.latent) & set(self.observed)
        if both:
            raise AlignmentError("names aligned as both latent and observed", both)

    def keys(self) -> list[str]:
        return list(self.latent) + list(self.observed)


def align_bindings(model_names, alignment: Alignment, q_values: Mapping, data: Mapping) -> dict:
    """Bindings for a log-joint: latents from variational draws, observations from data."""
    model_names = list(model_names)
    uncovered = [n for n in model_names if n not in alignment.latent and n not in alignment.observed]
    if uncovered:
        raise AlignmentError("model variables missing from the alignment", uncovered)
    dangling = [k for k in alignment.keys() if k not in model_names]
    if dangling:
        raise AlignmentError("alignment keys that the model never constructs", dangling)
    bindings = {}
    for name in model_names:
        if name in alignment.latent:
            target = alignment.latent[name]
            if target not in q_values:
                raise AlignmentError(f"variational program produced no {target!r} for", [name])
            bindings[name] = q_values[target]
        else:
            key = alignment.observed[name]
            if key not in data:
                raise AlignmentError(f"data has no key {key!r} for", [name])
            bindings[name] = data[key]
    return bindings
