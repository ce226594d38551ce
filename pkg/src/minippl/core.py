"""Random variables, the tracer stack, and execution traces.

A probabilistic program is an ordinary function that builds random variables
through the constructors exported here (``Normal``, ``Bernoulli``, ...). Each
constructor is *traceable*: while a tracer is on the context's stack, building
a random variable calls ``tracer(constructor, *args, **kwargs)`` instead. The
tracer runs with itself popped, so calling ``constructor`` again hands control
to the next tracer down; with an empty stack the constructor just samples.

    def model():
        p = Beta(1.0, 1.0, name="p")
        return Bernoulli(probs=p, shape=50, name="x")

    def force_p(constructor, *args, **kwargs):
        if kwargs["name"] == "p":
            kwargs["value"] = 0.3
        return constructor(*args, **kwargs)

    x = trace(force_p, model, rng=0)
"""
from __future__ import annotations

import contextlib
import contextvars
import dataclasses
import functools
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from minippl import distributions as dists
from minippl import ops
from minippl.autodiff import Scalar, Tape, tag, tags_reaching

DIFFERENTIABLE = "differentiable"
PLAIN = "plain"


class DuplicateNameError(ValueError):
    """Two random variables share a name within one execution."""


class MissingVariableError(KeyError):
    """A name was looked up that the execution never produced."""


class RandomSourceError(RuntimeError):
    """A random variable needed a draw but no random source was supplied."""


@dataclass(frozen=True)
class _State:
    stack: tuple = ()
    backend: str = DIFFERENTIABLE
    names: set | None = None
    rng: np.random.Generator | None = None
    recorder: Callable | None = None


_STATE: contextvars.ContextVar[_State] = contextvars.ContextVar("minippl_state", default=_State())


@contextlib.contextmanager
def _scoped(**changes):
    token = _STATE.set(dataclasses.replace(_STATE.get(), **changes))
    try:
        yield
    finally:
        _STATE.reset(token)


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def stack_depth() -> int:
    return len(_STATE.get().stack)


def current_backend() -> str:
    return _STATE.get().backend


@contextlib.contextmanager
def backend(name: str):
    """Run the enclosed code with random-variable values as Scalars or as floats."""
    if name not in (DIFFERENTIABLE, PLAIN):
        raise ValueError(f"unknown backend {name!r}")
    with _scoped(backend=name):
        yield


@contextlib.contextmanager
def random_source(rng):
    with _scoped(rng=as_rng(rng)):
        yield


@contextlib.contextmanager
def execution():
    """A fresh namespace: names must be unique inside it."""
    with _scoped(names=set()):
        yield


@contextlib.contextmanager
def tracing(tracer: Callable):
    """Push ``tracer`` for the dynamic extent of the block; always pops."""
    state = _STATE.get()
    changes = {"stack": state.stack + (tracer,)}
    if state.names is None:
        changes["names"] = set()
    with _scoped(**changes):
        yield


@contextlib.contextmanager
def detached():
    """No tracers, no name registry and no recorder: constructions inside are
    invisible to the surrounding execution but still draw from its random source."""
    with _scoped(stack=(), names=None, recorder=None):
        yield


def has_random_source() -> bool:
    return _STATE.get().rng is not None


def trace(tracer: Callable, program: Callable, *args, rng=None, **kwargs):
    """Run ``program(*args, **kwargs)`` with ``tracer`` on top of the stack."""
    with contextlib.ExitStack() as stack:
        if rng is not None:
            stack.enter_context(random_source(rng))
        stack.enter_context(tracing(tracer))
        return program(*args, **kwargs)


def run(program: Callable, *args, rng=None, backend_name: str | None = None, **kwargs):
    """Execute a program in its own namespace with an explicit random source."""
    changes: dict = {"names": set()}
    if rng is not None:
        changes["rng"] = as_rng(rng)
    if backend_name is not None:
        changes["backend"] = backend_name
    with _scoped(**changes):
        return program(*args, **kwargs)


def traceable(constructor: Callable) -> Callable:
    """Route calls of ``constructor`` through the active tracer stack."""

    @functools.wraps(constructor)
    def traced(*args, **kwargs):
        state = _STATE.get()
        if not state.stack:
            return constructor(*args, **kwargs)
        tracer = state.stack[-1]
        token = _STATE.set(dataclasses.replace(state, stack=state.stack[:-1]))
        try:
            return tracer(traced, *args, **kwargs)
        finally:
            _STATE.reset(token)

    traced.kind = getattr(constructor, "kind", constructor.__name__)
    return traced


def _unwrap(x):
    if isinstance(x, RandomVariable):
        return x.value
    if isinstance(x, (list, tuple)):
        return [_unwrap(v) for v in x]
    return x


def _to_backend(x, name: str):
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_to_backend(v, name) for v in x]
    if name == PLAIN:
        return ops.value(x)
    if isinstance(x, Scalar):
        return x
    return Scalar(float(x))


class RandomVariable:
    """A named draw: its distribution, realized value and stochastic parents."""

    __slots__ = ("name", "distribution", "value", "ancestors")

    def __init__(self, distribution: dists.Distribution, name: str, value=None, rng=None):
        if not isinstance(name, str) or not name:
            raise ValueError("random variables need a non-empty string name")
        state = _STATE.get()
        if state.names is not None:
            if name in state.names:
                raise DuplicateNameError(f"random variable {name!r} constructed twice in one execution")
            state.names.add(name)
        if value is None:
            source = as_rng(rng) if rng is not None else state.rng
            if source is None:
                raise RandomSourceError(f"no random source to sample {name!r}; pass rng= to run/trace")
            value = distribution.sample(source)
        else:
            value = _unwrap(value)
            if isinstance(value, np.ndarray):
                value = value.tolist()
            shape = distribution.batch_shape
            if shape and (not isinstance(value, (list, tuple)) or len(value) != shape[0]):
                raise ValueError(f"value for {name!r} does not match batch shape {shape}")
            if not shape and isinstance(value, (list, tuple)):
                raise ValueError(f"value for {name!r} must be scalar")
        self.name = name
        self.distribution = distribution
        self.value = _to_backend(value, state.backend)
        self.ancestors: frozenset = frozenset()
        if state.recorder is not None:
            state.recorder(self)

    def log_prob(self, x=None):
        return self.distribution.log_prob(self.value if x is None else x)

    def __repr__(self) -> str:
        return f"RandomVariable({self.name!r}, {self.distribution!r}, value={ops.value(self.value)!r})"

    # scalar-valued variables take part in arithmetic through their value
    def __add__(self, other):
        return self.value + _unwrap(other)

    def __radd__(self, other):
        return _unwrap(other) + self.value

    def __sub__(self, other):
        return self.value - _unwrap(other)

    def __rsub__(self, other):
        return _unwrap(other) - self.value

    def __mul__(self, other):
        return self.value * _unwrap(other)

    def __rmul__(self, other):
        return _unwrap(other) * self.value

    def __truediv__(self, other):
        return self.value / _unwrap(other)

    def __neg__(self):
        return -self.value

    def __float__(self):
        return float(ops.value(self.value))

    def __len__(self):
        return len(self.value)

    def __getitem__(self, i):
        return self.value[i]

    def __iter__(self):
        return iter(self.value)


def _constructor(dist_cls, kind: str):
    def build(*args, name: str, value=None, rng=None, **kwargs):
        dist = dist_cls(*[_unwrap(a) for a in args], **{k: _unwrap(v) for k, v in kwargs.items()})
        return RandomVariable(dist, name, value=value, rng=rng)

    build.__name__ = kind
    build.__qualname__ = kind
    build.__doc__ = f"Traceable {kind} random variable; keywords: name (required), value, rng, shape."
    build.kind = kind
    return traceable(build)


Normal = _constructor(dists.Normal, "Normal")
Bernoulli = _constructor(dists.Bernoulli, "Bernoulli")
Beta = _constructor(dists.Beta, "Beta")
Categorical = _constructor(dists.Categorical, "Categorical")
Uniform = _constructor(dists.Uniform, "Uniform")
Deterministic = _constructor(dists.Deterministic, "Deterministic")


# --- execution traces -------------------------------------------------------


@dataclass
class TraceNode:
    name: str
    distribution: dists.Distribution
    value: Any
    ancestors: frozenset

    @property
    def family(self) -> str:
        return self.distribution.family

    @property
    def params(self) -> dict:
        return self.distribution.snapshot()

    def log_prob(self):
        terms = self.distribution.log_prob(self.value)
        return ops.total(terms) if isinstance(terms, list) else terms


@dataclass
class ExecutionTrace:
    """The random variables of one run, in execution order, with provenance edges."""

    nodes: dict = field(default_factory=dict)
    output: Any = None

    def __contains__(self, name) -> bool:
        return name in self.nodes

    def __getitem__(self, name) -> TraceNode:
        try:
            return self.nodes[name]
        except KeyError:
            raise MissingVariableError(name) from None

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def names(self) -> list[str]:
        return list(self.nodes)

    @property
    def edges(self) -> list[tuple[str, str]]:
        return [(p, n.name) for n in self.nodes.values() for p in sorted(n.ancestors)]

    def children(self, name: str) -> list[str]:
        self[name]
        return [n.name for n in self.nodes.values() if name in n.ancestors]

    def values(self) -> dict:
        return {k: ops.value(n.value) for k, n in self.nodes.items()}


def _flatten(x) -> list:
    if isinstance(x, (list, tuple)):
        return [v for item in x for v in _flatten(item)]
    return [x]


def capture_trace(program: Callable, *args, rng=None, **kwargs) -> ExecutionTrace:
    """Run ``program`` once and reify its random variables as a DAG.

    Each realized value is wrapped in a tagged tape record; the parents of a
    variable are the tags reachable from its distribution's parameters.
    Runs under the differentiable backend so values can carry tags.
    """
    result = ExecutionTrace()
    with Tape() as tape:

        def record(rv: RandomVariable) -> None:
            params = _flatten(list(rv.distribution.params.values()))
            rv.ancestors = frozenset(tags_reaching(params))
            if isinstance(rv.value, list):
                rv.value = [tag(v, rv.name, tape) for v in rv.value]
            else:
                rv.value = tag(rv.value, rv.name, tape)
            result.nodes[rv.name] = TraceNode(rv.name, rv.distribution, rv.value, rv.ancestors)

        changes: dict = {"names": set(), "recorder": record, "backend": DIFFERENTIABLE}
        if rng is not None:
            changes["rng"] = as_rng(rng)
        with _scoped(**changes):
            result.output = program(*args, **kwargs)
    return result


def descendants(trace: ExecutionTrace, name: str) -> set[str]:
    """All variables downstream of ``name`` along provenance edges."""
    trace[name]
    found: set[str] = set()
    frontier = [name]
    while frontier:
        current = frontier.pop()
        for child in trace.children(current):
            if child not in found:
                found.add(child)
                frontier.append(child)
    return found


def factor_terms(trace: ExecutionTrace, name: str):
    """Log-density of ``name`` plus that of every variable it is a parent of."""
    terms = [trace[name].log_prob()]
    terms += [trace[c].log_prob() for c in trace.children(name)]
    return ops.total(terms)
