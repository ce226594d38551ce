"""Reverse-mode automatic differentiation over scalars.

Every differentiable value is a :class:`Scalar`. Operations whose inputs live on
an open :class:`Tape` append a record to it; constants carry no record. Tapes
nest: opening a tape inside another gives it a higher generation, and when the
inner tape closes its records are spliced onto the outer one, so a gradient
computed inside a differentiated function is itself differentiable.

Example::

    >>> gradient(lambda xs: xs[0] * xs[0], [3.0])
    [6.0]
    >>> gradient(lambda xs: gradient(lambda ys: ys[0] ** 3, xs)[0], [2.0])
    [12.0]
"""
from __future__ import annotations

import contextvars
import math
from typing import Callable, Sequence

import numpy as np

from minippl import special


class DomainError(ArithmeticError):
    """An operation was applied outside its domain or produced a non-finite value."""

    def __init__(self, op: str, arg):
        super().__init__(f"{op}: argument {arg!r} is outside the domain")
        self.op = op
        self.arg = arg


_TAPES: contextvars.ContextVar[tuple] = contextvars.ContextVar("minippl_tapes", default=())


class Node:
    """One tape record: the operation kind, its input Scalars and local partials."""

    __slots__ = ("tape", "index", "kind", "args", "partials", "aux")

    def __init__(self, tape, index, kind, args, partials, aux=None):
        self.tape = tape
        self.index = index
        self.kind = kind
        self.args = args
        self.partials = partials
        self.aux = aux


class Scalar:
    """A float64 value plus the record (if any) of the operation that produced it."""

    __slots__ = ("value", "node")

    def __init__(self, value: float, node: Node | None = None):
        self.value = value
        self.node = node

    def __repr__(self) -> str:
        tag = "" if self.node is None else f", {self.node.kind}"
        return f"Scalar({self.value!r}{tag})"

    def __float__(self) -> float:
        return float(self.value)

    def __int__(self) -> int:
        return int(self.value)

    def __index__(self) -> int:
        if not float(self.value).is_integer():
            raise TypeError(f"Scalar {self.value!r} is not integral")
        return int(self.value)

    def __bool__(self) -> bool:
        return self.value != 0.0

    # value equality so discrete draws work in control flow; hashing stays by identity
    def __eq__(self, other):
        if isinstance(other, (Scalar, int, float, np.floating, np.integer)):
            return self.value == _val(other)
        return NotImplemented

    def __ne__(self, other):
        if isinstance(other, (Scalar, int, float, np.floating, np.integer)):
            return self.value != _val(other)
        return NotImplemented

    __hash__ = object.__hash__

    # comparisons look at values only; they drive control flow, not gradients
    def __lt__(self, other):
        return self.value < _val(other)

    def __le__(self, other):
        return self.value <= _val(other)

    def __gt__(self, other):
        return self.value > _val(other)

    def __ge__(self, other):
        return self.value >= _val(other)

    def __add__(self, other):
        other = _lift(other)
        return _record(self.value + other.value, "add", (self, other), (1.0, 1.0))

    def __radd__(self, other):
        return _lift(other).__add__(self)

    def __sub__(self, other):
        other = _lift(other)
        return _record(self.value - other.value, "sub", (self, other), (1.0, -1.0))

    def __rsub__(self, other):
        return _lift(other).__sub__(self)

    def __mul__(self, other):
        other = _lift(other)
        return _record(self.value * other.value, "mul", (self, other), (other.value, self.value))

    def __rmul__(self, other):
        return _lift(other).__mul__(self)

    def __truediv__(self, other):
        other = _lift(other)
        b = other.value
        if b == 0.0:
            raise DomainError("div", b)
        out = self.value / b
        return _record(out, "div", (self, other), (1.0 / b, -out / b))

    def __rtruediv__(self, other):
        return _lift(other).__truediv__(self)

    def __pow__(self, other):
        other = _lift(other)
        a, b = self.value, other.value
        try:
            out = a**b
        except (OverflowError, ZeroDivisionError):
            raise DomainError("pow", (a, b)) from None
        if isinstance(out, complex) or not math.isfinite(out):
            raise DomainError("pow", (a, b))
        da = b * a ** (b - 1.0) if b != 0.0 else 0.0
        db = out * math.log(a) if other.node is not None and a > 0.0 else 0.0
        return _record(out, "pow", (self, other), (da, db))

    def __rpow__(self, other):
        return _lift(other).__pow__(self)

    def __neg__(self):
        return _record(-self.value, "neg", (self,), (-1.0,))

    def __pos__(self):
        return self

    def __abs__(self):
        return -self if self.value < 0.0 else self

    def log(self):
        a = self.value
        if not a > 0.0:
            raise DomainError("log", a)
        return _record(math.log(a), "log", (self,), (1.0 / a,))

    def log1p(self):
        a = self.value
        if not a > -1.0:
            raise DomainError("log1p", a)
        return _record(math.log1p(a), "log1p", (self,), (1.0 / (1.0 + a),))

    def exp(self):
        try:
            out = math.exp(self.value)
        except OverflowError:
            raise DomainError("exp", self.value) from None
        return _record(out, "exp", (self,), (out,))

    def sqrt(self):
        a = self.value
        if not a > 0.0:
            raise DomainError("sqrt", a)
        out = math.sqrt(a)
        return _record(out, "sqrt", (self,), (0.5 / out,))

    def tanh(self):
        out = math.tanh(self.value)
        return _record(out, "tanh", (self,), (1.0 - out * out,))

    def sigmoid(self):
        out = special.sigmoid(self.value)
        return _record(out, "sigmoid", (self,), (out * (1.0 - out),))

    def softplus(self):
        a = self.value
        return _record(special.softplus(a), "softplus", (self,), (special.sigmoid(a),))

    def log_sigmoid(self):
        a = self.value
        return _record(special.log_sigmoid(a), "log_sigmoid", (self,), (special.sigmoid(-a),))

    def lgamma(self):
        a = self.value
        if not a > 0.0:
            raise DomainError("lgamma", a)
        return _record(special.lgamma(a), "lgamma", (self,), (special.digamma(a),))

    def digamma(self):
        a = self.value
        if not a > 0.0:
            raise DomainError("digamma", a)
        return _record(special.digamma(a), "digamma", (self,), (special.trigamma(a),))


def _val(x) -> float:
    return x.value if isinstance(x, Scalar) else x


def _lift(x) -> Scalar:
    if isinstance(x, Scalar):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return Scalar(float(x))
    raise TypeError(f"cannot combine Scalar with {type(x).__name__}")


def constant(x: float) -> Scalar:
    return Scalar(float(x))


def tag(x, label: str, tape: Tape) -> Scalar:
    """Identity record carrying ``label``; provenance searches stop at it."""
    x = _lift(x)
    records = tape.records
    node = Node(tape, len(records), "tag", (x,), (1.0,), label)
    records.append(node)
    return Scalar(x.value, node)


def tags_reaching(values) -> set:
    """Labels of the nearest tag records upstream of ``values``."""
    found = set()
    seen = set()
    stack = [v.node for v in values if isinstance(v, Scalar) and v.node is not None]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node.kind == "tag":
            found.add(node.aux)
            continue
        for a in node.args:
            if a.node is not None:
                stack.append(a.node)
    return found


def _record(value, kind, args, partials, aux=None) -> Scalar:
    tape = None
    gen = 0
    for a in args:
        n = a.node
        if n is not None:
            t = n.tape
            if t.open and t.generation > gen:
                tape = t
                gen = t.generation
    if tape is None:
        return Scalar(value)
    records = tape.records
    node = Node(tape, len(records), kind, args, partials, aux)
    records.append(node)
    return Scalar(value, node)


def _live_tape(args) -> Tape | None:
    tape = None
    gen = 0
    for a in args:
        n = a.node
        if n is not None:
            t = n.tape
            if t.open and t.generation > gen:
                tape = t
                gen = t.generation
    return tape


class _MatvecGroup:
    __slots__ = ("matrix", "args", "has_bias", "start", "buffer")

    def __init__(self, matrix, args, has_bias, start):
        self.matrix = matrix
        self.args = args
        self.has_bias = has_bias
        self.start = start
        self.buffer = None


def matvec(matrix: np.ndarray, vector: Sequence, bias=None) -> list:
    """Rows of ``matrix @ vector + bias`` as Scalars.

    The rows share one input tuple and are swept together with a single
    numpy product, which is what keeps dense regressions cheap.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != len(vector):
        raise ValueError(f"matvec: shape {matrix.shape} incompatible with vector of length {len(vector)}")
    args = tuple(_lift(v) for v in vector)
    if bias is not None:
        args = args + (_lift(bias),)
    values = matrix @ np.array([a.value for a in args[: matrix.shape[1]]], dtype=np.float64)
    if bias is not None:
        values = values + args[-1].value
    tape = _live_tape(args)
    if tape is None:
        return [Scalar(float(v)) for v in values]
    records = tape.records
    start = len(records)
    group = _MatvecGroup(matrix, args, bias is not None, start)
    tape.groups[start] = group
    out = []
    for i, v in enumerate(values.tolist()):
        node = Node(tape, start + i, "matvec", args, None, (group, i))
        records.append(node)
        out.append(Scalar(v, node))
    return out


def add_n(terms: Sequence) -> Scalar | float:
    """Sum of a sequence as one record; plain floats when nothing is traced."""
    terms = list(terms)
    if not any(isinstance(t, Scalar) for t in terms):
        return _fsum_ordered(terms)
    args = tuple(_lift(t) for t in terms)
    total = 0.0
    for a in args:
        total += a.value
    return _record(total, "sum", args, (1.0,) * len(args))


def _fsum_ordered(terms) -> float:
    # left-to-right like the traced path, so both backends agree bit-for-bit
    total = 0.0
    for t in terms:
        total += t
    return total


class Tape:
    """A context-local record of operations, used as a context manager.

    ``with Tape() as tape: x = tape.variable(3.0); y = x * x`` then
    ``tape.gradient(y, [x])`` gives ``[6.0]``.
    """

    def __init__(self):
        self.records: list[Node] = []
        self.groups: dict[int, _MatvecGroup] = {}
        self.generation = 0
        self.parent: Tape | None = None
        self.open = False
        self._token = None

    def __enter__(self) -> Tape:
        stack = _TAPES.get()
        self.parent = stack[-1] if stack else None
        self.generation = len(stack) + 1
        self.open = True
        self._token = _TAPES.set(stack + (self,))
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.reset(self._token)
        self.open = False
        parent = self.parent
        if parent is not None and parent.open:
            offset = len(parent.records)
            for node in self.records:
                node.tape = parent
                node.index += offset
            parent.records.extend(self.records)
            for start, group in self.groups.items():
                group.start = start + offset
                parent.groups[start + offset] = group
            self.records = []
            self.groups = {}

    def variable(self, x) -> Scalar:
        if not self.open:
            raise RuntimeError("variable() needs an open tape")
        records = self.records
        if isinstance(x, Scalar) and x.node is not None:
            node = Node(self, len(records), "lift", (x,), (1.0,))
        else:
            node = Node(self, len(records), "leaf", (), ())
        records.append(node)
        return Scalar(float(_val(x)), node)

    def gradient(self, output, wrt: Sequence[Scalar], create_graph: bool = False) -> list:
        """Derivatives of ``output`` with respect to leaves ``wrt`` of this tape."""
        for w in wrt:
            if w.node is None or w.node.tape is not self:
                raise ValueError("gradient: every wrt entry must be a variable of this tape")
        if create_graph:
            return self._sweep_graph(output, wrt)
        return self._sweep_float(output, wrt)

    def _sweep_float(self, output, wrt) -> list[float]:
        n = output.node if isinstance(output, Scalar) else None
        if n is None or n.tape is not self:
            return [0.0] * len(wrt)
        records = self.records
        adj = [0.0] * len(records)
        adj[n.index] = 1.0
        groups = self.groups
        for i in range(n.index, -1, -1):
            g = adj[i]
            node = records[i]
            if g != 0.0:
                partials = node.partials
                if partials is None:
                    group, row = node.aux
                    if group.buffer is None:
                        group.buffer = np.zeros(group.matrix.shape[0])
                    group.buffer[row] = g
                else:
                    for a, p in zip(node.args, partials):
                        an = a.node
                        if an is not None and an.tape is self:
                            adj[an.index] += g * p
            if groups and i in groups:
                group = groups[i]
                buf = group.buffer
                if buf is not None:
                    group.buffer = None
                    contrib = (buf @ group.matrix).tolist()
                    if group.has_bias:
                        contrib.append(float(buf.sum()))
                    for a, c in zip(group.args, contrib):
                        an = a.node
                        if an is not None and an.tape is self:
                            adj[an.index] += c
        return [adj[w.node.index] for w in wrt]

    def _sweep_graph(self, output, wrt) -> list[Scalar]:
        # adjoints are Scalars so the sweep itself is recorded
        n = output.node if isinstance(output, Scalar) else None
        if n is None or n.tape is not self:
            return [Scalar(0.0) for _ in wrt]
        records = self.records
        adj: list = [None] * len(records)
        adj[n.index] = Scalar(1.0)
        for i in range(n.index, -1, -1):
            g = adj[i]
            if g is None:
                continue
            node = records[i]
            if node.kind == "leaf":
                continue
            for a, p in zip(node.args, _symbolic_partials(node)):
                an = a.node
                if an is None or an.tape is not self:
                    continue
                if isinstance(p, (int, float)) and p == 0.0:
                    continue
                term = g * p
                j = an.index
                adj[j] = term if adj[j] is None else adj[j] + term
        return [adj[w.node.index] if adj[w.node.index] is not None else Scalar(0.0) for w in wrt]


def _symbolic_partials(node: Node) -> tuple:
    kind = node.kind
    args = node.args
    if kind in ("add", "sum", "lift", "tag"):
        return node.partials
    if kind == "sub":
        return (1.0, -1.0)
    if kind == "neg":
        return (-1.0,)
    if kind == "mul":
        return (args[1], args[0])
    if kind == "div":
        a, b = args
        return (1.0 / b, -a / (b * b))
    if kind == "pow":
        a, b = args
        db = a**b * a.log() if b.node is not None else 0.0
        return (b * a ** (b - 1.0) if b.value != 0.0 else 0.0, db)
    a = args[0] if args else None
    if kind == "log":
        return (1.0 / a,)
    if kind == "log1p":
        return (1.0 / (1.0 + a),)
    if kind == "exp":
        return (a.exp(),)
    if kind == "sqrt":
        return (0.5 / a.sqrt(),)
    if kind == "tanh":
        t = a.tanh()
        return (1.0 - t * t,)
    if kind == "sigmoid":
        s = a.sigmoid()
        return (s * (1.0 - s),)
    if kind == "softplus":
        return (a.sigmoid(),)
    if kind == "log_sigmoid":
        return ((-a).sigmoid(),)
    if kind == "lgamma":
        return (a.digamma(),)
    if kind == "matvec":
        group, row = node.aux
        partials = group.matrix[row].tolist()
        if group.has_bias:
            partials.append(1.0)
        return tuple(partials)
    if kind == "digamma":
        raise NotImplementedError("third derivatives of lgamma are not supported")
    raise NotImplementedError(f"no symbolic partials for {kind!r}")


def _outer_tape_open() -> bool:
    return bool(_TAPES.get())


def value_and_gradient(f: Callable, at: Sequence, create_graph: bool | None = None):
    """Evaluate ``f(xs)`` and its gradient with respect to the list ``xs``.

    ``create_graph=None`` records the sweep whenever an enclosing tape is
    open, so the result stays differentiable for the caller.
    """
    if create_graph is None:
        create_graph = _outer_tape_open()
    with Tape() as tape:
        xs = [tape.variable(x) for x in at]
        out = f(xs)
        grads = tape.gradient(out, xs, create_graph=create_graph)
    if not create_graph:
        return _val(out), grads
    return out, grads


def gradient(f: Callable, at: Sequence, create_graph: bool | None = None) -> list:
    """Gradient of ``f`` at ``at`` by one reverse sweep; see :func:`value_and_gradient`."""
    return value_and_gradient(f, at, create_graph)[1]


def finite_difference(f: Callable, at: Sequence[float], h: float = 1e-5) -> list[float]:
    """Central differences ``(f(x + h e_i) - f(x - h e_i)) / 2h``; a test oracle."""
    if not h > 0.0:
        raise ValueError("finite_difference: h must be positive")
    x = [float(v) for v in at]
    out = []
    for i in range(len(x)):
        up = list(x)
        down = list(x)
        up[i] += h
        down[i] -= h
        out.append((_val(f(up)) - _val(f(down))) / (2.0 * h))
    return out
