"""Reparameterized variational inference, learning-to-learn, and MCMC-within-VI.

Every routine here is ordinary numerical code over Scalars. Because the VI
loop is written with Scalars and the gradient inside it is taken with
``create_graph`` whenever an outer tape is open, the whole optimization can
itself be differentiated, which is how the preconditioner is learned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from minippl import ops
from minippl.autodiff import DomainError, Scalar, value_and_gradient
from minippl.core import DIFFERENTIABLE, Normal, _scoped, as_rng, execution, tracing
from minippl.inference.hmc import DEFAULT_MAX_DEPTH, initial_point, nuts_transition
from minippl.transforms import Alignment, AlignmentError, MissingBindingError, align_bindings, make_log_joint

DEFAULT_FLOOR = 1e-3


class VIDivergenceError(FloatingPointError):
    def __init__(self, step: int, loss):
        super().__init__(f"variational loss became {loss} at step {step}")
        self.step = step
        self.loss = loss


class MeanFieldNormal:
    """Independent Normals ``q(name) = Normal(loc, exp(log_scale))``.

    ``shapes`` maps each variational variable name to ``()`` or ``(n,)``. The
    flat parameter vector holds all locations first, then all log-scales, in
    the order of ``shapes``. Calling the family with a parameter vector runs
    the variational program.
    """

    def __init__(self, shapes: Mapping[str, tuple]):
        self.shapes = {k: tuple(v) for k, v in shapes.items()}
        self.sizes = {k: (v[0] if v else 1) for k, v in self.shapes.items()}
        self.num_latent = sum(self.sizes.values())

    @property
    def num_params(self) -> int:
        return 2 * self.num_latent

    def init(self, loc: float = 0.0, scale: float = 1.0) -> np.ndarray:
        return np.concatenate([np.full(self.num_latent, float(loc)), np.full(self.num_latent, math.log(scale))])

    def _split(self, phi):
        out, k = {}, 0
        for name, size in self.sizes.items():
            locs = list(phi[k : k + size])
            log_scales = list(phi[self.num_latent + k : self.num_latent + k + size])
            out[name] = (locs, log_scales)
            k += size
        return out

    def __call__(self, phi):
        for name, (locs, log_scales) in self._split(phi).items():
            scales = [ops.exp(s) for s in log_scales]
            if self.shapes[name]:
                Normal(locs, scales, name=name)
            else:
                Normal(locs[0], scales[0], name=name)

    def describe(self, phi) -> dict:
        """Location and scale per variable as floats."""
        out = {}
        for name, (locs, log_scales) in self._split(phi).items():
            loc = [float(ops.value(v)) for v in locs]
            scale = [math.exp(float(ops.value(v))) for v in log_scales]
            out[name] = {"loc": loc if self.shapes[name] else loc[0], "scale": scale if self.shapes[name] else scale[0]}
        return out


def sample_variational(variational: Callable, phi, rng) -> tuple[dict, object]:
    """Run ``variational(phi)`` (or ``variational()`` if ``phi`` is None) once.

    Returns the drawn values by name and the summed log-density of the draws.
    """
    values: dict = {}
    terms: list = []

    def tracer(constructor, *args, **kwargs):
        rv = constructor(*args, **kwargs)
        values[rv.name] = rv.value
        lp = rv.distribution.log_prob(rv.value)
        terms.append(ops.total(lp) if isinstance(lp, list) else lp)
        return rv

    with _scoped(rng=as_rng(rng), backend=DIFFERENTIABLE), execution(), tracing(tracer):
        if phi is None:
            variational()
        else:
            variational(phi)
    return values, ops.total(terms)


def _log_joint_of(model):
    return model if hasattr(model, "last_names") else make_log_joint(model)


def elbo_samples(model, variational, alignment: Alignment, data: Mapping, rng, n_mc: int = 1, phi=None, model_args: Sequence = ()) -> list:
    """Per-draw ``log p(aligned bindings) - log q(draw)``; their mean is the ELBO."""
    if n_mc < 1:
        raise ValueError("n_mc must be at least 1")
    log_joint = _log_joint_of(model)
    rng = as_rng(rng)
    out = []
    for _ in range(n_mc):
        q_values, log_q = sample_variational(variational, phi, rng)
        bindings = align_bindings(alignment.keys(), alignment, q_values, data)
        try:
            log_p = log_joint(bindings, *model_args)
        except MissingBindingError as err:
            raise AlignmentError("model variables missing from the alignment", [err.name]) from None
        out.append(log_p - log_q)
    return out


def elbo_loss(model, variational, alignment: Alignment, data: Mapping, rng, n_mc: int = 1, phi=None, model_args: Sequence = ()):
    """Negative reparameterized ELBO averaged over ``n_mc`` draws.

    Differentiable in ``phi`` when ``phi`` holds Scalars: each latent draw is
    ``loc + scale * noise`` so gradients flow through both log-densities.
    """
    terms = elbo_samples(model, variational, alignment, data, rng, n_mc, phi, model_args)
    return -ops.total(terms) / n_mc


@dataclass
class ViState:
    params: list
    preconditioner: list
    learning_rate: float
    step: int = 0
    average: list | None = None  # tail average of the iterates, as floats

    def values(self) -> np.ndarray:
        return np.array([float(ops.value(p)) for p in self.params])


def vi_train(
    model,
    variational,
    alignment: Alignment,
    data: Mapping,
    preconditioner,
    steps: int,
    lr: float,
    rng,
    phi0=None,
    n_mc: int = 1,
    model_args: Sequence = (),
    average_tail: float = 0.0,
) -> tuple[ViState, object]:
    """Preconditioned gradient descent ``phi <- phi - lr * P * grad`` on the loss.

    Each step draws fresh noise from ``rng``. The returned loss is a fresh
    estimate at the final parameters, so it reflects the result of training.
    When called inside an open tape with Scalar preconditioner entries the
    inner gradients are recorded and the returned loss is differentiable in
    the preconditioner.

    ``average_tail`` in (0, 1] also keeps the mean of the iterates over that
    final fraction of the steps (Polyak-Ruppert averaging), which is far less
    noisy than the last iterate under single-draw gradients.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if not lr > 0.0:
        raise ValueError("lr must be positive")
    log_joint = _log_joint_of(model)
    rng = as_rng(rng)
    phi = list(phi0) if phi0 is not None else list(variational.init())
    phi = [p if isinstance(p, Scalar) else float(p) for p in phi]
    precond = [p if isinstance(p, Scalar) else float(p) for p in preconditioner]
    if not 0.0 <= average_tail <= 1.0:
        raise ValueError("average_tail must lie in [0, 1]")
    tail_start = steps - int(round(average_tail * steps)) if average_tail else steps + 1
    tail_sum = np.zeros(len(phi))
    if len(precond) != len(phi):
        raise ValueError(f"preconditioner has {len(precond)} entries for {len(phi)} parameters")

    def loss_at(params):
        return elbo_loss(log_joint, variational, alignment, data, rng, n_mc, params, model_args)

    for step in range(steps):
        try:
            loss, grad = value_and_gradient(loss_at, phi)
        except DomainError as err:
            raise VIDivergenceError(step, f"undefined ({err})") from err
        if not math.isfinite(ops.value(loss)):
            raise VIDivergenceError(step, ops.value(loss))
        phi = [p - lr * c * g for p, c, g in zip(phi, precond, grad)]
        if step >= tail_start:
            tail_sum += [float(ops.value(p)) for p in phi]
    try:
        final = loss_at(phi)
    except DomainError as err:
        raise VIDivergenceError(steps, f"undefined ({err})") from err
    if not math.isfinite(ops.value(final)):
        raise VIDivergenceError(steps, ops.value(final))
    average = (tail_sum / (steps - tail_start)).tolist() if tail_start < steps else None
    return ViState(phi, precond, lr, steps, average), final


def meta_loss_and_gradient(model, variational, alignment, data, preconditioner, inner_steps, inner_lr, seed, phi0=None, n_mc=1, model_args=()):
    """Final inner loss and its gradient with respect to the preconditioner.

    The inner loop is unrolled on a tape and differentiated end to end; the
    inner noise comes from ``seed`` so repeated calls see the same draws.
    """

    def meta(precond):
        _, loss = vi_train(model, variational, alignment, data, precond, inner_steps, inner_lr, np.random.default_rng(seed), phi0, n_mc, model_args)
        return loss

    loss, grad = value_and_gradient(meta, [float(p) for p in preconditioner], create_graph=False)
    return float(loss), np.asarray(grad, dtype=np.float64)


def inner_loss(model, variational, alignment, data, preconditioner, inner_steps, inner_lr, seed, phi0=None, n_mc=1, model_args=()) -> float:
    _, loss = vi_train(model, variational, alignment, data, [float(p) for p in preconditioner], inner_steps, inner_lr, np.random.default_rng(seed), phi0, n_mc, model_args)
    return float(ops.value(loss))


@dataclass
class PreconditionerResult:
    preconditioner: np.ndarray
    loss: float
    initial_loss: float
    history: list


def learn_preconditioner(
    model,
    variational,
    alignment: Alignment,
    data: Mapping,
    outer_steps: int,
    outer_lr: float,
    inner_steps: int,
    inner_lr: float,
    rng=0,
    phi0=None,
    init=None,
    floor: float = DEFAULT_FLOOR,
    n_mc: int = 1,
    model_args: Sequence = (),
) -> PreconditionerResult:
    """Learn a diagonal preconditioner by gradient descent through VI.

    One inner seed is drawn from ``rng`` and reused at every outer step, so
    the outer objective is a deterministic function of the preconditioner.
    Entries are clipped at ``floor`` after each update. The best
    preconditioner seen (the starting one included) is returned, so the
    result never does worse than the start on this objective.
    """
    if inner_steps < 1:
        raise ValueError("inner_steps must be at least 1")
    if outer_steps < 0:
        raise ValueError("outer_steps must be non-negative")
    seed = int(as_rng(rng).integers(2**63))
    n = len(phi0) if phi0 is not None else variational.num_params
    precond = np.ones(n) if init is None else np.asarray(init, dtype=np.float64).copy()
    args = (model, variational, alignment, data)
    loss, grad = meta_loss_and_gradient(*args, precond, inner_steps, inner_lr, seed, phi0, n_mc, model_args)
    best, best_loss, initial = precond.copy(), loss, loss
    history = [loss]
    for _ in range(outer_steps):
        precond = np.maximum(precond - outer_lr * grad, floor)
        loss, grad = meta_loss_and_gradient(*args, precond, inner_steps, inner_lr, seed, phi0, n_mc, model_args)
        history.append(loss)
        if loss <= best_loss:
            best, best_loss = precond.copy(), loss
    return PreconditionerResult(best, best_loss, initial, history)


class ChainedProgram:
    """Draw from a variational program, then move the draw with NUTS.

    ``k`` transitions with a fixed step size target the log-density
    ``log_density(flat)`` over the concatenated variational draws (in
    the order the variational program produces them). ``k = 0`` returns the
    variational draw unchanged.
    """

    def __init__(self, variational, log_density: Callable, k: int, step_size: float, phi=None, max_depth: int = DEFAULT_MAX_DEPTH):
        if k < 0:
            raise ValueError("k must be non-negative")
        if not step_size > 0.0:
            raise ValueError("step_size must be positive")
        self.variational = variational
        self.log_density = log_density
        self.k = k
        self.step_size = step_size
        self.phi = phi
        self.max_depth = max_depth

    def _logp_and_grad(self, theta):
        if hasattr(self.log_density, "logp_and_grad"):
            return self.log_density.logp_and_grad(theta)
        try:
            val, grad = value_and_gradient(self.log_density, np.asarray(theta).tolist(), create_graph=False)
        except (ArithmeticError, ValueError):
            return -math.inf, np.zeros(len(theta))
        return float(val), np.asarray(grad, dtype=np.float64)

    def __call__(self, rng=None) -> dict:
        rng = as_rng(rng)
        q_values = sample_variational(self.variational, self.phi, rng)[0]
        names = list(q_values)
        sizes = [len(v) if isinstance(v, list) else 1 for v in (q_values[n] for n in names)]
        flat = np.array([float(ops.value(x)) for n in names for x in (q_values[n] if isinstance(q_values[n], list) else [q_values[n]])])
        if self.k == 0:
            return {n: ops.value(q_values[n]) for n in names}
        point = initial_point(self._logp_and_grad, flat)
        for _ in range(self.k):
            point = nuts_transition(self._logp_and_grad, point, self.step_size, rng, self.max_depth).point
        out, j = {}, 0
        for n, size in zip(names, sizes):
            vals = point.theta[j : j + size].tolist()
            out[n] = vals if isinstance(q_values[n], list) else vals[0]
            j += size
        return out


def mcmc_within_vi(variational, log_density: Callable, k: int, step_size: float, phi=None, max_depth: int = DEFAULT_MAX_DEPTH) -> ChainedProgram:
    return ChainedProgram(variational, log_density, k, step_size, phi, max_depth)
