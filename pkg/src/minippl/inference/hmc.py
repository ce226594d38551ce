"""Leapfrog integration and the No-U-Turn Sampler with dual-averaging warmup.

NUTS here is the slice-variable form: a slice level ``log u`` is drawn once
per iteration, the trajectory doubles forwards or backwards at random, and
points enter the candidate set when their joint density clears the slice.
Doubling stops on a U-turn, a divergence, or the depth cap.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

DEFAULT_MAX_DEPTH = 10
DEFAULT_MAX_DELTA = 1000.0


class InitializationError(ValueError):
    """The chain's starting point has a non-finite log-density."""


class AdaptationError(RuntimeError):
    """Warmup produced nothing but divergent trajectories."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message}: {diagnostics}")
        self.diagnostics = diagnostics


@dataclass
class NutsConfig:
    step_size: float | None = None  # None: pick one with the doubling heuristic
    max_tree_depth: int = DEFAULT_MAX_DEPTH
    divergence_threshold: float = DEFAULT_MAX_DELTA
    target_accept: float = 0.8
    adapt: bool = True
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75
    num_warmup: int = 500
    num_samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie strictly between 0 and 1")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be at least 1")
        if self.step_size is not None and not self.step_size > 0.0:
            raise ValueError("step_size must be positive")
        if self.num_warmup < 0 or self.num_samples < 0:
            raise ValueError("num_warmup and num_samples must be non-negative")


@dataclass
class ChainStats:
    samples: np.ndarray
    leapfrog_counts: list
    divergences: int
    step_size: float
    step_size_trace: list = field(default_factory=list)
    accept_stats: list = field(default_factory=list)
    tree_depths: list = field(default_factory=list)
    warmup_leapfrog_counts: list = field(default_factory=list)
    warmup_divergences: int = 0
    sampling_time: float = 0.0

    @property
    def total_leapfrog_steps(self) -> int:
        return int(sum(self.leapfrog_counts))

    @property
    def wall_time_per_leapfrog(self) -> float:
        steps = self.total_leapfrog_steps
        return self.sampling_time / steps if steps else math.nan


class LeapfrogResult(NamedTuple):
    theta: np.ndarray
    momentum: np.ndarray
    divergent: bool


def leapfrog(grad_logp: Callable, theta, r, step_size: float) -> LeapfrogResult:
    """One velocity-Verlet step for H = -logp(theta) + r.r/2 (identity mass)."""
    theta = np.asarray(theta, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    r_half = r + 0.5 * step_size * np.asarray(grad_logp(theta), dtype=np.float64)
    theta_new = theta + step_size * r_half
    g = np.asarray(grad_logp(theta_new), dtype=np.float64)
    r_new = r_half + 0.5 * step_size * g
    divergent = not (np.all(np.isfinite(theta_new)) and np.all(np.isfinite(r_new)))
    return LeapfrogResult(theta_new, r_new, divergent)


class _Point(NamedTuple):
    theta: np.ndarray
    r: np.ndarray
    logp: float
    grad: np.ndarray


def _step(logp_and_grad, point: _Point, eps: float) -> _Point:
    # gradient at the start point is cached, so one evaluation per step
    r_half = point.r + 0.5 * eps * point.grad
    theta = point.theta + eps * r_half
    logp, grad = logp_and_grad(theta)
    r = r_half + 0.5 * eps * grad
    return _Point(theta, r, logp, grad)


def _joint(point: _Point) -> float:
    if not math.isfinite(point.logp):
        return -math.inf
    val = point.logp - 0.5 * float(point.r @ point.r)
    return val if math.isfinite(val) else -math.inf


@dataclass
class TreeSummary:
    minus: _Point
    plus: _Point
    proposal: _Point
    n_valid: int
    keep_going: bool
    alpha_sum: float
    n_alpha: int
    n_leapfrog: int
    divergent: bool


def _no_u_turn(minus: _Point, plus: _Point) -> bool:
    span = plus.theta - minus.theta
    return bool(span @ minus.r >= 0.0) and bool(span @ plus.r >= 0.0)


def build_tree(
    logp_and_grad: Callable,
    point: _Point,
    log_u: float,
    direction: int,
    depth: int,
    eps: float,
    joint0: float,
    rng: np.random.Generator,
    max_delta: float = DEFAULT_MAX_DELTA,
) -> TreeSummary:
    """Grow a subtree of 2**depth leapfrog steps from ``point`` in ``direction``.

    ``log_u`` is the slice level and ``joint0`` the joint log-density at the
    start of the iteration (for the acceptance statistic used by adaptation).
    """
    if depth == 0:
        new = _step(logp_and_grad, point, direction * eps)
        joint = _joint(new)
        n_valid = int(log_u <= joint)
        keep_going = joint > log_u - max_delta
        alpha = math.exp(min(0.0, joint - joint0)) if joint > -math.inf else 0.0
        return TreeSummary(new, new, new, n_valid, keep_going, alpha, 1, 1, not keep_going)

    first = build_tree(logp_and_grad, point, log_u, direction, depth - 1, eps, joint0, rng, max_delta)
    if not first.keep_going:
        return first
    edge = first.minus if direction == -1 else first.plus
    second = build_tree(logp_and_grad, edge, log_u, direction, depth - 1, eps, joint0, rng, max_delta)
    minus, plus = (second.minus, first.plus) if direction == -1 else (first.minus, second.plus)
    n_total = first.n_valid + second.n_valid
    proposal = first.proposal
    if n_total > 0 and rng.random() < second.n_valid / n_total:
        proposal = second.proposal
    return TreeSummary(
        minus,
        plus,
        proposal,
        n_total,
        second.keep_going and _no_u_turn(minus, plus),
        first.alpha_sum + second.alpha_sum,
        first.n_alpha + second.n_alpha,
        first.n_leapfrog + second.n_leapfrog,
        first.divergent or second.divergent,
    )


class Transition(NamedTuple):
    point: _Point
    accept_stat: float
    n_leapfrog: int
    depth: int
    divergent: bool


def nuts_transition(
    logp_and_grad: Callable,
    point: _Point,
    eps: float,
    rng: np.random.Generator,
    max_depth: int = DEFAULT_MAX_DEPTH,
    max_delta: float = DEFAULT_MAX_DELTA,
) -> Transition:
    """One NUTS iteration from ``point`` with a fixed step size."""
    r0 = rng.standard_normal(point.theta.shape[0])
    start = _Point(point.theta, r0, point.logp, point.grad)
    joint0 = _joint(start)
    log_u = joint0 - rng.standard_exponential()
    minus = plus = start
    current = point
    n_valid = 1
    depth = 0
    alpha_sum, n_alpha, n_leapfrog = 0.0, 0, 0
    divergent = False
    keep_going = True
    while keep_going and depth < max_depth:
        direction = -1 if rng.random() < 0.5 else 1
        if direction == -1:
            tree = build_tree(logp_and_grad, minus, log_u, -1, depth, eps, joint0, rng, max_delta)
            minus = tree.minus
        else:
            tree = build_tree(logp_and_grad, plus, log_u, 1, depth, eps, joint0, rng, max_delta)
            plus = tree.plus
        alpha_sum += tree.alpha_sum
        n_alpha += tree.n_alpha
        n_leapfrog += tree.n_leapfrog
        divergent = divergent or tree.divergent
        if tree.keep_going and rng.random() < tree.n_valid / n_valid:
            current = tree.proposal
        n_valid += tree.n_valid
        keep_going = tree.keep_going and _no_u_turn(minus, plus)
        depth += 1
    accept = alpha_sum / n_alpha if n_alpha else 0.0
    return Transition(current, accept, n_leapfrog, depth, divergent)


@dataclass
class DualAveragingState:
    mu: float
    h_bar: float = 0.0
    log_eps_bar: float = 0.0


def dual_averaging_update(
    state: DualAveragingState,
    accept_stat: float,
    iteration: int,
    target_accept: float = 0.8,
    gamma: float = 0.05,
    t0: float = 10.0,
    kappa: float = 0.75,
) -> tuple[DualAveragingState, float]:
    """Advance the step-size averages by one warmup iteration (``iteration`` >= 1).

    Returns the new state and the step size to use next; after warmup the
    sampler switches to ``exp(state.log_eps_bar)``.
    """
    if iteration < 1:
        raise ValueError("iteration counts from 1")
    w = 1.0 / (iteration + t0)
    h_bar = (1.0 - w) * state.h_bar + w * (target_accept - accept_stat)
    log_eps = state.mu - math.sqrt(iteration) / gamma * h_bar
    eta = iteration ** (-kappa)
    log_eps_bar = eta * log_eps + (1.0 - eta) * state.log_eps_bar
    return DualAveragingState(state.mu, h_bar, log_eps_bar), math.exp(log_eps)


def find_reasonable_step_size(logp_and_grad: Callable, point: _Point, rng: np.random.Generator, max_iter: int = 100) -> float:
    """Double or halve from 1 until one leapfrog step's acceptance crosses 1/2."""
    eps = 1.0
    r = rng.standard_normal(point.theta.shape[0])
    start = _Point(point.theta, r, point.logp, point.grad)
    joint0 = _joint(start)

    def log_ratio(e):
        return _joint(_step(logp_and_grad, start, e)) - joint0

    lr = log_ratio(eps)
    a = 1.0 if lr > math.log(0.5) else -1.0
    for _ in range(max_iter):
        if not a * lr > -a * math.log(2.0):
            break
        eps = eps * 2.0**a
        lr = log_ratio(eps)
    return eps


def _as_logp_and_grad(target) -> Callable:
    return target.logp_and_grad if hasattr(target, "logp_and_grad") else target


def initial_point(target, theta) -> _Point:
    f = _as_logp_and_grad(target)
    theta = np.asarray(theta, dtype=np.float64)
    logp, grad = f(theta)
    if not math.isfinite(logp) or not np.all(np.isfinite(grad)):
        raise InitializationError(f"log-density at the initial point is {logp}")
    return _Point(theta, np.zeros_like(theta), logp, grad)


def nuts_sample(target, init, cfg: NutsConfig | None = None, rng: np.random.Generator | None = None) -> ChainStats:
    """Run warmup (with optional dual averaging) and then ``num_samples`` draws.

    ``target`` is a :class:`Potential` or any ``theta -> (logp, grad)``
    callable on unconstrained R^dim. ``init=None`` draws a standard normal
    start. Only the post-warmup loop is timed.
    """
    cfg = cfg or NutsConfig()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    f = _as_logp_and_grad(target)
    if init is None:
        dim = target.dim if hasattr(target, "dim") else None
        if dim is None:
            raise ValueError("init=None needs a target that exposes dim")
        init = rng.standard_normal(dim)
    point = initial_point(f, init)

    eps = cfg.step_size if cfg.step_size is not None else find_reasonable_step_size(f, point, rng)
    da = DualAveragingState(mu=math.log(10.0 * eps))
    warm_counts, warm_divergent, eps_trace = [], 0, []
    for m in range(1, cfg.num_warmup + 1):
        tr = nuts_transition(f, point, eps, rng, cfg.max_tree_depth, cfg.divergence_threshold)
        point = tr.point
        warm_counts.append(tr.n_leapfrog)
        warm_divergent += int(tr.divergent)
        if cfg.adapt:
            da, eps = dual_averaging_update(da, tr.accept_stat, m, cfg.target_accept, cfg.gamma, cfg.t0, cfg.kappa)
        eps_trace.append(eps)
    if cfg.num_warmup and warm_divergent == cfg.num_warmup:
        raise AdaptationError(
            "every warmup trajectory diverged",
            {"num_warmup": cfg.num_warmup, "final_step_size": eps, "last_logp": point.logp},
        )
    if cfg.adapt and cfg.num_warmup:
        eps = math.exp(da.log_eps_bar)

    samples = np.empty((cfg.num_samples, point.theta.shape[0]))
    counts, accepts, depths = [], [], []
    divergences = 0
    start = time.perf_counter()
    for i in range(cfg.num_samples):
        tr = nuts_transition(f, point, eps, rng, cfg.max_tree_depth, cfg.divergence_threshold)
        point = tr.point
        samples[i] = point.theta
        counts.append(tr.n_leapfrog)
        accepts.append(tr.accept_stat)
        depths.append(tr.depth)
        divergences += int(tr.divergent)
    elapsed = time.perf_counter() - start
    return ChainStats(
        samples=samples,
        leapfrog_counts=counts,
        divergences=divergences,
        step_size=eps,
        step_size_trace=eps_trace,
        accept_stats=accepts,
        tree_depths=depths,
        warmup_leapfrog_counts=warm_counts,
        warmup_divergences=warm_divergent,
        sampling_time=elapsed,
    )


def effective_sample_size(x) -> float:
    """Single-chain ESS from autocorrelations, truncated at the first
    non-positive sum of adjacent pairs (Geyer's initial positive sequence)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 4:
        return float(n)
    centered = x - x.mean()
    var = centered @ centered / n
    if var == 0.0:
        return float(n)
    spectrum = np.fft.rfft(centered, 2 * n)
    acov = np.fft.irfft(spectrum * np.conj(spectrum))[:n] / n
    rho = acov / var
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0.0:
            break
        tau += 2.0 * pair
    return float(n / max(tau, 1e-12))
