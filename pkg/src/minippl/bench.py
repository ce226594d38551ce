"""Time per leapfrog step for NUTS on Bayesian logistic regression.

Both modes run the same sampler with the same seed. ``traced`` scores the
model through the log-joint transformation; ``handwritten`` calls a
closed-form log-joint that performs identical arithmetic. Chains therefore
agree exactly and only the timing differs.
"""
from __future__ import annotations

import datetime as _dt
import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_expit

from minippl.data import Dataset
from minippl.inference.hmc import NutsConfig, nuts_sample
from minippl.inference.potential import Potential
from minippl.models import logistic_regression
from minippl.transforms import make_log_joint

MODES = ("traced", "handwritten")
DIVERGENCE_STORM = 0.5


@dataclass
class BenchmarkReport:
    model: str
    n: int
    d: int
    mode: str
    num_trajectories: int
    total_leapfrog_steps: int
    leapfrog_counts: list
    time_per_leapfrog_ms: float
    overhead_ratio: float | None
    divergences: int
    flagged: bool
    step_size: float
    samples_sha256: str
    seed: int
    config: dict
    timestamp: str
    modes: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict, repr=False)  # per mode; not serialized

    def to_dict(self) -> dict:
        out = asdict(self)
        del out["samples"]
        return out


def map_estimate(features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Posterior mode of the unit-Normal-prior logistic model, as (w, b)."""
    x1 = np.hstack([features, np.ones((features.shape[0], 1))])
    y = np.asarray(labels, dtype=np.float64)

    def neg(theta):
        logits = x1 @ theta
        val = -(y * log_expit(logits) + (1 - y) * log_expit(-logits)).sum() + 0.5 * theta @ theta
        grad = -x1.T @ (y - 1.0 / (1.0 + np.exp(-logits))) + theta
        return val, grad

    res = minimize(neg, np.zeros(x1.shape[1]), jac=True, method="L-BFGS-B")
    return res.x


def potential_for(entry, mode: str) -> Potential:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    data = {"y": entry.facts["labels"]}
    log_joint = make_log_joint(entry.program) if mode == "traced" else entry.handwritten_log_joint
    return Potential.from_entry(entry, log_joint, data)


def _digest(samples: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(samples, dtype=np.float64).tobytes()).hexdigest()


def _run_mode(data: Dataset, cfg: NutsConfig, mode: str, trajectories: int, init):
    entry = logistic_regression(data.features, data.labels)
    pot = potential_for(entry, mode)
    start = map_estimate(entry.facts["features"], data.labels) if init is None else np.asarray(init, dtype=np.float64)
    run_cfg = NutsConfig(**{**asdict(cfg), "num_samples": trajectories})
    return nuts_sample(pot, start, run_cfg)


def bench_nuts(data: Dataset, cfg: NutsConfig, mode: str = "traced", trajectories: int = 5, init=None) -> BenchmarkReport:
    """Warm up, then time ``trajectories`` NUTS iterations.

    ``mode`` is ``traced``, ``handwritten`` or ``both``. Initialization (the
    posterior mode, unless ``init`` is given) and warmup are not timed.
    With ``both`` the report carries one sub-report per mode, the overhead
    ratio of traced to handwritten time per leapfrog step, and the top-level
    fields describe the traced run.
    """
    if trajectories < 1:
        raise ValueError("trajectories must be at least 1")
    modes = MODES if mode == "both" else (mode,)
    for m in modes:
        if m not in MODES:
            raise ValueError(f"mode must be one of {MODES + ('both',)}, got {mode!r}")
    parts = {}
    for m in modes:
        stats = _run_mode(data, cfg, m, trajectories, init)
        steps = stats.total_leapfrog_steps
        parts[m] = {
            "total_leapfrog_steps": steps,
            "leapfrog_counts": [int(c) for c in stats.leapfrog_counts],
            "time_per_leapfrog_ms": 1000.0 * stats.sampling_time / steps,
            "divergences": stats.divergences,
            "step_size": stats.step_size,
            "samples_sha256": _digest(stats.samples),
            "samples": stats.samples,
        }
    main = parts[modes[0]]
    ratio = None
    if len(modes) == 2:
        ratio = parts["traced"]["time_per_leapfrog_ms"] / parts["handwritten"]["time_per_leapfrog_ms"]
    flagged = any(p["divergences"] > DIVERGENCE_STORM * trajectories for p in parts.values())
    return BenchmarkReport(
        model="logistic_regression",
        n=data.n,
        d=data.d,
        mode=mode,
        num_trajectories=trajectories,
        total_leapfrog_steps=main["total_leapfrog_steps"],
        leapfrog_counts=main["leapfrog_counts"],
        time_per_leapfrog_ms=main["time_per_leapfrog_ms"],
        overhead_ratio=ratio,
        divergences=main["divergences"],
        flagged=flagged,
        step_size=main["step_size"],
        samples_sha256=main["samples_sha256"],
        seed=cfg.seed,
        config={**asdict(cfg), "num_samples": trajectories},
        timestamp=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        modes={m: {k: v for k, v in p.items() if k != "samples"} for m, p in parts.items()} if len(modes) == 2 else {},
        samples={m: p["samples"] for m, p in parts.items()},
    )


def _chain_worker(args):
    data, cfg, mode, trajectories = args
    return bench_nuts(data, cfg, mode, trajectories).to_dict()


def bench_chains(data: Dataset, cfg: NutsConfig, mode: str, trajectories: int, chains: int) -> dict:
    """Run ``chains`` independent benchmarks (seeds ``seed, seed+1, ...``) in
    worker processes and pool their leapfrog accounting."""
    if chains < 1:
        raise ValueError("chains must be at least 1")
    jobs = [(data, NutsConfig(**{**asdict(cfg), "seed": cfg.seed + i}), mode, trajectories) for i in range(chains)]
    with ProcessPoolExecutor(max_workers=chains) as pool:
        reports = list(pool.map(_chain_worker, jobs))
    steps = sum(r["total_leapfrog_steps"] for r in reports)
    weighted = sum(r["time_per_leapfrog_ms"] * r["total_leapfrog_steps"] for r in reports)
    ratios = [r["overhead_ratio"] for r in reports if r["overhead_ratio"] is not None]
    return {
        "model": "logistic_regression",
        "chains": chains,
        "pooled": {
            "total_leapfrog_steps": steps,
            "time_per_leapfrog_ms": weighted / steps,
            "overhead_ratio": float(np.mean(ratios)) if ratios else None,
            "divergences": sum(r["divergences"] for r in reports),
            "flagged": any(r["flagged"] for r in reports),
        },
        "per_chain": reports,
    }

