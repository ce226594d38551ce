"""Small end-to-end runs of the example programs with fixed seeds."""
from __future__ import annotations

import numpy as np

from minippl import ops
from minippl.core import run
from minippl.inference.potential import Potential
from minippl.inference.vi import MeanFieldNormal, learn_preconditioner, mcmc_within_vi, vi_train
from minippl.models import beta_bernoulli, conjugate_normal
from minippl.transforms import Alignment, intervene, make_log_joint

DEMOS = ("beta_bernoulli", "intervene", "vi", "l2l", "mcmc_within_vi")


def _conjugate_setup():
    entry = conjugate_normal()
    q = MeanFieldNormal({"qz": ()})
    alignment = Alignment(latent={"z": "qz"}, observed={"x": "x"})
    return entry, q, alignment, {"x": entry.facts["observed_x"]}


def demo_beta_bernoulli(seed: int = 0) -> dict:
    entry = beta_bernoulli()
    x = run(entry.program, rng=seed, backend_name="plain")
    k = int(sum(x.value))
    a, b = entry.facts["posterior"](k)
    return {"x": [int(v) for v in x.value], "successes": k, "posterior_beta": [a, b], "posterior_mean": a / (a + b)}


def demo_intervene(seed: int = 0, runs: int = 10_000, value: float = 10.0) -> dict:
    entry = conjugate_normal()
    program = intervene(entry.program, {"z": value})
    rng = np.random.default_rng(seed)
    draws = [ops.value(run(program, rng=rng, backend_name="plain").value) for _ in range(runs)]
    return {
        "do": {"z": value},
        "runs": runs,
        "downstream_mean": float(np.mean(draws)),
        "downstream_sd": float(np.std(draws)),
        "applied": sorted(program.report.applied),
    }


def demo_vi(seed: int = 0, steps: int = 2000, lr: float = 0.05, n_mc: int = 4) -> dict:
    entry, q, alignment, data = _conjugate_setup()
    state, loss = vi_train(entry.program, q, alignment, data, np.ones(q.num_params), steps, lr, seed, n_mc=n_mc, average_tail=0.5)
    averaged = q.describe(state.average)["qz"]
    last = q.describe(state.params)["qz"]
    return {
        "q_loc": averaged["loc"],
        "q_scale": averaged["scale"],
        "last_iterate": last,
        "final_loss": float(ops.value(loss)),
        "posterior": {"loc": entry.facts["posterior_mean"], "scale": entry.facts["posterior_sd"]},
    }


def demo_l2l(seed: int = 0, outer_steps: int = 20, outer_lr: float = 0.5, inner_steps: int = 20, inner_lr: float = 0.05) -> dict:
    entry, q, alignment, data = _conjugate_setup()
    result = learn_preconditioner(entry.program, q, alignment, data, outer_steps, outer_lr, inner_steps, inner_lr, rng=seed)
    return {
        "preconditioner": result.preconditioner.tolist(),
        "inner_loss_ones": result.initial_loss,
        "inner_loss_learned": result.loss,
    }


def demo_mcmc_within_vi(seed: int = 0, chains: int = 200, k: int = 25, step_size: float = 0.5) -> dict:
    entry = conjugate_normal()
    q = MeanFieldNormal({"qz": ()})
    target = Potential.from_entry(entry, make_log_joint(entry.program), {"x": entry.facts["observed_x"]})
    rng = np.random.default_rng(seed)
    crude = np.array([mcmc_within_vi(q, target, 0, step_size, phi=q.init())(rng)["qz"] for _ in range(chains)])
    improved = mcmc_within_vi(q, target, k, step_size, phi=q.init())
    moved = np.array([improved(rng)["qz"] for _ in range(chains)])
    return {
        "chains": chains,
        "k": k,
        "q_mean": float(crude.mean()),
        "improved_mean": float(moved.mean()),
        "improved_var": float(moved.var()),
        "posterior": {"mean": entry.facts["posterior_mean"], "var": entry.facts["posterior_var"]},
    }


_RUNNERS = {
    "beta_bernoulli": demo_beta_bernoulli,
    "intervene": demo_intervene,
    "vi": demo_vi,
    "l2l": demo_l2l,
    "mcmc_within_vi": demo_mcmc_within_vi,
}


def run_demo(name: str, seed: int = 0) -> dict:
    if name not in _RUNNERS:
        raise ValueError(f"unknown demo {name!r}; choose from {', '.join(DEMOS)}")
    return {"demo": name, "seed": seed, **_RUNNERS[name](seed)}
