"""Command-line entry point: the leapfrog-timing benchmark, small posterior
runs, and demos. Reports are JSON objects with a fixed key order.

Exit codes: 0 on success, 2 on data or usage errors, 3 on sampler failure
(including a flagged divergence storm).
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from minippl.bench import bench_chains, bench_nuts
from minippl.core import run
from minippl.data import load_csv, synth_data
from minippl.demos import DEMOS, run_demo
from minippl.inference.hmc import AdaptationError, InitializationError, NutsConfig, effective_sample_size, nuts_sample
from minippl.inference.potential import Potential
from minippl.models import DataError, DimensionError, beta_bernoulli, conjugate_normal
from minippl.transforms import make_log_joint

EXIT_OK = 0
EXIT_DATA = 2
EXIT_SAMPLER = 3

MODELS = ("logistic", "beta_bernoulli", "conjugate_normal")


def _synthetic(text: str) -> tuple[int, int]:
    try:
        n, d = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N,D such as 5000,54, got {text!r}") from None
    if n < 1 or d < 1:
        raise argparse.ArgumentTypeError("N and D must be at least 1")
    return n, d


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="minippl", description=__doc__.split("\n\n")[0])
    p.add_argument("--model", choices=MODELS, default="logistic")
    p.add_argument("--data", metavar="PATH", help="CSV file for logistic regression (default: synthetic)")
    p.add_argument("--synthetic", type=_synthetic, default=(5000, 54), metavar="N,D")
    p.add_argument("--has-header", action="store_true", help="skip the first line of --data")
    p.add_argument("--label-column", type=int, default=-1, help="label column index, negative counts from the end")
    p.add_argument("--label-rule", default="identity", help="'identity' or a comparison such as '==2'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trajectories", type=int, default=5)
    p.add_argument("--warmup", type=int, default=30)
    p.add_argument("--samples", type=int, default=1000, help="post-warmup draws for non-benchmark models")
    p.add_argument("--mode", choices=("traced", "handwritten", "both"), default="both")
    p.add_argument("--max-depth", type=int, default=10)
    p.add_argument("--step-size", type=float, default=None, help="fixed initial step size")
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--output", metavar="PATH")
    p.add_argument("--demo", choices=DEMOS, metavar="NAME", help=f"run a demo: {', '.join(DEMOS)}")
    return p


def _emit(obj: dict, output: str | None) -> None:
    text = json.dumps(obj, indent=2)
    if output:
        with open(output, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _posterior_run(args, cfg: NutsConfig) -> dict:
    if args.model == "beta_bernoulli":
        entry = beta_bernoulli()
        x = [int(v) for v in run(entry.program, rng=args.seed, backend_name="plain").value]
        data = {"x": x}
        a, b = entry.facts["posterior"](sum(x))
        exact = {"p": {"mean": a / (a + b), "var": a * b / ((a + b) ** 2 * (a + b + 1))}}
    else:
        entry = conjugate_normal()
        data = {"x": entry.facts["observed_x"]}
        exact = {"z": {"mean": entry.facts["posterior_mean"], "var": entry.facts["posterior_var"]}}
    target = Potential.from_entry(entry, make_log_joint(entry.program), data)
    stats = nuts_sample(target, np.zeros(target.dim), cfg)
    draws = [target.constrain(t) for t in stats.samples]
    name = entry.latent[0]
    values = np.array([d[name] for d in draws], dtype=np.float64)
    return {
        "model": args.model,
        "seed": args.seed,
        "num_samples": len(values),
        "posterior_mean": float(values.mean()),
        "posterior_var": float(values.var()),
        "effective_sample_size": effective_sample_size(values),
        "exact": exact[name],
        "divergences": stats.divergences,
        "step_size": stats.step_size,
        "total_leapfrog_steps": stats.total_leapfrog_steps,
    }


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.demo:
        _emit(run_demo(args.demo, args.seed), args.output)
        return EXIT_OK
    if args.trajectories < 1 or args.chains < 1:
        parser.error("--trajectories and --chains must be at least 1")
    try:
        cfg = NutsConfig(
            step_size=args.step_size,
            max_tree_depth=args.max_depth,
            num_warmup=args.warmup,
            num_samples=args.samples,
            seed=args.seed,
        )
    except ValueError as err:
        parser.error(str(err))
    try:
        if args.model != "logistic":
            _emit(_posterior_run(args, cfg), args.output)
            return EXIT_OK
        if args.data:
            data = load_csv(args.data, args.label_column, args.label_rule, args.has_header)
        else:
            n, d = args.synthetic
            data = synth_data(n, d, args.seed)
    except (DataError, DimensionError, OSError, ValueError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    try:
        if args.chains > 1:
            result = bench_chains(data, cfg, args.mode, args.trajectories, args.chains)
            flagged = result["pooled"]["flagged"]
        else:
            report = bench_nuts(data, cfg, args.mode, args.trajectories)
            result, flagged = report.to_dict(), report.flagged
    except (InitializationError, AdaptationError) as err:
        print(f"sampler failure: {err}", file=sys.stderr)
        return EXIT_SAMPLER
    _emit(result, args.output)
    if flagged:
        print("sampler failure: more than half of the trajectories diverged", file=sys.stderr)
        return EXIT_SAMPLER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
