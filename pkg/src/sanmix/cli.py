"""Command-line interface: simulate, fit, summarize, properties, benchmark."""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

import numpy as np

from . import benchmark, cavi, gibbs, priors, simulate, summaries
from .io import (
    dump_json,
    filter_groups,
    load_grouped_csv,
    load_json,
    probit_preprocess,
    write_density_csv,
    write_grouped_csv,
    write_partition_csv,
    write_table,
)
from .kernels import make_rng


class UsageError(Exception):
    """Bad combination of arguments detected after parsing."""


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

RUN_KEYS = {
    "model": str,
    "backend": str,
    "L": int,
    "T": int,
    "K": int,
    "a": float,
    "b": float,
    "alpha_shape": float,
    "alpha_rate": float,
    "alpha_fixed": float,
    "init": str,
    "tol": float,
    "max_iter": int,
    "restarts": int,
    "iterations": int,
    "burn_in": int,
    "thinning": int,
    "seed": int,
    "probit": bool,
    "probit_unit_columns": list,
    "min_size": int,
    "max_size": int,
}

RUN_DEFAULTS = {
    "model": "fisan",
    "backend": "vi",
    "L": 25,
    "T": 20,
    "K": 20,
    "a": 0.05,
    "b": 0.05,
    "alpha_shape": 1.0,
    "alpha_rate": 1.0,
    "alpha_fixed": None,
    "init": "kmeans",
    "tol": 1e-4,
    "max_iter": 1000,
    "restarts": 20,
    "iterations": 10000,
    "burn_in": 2000,
    "thinning": 1,
    "seed": None,
    "probit": False,
    "probit_unit_columns": [],
    "min_size": 1,
    "max_size": None,
}


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="flat JSON run configuration; flags override it")
    p.add_argument("--model", choices=["fisan", "fsan"])
    p.add_argument("--backend", choices=["vi", "gibbs"])
    for key in ("L", "T", "K", "max_iter", "restarts", "iterations", "burn_in", "thinning", "min_size", "max_size"):
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=int)
    for key in ("a", "b", "alpha_shape", "alpha_rate", "alpha_fixed", "tol"):
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=float)
    p.add_argument("--init", choices=["kmeans", "random"])
    p.add_argument("--probit", action="store_true", default=None, help="min-max scale then probit-transform features")
    p.add_argument("--probit-unit-columns", dest="probit_unit_columns", type=lambda t: t.split(","),
                   help="comma-separated columns already in (0,1); scaled with bounds (0, 1)")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sanmix", description="Shared-atoms nested mixtures for grouped data")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic benchmark dataset")
    kind = p.add_mutually_exclusive_group()
    kind.add_argument("--univariate", action="store_true")
    kind.add_argument("--multivariate", action="store_true")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--n", type=int, required=True, help="observations per group")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, default=Path("data.csv"))
    p.add_argument("--truth", type=Path, help="truth JSON path (default: <out>.truth.json)")

    p = sub.add_parser("fit", help="fit a SAN mixture by CAVI or Gibbs sampling")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="state JSON (vi) or chain file (gibbs)")
    p.add_argument("--workers", type=int, default=1, help="processes for concurrent CAVI restarts")
    _add_run_flags(p)

    p = sub.add_parser("summarize", help="partitions, densities and metrics from a fit")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--fit", type=Path, required=True)
    p.add_argument("--truth", type=Path)
    p.add_argument("--out-dir", type=Path, default=Path("."))
    p.add_argument("--grid-points", type=int, default=2000)

    p = sub.add_parser("properties", help="prior correlation, co-clustering and pEPPF values")
    p.add_argument("--model", choices=["fisan", "fsan", "ndp", "cam", "hhdp"], required=True)
    for key in ("alpha", "a", "b", "beta", "beta0"):
        p.add_argument("--" + key, type=float)
    p.add_argument("--K", type=int)
    p.add_argument("--L", type=int)
    p.add_argument("--n1", type=str, help="comma-separated cluster counts of sample 1")
    p.add_argument("--n2", type=str, help="comma-separated cluster counts of sample 2")
    p.add_argument("--mc-draws", type=int, default=0)
    p.add_argument("--gamma-hyper", action="append", default=[], metavar="NAME",
                   help="give parameter NAME a Gamma(1,1) hyperprior in the Monte Carlo estimate")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("benchmark", help="replicated benchmark study")
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--restarts", type=int, default=20)
    p.add_argument("--gibbs-iterations", type=int, default=0)
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--workers", type=int, default=1, help="replications run concurrently in this many processes")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, default=Path("benchmark.csv"))
    return parser


def resolve_run_config(args) -> dict:
    cfg = dict(RUN_DEFAULTS)
    if args.config is not None:
        doc = load_json(args.config)
        unknown = set(doc) - set(RUN_KEYS)
        if unknown:
            raise UsageError(f"unknown configuration keys: {sorted(unknown)}")
        cfg.update(doc)
    for key in RUN_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg["seed"] is None:
        raise UsageError("--seed is required")
    if cfg["model"] not in ("fisan", "fsan") or cfg["backend"] not in ("vi", "gibbs"):
        raise UsageError("model must be fisan|fsan and backend vi|gibbs")
    return cfg


def model_config(cfg: dict):
    if cfg["model"] == "fisan":
        return cavi.FisanConfig(
            L=cfg["L"], T=cfg["T"], b=cfg["b"], alpha_shape=cfg["alpha_shape"],
            alpha_rate=cfg["alpha_rate"], alpha_fixed=cfg["alpha_fixed"], init=cfg["init"],
        )
    return cavi.FsanConfig(K=cfg["K"], L=cfg["L"], a=cfg["a"], b=cfg["b"], init=cfg["init"])


def prepare_data(path: Path, cfg: dict):
    data = load_grouped_csv(path)
    if cfg.get("min_size", 1) > 1 or cfg.get("max_size") is not None:
        data = filter_groups(data, cfg.get("min_size", 1), cfg.get("max_size") or math.inf)
    if cfg.get("probit"):
        unit = set(cfg.get("probit_unit_columns") or [])
        unknown = unit - set(data.columns)
        if unknown:
            raise ValueError(f"unknown probit unit columns: {sorted(unknown)}")
        data = probit_preprocess(data, [(0.0, 1.0) if c in unit else None for c in data.columns])
    return data


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> None:
    rng = make_rng(args.seed)
    if args.multivariate:
        data, truth = simulate.multivariate_benchmark(args.d, args.n, rng)
    else:
        data, truth = simulate.univariate_benchmark(args.n, rng)
    write_grouped_csv(data, args.out)
    truth_path = args.truth or args.out.with_name(args.out.name + ".truth.json")
    dump_json(truth.to_dict(), truth_path)


def cmd_fit(args) -> None:
    cfg = resolve_run_config(args)
    if not args.data.exists():
        raise FileNotFoundError(f"data file not found: {args.data}")
    data = prepare_data(args.data, cfg)
    config = model_config(cfg)
    rng = make_rng(cfg["seed"])
    start = time.perf_counter()
    if cfg["backend"] == "vi":
        result = cavi.fit(data, config, rng, tol=cfg["tol"], max_iter=cfg["max_iter"], restarts=cfg["restarts"],
                            workers=args.workers)
        doc = {"run_config": cfg, "state": result.state.to_dict(), "best_restart": result.best_index,
               "final_elbos": [tr[-1] if tr else None for tr in result.traces]}
        dump_json(doc, args.out)
        extra = {"restart_times": result.run_times}
    else:
        chain = gibbs.run(data, config, cfg["iterations"], cfg["burn_in"], cfg["thinning"], rng)
        chain.meta["run_config"] = cfg
        chain.save(args.out)
        extra = {}
    meta = {"wall_time": time.perf_counter() - start, "finished": time.strftime("%Y-%m-%dT%H:%M:%S"), **extra}
    dump_json(meta, args.out.with_name(args.out.name + ".meta.json"))


def _load_fit(path: Path):
    """(kind, object, run_config) for a VI state JSON or a Gibbs chain file."""
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head == gibbs.CHAIN_MAGIC:
        chain = gibbs.ChainStore.load(path)
        return "gibbs", chain, chain.meta.get("run_config", {})
    doc = load_json(path)
    return "vi", cavi.VariationalState.from_dict(doc["state"]), doc.get("run_config", {})


def cmd_summarize(args) -> None:
    if not args.fit.exists():
        raise FileNotFoundError(f"fit file not found: {args.fit}")
    kind, fitted, cfg = _load_fit(args.fit)
    data = prepare_data(args.data, cfg)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    if kind == "vi":
        s_hat, m_hat = summaries.vi_partition(fitted)
    else:
        s_hat = summaries.mcmc_partition(summaries.psm(fitted, "distributional"), "distributional")
        m_hat = summaries.mcmc_partition(summaries.psm(fitted, "observational"))
    write_partition_csv(out / "partition_distributional.csv", s_hat.labels, data.names)
    write_partition_csv(out / "partition_observational.csv", m_hat.labels)

    truth = simulate.GroundTruth.from_dict(load_json(args.truth)) if args.truth else None
    metrics = []
    if data.d == 1:
        grid = summaries.density_grid(data.y, args.grid_points)
        dens = {}
        for j, name in enumerate(data.names):
            est = summaries.density_vi(fitted, grid, j) if kind == "vi" else summaries.density_mcmc(fitted, grid, j)
            dens[name] = est.values
            if truth is not None:
                f_true = summaries.DensityGrid(grid, truth.group_density(j, grid))
                metrics.append((f"kl_group_{name}", summaries.kl_on_grid(f_true, est)))
        write_density_csv(out / "density.csv", grid, dens)
    if truth is not None:
        metrics.insert(0, ("ari_observational", summaries.ari(truth.M, m_hat)))
        metrics.insert(0, ("ari_distributional", summaries.ari(truth.S, s_hat)))
    write_table(out / "metrics.csv", ["metric", "value"], metrics)


def _parse_counts(text):
    return tuple(int(v) for v in text.split(",")) if text else None


def _family(args):
    m = args.model
    need = {"fisan": ("alpha", "L", "b"), "fsan": ("a", "K", "L", "b"), "ndp": ("alpha", "beta"),
            "cam": ("alpha", "beta"), "hhdp": ("alpha", "beta", "beta0")}[m]
    missing = [k for k in need if getattr(args, k) is None]
    if missing:
        raise UsageError(f"--model {m} requires " + ", ".join("--" + k for k in missing))
    cls = {"fisan": priors.FiSAN, "fsan": priors.FSAN, "ndp": priors.NDP, "cam": priors.CAM, "hhdp": priors.HHDP}[m]
    return cls(**{k: getattr(args, k) for k in need})


def cmd_properties(args) -> None:
    fam = _family(args)
    doc = {"model": args.model, "parameters": {k: v for k, v in vars(fam).items()},
           "correlation": priors.correlation(fam),
           "distributional_cocluster": priors.distributional_cocluster(fam)}
    if isinstance(fam, (priors.FiSAN, priors.FSAN)):
        doc["observational_cocluster"] = priors.cocluster_probs(fam)[1]
    n1, n2 = _parse_counts(args.n1), _parse_counts(args.n2)
    if (n1 is None) != (n2 is None):
        raise UsageError("--n1 and --n2 must be given together")
    if n1 is not None:
        counts = priors.TwoSampleCounts(n1, n2)
        doc["log_peppf"] = priors.peppf(fam, counts)
        doc["peppf"] = math.exp(doc["log_peppf"])
    if args.mc_draws:
        if args.seed is None:
            raise UsageError("--seed is required with --mc-draws")
        hyper = {name: priors.GammaHyper(1.0, 1.0) for name in args.gamma_hyper}
        est, se = priors.mc_correlation(fam, hyper, 0.3, args.mc_draws, make_rng(args.seed))
        doc["mc_correlation"] = {"estimate": est, "std_error": se, "gamma_hyperpriors": sorted(hyper)}
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_benchmark(args) -> None:
    if args.reps < 1 or args.workers < 1:
        raise UsageError("--reps and --workers must be positive")
    task = partial(benchmark.replicate, args.n, args.seed, d=args.d, restarts=args.restarts,
                   gibbs_iterations=args.gibbs_iterations, burn_in=args.burn_in)
    reps = range(args.reps)
    if args.workers == 1:
        results = [task(r) for r in reps]
    else:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(task, reps))
    rows = [row for res in results for row in res.rows()]
    header = ["configuration", "replication", "backend", "ari_dist", "ari_obs", "kl_median", "runtime",
              "peak_state_bytes"]
    write_table(args.out, header, ([r[h] for h in header] for r in rows))


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "summarize": cmd_summarize,
    "properties": cmd_properties,
    "benchmark": cmd_benchmark,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sanmix: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"sanmix {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
