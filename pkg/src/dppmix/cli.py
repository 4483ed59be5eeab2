"""Command line entry point: ``dppmix fit | prior-sim | analyze``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure.  Errors are reported on stderr as a single line
``dppmix: error: <kind>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, analysis, dpp
from .config import DataError, grid_for, load_config, load_data, parse_config, resolve_window
from .io import FORMAT_VERSION, TraceFormatError, read_traces, write_traces
from .model import ConfigError
from .sampler import McmcSchedule, run_chain
from .sampler_cov import run_chain_cov
from .spectral import ParameterError

logger = logging.getLogger("dppmix")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
OUT_ENV = "DPPMIX_OUT"


def _output_dir(cfg, flag):
    return Path(flag or os.environ.get(OUT_ENV) or cfg.output.dir)


def _dump_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- fit -------------------------------------------------------------------


def _run_one(job):
    cfg, y, X, window, seed, prior_only = job
    sched = McmcSchedule(cfg.schedule.n_burnin, cfg.schedule.n_thin, cfg.schedule.n_keep, seed,
                         cfg.schedule.adapt_target)
    if cfg.kind == "nocov":
        return run_chain(y, cfg.hyper, sched, window, cfg.n_trunc)
    return run_chain_cov(y, X, cfg.cov, sched, window, cfg.n_trunc, flat=prior_only)


def fit(cfg, out, prior_only=False):
    """Run all chains, write the trace files and the summaries; returns the summary dict."""
    if prior_only and cfg.kind == "nocov":
        y_all = load_data(cfg.data)[0] if cfg.data.path else np.zeros(0)
        window = resolve_window(cfg, y_all)
        y, X = np.zeros(0), None
    else:
        y, X = load_data(cfg.data)
        if cfg.kind == "cov" and X is None:
            raise ConfigError("the covariate model needs data.covariates")
        window = resolve_window(cfg, y)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [cfg.schedule.seed + c for c in range(cfg.chains)]
    jobs = [(cfg, y, X, window, s, prior_only) for s in seeds]
    if cfg.chains > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.chains, os.cpu_count() or 1)) as pool:
            traces = list(pool.map(_run_one, jobs))
    else:
        traces = [_run_one(jobs[0])]
    p = 0 if X is None else X.shape[1]
    write_traces(out, traces, p)
    run = {
        "format_version": FORMAT_VERSION,
        "package_version": __version__,
        "kind": cfg.kind,
        "n": int(y.size),
        "p": p,
        "prior_only": bool(prior_only),
        "window": [float(window[0]), float(window[1])],
        "truncation": cfg.n_trunc,
        "seeds": seeds,
        "accept": [{m: list(v) for m, v in sorted(tr.accept.items())} for tr in traces],
        "scales": [tr.scales for tr in traces],
        "config": cfg.source,
        "config_dir": str(Path(cfg.data.base_dir).resolve()),
    }
    _dump_json(out / "run.json", run)
    return analyze(out, cfg, out)


# --- analyze ---------------------------------------------------------------


def _load_run(run_dir):
    path = Path(run_dir) / "run.json"
    try:
        run = json.loads(path.read_text())
    except OSError as exc:
        raise TraceFormatError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"corrupt {path}") from exc
    if run.get("format_version") != FORMAT_VERSION:
        raise TraceFormatError("trace format version mismatch")
    return run


def analyze(run_dir, cfg=None, out=None):
    """Recompute every summary from stored trace files."""
    run_dir = Path(run_dir)
    run = _load_run(run_dir)
    if cfg is None:
        cfg = parse_config(run["config"], base_dir=run["config_dir"])
    out = Path(out) if out is not None else run_dir
    out.mkdir(parents=True, exist_ok=True)
    kind, n, p = run["kind"], run["n"], run["p"]
    traces = read_traces(run_dir, kind, n, p)
    trace = analysis.merge_traces(traces)
    for acc in run["accept"]:
        for move, (a, t) in acc.items():
            tot = trace.accept.setdefault(move, [0, 0])
            tot[0] += a
            tot[1] += t
    ks = analysis.k_summary(trace)
    summary = {
        "kind": kind,
        "n": n,
        "kept": len(trace),
        "chains": len(traces),
        "window": run["window"],
        "k": {
            "mean": ks.mean,
            "var": ks.var,
            "mode": ks.mode,
            "pmf": {str(int(v)): float(q) for v, q in zip(ks.values, ks.pmf)},
        },
        "rho_mean": float(np.mean(trace.rho)),
        "acceptance": {m: (a / t if t else None) for m, (a, t) in sorted(trace.accept.items())},
    }
    with open(out / "k_pmf.csv", "w") as fh:
        fh.write("k,pmf\n")
        for v, q in zip(ks.values, ks.pmf):
            fh.write(f"{int(v)},{float(q)!r}\n")
    if n and not run["prior_only"]:
        y, X = load_data(cfg.data)
        if y.size != n:
            raise TraceFormatError("data size differs from the stored trace")
        part = analysis.binder_partition(trace)
        lp = analysis.lpml(trace, y, X, ordinate=cfg.output.ordinate) if len(trace) > 1 else None
        sse = analysis.mse(trace, y, X, kind=cfg.output.fitted)
        summary.update({
            "mse": sse,
            "root_mse": math.sqrt(sse),
            "lpml": None if lp is None else lp.lpml,
            "lpml_flagged": None if lp is None else int(lp.flagged.sum()),
            "partition": {"n_groups": part.n_groups, "binder_loss": part.loss, "iteration": part.iteration},
            "fitted": cfg.output.fitted,
            "ordinate": cfg.output.ordinate,
        })
        with open(out / "partition.csv", "w") as fh:
            fh.write("item,group\n")
            for i, g in enumerate(part.labels):
                fh.write(f"{i + 1},{int(g)}\n")
        grid = grid_for(cfg, run["window"])
        x_ref = None if X is None else X.mean(axis=0)
        dens = analysis.predictive_density(trace, grid, x_ref, cfg.output.level)
        with open(out / "predictive.csv", "w") as fh:
            fh.write("y,mean,lower,upper\n")
            for row in zip(dens.grid, dens.mean, dens.lower, dens.upper):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        if x_ref is not None:
            summary["predictive_x"] = [float(v) for v in x_ref]
    _dump_json(out / "summary.json", summary)
    return summary


# --- prior-sim -------------------------------------------------------------


def prior_sim(cfg, out, seed):
    """Monte Carlo prior law of ``K`` (unconditioned count) under the prior of ``(rho, nu)``."""
    if cfg.window is not None:
        window = cfg.window
    else:
        window = resolve_window(cfg, load_data(cfg.data)[0])
    hyper = cfg.hyper
    rng = np.random.default_rng(seed)
    draws = cfg.prior_draws
    nu_support = np.array(hyper.nu.support)
    fixed = hyper.rho_fixed is not None and hyper.nu.is_fixed
    counts = np.empty(draws, dtype=np.int64)
    exact_mean = None
    if fixed:
        w = dpp.build_window(hyper.spectral(hyper.rho_fixed, nu_support[0]), window, cfg.n_trunc)
        exact_mean = float(w.phi.sum())
        for start in range(0, draws, 10_000):
            m = min(10_000, draws - start)
            counts[start:start + m] = (rng.random((m, w.phi.size)) < w.phi).sum(axis=1)
    else:
        for i in range(draws):
            nu = float(rng.choice(nu_support))
            if hyper.rho_fixed is not None:
                rho = hyper.rho_fixed
            else:
                rho = hyper.rho_offset(nu) + rng.gamma(hyper.a_rho, 1.0 / hyper.b_rho)
            model = hyper.spectral(rho, nu)
            phi = model.phi_norm(np.abs(np.arange(-cfg.n_trunc, cfg.n_trunc + 1, dtype=float)))
            counts[i] = int(np.sum(rng.random(phi.size) < phi))
    values, freq = np.unique(counts, return_counts=True)
    mean = float(counts.mean())
    var = float(counts.var())
    pos = counts[counts >= 1]
    summary = {
        "draws": draws,
        "window": [float(window[0]), float(window[1])],
        "mean": mean,
        "var": var,
        "se_mean": math.sqrt(var / draws),
        "cond_mean": float(pos.mean()) if pos.size else None,
        "cond_var": float(pos.var()) if pos.size else None,
        "p_zero": float(np.mean(counts == 0)),
        "exact_mean": exact_mean,
        "seed": seed,
    }
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "prior_k.csv", "w") as fh:
        fh.write("k,count,pmf\n")
        for v, c in zip(values, freq):
            fh.write(f"{int(v)},{int(c)},{float(c / draws)!r}\n")
    _dump_json(out / "prior_summary.json", summary)
    return summary


# --- entry point -----------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="dppmix", description="Repulsive mixtures with a DPP prior on locations.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="run the sampler and summarise the chain")
    f.add_argument("--config", required=True)
    f.add_argument("--seed", type=int)
    f.add_argument("--chains", type=int)
    f.add_argument("--prior-only", action="store_true", help="ignore the likelihood (empty data)")
    f.add_argument("--out")

    ps = sub.add_parser("prior-sim", help="Monte Carlo prior distribution of the number of components")
    ps.add_argument("--config", required=True)
    ps.add_argument("--seed", type=int)
    ps.add_argument("--out")

    a = sub.add_parser("analyze", help="recompute summaries from a stored run")
    a.add_argument("run_dir")
    a.add_argument("--config", help="override the configuration stored with the run")
    a.add_argument("--out")
    return parser


def _fail(kind, code, exc):
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"dppmix: error: {kind}: {msg}", file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        if args.command == "analyze":
            cfg = load_config(args.config) if args.config else None
            out = args.out or os.environ.get(OUT_ENV) or args.run_dir
            analyze(args.run_dir, cfg, out)
            return EXIT_OK
        overrides = {"seed": args.seed, "chains": getattr(args, "chains", None)}
        cfg = load_config(args.config, overrides)
        out = _output_dir(cfg, args.out)
        if args.command == "fit":
            fit(cfg, out, prior_only=args.prior_only)
        else:
            prior_sim(cfg, out, cfg.schedule.seed)
    except (ConfigError, ParameterError) as exc:
        return _fail("config", EXIT_CONFIG, exc)
    except (DataError, TraceFormatError) as exc:
        return _fail("data", EXIT_DATA, exc)
    except (dpp.ExistenceError, dpp.DegeneratePriorError, dpp.WindowDomainError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        return _fail("numerical", EXIT_NUMERICAL, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
