"""Command line interface: simulate, estimate, loglik-grid, bootstrap, selftest."""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, exactsim, inference, likelihood as lk, rng as rngs
from .errors import WFError
from .io import (ConfigError, DataError, cache_header, load_config, load_draws, provenance, read_series,
                 save_draws, write_series)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _write_json(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _frozen_draws(cfg, series, model, threads, cache):
    domain = cfg.domain()
    rho = model.sam_rate(domain)
    header = cache_header(cfg, rho, model.n_loci)
    if cache and os.path.exists(cache):
        draws = load_draws(cache, header, series, model.mutation)
        if draws is not None:
            return draws
    draws = lk.draw_all(series, model, domain, cfg.N, cfg.seed, threads=threads, **cfg.draw_options())
    if cache:
        save_draws(cache, header, draws)
    return draws


def cmd_simulate(args, cfg):
    model = cfg.build_model()
    theta = cfg.true_parameter()
    times = np.arange(cfg.n + 1) * cfg.dt
    stats = exactsim.SimulationStats()
    series = exactsim.simulate_path(model, theta, cfg.x0, times, rngs.stream(cfg.seed, 0, 0, rngs.SIMULATE),
                                    stats=stats, t_min=cfg.t_min, eps=cfg.eps,
                                    small_gap=cfg.bridge_small_gap, approx_small_t=cfg.approx_small_t)
    write_series(args.out, series, provenance(cfg, "simulate"))
    v = series.values
    print(f"n={series.n} loci={series.n_loci} min={v.min():.6g} max={v.max():.6g} "
          f"proposals={sum(stats.proposals)} acceptance={stats.acceptance_rate:.4f} "
          f"approximate_bridge_points={stats.approximate_points}")
    return EXIT_OK


def cmd_estimate(args, cfg):
    series = read_series(args.data)
    model = cfg.build_model()
    _check_loci(series, model)
    draws = _frozen_draws(cfg, series, model, args.threads, args.cache)
    res = inference.estimate_mle(series, model, cfg.domain(), cfg.N, cfg.seed, draws=draws, xtol=cfg.xtol,
                                 max_eval=cfg.max_eval or None)
    out = provenance(cfg, "estimate")
    out.update(res.to_dict())
    out.update({"N": cfg.N, "seed": cfg.seed, "rho": model.sam_rate(cfg.domain()),
                "approximate_bridge_points": res.diagnostics.get("approximate_points", 0),
                "parameter_names": _names(model)})
    _write_json(args.out, out)
    return EXIT_OK if res.converged else EXIT_NUMERIC


def cmd_loglik_grid(args, cfg):
    series = read_series(args.data)
    model = cfg.build_model()
    _check_loci(series, model)
    if model.dim != 1:
        raise ConfigError("loglik-grid supports one-dimensional parameters only")
    try:
        lo, hi, num = args.grid.split(":")
        grid = np.linspace(float(lo), float(hi), int(num))
    except ValueError:
        raise ConfigError(f"--grid: expected lo:hi:num, got {args.grid!r}") from None
    if not all(cfg.domain().contains([g]) for g in grid):
        raise ConfigError("--grid: grid leaves the parameter box")
    draws = _frozen_draws(cfg, series, model, args.threads, args.cache)
    lines = ["# " + json.dumps(provenance(cfg, "loglik-grid"), sort_keys=True), "theta,loglik"]
    for g in grid:
        lines.append(f"{float(g)!r},{lk.log_likelihood(draws, model, g).log_value!r}")
    text = "\n".join(lines) + "\n"
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return EXIT_OK


def cmd_bootstrap(args, cfg):
    series = read_series(args.data)
    model = cfg.build_model()
    _check_loci(series, model)
    unit = args.bootstrap_unit or cfg.bootstrap_unit
    draws = _frozen_draws(cfg, series, model, args.threads, args.cache)
    res = inference.estimate_mle(series, model, cfg.domain(), cfg.N, cfg.seed, draws=draws, xtol=cfg.xtol,
                                 max_eval=cfg.max_eval or None)
    se, reps = inference.bootstrap_se(series, model, cfg.domain(), cfg.N, cfg.B, cfg.seed, draws=draws,
                                      unit=unit, xtol=cfg.xtol, max_eval=cfg.max_eval or None,
                                      threads=args.threads)
    out = provenance(cfg, "bootstrap")
    out.update(res.to_dict())
    out.update({"bootstrap_se": se.tolist(), "B": cfg.B, "unit": unit, "replicates": reps.tolist(),
                "N": cfg.N, "seed": cfg.seed, "parameter_names": _names(model)})
    _write_json(args.out, out)
    return EXIT_OK


def cmd_selftest(args, cfg):
    from .selftest import run

    ok = run(args.level)
    return EXIT_OK if ok else 1


def _names(model):
    return model.parameter_names() if hasattr(model, "parameter_names") else ["theta"]


def _check_loci(series, model):
    if series.n_loci != model.n_loci:
        raise DataError(f"data has {series.n_loci} loci, model expects {model.n_loci}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wfmle", description=__doc__)
    p.add_argument("--version", action="version", version=f"wfmle {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--seed", type=int, help="master seed (WF_SEED takes precedence)")
        sp.add_argument("--N", type=int, help="Monte Carlo samples per increment")
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--approx-small-t", action="store_true",
                        help="allow the approximate ancestral sampler below t_min")
        sp.add_argument("--bridge-small-gap", choices=["approx", "strict"],
                        help="bridge points closer than t_min to a neighbour: approximate or fail")
        sp.add_argument("--out", "-o", default="-")
        if data:
            sp.add_argument("--data", required=True, help="CSV with columns time,x1[,x2,...]")
            sp.add_argument("--cache", help="JSON file holding the frozen draws")

    common(sub.add_parser("simulate", help="simulate a dataset exactly"), data=False)
    common(sub.add_parser("estimate", help="maximum likelihood estimate"))
    g = sub.add_parser("loglik-grid", help="frozen-draw log-likelihood on a grid")
    common(g)
    g.add_argument("--grid", required=True, help="lo:hi:num")
    b = sub.add_parser("bootstrap", help="bootstrap standard errors")
    common(b)
    b.add_argument("--bootstrap-unit", choices=["samples", "observations"])
    s = sub.add_parser("selftest", help="oracle and identity checks")
    s.add_argument("level", nargs="?", choices=["quick", "full"], default="quick")
    return p


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "loglik-grid": cmd_loglik_grid,
            "bootstrap": cmd_bootstrap, "selftest": cmd_selftest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            return cmd_selftest(args, None)
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.N is not None:
            overrides.append(f"N={args.N}")
        if args.approx_small_t:
            overrides.append("approx_small_t=true")
        if args.bridge_small_gap:
            overrides.append(f"bridge_small_gap={args.bridge_small_gap}")
        if os.environ.get("WF_SEED") and args.seed is not None:
            overrides.remove(f"seed={args.seed}")
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except WFError as e:
        print(f"numerical failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
