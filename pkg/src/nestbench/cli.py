"""Command-line pipeline: benchmark weights, outperformance overlay,
standalone betas, and synthetic fixture generation.

Every run is deterministic given its inputs and seed; the effective config is
echoed into each JSON sidecar. Exit codes: 0 success, 2 input error, 3 model
error, 4 optimizer non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .benchmark import (
    BenchmarkResult,
    BetaSpec,
    benchmark_weights,
    load_weights_csv,
    make_betas,
    write_weights_csv,
)
from .data_model import (
    load_classification_csv,
    load_returns_csv,
    validate_tree,
    write_classification_csv,
    write_returns_csv,
)
from .errors import InputError, MissingInputFile, ModelError, NoConvergence
from .overlay import make_overlay_problem, residualize, tune_gamma
from .risk_model import ThetaFitConfig, assemble_dense, build_russian_doll, save_model
from .stats_core import sample_covariance
from .synthetic import SyntheticSpec, generate

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_MODEL = 3
EXIT_SOLVER = 4


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "handler"):
        parser.print_help()
        return EXIT_INPUT
    try:
        return args.handler(args)
    except NoConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (InputError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nestbench",
        description="Long-only benchmark weights from a multilevel classification, "
        "plus a bounded dollar-neutral outperformance overlay.",
    )
    parser.add_argument("--config", help="JSON config file; command-line flags override it")
    sub = parser.add_subparsers(dest="command")

    bench = sub.add_parser("benchmark", help="fit the nested model and write benchmark weights")
    _add_model_flags(bench)
    bench.add_argument("--weight-scale", choices=("beta", "sum"),
                       help="normalize weighted betas to 1 (default) or the weights themselves")
    bench.add_argument("--out", help="output directory")
    bench.set_defaults(handler=cmd_benchmark)

    over = sub.add_parser("overlay", help="tune and write the dollar-neutral overlay")
    _add_model_flags(over)
    over.add_argument("--expected-returns", help="CSV ticker,expected_return")
    over.add_argument("--weights", help="benchmark weights CSV (defaults to computing inline)")
    over.add_argument("--constraints", help="comma list of constraint modes")
    over.add_argument("--band-z", type=float, help="bound band as a fraction of benchmark weight")
    over.add_argument("--gamma-max", type=float, help="upper end of the tuning bracket")
    over.add_argument("--tol", type=float, help="relative tolerance of the tuning search")
    over.add_argument("--residualize", action="store_true", default=None,
                      help="regress the signal off the benchmark weights first")
    over.add_argument("--out", help="output directory")
    over.set_defaults(handler=cmd_overlay)

    synth = sub.add_parser("synth", help="generate a synthetic returns/classification fixture")
    synth.add_argument("--n", type=int, help="number of stocks")
    synth.add_argument("--t", type=int, help="number of periods")
    synth.add_argument("--clusters", help="comma list of cluster counts, most granular first")
    synth.add_argument("--rho", help="comma list of within-cluster correlations per level")
    synth.add_argument("--market-rho", type=float, help="correlation across top-level clusters")
    synth.add_argument("--seed", type=int, help="RNG seed")
    synth.add_argument("--out", help="output directory")
    synth.set_defaults(handler=cmd_synth)

    betas = sub.add_parser("betas", help="compute a beta vector on its own")
    betas.add_argument("--returns", help="returns CSV")
    betas.add_argument("--beta-mode", choices=("proportional-to-sigma", "observed-capped", "explicit"))
    betas.add_argument("--index-returns", help="CSV date,value (observed-capped mode)")
    betas.add_argument("--beta-file", help="CSV ticker,beta (explicit mode)")
    betas.add_argument("--kappa-max", type=float)
    betas.add_argument("--kappa-min", type=float)
    betas.add_argument("--out", help="output directory")
    betas.set_defaults(handler=cmd_betas)
    return parser


def _add_model_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--returns", help="returns CSV")
    sub.add_argument("--classification", help="classification CSV")
    sub.add_argument("--beta-mode", choices=("proportional-to-sigma", "observed-capped", "explicit"))
    sub.add_argument("--index-returns", help="CSV date,value (observed-capped mode)")
    sub.add_argument("--beta-file", help="CSV ticker,beta (explicit mode)")
    sub.add_argument("--kappa-max", type=float)
    sub.add_argument("--kappa-min", type=float)
    sub.add_argument("--z-min", type=float)
    sub.add_argument("--z-max", type=float)
    sub.add_argument("--mkt-fac", dest="mkt_fac", action="store_true", default=None)
    sub.add_argument("--no-mkt-fac", dest="mkt_fac", action="store_false", default=None)


_MODEL_DEFAULTS = {
    "beta_mode": "proportional-to-sigma",
    "kappa_max": 1.0,
    "kappa_min": 1.0,
    "z_min": 0.1,
    "z_max": 0.9,
    "mkt_fac": True,
    "index_returns": None,
    "beta_file": None,
    "out": "out",
}

_OVERLAY_DEFAULTS = {
    "constraints": "dollar-neutral",
    "band_z": 0.5,
    "gamma_max": None,
    "tol": 1e-4,
    "residualize": False,
    "weights": None,
    "expected_returns": None,
}

_SYNTH_DEFAULTS = {
    "n": 16,
    "t": 250,
    "clusters": "4",
    "rho": "0.4",
    "market_rho": 0.0,
    "seed": 0,
    "out": "out",
}


def _merge_config(args, defaults: dict) -> dict:
    """defaults < config file < explicit command-line flags."""
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        if not os.path.exists(config_path):
            raise MissingInputFile(config_path)
        with open(config_path, encoding="utf-8") as handle:
            loaded = json.load(handle)
        if not isinstance(loaded, dict):
            raise InputError(f"{config_path}: config must be a JSON object")
        for key, value in loaded.items():
            merged[key.replace("-", "_")] = value
    for key, value in vars(args).items():
        if key in ("handler", "command", "config"):
            continue
        if value is not None:
            merged[key] = value
    return merged


def _build_model(cfg: dict):
    for key in ("returns", "classification"):
        if not cfg.get(key):
            raise InputError(f"missing required input: --{key}")
    panel = load_returns_csv(cfg["returns"])
    tree = load_classification_csv(cfg["classification"], panel)
    for warning in validate_tree(tree, panel):
        print(f"warning: singleton level-{warning.level} cluster {warning.cluster!r}", file=sys.stderr)
    beta = _resolve_beta(cfg, panel)
    cov = sample_covariance(panel)
    theta_cfg = ThetaFitConfig(z_min=float(cfg["z_min"]), z_max=float(cfg["z_max"]))
    model = build_russian_doll(cov, tree, beta, mkt_fac=bool(cfg["mkt_fac"]), cfg=theta_cfg)
    return panel, tree, model


def _resolve_beta(cfg: dict, panel):
    spec_kwargs = {
        "mode": cfg["beta_mode"],
        "kappa_max": float(cfg["kappa_max"]),
        "kappa_min": float(cfg["kappa_min"]),
    }
    index_returns = None
    if cfg["beta_mode"] == "observed-capped":
        if not cfg.get("index_returns"):
            raise InputError("observed-capped beta mode requires --index-returns")
        index_returns = _load_index_returns(cfg["index_returns"], panel)
    elif cfg["beta_mode"] == "explicit":
        if not cfg.get("beta_file"):
            raise InputError("explicit beta mode requires --beta-file")
        spec_kwargs["values"] = _load_beta_file(cfg["beta_file"], panel)
    return make_betas(panel, BetaSpec(**spec_kwargs), index_returns)


def _load_index_returns(path, panel) -> np.ndarray:
    rows = _read_csv_rows(path)
    if not rows or [c.lower() for c in rows[0][:2]] != ["date", "value"]:
        raise InputError(f"{path}: expected header 'date,value'")
    if len(rows) - 1 != panel.n_periods:
        raise InputError(f"{path}: {len(rows) - 1} rows, expected {panel.n_periods} periods")
    values = np.empty(panel.n_periods)
    for s, row in enumerate(rows[1:]):
        if row[0] != panel.dates[s]:
            raise InputError(f"{path}: date {row[0]!r} does not match panel date {panel.dates[s]!r}")
        try:
            values[s] = float(row[1])
        except ValueError:
            raise InputError(f"{path}: non-numeric value on row {s + 1}") from None
    return values


def _load_beta_file(path, panel) -> np.ndarray:
    rows = _read_csv_rows(path)
    if not rows or [c.lower() for c in rows[0][:2]] != ["ticker", "beta"]:
        raise InputError(f"{path}: expected header 'ticker,beta'")
    table = {}
    for row in rows[1:]:
        try:
            table[row[0]] = float(row[1])
        except ValueError:
            raise InputError(f"{path}: non-numeric beta for {row[0]!r}") from None
    missing = [t for t in panel.tickers if t not in table]
    if missing:
        raise InputError(f"{path}: missing betas for {missing[:5]}")
    return np.array([table[t] for t in panel.tickers])


def _load_expected_returns(path, panel) -> np.ndarray:
    rows = _read_csv_rows(path)
    if not rows or [c.lower() for c in rows[0][:2]] != ["ticker", "expected_return"]:
        raise InputError(f"{path}: expected header 'ticker,expected_return'")
    table = {}
    for row in rows[1:]:
        try:
            table[row[0]] = float(row[1])
        except ValueError:
            raise InputError(f"{path}: non-numeric expected return for {row[0]!r}") from None
    missing = [t for t in panel.tickers if t not in table]
    if missing:
        raise InputError(f"{path}: missing expected returns for {missing[:5]}")
    return np.array([table[t] for t in panel.tickers])


def _read_csv_rows(path) -> list[list[str]]:
    if not path or not os.path.exists(path):
        raise MissingInputFile(path)
    with open(path, newline="", encoding="utf-8") as handle:
        return [row for row in csv.reader(handle) if row]


def cmd_benchmark(args) -> int:
    cfg = _merge_config(
        args, {**_MODEL_DEFAULTS, "returns": None, "classification": None, "weight_scale": "beta"}
    )
    panel, tree, model = _build_model(cfg)
    result = benchmark_weights(model)
    if cfg["weight_scale"] not in ("beta", "sum"):
        raise InputError(f"unknown weight scale {cfg['weight_scale']!r}")
    if cfg["weight_scale"] == "sum":
        result = _rescale_to_unit_sum(result)
    outdir = _ensure_outdir(cfg["out"])
    write_weights_csv(os.path.join(outdir, "weights.csv"), result, model)
    save_model(model, os.path.join(outdir, "model.json"))
    sidecar = {
        "sigma_f2": result.sigma_f2,
        "n_stocks": panel.n_stocks,
        "n_periods": panel.n_periods,
        "n_levels": tree.n_levels,
        "cluster_counts": list(tree.cluster_counts),
        "min_weight": float(result.weights.min()),
        "max_weight": float(result.weights.max()),
        "config": _echo(cfg),
    }
    _write_json(os.path.join(outdir, "benchmark.json"), sidecar)
    print(
        f"benchmark: N={panel.n_stocks} P={tree.n_levels} K={tree.cluster_counts} "
        f"sigma_F2={result.sigma_f2:.6g} weights in [{result.weights.min():.6g}, "
        f"{result.weights.max():.6g}]"
    )
    return EXIT_OK


def cmd_overlay(args) -> int:
    cfg = _merge_config(
        args, {**_MODEL_DEFAULTS, **_OVERLAY_DEFAULTS, "returns": None, "classification": None}
    )
    panel, tree, model = _build_model(cfg)
    if cfg.get("weights"):
        tickers, w_star = load_weights_csv(cfg["weights"])
        if tickers != panel.tickers:
            raise InputError("weights CSV tickers do not match the returns panel")
    else:
        w_star = benchmark_weights(model).weights
    if not cfg.get("expected_returns"):
        raise InputError("missing required input: --expected-returns")
    signal = _load_expected_returns(cfg["expected_returns"], panel)
    cov = assemble_dense(model)
    w_star_norm = w_star / w_star.sum()
    if cfg["residualize"]:
        signal = residualize(signal, w_star_norm)
    modes = tuple(m.strip() for m in str(cfg["constraints"]).split(",") if m.strip())
    lower = cfg.get("lower_bounds")
    upper = cfg.get("upper_bounds")
    problem = make_overlay_problem(
        signal,
        cov,
        w_star,
        band=float(cfg["band_z"]),
        lower=None if lower is None else np.asarray(lower, dtype=float),
        upper=None if upper is None else np.asarray(upper, dtype=float),
        modes=modes,
    )
    gamma_max = cfg["gamma_max"]
    result = tune_gamma(problem, None if gamma_max is None else float(gamma_max), tol=float(cfg["tol"]))

    outdir = _ensure_outdir(cfg["out"])
    with open(os.path.join(outdir, "overlay.csv"), "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["ticker", "w_star", "w_prime", "w_combined"])
        for i, ticker in enumerate(panel.tickers):
            writer.writerow(
                [
                    ticker,
                    repr(float(problem.w_star[i])),
                    repr(float(result.w_prime[i])),
                    repr(float(result.combined[i])),
                ]
            )
    sidecar = {
        "gamma_prime_opt": result.gamma_prime,
        "sharpe_zero": result.sharpe_zero,
        "sharpe_opt": result.sharpe_opt,
        "rho": result.rho,
        "bracket_saturated": result.bracket_saturated,
        "active_bounds": len(result.active_lower) + len(result.active_upper),
        "constraint_modes": list(modes),
        "eq_residual": result.eq_residual,
        "config": _echo(cfg),
    }
    _write_json(os.path.join(outdir, "overlay.json"), sidecar)
    print(
        f"overlay: gamma'={result.gamma_prime:.6g} S(0)={result.sharpe_zero:.6g} "
        f"S(opt)={result.sharpe_opt:.6g} saturated={result.bracket_saturated} "
        f"active_bounds={sidecar['active_bounds']}"
    )
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _merge_config(args, dict(_SYNTH_DEFAULTS))
    clusters = _parse_number_list(cfg["clusters"], int, "clusters")
    rho = _parse_number_list(cfg["rho"], float, "rho")
    spec = SyntheticSpec(
        n=int(cfg["n"]),
        t=int(cfg["t"]),
        clusters=tuple(clusters),
        rho=tuple(rho),
        market_rho=float(cfg["market_rho"]),
        seed=int(cfg["seed"]),
    )
    instance = generate(spec)
    outdir = _ensure_outdir(cfg["out"])
    write_returns_csv(instance.panel, os.path.join(outdir, "returns.csv"))
    write_classification_csv(instance.tree, os.path.join(outdir, "classification.csv"))
    _write_json(os.path.join(outdir, "synth.json"), {"config": _echo(cfg)})
    print(
        f"synth: N={spec.n} T={spec.t} clusters={spec.clusters} rho={spec.rho} "
        f"seed={spec.seed} -> {outdir}"
    )
    return EXIT_OK


def cmd_betas(args) -> int:
    cfg = _merge_config(args, {**_MODEL_DEFAULTS, "returns": None})
    if not cfg.get("returns"):
        raise InputError("missing required input: --returns")
    panel = load_returns_csv(cfg["returns"])
    beta = _resolve_beta(cfg, panel)
    outdir = _ensure_outdir(cfg["out"])
    with open(os.path.join(outdir, "betas.csv"), "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["ticker", "beta"])
        for ticker, value in zip(panel.tickers, beta.values):
            writer.writerow([ticker, repr(float(value))])
    _write_json(os.path.join(outdir, "betas.json"), {"config": _echo(cfg)})
    print(f"betas: N={panel.n_stocks} mode={cfg['beta_mode']}")
    return EXIT_OK


def _rescale_to_unit_sum(result: BenchmarkResult) -> BenchmarkResult:
    """Switch from unit weighted betas to unit total weight; the portfolio
    variance picks up the square of the scale."""
    scale = float(result.weights.sum())
    return BenchmarkResult(
        result.tickers,
        result.weights / scale,
        result.sigma_f2 / scale**2,
        result.gamma,
        result.lambdas,
    )


def _parse_number_list(text, kind, name):
    if isinstance(text, (list, tuple)):
        return [kind(x) for x in text]
    try:
        return [kind(part) for part in str(text).split(",") if part.strip() != ""]
    except ValueError:
        raise InputError(f"could not parse --{name} list: {text!r}") from None


def _ensure_outdir(path) -> str:
    if not path:
        raise InputError("missing output directory (--out)")
    os.makedirs(path, exist_ok=True)
    return str(path)


def _echo(cfg: dict) -> dict:
    return {k: v for k, v in sorted(cfg.items())}


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


if __name__ == "__main__":
    raise SystemExit(main())
