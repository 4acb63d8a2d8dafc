"""Command line entry point: ``argmax-bayes <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from .credible import (
    band_radii,
    credible_sets_membership,
    envelope_rect,
    induce_mu_M_samples,
    max_interval,
    mode_of_mean,
    unit_vector,
)
from .experiments import (
    M0,
    MU0,
    BAND_DRAWS,
    SINGLE_NOISE,
    STAGE1_DRAWS,
    STAGE1_NOISE,
    ExperimentSpec,
    f0_derivative,
    generate_data,
    monte_carlo,
    select_and_fit,
    stream,
    two_stage_bayes,
)
from .io import ConfigError
from .posterior import NumericalError, marginal_logpost_J

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
THREADS_ENV = "ARGMAX_BAYES_THREADS"

# keys understood by the commands in addition to the experiment fields
CLI_DEFAULTS = {
    "stage": "stage1",  # which design select-j / fit / credible use
    "data_path": None,  # CSV with columns x1, x2, y instead of simulated data
    "band_grid": 101,
    "band_draws": 1000,
    "eval_grid": 51,
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def resolve_config(config_path: Optional[str], overrides: Sequence[str],
                   seed: Optional[int]) -> tuple:
    """Merge file, ``--set`` overrides and ``--seed``; return ``(spec, extras, resolved)``."""
    raw = io.load_config(config_path) if config_path else {}
    for item in overrides:
        key, value = io.parse_override(item)
        raw[key] = value
    if seed is not None:
        raw["master_seed"] = int(seed)
    extras = dict(CLI_DEFAULTS)
    spec_keys = {}
    for key, value in raw.items():
        if key in CLI_DEFAULTS:
            extras[key] = value
        else:
            spec_keys[key] = value
    try:
        spec = ExperimentSpec.from_mapping(spec_keys)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if extras["stage"] not in ("stage1", "single"):
        raise ConfigError("stage must be 'stage1' or 'single'")
    for key in ("band_grid", "band_draws", "eval_grid"):
        if not isinstance(extras[key], int) or extras[key] < 2:
            raise ConfigError(f"{key} must be an integer >= 2")
    resolved = spec.to_dict()
    resolved.update(extras)
    return spec, extras, resolved


def resolve_threads(flag: Optional[int]) -> int:
    if flag is not None:
        value = flag
    else:
        env = os.environ.get(THREADS_ENV)
        if env is None or env.strip() == "":
            return 1
        try:
            value = int(env)
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
    if value < 1:
        raise ConfigError("threads must be >= 1")
    return value


def load_data(spec: ExperimentSpec, extras: dict) -> tuple:
    """``(X, Y, simulated)`` from ``data_path`` or from the simulation design."""
    if extras["data_path"]:
        path = Path(extras["data_path"])
        try:
            header, rows = io.read_csv(path)
        except OSError as exc:
            raise ConfigError(f"cannot read data {path}: {exc}") from exc
        if header != ["x1", "x2", "y"]:
            raise ConfigError("data CSV must have columns x1,x2,y")
        arr = np.array(rows, dtype=float)
        return arr[:, :2], arr[:, 2], False
    key = STAGE1_NOISE if extras["stage"] == "stage1" else SINGLE_NOISE
    X, Y = generate_data(spec, extras["stage"], stream(spec, 0, key))
    return X, Y, True


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _fit(spec, extras):
    X, Y, simulated = load_data(spec, extras)
    fixed = spec.fix_j_stage1 if extras["stage"] == "stage1" else spec.fix_j_single
    sp, selection = select_and_fit(spec, X, Y, fixed)
    return sp, selection, simulated


def cmd_select_j(spec, extras, out: Path, threads: int) -> None:
    X, Y, _ = load_data(spec, extras)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sel = marginal_logpost_J(X, Y, (spec.order, spec.order), spec.j_max, spec.j_min,
                                 sigma_ref_J=spec.sigma_ref_j)
    io.write_csv(out / "scores.csv", ["j1", "j2", "logscore"], sel.rows())
    idx = tuple(sel.counts[k].index(j) for k, j in enumerate(sel.best))
    io.write_json(out / "chosen.json", {
        "J": list(sel.best), "logscore": float(sel.scores[idx]),
        "sigma2": float(sel.sigma2[idx]), "n": int(X.shape[0]),
        "flagged_count": len(sel.flagged)})


def _write_grid(sp, out: Path, resolution: int) -> None:
    lv = np.linspace(0.0, 1.0, resolution)
    vals = sp.mean_surface.on_grid([lv, lv])
    rows = ((x1, x2, vals[i, j]) for i, x1 in enumerate(lv) for j, x2 in enumerate(lv))
    io.write_csv(out / "mean_grid.csv", ["x1", "x2", "value"], rows)


def cmd_fit(spec, extras, out: Path, threads: int) -> None:
    sp, _, _ = _fit(spec, extras)
    io.write_json(out / "posterior.json", sp.summary())
    _write_grid(sp, out, extras["eval_grid"])


def _write_samples(path: Path, blocks) -> None:
    rows = []
    for stage, mu, M in blocks:
        rows.extend((stage, *m, v) for m, v in zip(mu, M))
    io.write_csv(path, ["stage", "mu_1", "mu_2", "M"], rows)


def cmd_credible(spec, extras, out: Path, threads: int) -> None:
    sp, _, simulated = _fit(spec, extras)
    mode = mode_of_mean(sp, spec.mode_grid)
    samples = induce_mu_M_samples(sp, spec.stage1_draws, spec.mode_grid,
                                  stream(spec, 0, STAGE1_DRAWS))
    rs = [unit_vector(sp.d, k) for k in range(sp.d)] + [(0,) * sp.d]
    radii = band_radii(sp, rs, spec.gamma, extras["band_grid"], extras["band_draws"],
                       stream(spec, 0, BAND_DRAWS), spec.rho)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rect = envelope_rect(samples.mu, mode.mu_tilde, spec.rho_n, spec.floor)
    bands = {"gamma": spec.gamma, "rho": spec.rho,
             "radii": [radii[r].as_dict() for r in rs],
             "M_interval": list(max_interval(mode.M_tilde, radii[(0,) * sp.d]))}
    if simulated:
        bands["truth"] = credible_sets_membership(sp, f0_derivative, radii,
                                                  resolution=extras["band_grid"])
        bands["truth"]["rect_contains_mu0"] = rect.contains(MU0)
        lo, hi = bands["M_interval"]
        bands["truth"]["M_interval_contains_M0"] = bool(lo <= M0 <= hi)
    io.write_json(out / "posterior.json", sp.summary())
    io.write_json(out / "mode.json", mode.as_dict())
    io.write_json(out / "rect.json", rect.as_dict())
    io.write_json(out / "bands.json", bands)
    _write_samples(out / "mu_samples.csv", [(1, samples.mu, samples.M)])


def cmd_two_stage(spec, extras, out: Path, threads: int) -> None:
    res = two_stage_bayes(spec, 0)
    io.write_json(out / "rect.json", res.rect.as_dict())
    io.write_json(out / "posterior.json", res.stage1.summary())
    io.write_json(out / "stage2_posterior.json", res.stage2.as_dict())
    s2 = res.stage2_samples
    _write_samples(out / "mu_samples.csv",
                   [(1, res.stage1_samples.mu, res.stage1_samples.M), (2, s2.mu, s2.M)])
    rec = res.record
    io.write_json(out / "summary.json", {
        "mu_tilde_stage1": res.mu_tilde, "M_tilde_stage1": res.M_tilde,
        "mu_hat": rec.mu_hat, "M_hat": rec.M_hat, "err_mu": rec.err_mu, "err_M": rec.err_M,
        "n_total": rec.n_total, "diagnostics": rec.diagnostics,
        "stage2_flags": {"hessian_ok": int(s2.hessian_ok.sum()), "clipped": int(s2.clipped.sum()),
                         "degenerate": int(s2.degenerate.sum()), "count": len(s2)}})


QUANTILE_KEYS = ("count", "mean", "rmse", "min", "whisker_low", "q1", "median", "q3",
                 "whisker_high", "max")


def cmd_replicate(spec, extras, out: Path, threads: int) -> None:
    def progress(done, total):
        step = max(1, total // 20)
        if done % step == 0 or done == total:
            print(f"replicate: {done}/{total} runs", file=sys.stderr, flush=True)

    result = monte_carlo(spec, threads=threads, progress=progress)
    io.write_dict_rows(out / "runs.csv", [r.as_row() for r in result.records])
    io.write_json(out / "summary.json", result.summary)
    rows = []
    for method, stats in result.summary.items():
        for metric in ("err_mu", "err_M"):
            rows.append([method, metric] + [stats[metric][k] for k in QUANTILE_KEYS])
    io.write_csv(out / "quantiles.csv", ["method", "metric", *QUANTILE_KEYS], rows)


COMMANDS = {
    "select-j": cmd_select_j,
    "fit": cmd_fit,
    "credible": cmd_credible,
    "two-stage": cmd_two_stage,
    "replicate": cmd_replicate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="argmax-bayes",
        description="Bayesian estimation of the mode and maximum of a regression surface.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in COMMANDS.items():
        p = sub.add_parser(name, help=(func.__doc__ or "").strip() or None)
        p.add_argument("--config", help="TOML or JSON config file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", default=f"out-{name}", help="output directory")
        p.add_argument("--threads", type=int,
                       help=f"worker processes (default ${THREADS_ENV} or 1)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one config key (repeatable)")
    return parser


cmd_select_j.__doc__ = "score the basis counts and write scores.csv, chosen.json"
cmd_fit.__doc__ = "fit the spline posterior and write posterior.json, mean_grid.csv"
cmd_credible.__doc__ = "mode, band radii and credible rectangle of a fitted surface"
cmd_two_stage.__doc__ = "run the two-stage procedure once"
cmd_replicate.__doc__ = "Monte Carlo comparison of the three methods"


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        spec, extras, resolved = resolve_config(args.config, args.overrides, args.seed)
        threads = resolve_threads(args.threads)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / "resolved_config.json", {"command": args.command, **resolved})
        COMMANDS[args.command](spec, extras, out, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
