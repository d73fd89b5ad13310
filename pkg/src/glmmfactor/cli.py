"""Command-line interface: fit, select, estimate-r, simulate, replicate.

Every command reads a flat JSON config (``--config``), takes its data
from ``--data`` where applicable, and writes artifacts into ``--out``.
Each artifact embeds the config echo, the seed, and the package version
so any output can be regenerated from the file alone.

Exit codes: 0 success (including converged=false fits, which are
reported in the artifact), 2 config error, 3 data validation error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .data import (DataValidationError, GroupedDataset, destandardize_theta,
                   ensure_valid, load_csv, standardize)
from .factor import RankEstimationError, growth_ratio, pseudo_random_effects
from .families import BINOMIAL, GAUSSIAN, POISSON, FamilyError
from .mcecm import FitControl, MStepError, fit_mcecm, initialize
from .penalties import PenaltySpec
from .posterior import SamplerConfig
from .selection import (SelectionError, default_grid, grid_search,
                        lambda_max, prescreen, select_effects)
from .simlab import ScenarioConfig, run_replications, selection_metrics

_FAMILIES = {"binomial": BINOMIAL, "poisson": POISSON, "gaussian": GAUSSIAN}

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _family(cfg):
    name = cfg.get("family", "binomial")
    if name not in _FAMILIES:
        raise ConfigError(f"unknown family {name!r}")
    return _FAMILIES[name]


def _penalty_template(cfg, which) -> PenaltySpec:
    kwargs = {"family": cfg.get("penalty", "mcp"), "pi": cfg.get("pi", 1.0)}
    if cfg.get("gamma") is not None:
        kwargs["gamma"] = cfg["gamma"]
    try:
        return PenaltySpec(lam=float(cfg.get(which, 0.0)), **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _sampler(cfg) -> SamplerConfig:
    keys = ("burn_in", "m_start", "m_increment", "m_max", "m_final",
            "step_size", "adapt_target")
    return SamplerConfig(**{k: cfg[k] for k in keys if k in cfg})


def _control(cfg) -> FitControl:
    keys = ("em_tol", "em_consecutive", "max_em_iter", "mstep_tol",
            "max_mstep_iter")
    return FitControl(**{k: cfg[k] for k in keys if k in cfg})


def _dataset(cfg, data_path) -> GroupedDataset:
    if data_path is None:
        raise ConfigError("--data is required for this command")
    try:
        return load_csv(data_path, response=cfg.get("response", "y"),
                        group=cfg.get("group", "group"),
                        predictors=cfg.get("predictors"),
                        z_columns=cfg.get("z_columns"))
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot load {data_path!r}: {exc}") from exc


def _resolve_r(cfg, data, family):
    mode = cfg.get("r_mode", "fixed")
    if mode == "growth-ratio":
        G = pseudo_random_effects(data, family)
        r_hat, _ = growth_ratio(G, cfg.get("r_max"))
        return int(r_hat)
    r = int(cfg.get("r", 3))
    if r < 1:
        raise ConfigError("r must be >= 1")
    return r


def _stamp(payload: dict, cfg: dict, seed) -> dict:
    payload["config"] = cfg
    payload["seed"] = seed
    payload["version"] = __version__
    return payload


def _write_json(out_dir, name, payload):
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=float)
    return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _cmd_fit(args, cfg):
    family = _family(cfg)
    data = _dataset(cfg, args.data)
    ensure_valid(data, family)
    if cfg.get("standardize", True):
        Xs, info = standardize(data.X)
        ds = data.with_X(Xs)
    else:
        ds, info = data, None
    r = _resolve_r(cfg, ds, family)
    spec0 = _penalty_template(cfg, "lambda0")
    spec1 = _penalty_template(cfg, "lambda1")
    ctrl = _control(cfg)
    sampler = _sampler(cfg)
    init = initialize(ds, family, spec0, r)
    fit = fit_mcecm(ds, family, spec0, spec1, init, ctrl, sampler, args.seed,
                    draw_final=False)
    theta = fit.theta
    if info is not None:
        theta = destandardize_theta(theta, info, ds.z_columns)
    payload = fit.to_dict()
    payload["theta"] = theta.to_dict()
    payload["r"] = r
    _write_json(args.out, "fit.json", _stamp(payload, cfg, args.seed))
    if args.verbose:
        print(f"converged={fit.converged} em_iterations={fit.em_iterations}")
    return EXIT_OK


def _cmd_select(args, cfg):
    family = _family(cfg)
    data = _dataset(cfg, args.data)
    ensure_valid(data, family)
    if cfg.get("standardize", True):
        Xs, info = standardize(data.X)
        ds = data.with_X(Xs)
    else:
        ds, info = data, None
    r = _resolve_r(cfg, ds, family)
    spec0_t = _penalty_template(cfg, "lambda0").with_lam(0.0)
    spec1_t = _penalty_template(cfg, "lambda1").with_lam(0.0)
    ctrl = _control(cfg)
    sampler = _sampler(cfg)
    z_cols = ds.z_columns
    if cfg.get("prescreen", True):
        z_cols = prescreen(ds, family, sampler, args.seed, r,
                           spec0_t, spec1_t,
                           min_ratio=cfg.get("lambda_min_ratio", 0.05))
        ds = ds.with_z_columns(z_cols)
    lmax = lambda_max(ds, family)
    grid = default_grid(lmax, cfg.get("n_lambda", 10),
                        cfg.get("lambda_min_ratio", 0.05))
    grid0 = np.asarray(cfg["lambda0_grid"], dtype=float) \
        if "lambda0_grid" in cfg else grid
    grid1 = np.asarray(cfg["lambda1_grid"], dtype=float) \
        if "lambda1_grid" in cfg else grid
    path = grid_search(ds, family, grid0, grid1, ctrl, sampler, args.seed + 1,
                       r, spec0_t, spec1_t)
    theta = path.best.fit.theta
    if info is not None:
        theta = destandardize_theta(theta, info, z_cols)
    selected = select_effects(theta, z_columns=z_cols)
    path.write_csv(os.path.join(args.out, "path.csv"))
    path.write_json(os.path.join(args.out, "path.json"),
                    extra=_stamp({}, cfg, args.seed))
    payload = _stamp({
        "S1": sorted(selected.S1),
        "S2": sorted(selected.S2),
        "r": r,
        "z_columns": list(z_cols),
        "theta": theta.to_dict(),
        "best_lambda0": path.best.lambda0,
        "best_lambda1": path.best.lambda1,
        "bic_icq": path.best.bic_icq,
    }, cfg, args.seed)
    _write_json(args.out, "selected.json", payload)
    print(emit_report(path))
    return EXIT_OK


def _cmd_estimate_r(args, cfg):
    family = _family(cfg)
    data = _dataset(cfg, args.data)
    ensure_valid(data, family)
    if cfg.get("standardize", True):
        Xs, _ = standardize(data.X)
        data = data.with_X(Xs)
    G = pseudo_random_effects(data, family)
    r_hat, gr = growth_ratio(G, cfg.get("r_max"))
    payload = _stamp({"r_hat": int(r_hat),
                      "growth_ratios": [float(v) for v in gr]}, cfg, args.seed)
    _write_json(args.out, "rank.json", payload)
    print(f"r_hat = {r_hat}")
    return EXIT_OK


def _scenario(cfg) -> ScenarioConfig:
    fields = ("family", "p", "N", "K", "beta_effect", "b_kind", "r_true",
              "r_mode", "r_fixed", "penalty_family", "pi", "n_lambda",
              "lambda_min_ratio", "use_prescreen")
    kwargs = {k: cfg[k] for k in fields if k in cfg}
    sc = ScenarioConfig(**kwargs)
    ctrl_keys = {k: cfg[k] for k in ("em_tol", "em_consecutive",
                                     "max_em_iter", "mstep_tol",
                                     "max_mstep_iter") if k in cfg}
    if ctrl_keys:
        sc.ctrl = FitControl(**ctrl_keys)
    smp_keys = {k: cfg[k] for k in ("burn_in", "m_start", "m_increment",
                                    "m_max", "m_final") if k in cfg}
    if smp_keys:
        sc.sampler = SamplerConfig(**smp_keys)
    return sc


def _cmd_simulate(args, cfg):
    sc = _scenario(cfg)
    data, truth = sc.generate(args.seed)
    out_csv = os.path.join(args.out, "dataset.csv")
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        p = data.n_predictors
        writer.writerow(["y", "group"] + [f"x{j+1}" for j in range(p)])
        for i in range(data.n_obs):
            writer.writerow([data.y[i], data.group[i]]
                            + list(data.X[i]))
    _write_json(args.out, "truth.json", _stamp(truth.to_dict(), cfg, args.seed))
    if args.verbose:
        print(f"wrote {out_csv} (N={data.n_obs}, K={data.n_groups})")
    return EXIT_OK


def _cmd_replicate(args, cfg):
    sc = _scenario(cfg)
    n_reps = int(cfg.get("n_reps", 10))
    report = run_replications(sc, n_reps, master_seed=args.seed)
    report.write_csv(os.path.join(args.out, "metrics.csv"))
    summary = _stamp({"summary": report.summary(),
                      "failures": report.failures}, cfg, args.seed)
    _write_json(args.out, "summary.json", summary)
    print(json.dumps(report.summary(), indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

def emit_report(path, truth=None, theta=None) -> str:
    """Human-readable summary of a SelectionPath.

    With ``truth`` (and the matching final ``theta``), appends the
    selection metrics row computed against the true supports.
    """
    lines = ["stage  lambda0    lambda1    bic_icq      df0  df1  best"]
    for row in path.to_rows():
        bic = "n/a" if row["bic_icq"] is None else f"{row['bic_icq']:.2f}"
        star = "*" if row["best"] else ""
        lines.append(f"{row['stage']:>5}  {row['lambda0']:<9.4g}  "
                     f"{row['lambda1']:<9.4g}  {bic:<11}  "
                     f"{row['df_fixed']:>3}  {row['df_random']:>3}  {star}")
    best = path.best
    sel = select_effects(best.fit.theta)
    lines.append(f"best: lambda0={best.lambda0:.4g} lambda1={best.lambda1:.4g}")
    lines.append(f"S1 = {sorted(sel.S1)}")
    lines.append(f"S2 = {sorted(sel.S2)}")
    if truth is not None and theta is not None:
        m = selection_metrics(sel, theta, truth)
        lines.append("TP fixed %%=%.1f FP fixed %%=%.1f "
                     "TP random %%=%.1f FP random %%=%.1f abs dev=%.3f"
                     % (m.tp_fixed_pct, m.fp_fixed_pct, m.tp_random_pct,
                        m.fp_random_pct, m.mean_abs_dev))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "fit": _cmd_fit,
    "select": _cmd_select,
    "estimate-r": _cmd_estimate_r,
    "simulate": _cmd_simulate,
    "replicate": _cmd_replicate,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glmmfactor",
        description="Penalized GLMMs with factor-structured random effects")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--data", help="input CSV (one header row)")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=None,
                        help="BLAS/OpenMP thread cap")
        sp.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        cfg = _load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        return _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataValidationError, FamilyError) as exc:
        print(f"data validation error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (MStepError, SelectionError, RankEstimationError,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
