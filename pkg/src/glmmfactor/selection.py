"""Penalty grids, pre-screening, BIC-ICQ, and the two-stage search.

The search is abbreviated: stage 1 pins the fixed-effect penalty at its
smallest grid value and sweeps the random-effect penalty from large to
small (warm-started); stage 2 pins the stage-1 winner and sweeps the
fixed-effect penalty.  Models are ranked by BIC-ICQ: minus twice the
draw-averaged complete-data log-likelihood of each candidate's
parameters evaluated against the posterior draws of a single
minimal-penalty reference model, plus log(N) times the number of free
nonzero parameters.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import GroupedDataset
from .families import Family
from .glm import lambda_max_fixed
from .mcecm import FitControl, FitResult, fit_mcecm, initialize
from .penalties import PenaltySpec
from .posterior import SamplerConfig, q1_estimate
from .state import ThetaState


class SelectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class SelectedSets:
    """Selected supports: S1 (fixed effects) and S2 (random effects).

    Indices use 0 for the intercept and 1..p for predictors.  The
    intercept is always in S1.
    """

    S1: frozenset
    S2: frozenset


def select_effects(theta: ThetaState, tol: float = 0.0,
                   z_columns=None) -> SelectedSets:
    """Supports of beta and of the loading rows at threshold ``tol``.

    The penalty operators produce exact zeros, so the default tol of 0
    reads the sparsity pattern off directly.
    """
    S1 = {0} | {j for j in range(1, len(theta.beta))
                if abs(theta.beta[j]) > tol}
    if z_columns is None:
        z_columns = tuple(range(theta.q))
    norms = theta.row_norms()
    S2 = {z_columns[t] for t in range(theta.q) if norms[t] > tol}
    return SelectedSets(S1=frozenset(S1), S2=frozenset(S2))


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

def lambda_max(data: GroupedDataset, family: Family) -> float:
    """Gradient-bound penalty level that zeroes all fixed effects."""
    return lambda_max_fixed(data.X, data.y, family)


def default_grid(lmax: float, n_values: int = 10,
                 min_ratio: float = 0.05) -> np.ndarray:
    """Descending log-spaced penalty grid from lmax to min_ratio * lmax."""
    return np.geomspace(lmax, min_ratio * lmax, n_values)


# ---------------------------------------------------------------------------
# pre-screening
# ---------------------------------------------------------------------------

def prescreen(data: GroupedDataset, family: Family,
              sampler_cfg: SamplerConfig, seed: int, r: int,
              spec0_template: PenaltySpec = PenaltySpec("mcp"),
              spec1_template: PenaltySpec = PenaltySpec("mcp"),
              em_budget: int = 15, rel_tol: float = 1e-2,
              min_ratio: float = 0.05):
    """Coarse fit to drop clearly-inactive random-effect candidates.

    One model at (lambda0 = smallest grid value, lambda1 = geometric
    middle of the grid) for a short EM budget; candidate rows whose
    loading norm falls below ``rel_tol`` times the largest norm are
    dropped.  The intercept row is never dropped.  Returns the retained
    z_columns tuple.
    """
    lmax = lambda_max(data, family)
    spec0 = spec0_template.with_lam(min_ratio * lmax)
    spec1 = spec1_template.with_lam(float(np.sqrt(min_ratio) * lmax))
    ctrl = FitControl(max_em_iter=em_budget)
    init = initialize(data, family, spec0, r)
    fit = fit_mcecm(data, family, spec0, spec1, init, ctrl, sampler_cfg,
                    seed, draw_final=False)
    norms = fit.theta.row_norms()
    cutoff = rel_tol * float(norms.max()) if norms.size else 0.0
    retained = tuple(col for t, col in enumerate(data.z_columns)
                     if col == 0 or norms[t] >= cutoff)
    if not retained:
        retained = (0,) if 0 in data.z_columns else ()
    return retained


# ---------------------------------------------------------------------------
# BIC-ICQ
# ---------------------------------------------------------------------------

def count_df(theta: ThetaState):
    """Nonzero parameter counts: (fixed, random loading entries)."""
    return int(np.count_nonzero(theta.beta)), int(np.count_nonzero(theta.B))


def bic_icq(fit: FitResult, reference: FitResult, data: GroupedDataset,
            family: Family) -> float:
    """Information criterion against the reference model's posterior.

    2 * Q1(theta_fit; reference draws) + log(N) * df, lower is better.
    """
    if reference.final_draws is None:
        raise SelectionError("reference fit carries no posterior draws")
    q1 = q1_estimate(reference.final_draws, data, fit.theta, family)
    df_fixed, df_random = count_df(fit.theta)
    return float(2.0 * q1 + np.log(data.n_obs) * (df_fixed + df_random))


# ---------------------------------------------------------------------------
# two-stage grid search
# ---------------------------------------------------------------------------

@dataclass
class PathEntry:
    lambda0: float
    lambda1: float
    fit: FitResult
    bic_icq: Optional[float]
    df_fixed: int
    df_random: int
    stage: int


@dataclass
class SelectionPath:
    entries: list
    best_index: int
    reference_fit: FitResult
    failures: list = field(default_factory=list)

    @property
    def best(self) -> PathEntry:
        return self.entries[self.best_index]

    def to_rows(self):
        rows = []
        for i, e in enumerate(self.entries):
            rows.append({
                "index": i,
                "stage": e.stage,
                "lambda0": e.lambda0,
                "lambda1": e.lambda1,
                "bic_icq": e.bic_icq,
                "df_fixed": e.df_fixed,
                "df_random": e.df_random,
                "converged": e.fit.converged,
                "em_iterations": e.fit.em_iterations,
                "timing_seconds": e.fit.timing,
                "best": i == self.best_index,
            })
        return rows

    def write_csv(self, path):
        rows = self.to_rows()
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)

    def write_json(self, path, extra: dict = None):
        payload = {
            "entries": [dict(row, theta=self.entries[i].fit.theta.to_dict())
                        for i, row in enumerate(self.to_rows())],
            "best_index": self.best_index,
            "failures": self.failures,
        }
        if extra:
            payload.update(extra)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)


def grid_search(data: GroupedDataset, family: Family,
                lambda0_grid, lambda1_grid, ctrl: FitControl,
                sampler_cfg: SamplerConfig, seed: int, r: int,
                spec0_template: PenaltySpec = PenaltySpec("mcp"),
                spec1_template: PenaltySpec = PenaltySpec("mcp")) -> SelectionPath:
    """Abbreviated two-stage (lambda0, lambda1) search with warm starts."""
    lambda0_grid = np.sort(np.asarray(lambda0_grid, dtype=float))[::-1]
    lambda1_grid = np.sort(np.asarray(lambda1_grid, dtype=float))[::-1]
    if lambda0_grid.size == 0 or lambda1_grid.size == 0:
        raise ValueError("penalty grids must be nonempty")
    l0_min = float(lambda0_grid[-1])
    l1_min = float(lambda1_grid[-1])

    entries = []
    failures = []
    theta_warm = None
    fit_seed = [seed]

    def run_fit(l0, l1, stage, boost_final):
        nonlocal theta_warm
        spec0 = spec0_template.with_lam(l0)
        spec1 = spec1_template.with_lam(l1)
        if theta_warm is None:
            init = initialize(data, family, spec0, r)
        else:
            init = theta_warm.copy()
        fit_seed[0] += 1
        fit = fit_mcecm(data, family, spec0, spec1, init, ctrl, sampler_cfg,
                        fit_seed[0], draw_final=boost_final)
        theta_warm = fit.theta
        df_fixed, df_random = count_df(fit.theta)
        entry = PathEntry(lambda0=l0, lambda1=l1, fit=fit, bic_icq=None,
                          df_fixed=df_fixed, df_random=df_random, stage=stage)
        entries.append(entry)
        return entry

    # stage 1: lambda0 fixed at its minimum, sweep lambda1 downwards;
    # the last point doubles as the minimal-penalty reference model
    reference = None
    for l1 in lambda1_grid:
        is_ref = (l1 == l1_min)
        try:
            entry = run_fit(l0_min, float(l1), stage=1, boost_final=is_ref)
            if is_ref:
                reference = entry.fit
        except Exception as exc:  # noqa: BLE001 - record and continue
            failures.append({"lambda0": l0_min, "lambda1": float(l1),
                             "stage": 1, "error": str(exc)})
    if reference is None or reference.final_draws is None:
        raise SelectionError("reference fit failed; no usable grid results")
    for entry in entries:
        entry.bic_icq = bic_icq(entry.fit, reference, data, family)

    stage1_best = min(
        (e for e in entries if e.bic_icq is not None),
        key=lambda e: (e.bic_icq, -e.lambda1))
    l1_star = stage1_best.lambda1

    # stage 2: lambda1 pinned at the winner, sweep lambda0 downwards
    theta_warm = stage1_best.fit.theta
    for l0 in lambda0_grid:
        if l0 == l0_min:
            continue  # already fit in stage 1 at (l0_min, l1_star)?
        try:
            entry = run_fit(float(l0), l1_star, stage=2, boost_final=False)
            entry.bic_icq = bic_icq(entry.fit, reference, data, family)
        except Exception as exc:  # noqa: BLE001
            failures.append({"lambda0": float(l0), "lambda1": l1_star,
                             "stage": 2, "error": str(exc)})
    if not entries:
        raise SelectionError("all grid fits failed")
    if failures:
        warnings.warn(f"{len(failures)} grid fits failed and were skipped")

    best_index = min(
        range(len(entries)),
        key=lambda i: (entries[i].bic_icq if entries[i].bic_icq is not None
                       else np.inf,
                       -entries[i].lambda0, -entries[i].lambda1))
    return SelectionPath(entries=entries, best_index=best_index,
                         reference_fit=reference, failures=failures)
