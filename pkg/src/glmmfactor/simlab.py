"""Data generators and selection metrics for the simulation studies.

Generators produce logistic and Poisson mixed-model data with a known
sparse truth: a handful of predictors carry both a fixed effect and a
nonzero loading row, everything else is noise.  The loading blocks are
fixed deterministic matrices (11 nonzero rows for the binomial designs,
6 for the Poisson design) whose "moderate" variants are uniform
rescalings of the "large" ones.
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy.special import expit

from .data import GroupedDataset, destandardize_theta, standardize
from .factor import growth_ratio, pseudo_random_effects
from .families import BINOMIAL, POISSON, Family
from .mcecm import FitControl
from .penalties import PenaltySpec
from .posterior import SamplerConfig
from .selection import (SelectedSets, default_grid, grid_search, lambda_max,
                        prescreen, select_effects)
from .state import ThetaState

_B_LARGE_R3 = np.array([
    [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1],
    [0, -1, -1, -1, -1, -1, 1, 1, 1, 1, 1],
    [-2, 2, -1, 0, 1, -1, 0, 1, -1, 0, 1],
], dtype=float).T  # 11 x 3

_B_LARGE_R5 = np.array([
    [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1],
    [0, -1, -1, -1, -1, -1, 1, 1, 1, 1, 1],
    [-2, 2, -1, 0, 1, -1, 0, 1, -1, 0, 1],
    [-1, 1, 1, -1, -1, 1, 1, -1, -1, 1, -1],
    [-1, -1, 0, 1, 1, -1, -1, 0, 1, 1, -2],
], dtype=float).T  # 11 x 5

_B_POISSON_R3 = np.array([
    [1, 1, 1, 1, 1, 1],
    [-1, -1, -1, 1, 1, 1],
    [-1, 0, 1, -1, 0, 1],
], dtype=float).T  # 6 x 3

_MODERATE_FACTOR = {3: 0.75, 5: 0.80}


def b_matrix(kind: str, r: int, family: str = "binomial") -> np.ndarray:
    """Deterministic true-effect loading block.

    Binomial designs: 11 rows (intercept + 10 predictors), r in {3, 5},
    kind "large" or "moderate" (0.75x for r=3, 0.80x for r=5).  The
    Poisson design has 6 rows, r=3, moderate scale only.
    """
    if family == "poisson":
        if r != 3 or kind != "moderate":
            raise ValueError("poisson loading block exists only for (moderate, r=3)")
        return 0.75 * _B_POISSON_R3.copy()
    if family != "binomial":
        raise ValueError(f"no loading block for family {family!r}")
    if r == 3:
        block = _B_LARGE_R3
    elif r == 5:
        block = _B_LARGE_R5
    else:
        raise ValueError("binomial loading blocks exist for r in {3, 5}")
    if kind == "large":
        return block.copy()
    if kind == "moderate":
        return _MODERATE_FACTOR[r] * block
    raise ValueError(f"unknown loading block kind {kind!r}")


@dataclass(frozen=True)
class SimTruth:
    """Generating parameters and true supports of one simulated dataset."""

    beta_true: np.ndarray       # length p + 1, intercept first
    B_true: np.ndarray          # (p + 1) x r
    S1_true: frozenset          # predictor indices with nonzero beta
    S2_true: frozenset          # z-column indices with nonzero loading row
    family: str
    N: int
    K: int
    p: int
    r: int

    def to_dict(self) -> dict:
        return {
            "beta_true": self.beta_true.tolist(),
            "B_true": self.B_true.tolist(),
            "S1_true": sorted(self.S1_true),
            "S2_true": sorted(self.S2_true),
            "family": self.family,
            "N": self.N, "K": self.K, "p": self.p, "r": self.r,
        }


def _pad_block(block: np.ndarray, q: int) -> np.ndarray:
    block = np.atleast_2d(block)
    if block.shape[0] > q:
        block = block[:q]
    B = np.zeros((q, block.shape[1]))
    B[:block.shape[0]] = block
    return B


def _truth_from(beta: np.ndarray, B: np.ndarray, family: str,
                N: int, K: int) -> SimTruth:
    p = len(beta) - 1
    S1 = frozenset(j for j in range(1, p + 1) if beta[j] != 0.0)
    S2 = frozenset(t for t in range(p + 1) if np.any(B[t]))
    return SimTruth(beta_true=beta, B_true=B, S1_true=S1, S2_true=S2,
                    family=family, N=N, K=K, p=p, r=B.shape[1])


def simulate_binomial(p: int, beta_effect: float, B, seed,
                      N: int = 2500, K: int = 25, n_true: int = 10):
    """Logistic mixed-model data with the first ``n_true`` predictors
    carrying both fixed effects and random-effect loadings.

    Predictors are standard normal, then exactly standardized.  Every
    predictor plus the intercept is a random-effect candidate (q = p+1).
    """
    if N % K:
        raise ValueError("N must be divisible by K (equal group sizes)")
    rng = np.random.default_rng(seed)
    B = _pad_block(B, p + 1)
    r = B.shape[1]
    X, _ = standardize(rng.standard_normal((N, p)))
    beta = np.zeros(p + 1)
    beta[1:n_true + 1] = beta_effect
    group = np.repeat(np.arange(1, K + 1), N // K)
    alpha = rng.standard_normal((K, r))
    gamma = alpha @ B.T                                   # K x (p+1)
    Zfull = np.column_stack([np.ones(N), X])
    eta = Zfull @ beta + np.einsum("nq,nq->n", Zfull, gamma[group - 1])
    y = (rng.uniform(size=N) < expit(eta)).astype(float)
    data = GroupedDataset(y=y, X=X, group=group)
    return data, _truth_from(beta, B, "binomial", N, K)


def simulate_poisson(p: int = 100, B=None, seed=0, N: int = 2500,
                     K: int = 25, n_true: int = 5, x_scale: float = 0.10):
    """Poisson mixed-model data; tight predictor scale keeps counts small.

    Predictors are N(0, x_scale) and left unstandardized; the fitting
    pipeline standardizes and back-transforms.
    """
    if N % K:
        raise ValueError("N must be divisible by K (equal group sizes)")
    rng = np.random.default_rng(seed)
    if B is None:
        B = b_matrix("moderate", 3, "poisson")
    B = _pad_block(B, p + 1)
    r = B.shape[1]
    X = x_scale * rng.standard_normal((N, p))
    beta = np.zeros(p + 1)
    beta[1:n_true + 1] = 1.0
    group = np.repeat(np.arange(1, K + 1), N // K)
    alpha = rng.standard_normal((K, r))
    gamma = alpha @ B.T
    Zfull = np.column_stack([np.ones(N), X])
    eta = Zfull @ beta + np.einsum("nq,nq->n", Zfull, gamma[group - 1])
    y = rng.poisson(np.exp(eta)).astype(float)
    data = GroupedDataset(y=y, X=X, group=group)
    return data, _truth_from(beta, B, "poisson", N, K)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class MetricsRow:
    tp_fixed_pct: float
    fp_fixed_pct: float
    tp_random_pct: float
    fp_random_pct: float
    mean_abs_dev: float
    wall_hours: float = float("nan")
    r_used: int = -1
    r_true: int = -1

    def to_dict(self) -> dict:
        return asdict(self)


def _rates(selected, truth_set, n_candidates):
    tp = 100.0 * len(selected & truth_set) / max(len(truth_set), 1)
    n_noise = n_candidates - len(truth_set)
    fp = 100.0 * len(selected - truth_set) / max(n_noise, 1)
    return tp, fp


def selection_metrics(estimated: SelectedSets, theta_hat: ThetaState,
                      truth: SimTruth) -> MetricsRow:
    """TP/FP percentages (intercept excluded) and mean |beta_hat - beta*|."""
    est1 = set(estimated.S1) - {0}
    est2 = set(estimated.S2) - {0}
    s1 = set(truth.S1_true) - {0}
    s2 = set(truth.S2_true) - {0}
    tp_f, fp_f = _rates(est1, s1, truth.p)
    tp_r, fp_r = _rates(est2, s2, truth.p)
    dev = float(np.mean(np.abs(theta_hat.beta[1:] - truth.beta_true[1:])))
    return MetricsRow(tp_fixed_pct=tp_f, fp_fixed_pct=fp_f,
                      tp_random_pct=tp_r, fp_random_pct=fp_r,
                      mean_abs_dev=dev, r_true=truth.r)


# ---------------------------------------------------------------------------
# replication driver
# ---------------------------------------------------------------------------

@dataclass
class ScenarioConfig:
    """One simulation scenario in the shape of the reported studies."""

    family: str = "binomial"
    p: int = 25
    N: int = 2500
    K: int = 25
    beta_effect: float = 1.0
    b_kind: str = "moderate"
    r_true: int = 3
    r_mode: str = "growth-ratio"   # or "fixed"
    r_fixed: Optional[int] = None
    penalty_family: str = "mcp"
    pi: float = 1.0
    n_lambda: int = 10
    lambda_min_ratio: float = 0.05
    use_prescreen: bool = True
    # desk-scale budgets: grid searches run many fits, so EM and
    # sampler effort per fit are trimmed relative to the library defaults
    ctrl: FitControl = field(default_factory=lambda: FitControl(
        max_em_iter=25, max_mstep_iter=20))
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(
        burn_in=100, m_start=100, m_increment=50, m_max=500, m_final=2000))

    def generate(self, seed):
        if self.family == "binomial":
            block = b_matrix(self.b_kind, self.r_true, "binomial")
            return simulate_binomial(self.p, self.beta_effect, block, seed,
                                     N=self.N, K=self.K)
        block = b_matrix("moderate", 3, "poisson")
        return simulate_poisson(self.p, block, seed, N=self.N, K=self.K)

    @property
    def family_obj(self) -> Family:
        return BINOMIAL if self.family == "binomial" else POISSON


@dataclass
class ReplicateResult:
    metrics: MetricsRow
    selected: SelectedSets
    theta: ThetaState
    seed: int


@dataclass
class ReplicationReport:
    rows: list                  # MetricsRow per successful replicate
    replicates: list            # ReplicateResult per successful replicate
    failures: list
    scenario: ScenarioConfig

    def summary(self) -> dict:
        if not self.rows:
            return {"n_success": 0, "n_failed": len(self.failures)}
        arr = {name: np.array([getattr(m, name) for m in self.rows])
               for name in ("tp_fixed_pct", "fp_fixed_pct", "tp_random_pct",
                            "fp_random_pct", "mean_abs_dev", "wall_hours")}
        r_used = np.array([m.r_used for m in self.rows])
        r_true = self.scenario.r_true
        out = {f"mean_{k}": float(np.mean(v)) for k, v in arr.items()
               if k != "wall_hours"}
        out["median_wall_hours"] = float(np.median(arr["wall_hours"]))
        out["mean_r_used"] = float(np.mean(r_used))
        out["r_under_pct"] = float(100.0 * np.mean(r_used < r_true))
        out["r_correct_pct"] = float(100.0 * np.mean(r_used == r_true))
        out["r_over_pct"] = float(100.0 * np.mean(r_used > r_true))
        out["n_success"] = len(self.rows)
        out["n_failed"] = len(self.failures)
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            names = list(self.rows[0].to_dict().keys()) if self.rows else []
            writer = csv.DictWriter(fh, fieldnames=["replicate"] + names)
            writer.writeheader()
            for i, m in enumerate(self.rows):
                writer.writerow(dict({"replicate": i}, **m.to_dict()))


def estimate_rank(data: GroupedDataset, family: Family, U: int = None):
    """Growth Ratio rank estimate from pseudo random effects."""
    G = pseudo_random_effects(data, family)
    return growth_ratio(G, U)


def run_replicate(scenario: ScenarioConfig, seed) -> ReplicateResult:
    """Generate, estimate r, prescreen, grid-search, and score one dataset."""
    t0 = time.perf_counter()
    family = scenario.family_obj
    data, truth = scenario.generate(seed)
    Xs, info = standardize(data.X)
    ds = data.with_X(Xs)

    if scenario.r_mode == "fixed":
        r_used = scenario.r_fixed or scenario.r_true
    else:
        r_used, _ = estimate_rank(ds, family)

    spec0_t = PenaltySpec(scenario.penalty_family, pi=scenario.pi)
    spec1_t = PenaltySpec(scenario.penalty_family, pi=scenario.pi)
    base_seed = int(np.random.SeedSequence([seed, 1]).generate_state(1)[0])

    z_cols = ds.z_columns
    if scenario.use_prescreen:
        z_cols = prescreen(ds, family, scenario.sampler, base_seed, r_used,
                           spec0_t, spec1_t,
                           min_ratio=scenario.lambda_min_ratio)
        ds = ds.with_z_columns(z_cols)

    lmax = lambda_max(ds, family)
    grid = default_grid(lmax, scenario.n_lambda, scenario.lambda_min_ratio)
    path = grid_search(ds, family, grid, grid, scenario.ctrl,
                       scenario.sampler, base_seed + 1, r_used,
                       spec0_t, spec1_t)
    theta = destandardize_theta(path.best.fit.theta, info, z_cols)
    selected = select_effects(theta, z_columns=z_cols)
    metrics = selection_metrics(selected, theta, truth)
    metrics.wall_hours = (time.perf_counter() - t0) / 3600.0
    metrics.r_used = int(r_used)
    return ReplicateResult(metrics=metrics, selected=selected,
                           theta=theta, seed=seed)


def run_replications(scenario: ScenarioConfig, n_reps: int,
                     master_seed: int = 0) -> ReplicationReport:
    """Run independent replicates; failures are recorded, not fatal."""
    rows, reps, failures = [], [], []
    for i in range(n_reps):
        seed = int(np.random.SeedSequence([master_seed, i]).generate_state(1)[0])
        try:
            rep = run_replicate(scenario, seed)
        except Exception as exc:  # noqa: BLE001 - per-replicate isolation
            warnings.warn(f"replicate {i} failed: {exc}")
            failures.append({"replicate": i, "seed": seed, "error": str(exc)})
            continue
        rows.append(rep.metrics)
        reps.append(rep)
    return ReplicationReport(rows=rows, replicates=reps, failures=failures,
                             scenario=scenario)
