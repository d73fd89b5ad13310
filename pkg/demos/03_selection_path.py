"""Select fixed and random effects with a two-stage penalty search.

The solver fits a grid of (lambda0, lambda1) pairs -- lambda0 penalizes
fixed effects, lambda1 penalizes whole loading rows -- and scores every
fit with BIC-ICQ: the draw-averaged negative complete-data log-
likelihood under a minimal-penalty reference posterior, plus log(N)
times the number of nonzero parameters.  Stage 1 sweeps lambda1 at the
smallest lambda0; stage 2 sweeps lambda0 holding the stage-1 winner.
Warm starts carry each fit's solution to the next grid point.

Takes a couple of minutes on one core.
"""

from glmmfactor import (BINOMIAL, FitControl, SamplerConfig, default_grid,
                        grid_search, lambda_max, select_effects)
from glmmfactor.cli import emit_report
from glmmfactor.simlab import ScenarioConfig, selection_metrics

sc = ScenarioConfig(family="binomial", p=15, b_kind="moderate", r_true=3,
                    N=1200, K=12)
data, truth = sc.generate(seed=11)

# anchor both grids at the smallest lambda that zeroes every fixed
# effect in the no-random-effects model
lmax = lambda_max(data, BINOMIAL)
grid = default_grid(lmax, n_values=6, min_ratio=0.05)
print(f"lambda grid: {[f'{v:.3f}' for v in grid]}")

ctrl = FitControl(max_em_iter=15, max_mstep_iter=20)
sampler = SamplerConfig(burn_in=100, m_start=100, m_increment=50,
                        m_max=300, m_final=1000)

path = grid_search(data, BINOMIAL, grid, grid, ctrl, sampler, seed=3, r=3)

theta = path.best.fit.theta
sel = select_effects(theta)
print()
print(emit_report(path, truth=truth, theta=theta))

m = selection_metrics(sel, theta, truth)
print(f"\nagainst the simulation truth: TP fixed {m.tp_fixed_pct:.0f}%, "
      f"FP fixed {m.fp_fixed_pct:.0f}%, TP random {m.tp_random_pct:.0f}%, "
      f"FP random {m.fp_random_pct:.0f}%")
print(f"mean |beta_hat - beta*| over predictors: {m.mean_abs_dev:.3f}")
