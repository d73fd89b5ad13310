"""Penalized GLMMs with factor-structured random effects.

Simultaneous fixed- and random-effect variable selection in
generalized linear mixed models where the random effects are
decomposed through a low-rank loading matrix, fit by a Monte Carlo
EM algorithm with grouped folded-concave penalties.
"""

from .data import (DataValidationError, GroupedDataset, StandardizationInfo,
                   destandardize_theta, ensure_valid, load_csv, standardize,
                   validate_dataset)
from .factor import (PermutationJ, PseudoEffectsMatrix, augmented_design,
                     build_J, growth_ratio, implied_covariance,
                     linear_predictor, pseudo_random_effects)
from .families import BINOMIAL, GAUSSIAN, POISSON, Family, log_density
from .glm import fit_penalized_glm, lambda_max_fixed
from .mcecm import (FitControl, FitResult, MStepError, check_convergence,
                    fit_mcecm, initialize, m_step, mstep_objective)
from .penalties import (PenaltySpec, group_threshold, penalty_value,
                        scalar_threshold)
from .posterior import (GroupData, PosteriorDraws, SamplerConfig, build_eta,
                        get_group, log_posterior_unnorm, q1_estimate,
                        sample_all_groups, sample_posterior)
from .selection import (SelectedSets, SelectionPath, bic_icq, default_grid,
                        grid_search, lambda_max, prescreen, select_effects)
from .simlab import (MetricsRow, ScenarioConfig, SimTruth, b_matrix,
                     estimate_rank, run_replicate, run_replications,
                     selection_metrics, simulate_binomial, simulate_poisson)
from .state import ThetaState

__version__ = "0.1.0"
