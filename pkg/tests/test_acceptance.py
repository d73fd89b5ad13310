"""Acceptance gate: correctness oracles and desk-scale study targets.

Each test class checks one advertised guarantee of the package:

 1. the two algebraic forms of the random-effect linear predictor agree;
 2. the closed-form threshold operators match numeric 1-D minimization;
 3. the MALA sampler reproduces the conjugate Gaussian posterior;
 4. the posterior log-density gradient matches finite differences;
 5. the inner M-step never increases its objective on fixed draws;
 6. the Growth Ratio recovers the latent rank in the simulated regime;
 7. a ten-replicate binomial selection study hits TP/FP targets;
 8. coefficient error in the same study stays within budget;
 9. everything reported is invariant to rotations of the loading matrix;
10. the Poisson generator is calibrated and end-to-end selection works.

Criteria 6-8 and 10 run full simulation studies and together take a
couple of hours of wall time on a single core; the rest finish in a few
minutes.
"""

import time

import numpy as np
import pytest
from scipy.optimize import minimize_scalar
from scipy.stats import norm as norm_dist
from scipy.stats import t as student_t

from glmmfactor import (BINOMIAL, GAUSSIAN, POISSON, FitControl,
                        GroupedDataset, PenaltySpec, SamplerConfig,
                        ThetaState, augmented_design, build_J, build_eta,
                        get_group, group_threshold, growth_ratio,
                        log_posterior_unnorm, m_step, pseudo_random_effects,
                        sample_all_groups, sample_posterior, scalar_threshold,
                        select_effects)
from glmmfactor.factor import rows_to_vec
from glmmfactor.penalties import penalty_term
from glmmfactor.simlab import ScenarioConfig, run_replicate


# ---------------------------------------------------------------------------
# shared small-problem generator
# ---------------------------------------------------------------------------

def _problem(seed, family=BINOMIAL, p=5, K=6, n_k=50, r=2):
    rng = np.random.default_rng(seed)
    N = K * n_k
    X = rng.normal(size=(N, p)) * (0.2 if family is POISSON else 1.0)
    beta = np.concatenate([[0.2], rng.normal(0, 0.7, p)])
    B = rng.normal(0, 0.4, size=(p + 1, r))
    group = np.repeat(np.arange(K), n_k)
    alpha = rng.normal(size=(K, r))
    Z = np.column_stack([np.ones(N), X])
    eta = beta[0] + X @ beta[1:] + (Z * (B @ alpha[group].T).T).sum(axis=1)
    if family is BINOMIAL:
        y = (rng.random(N) < 1 / (1 + np.exp(-eta))).astype(float)
    elif family is POISSON:
        y = rng.poisson(np.exp(np.clip(eta, None, 5.0))).astype(float)
    else:
        y = eta + rng.normal(0, 1.0, N)
    data = GroupedDataset(y=y, X=X, group=group)
    theta = ThetaState(beta=beta, B=B, tau=1.0)
    return data, theta


# ---------------------------------------------------------------------------
# 1. bilinear form == augmented (vec/permutation) form
# ---------------------------------------------------------------------------

class TestPredictorFormsAgree:
    def test_thousand_random_instances(self):
        rng = np.random.default_rng(100)
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(1000):
            q = int(rng.integers(1, 21))
            r = int(rng.integers(1, 6))
            M = int(rng.integers(1, 5))
            z = rng.normal(size=q)
            B = rng.normal(size=(q, r))
            alpha = rng.normal(size=(M, r))
            A = augmented_design(z, alpha, build_J(q, r))
            direct = np.array([z @ (B @ a) for a in alpha])
            worst = max(worst, float(np.max(np.abs(A @ rows_to_vec(B)
                                                   - direct))))
        assert worst < 1e-12
        assert time.perf_counter() - t0 < 1.0


# ---------------------------------------------------------------------------
# 2. threshold operators vs numeric 1-D minimization
# ---------------------------------------------------------------------------

def _numeric_argmin(z, v, spec):
    """Independent 1-D minimizer of 0.5*v*(t - z/v)^2 + pen(t).

    Dense grid over the bracket that must contain the minimizer (the
    solution magnitude never exceeds |z|/v), refined with a bounded
    scalar search around the best grid cell.
    """
    hi = abs(z) / v + 1.0

    def h(t):
        return 0.5 * v * (t - z / v) ** 2 + penalty_term(abs(t), spec)

    grid = np.linspace(-hi, hi, 2001)
    vals = (0.5 * v * (grid - z / v) ** 2
            + np.array([penalty_term(abs(t), spec) for t in grid]))
    i = int(np.argmin(vals))
    lo_b = grid[max(i - 1, 0)]
    hi_b = grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(h, bounds=(lo_b, hi_b), method="bounded",
                          options={"xatol": 1e-10})
    # zero is a kink the bounded search can miss
    return res.x if h(res.x) <= h(0.0) else 0.0


def _random_spec(rng):
    fam = rng.choice(["lasso", "mcp", "scad"])
    kwargs = {"family": fam, "lam": float(rng.uniform(0.0, 2.0)),
              "pi": float(rng.choice([1.0, rng.uniform(0.5, 1.0)]))}
    if fam == "mcp":
        kwargs["gamma"] = float(rng.uniform(1.5, 6.0))
    elif fam == "scad":
        kwargs["gamma"] = float(rng.uniform(2.2, 6.0))
    return PenaltySpec(**kwargs)


class TestThresholdOracle:
    def _check_case(self, t_hat, z, v, spec):
        t_num = _numeric_argmin(z, v, spec)

        def h(t):
            return 0.5 * v * (t - z / v) ** 2 + penalty_term(abs(t), spec)

        if abs(t_hat - t_num) < 1e-6:
            return True
        # near-tie between two local minima: either argmin is valid as
        # long as the closed form attains the numeric optimum
        return h(t_hat) <= h(t_num) + 1e-9 * (1.0 + abs(h(t_num)))

    def test_ten_thousand_cases(self):
        rng = np.random.default_rng(200)
        t0 = time.perf_counter()
        bad = 0
        for _ in range(7000):
            z = float(rng.normal(0, 3.0))
            v = float(rng.uniform(0.05, 5.0))
            spec = _random_spec(rng)
            if not self._check_case(scalar_threshold(z, v, spec), z, v, spec):
                bad += 1
        for _ in range(3000):
            d = int(rng.integers(1, 6))
            zvec = rng.normal(0, 2.0, size=d)
            v = float(rng.uniform(0.05, 5.0))
            spec = _random_spec(rng)
            out = group_threshold(zvec, v, spec)
            norm = float(np.linalg.norm(zvec))
            # blockwise rule reduces to the scalar rule on the norm,
            # direction preserved; oracle-check the magnitude
            if norm > 0:
                got = float(np.linalg.norm(out)) * np.sign(
                    out @ zvec if np.any(out) else 1.0)
                if not self._check_case(got, norm, v, spec):
                    bad += 1
                if np.any(out):
                    cos = out @ zvec / (np.linalg.norm(out) * norm)
                    assert cos == pytest.approx(1.0, abs=1e-12)
        assert bad == 0
        assert time.perf_counter() - t0 < 30.0


# ---------------------------------------------------------------------------
# 3. sampler vs conjugate Gaussian posterior
# ---------------------------------------------------------------------------

def _conjugate_posterior(gd, theta):
    W = gd.Z @ theta.B
    resid = gd.y - (theta.beta[0] + gd.X @ theta.beta[1:])
    S = np.linalg.inv(np.eye(theta.r) + W.T @ W / theta.tau)
    mean = S @ (W.T @ resid / theta.tau)
    return mean, S


class TestConjugateSamplerOracle:
    def test_twenty_random_configurations(self):
        t0 = time.perf_counter()
        M = 20000
        cfg = SamplerConfig(burn_in=500)
        for i in range(20):
            rng = np.random.default_rng(300 + i)
            p = int(rng.integers(2, 6))
            n_k = int(rng.integers(30, 80))
            data, theta = _problem(400 + i, family=GAUSSIAN, p=p, K=2,
                                   n_k=n_k, r=3)
            gd = get_group(data, 0)
            mean, S = _conjugate_posterior(gd, theta)
            draws = sample_posterior(gd, theta, GAUSSIAN, cfg, M, 500 + i)
            # MC standard error from batch means (accounts for the
            # chain's autocorrelation); with the SE estimated from 50
            # batches, the 3-sigma normal cutoff becomes the Student-t
            # quantile at the same nominal level
            batches = draws.reshape(50, M // 50, 3).mean(axis=1)
            se = batches.std(axis=0, ddof=1) / np.sqrt(50)
            cut = float(student_t.ppf(norm_dist.cdf(3.0), df=49))
            assert np.all(np.abs(draws.mean(axis=0) - mean) < cut * se), i
            rel = (np.linalg.norm(np.cov(draws.T) - S, "fro")
                   / np.linalg.norm(S, "fro"))
            assert rel < 0.10, (i, rel)
        assert time.perf_counter() - t0 < 300.0


# ---------------------------------------------------------------------------
# 4. gradient vs central finite differences
# ---------------------------------------------------------------------------

class TestGradientCheck:
    def test_two_hundred_random_points(self):
        count = 0
        for fi, family in enumerate((BINOMIAL, POISSON, GAUSSIAN)):
            data, theta = _problem(600 + fi, family=family, r=3)
            rng = np.random.default_rng(700 + fi)
            for _ in range(67):
                gd = get_group(data, int(rng.integers(data.n_groups)))
                alpha = rng.normal(size=theta.r) * rng.uniform(0.3, 2.0)
                _, grad = log_posterior_unnorm(alpha, gd, theta, family)
                num = np.empty_like(grad)
                h = 1e-6
                for j in range(len(alpha)):
                    e = np.zeros_like(alpha)
                    e[j] = h
                    vp, _ = log_posterior_unnorm(alpha + e, gd, theta, family)
                    vm, _ = log_posterior_unnorm(alpha - e, gd, theta, family)
                    num[j] = (vp - vm) / (2 * h)
                np.testing.assert_allclose(grad, num, rtol=1e-5, atol=1e-7)
                count += 1
        assert count >= 200


# ---------------------------------------------------------------------------
# 5. M-step descent on fixed draws
# ---------------------------------------------------------------------------

class TestMStepDescent:
    def test_twenty_random_fits(self):
        families = [BINOMIAL, GAUSSIAN, POISSON]
        sampler = SamplerConfig(burn_in=50, m_start=50)
        for i in range(20):
            rng = np.random.default_rng(800 + i)
            family = families[i % 3]
            data, theta = _problem(900 + i, family=family,
                                   p=int(rng.integers(3, 8)),
                                   K=int(rng.integers(4, 9)),
                                   r=int(rng.integers(1, 4)))
            draws, _, _ = sample_all_groups(data, theta, family, sampler,
                                            100, np.random.default_rng(i))
            spec0 = _random_spec(rng).with_lam(float(rng.uniform(0.0, 0.3)))
            spec1 = _random_spec(rng).with_lam(float(rng.uniform(0.0, 0.3)))
            _, info = m_step(draws, data, family, theta, spec0, spec1,
                             FitControl(max_mstep_iter=30), return_info=True)
            obj = np.asarray(info["objective"])
            assert np.all(np.diff(obj) <= 1e-8), (i, np.max(np.diff(obj)))


# ---------------------------------------------------------------------------
# 6. Growth Ratio rank recovery in the simulated regime
# ---------------------------------------------------------------------------

class TestGrowthRatioStudy:
    def test_rank_recovered_in_at_least_18_of_20(self):
        hits = 0
        for seed in range(20):
            sc = ScenarioConfig(family="binomial", p=25, b_kind="large",
                                r_true=3)
            data, _ = sc.generate(1000 + seed)
            out = pseudo_random_effects(data, BINOMIAL)
            r_hat, _ = growth_ratio(out.G)
            hits += (r_hat == 3)
        assert hits >= 18


# ---------------------------------------------------------------------------
# 7 & 8. desk-scale binomial selection study
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def binomial_study():
    """Ten full replicates: generate, estimate r, prescreen, grid search."""
    sc = ScenarioConfig(family="binomial", p=25, b_kind="moderate", r_true=3)
    return [run_replicate(sc, 2000 + i).metrics for i in range(10)]


class TestBinomialSelectionStudy:
    def test_true_and_false_positive_rates(self, binomial_study):
        tp_f = np.mean([m.tp_fixed_pct for m in binomial_study])
        fp_f = np.mean([m.fp_fixed_pct for m in binomial_study])
        tp_r = np.mean([m.tp_random_pct for m in binomial_study])
        fp_r = np.mean([m.fp_random_pct for m in binomial_study])
        assert tp_f >= 90.0, tp_f
        assert tp_r >= 90.0, tp_r
        assert fp_f <= 12.0, fp_f
        assert fp_r <= 5.0, fp_r

    def test_mean_absolute_deviation(self, binomial_study):
        dev = np.mean([m.mean_abs_dev for m in binomial_study])
        assert dev <= 0.40, dev


# ---------------------------------------------------------------------------
# 9. rotation invariance of everything reported
# ---------------------------------------------------------------------------

class TestRotationInvariance:
    def test_hundred_random_rotations(self):
        data, theta = _problem(1100, r=3)
        rng = np.random.default_rng(1101)
        draws = rng.normal(size=(data.n_groups, 5, 3))
        eta = build_eta(data, theta, draws)
        norms = theta.row_norms()
        sel = select_effects(theta)
        for _ in range(100):
            Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
            theta_rot = ThetaState(beta=theta.beta, B=theta.B @ Q,
                                   tau=theta.tau)
            eta_rot = build_eta(data, theta_rot, draws @ Q)
            assert np.max(np.abs(eta_rot - eta)) < 1e-10
            assert np.max(np.abs(theta_rot.row_norms() - norms)) < 1e-10
            rot_sel = select_effects(theta_rot)
            assert rot_sel.S1 == sel.S1 and rot_sel.S2 == sel.S2


# ---------------------------------------------------------------------------
# 10. Poisson generator calibration and end-to-end selection
# ---------------------------------------------------------------------------

class TestPoissonStudy:
    def test_generator_baseline_mean_one(self):
        from glmmfactor import simulate_poisson
        data, _ = simulate_poisson(p=5, B=np.zeros((6, 2)), seed=1200,
                                   n_true=0)
        assert abs(np.mean(data.y) - 1.0) < 3 / np.sqrt(data.n_obs)

    def test_generator_conditional_counts_nondegenerate(self):
        from glmmfactor import simulate_poisson
        data, _ = simulate_poisson(p=20, seed=1201)
        for k in range(data.n_groups):
            assert np.mean(data.y[data.group_slice(k)]) > 0

    def test_selection_recovers_true_fixed_effects(self):
        sc = ScenarioConfig(family="poisson", p=20, r_true=3)
        good = 0
        for i in range(10):
            res = run_replicate(sc, 3000 + i)
            found = len((set(res.selected.S1) - {0})
                        & set(range(1, 6)))
            good += (found >= 4)
        assert good >= 7, good
