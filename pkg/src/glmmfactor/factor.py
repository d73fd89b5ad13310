"""Loading-matrix algebra and estimation of the number of latent factors.

The random effect of group k is gamma_k = B alpha_k with B a q x r
loading matrix and alpha_k ~ N(0, I_r), so the implied random-effect
covariance is B B'.  Stacking the rows of B into a single vector b lets
the random part of the linear predictor be written as a plain inner
product against an augmented design row, which is what the grouped
coordinate-descent updates consume.

The number of factors r is estimated with the Growth Ratio applied to a
matrix of centered per-group penalized-GLM coefficients standing in for
the unobservable random effects.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import GroupedDataset
from .families import Family
from .glm import fit_penalized_glm, lambda_max_fixed
from .penalties import PenaltySpec


# ---------------------------------------------------------------------------
# vec/row-stack permutation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PermutationJ:
    """Index map sending the row-stacked b to vec(B) (column-stacked)."""

    q: int
    r: int
    perm: np.ndarray  # vec(B)[i] == b[perm[i]]

    def apply(self, b: np.ndarray) -> np.ndarray:
        return np.asarray(b)[self.perm]

    def apply_inverse(self, vecB: np.ndarray) -> np.ndarray:
        out = np.empty_like(np.asarray(vecB))
        out[self.perm] = vecB
        return out

    def as_matrix(self) -> np.ndarray:
        qr = self.q * self.r
        J = np.zeros((qr, qr))
        J[np.arange(qr), self.perm] = 1.0
        return J


def build_J(q: int, r: int) -> PermutationJ:
    """Permutation with vec(B) = J b for b = (b_1', ..., b_q')'."""
    if q < 1 or r < 1:
        raise ValueError("q and r must be at least 1")
    j, t = np.divmod(np.arange(q * r), q)  # output slot (j*q + t) <- B[t, j]
    return PermutationJ(q=q, r=r, perm=t * r + j)


def rows_to_vec(B: np.ndarray) -> np.ndarray:
    """Row-stacked parameter vector b of a loading matrix."""
    return np.asarray(B, dtype=float).ravel()


def vec_to_rows(b: np.ndarray, q: int, r: int) -> np.ndarray:
    return np.asarray(b, dtype=float).reshape(q, r)


# ---------------------------------------------------------------------------
# linear predictor forms
# ---------------------------------------------------------------------------

def linear_predictor(beta: np.ndarray, B: np.ndarray, alpha_k: np.ndarray,
                     x_ki: np.ndarray, z_ki: np.ndarray) -> float:
    """eta = x'beta + z' B alpha for one observation.

    ``x_ki`` includes the leading 1 for the intercept (length p + 1,
    matching beta); ``z_ki`` has length q.
    """
    beta = np.asarray(beta, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    alpha_k = np.asarray(alpha_k, dtype=float)
    x_ki = np.asarray(x_ki, dtype=float)
    z_ki = np.asarray(z_ki, dtype=float)
    if x_ki.shape[0] != beta.shape[0] or z_ki.shape[0] != B.shape[0] \
            or alpha_k.shape[0] != B.shape[1]:
        raise ValueError("dimension mismatch in linear predictor")
    return float(x_ki @ beta + z_ki @ (B @ alpha_k))


def augmented_design(z_ki: np.ndarray, alpha_draws: np.ndarray,
                     J: PermutationJ = None) -> np.ndarray:
    """M x (qr) matrix whose row m dotted with b gives z' B alpha_m.

    Row m equals (alpha_m kron z) 'routed through' J, which lands at
    kron(z, alpha_m) in the row-stacked parameterization.
    """
    z_ki = np.asarray(z_ki, dtype=float)
    alpha_draws = np.atleast_2d(np.asarray(alpha_draws, dtype=float))
    M, r = alpha_draws.shape
    q = z_ki.shape[0]
    if J is not None and (J.q != q or J.r != r):
        raise ValueError("permutation does not match (q, r)")
    out = z_ki[None, :, None] * alpha_draws[:, None, :]
    return out.reshape(M, q * r)


def implied_covariance(B: np.ndarray) -> np.ndarray:
    """Random-effect covariance B B' implied by a loading matrix."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    return B @ B.T


# ---------------------------------------------------------------------------
# pseudo random effects and Growth Ratio
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PseudoEffectsMatrix:
    """q x K matrix of centered per-group coefficient estimates."""

    G: np.ndarray
    group_labels: tuple
    dropped_groups: tuple = ()


class RankEstimationError(RuntimeError):
    pass


def pseudo_random_effects(data: GroupedDataset, family: Family,
                          small_lambda: float = None,
                          pi: float = 0.5) -> PseudoEffectsMatrix:
    """Per-group penalized GLM coefficients, centered across groups.

    Each group is fit on its own observations over the random-effect
    candidate columns with a light elastic-net penalty (by default
    0.01 * the group's lambda_max, ridge mix pi = 0.5, which keeps the
    per-group problems well posed even when q exceeds the group size).
    Groups whose fits diverge are dropped with a warning as long as at
    least K - 2 groups survive.
    """
    z_cols = data.z_columns
    pred_cols = [t for t in z_cols if t != 0]
    has_intercept = 0 in z_cols
    K = data.n_groups
    estimates = {}
    for k in range(K):
        sl = data.group_slice(k)
        yk = data.y[sl]
        Xk = data.X[sl][:, [t - 1 for t in pred_cols]]
        if yk.shape[0] < 2:
            raise ValueError(f"group {data.group_labels[k]!r} has fewer than 2 observations")
        lam = small_lambda
        if lam is None:
            lam = 0.01 * lambda_max_fixed(Xk, yk, family)
        spec = PenaltySpec("lasso", lam=lam, pi=pi)
        fit = fit_penalized_glm(Xk, yk, family, spec)
        if not np.all(np.isfinite(fit.beta)):
            continue
        gamma_k = np.empty(len(z_cols))
        j = 0
        for t_idx, t in enumerate(z_cols):
            if t == 0:
                gamma_k[t_idx] = fit.intercept if has_intercept else 0.0
            else:
                gamma_k[t_idx] = fit.coef[j]
                j += 1
        estimates[k] = gamma_k
    dropped = tuple(k for k in range(K) if k not in estimates)
    if K - len(dropped) < max(K - 2, 2):
        raise RankEstimationError(
            f"too many per-group fits diverged ({len(dropped)} of {K})")
    if dropped:
        warnings.warn(f"dropped diverged group fits: {dropped}")
    G = np.column_stack([estimates[k] for k in sorted(estimates)])
    G = G - G.mean(axis=1, keepdims=True)
    labels = tuple(data.group_labels[k] for k in sorted(estimates))
    return PseudoEffectsMatrix(G=G, group_labels=labels, dropped_groups=dropped)


def growth_ratio(G, U: int = None):
    """Growth Ratio estimate of the number of latent factors.

    Eigenvalues mu_j of G G' / (qK) are sorted descending; with
    V(j) = sum_{l > j} mu_l and mu*_j = mu_j / V(j), the ratios

        GR(j) = log(1 + mu*_j) / log(1 + mu*_{j+1}),   j = 1..U,

    peak at the true factor count, so the estimate is the argmax.
    Returns (r_hat, gr_values).
    """
    if isinstance(G, PseudoEffectsMatrix):
        G = G.G
    G = np.asarray(G, dtype=float)
    q, K = G.shape
    m = min(q, K)
    if U is None:
        U = min(m // 2, 15)
    if not (1 <= U < m):
        raise ValueError("require 1 <= U < min(q, K)")
    if not np.any(G):
        raise RankEstimationError("all-zero pseudo-effects matrix")
    # Gram matrix on the smaller side; same nonzero spectrum
    gram = G @ G.T if q <= K else G.T @ G
    mu = np.linalg.eigvalsh(gram)[::-1] / (q * K)
    mu = np.clip(mu, 0.0, None)
    # V(j) for j = 1..m (V(m) = 0); need ratios up to index U+1
    tails = np.concatenate([np.cumsum(mu[::-1])[::-1][1:], [0.0]])
    gr = []
    for j in range(1, U + 1):
        V_j, V_j1 = tails[j - 1], tails[j]
        if V_j <= 0 or V_j1 <= 0:
            warnings.warn(f"spectrum tail vanished; truncating U to {j - 1}")
            break
        num = np.log1p(mu[j - 1] / V_j)
        den = np.log1p(mu[j] / V_j1)
        if den <= 0:
            warnings.warn(f"degenerate ratio; truncating U to {j - 1}")
            break
        gr.append(num / den)
    if not gr:
        raise RankEstimationError("no Growth Ratio values computable")
    gr = np.asarray(gr)
    return int(np.argmax(gr)) + 1, gr
