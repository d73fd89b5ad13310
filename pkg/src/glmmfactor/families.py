"""Exponential-family definitions and log densities.

Each family is parameterized through its canonical link, so the
log density of a single observation is

    log f(y | eta) = log c(y) + (y * eta - b(eta)) / tau

with cumulant function b(.) and dispersion tau.  Binomial (logit) and
Poisson (log) fix tau = 1; the Gaussian (identity) family carries a
free dispersion and is mainly useful because it admits closed-form
posteriors for the latent factors, which makes it a convenient
testing ground for the samplers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln


class FamilyError(ValueError):
    """Raised when a response value is outside the family's support."""


@dataclass(frozen=True)
class Family:
    """An exponential family with canonical link.

    kind: one of "binomial" (logit link), "poisson" (log link),
    "gaussian" (identity link).
    """

    kind: str

    _KINDS = ("binomial", "poisson", "gaussian")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown family kind {self.kind!r}")

    @property
    def dispersion_free(self) -> bool:
        return self.kind == "gaussian"

    # -- support ----------------------------------------------------------
    def check_support(self, y) -> None:
        y = np.asarray(y)
        if not np.all(np.isfinite(y)):
            raise FamilyError("response contains non-finite values")
        if self.kind == "binomial":
            if not np.all((y == 0) | (y == 1)):
                raise FamilyError("binomial responses must be in {0, 1}")
        elif self.kind == "poisson":
            if not np.all((y >= 0) & (y == np.floor(y))):
                raise FamilyError("poisson responses must be nonnegative integers")

    def in_support(self, y) -> bool:
        try:
            self.check_support(y)
        except FamilyError:
            return False
        return True

    # -- canonical quantities ----------------------------------------------
    def cumulant(self, eta):
        """b(eta): log(1+e^eta), e^eta, or eta^2/2."""
        eta = np.asarray(eta, dtype=float)
        if self.kind == "binomial":
            return np.logaddexp(0.0, eta)
        if self.kind == "poisson":
            return np.exp(eta)
        return 0.5 * eta**2

    def mean(self, eta):
        """b'(eta): the conditional mean of y given eta."""
        eta = np.asarray(eta, dtype=float)
        if self.kind == "binomial":
            return expit(eta)
        if self.kind == "poisson":
            return np.exp(eta)
        return eta

    def variance(self, eta):
        """b''(eta): the conditional variance of y given eta (tau = 1)."""
        eta = np.asarray(eta, dtype=float)
        if self.kind == "binomial":
            mu = expit(eta)
            return mu * (1.0 - mu)
        if self.kind == "poisson":
            return np.exp(np.minimum(eta, 30.0))
        return np.ones_like(eta)

    def log_normalizer(self, y, tau: float = 1.0):
        """log c(y): 0 for binomial, -log(y!) for poisson, Gaussian constant."""
        y = np.asarray(y, dtype=float)
        if self.kind == "binomial":
            return np.zeros_like(y)
        if self.kind == "poisson":
            return -gammaln(y + 1.0)
        return -0.5 * y**2 / tau - 0.5 * np.log(2.0 * np.pi * tau)

    def mean_link(self, mu: float) -> float:
        """Inverse of mean(): eta such that b'(eta) = mu."""
        if self.kind == "binomial":
            mu = min(max(mu, 1e-10), 1.0 - 1e-10)
            return float(np.log(mu / (1.0 - mu)))
        if self.kind == "poisson":
            return float(np.log(max(mu, 1e-10)))
        return float(mu)


def log_density(family: Family, y, eta, tau: float = 1.0):
    """Log density log f(y | eta) of the exponential family.

    Vectorized over broadcastable ``y`` and ``eta``.  Stable for
    |eta| up to 700.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    family.check_support(y)
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    return family.log_normalizer(y, tau) + (y * eta - family.cumulant(eta)) / tau


BINOMIAL = Family("binomial")
POISSON = Family("poisson")
GAUSSIAN = Family("gaussian")
