"""Model parameter state shared by the E- and M-steps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ThetaState:
    """Parameters theta = (beta, b, tau).

    ``beta`` has length p + 1 with the intercept at index 0.  The
    loading matrix ``B`` is q x r; its row-stacked vector view is ``b``.
    ``tau`` is the dispersion, fixed at 1 for binomial and poisson.
    """

    beta: np.ndarray
    B: np.ndarray
    tau: float = 1.0

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float).copy()
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float)).copy()
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not (np.all(np.isfinite(self.beta)) and np.all(np.isfinite(self.B))):
            raise ValueError("non-finite parameters")

    @property
    def b(self) -> np.ndarray:
        """Row-stacked loading vector (b_1', ..., b_q')'."""
        return self.B.ravel()

    @property
    def q(self) -> int:
        return self.B.shape[0]

    @property
    def r(self) -> int:
        return self.B.shape[1]

    def copy(self) -> "ThetaState":
        return ThetaState(self.beta.copy(), self.B.copy(), self.tau)

    def row_norms(self) -> np.ndarray:
        return np.linalg.norm(self.B, axis=1)

    def max_abs_difference(self, other: "ThetaState") -> float:
        """Largest absolute change in (beta, b) between two states."""
        return max(
            float(np.max(np.abs(self.beta - other.beta))),
            float(np.max(np.abs(self.B - other.B))) if self.B.size else 0.0,
        )

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "B": self.B.tolist(),
            "tau": self.tau,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ThetaState":
        return cls(np.asarray(d["beta"]), np.asarray(d["B"]), float(d["tau"]))
