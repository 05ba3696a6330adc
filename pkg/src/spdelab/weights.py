"""Exponential weight family exp(s*exp(lambda*psi(t))) with affine psi.

Only the two affine time profiles actually used by the experiments are
representable: psi(t) = t + c (increasing) and psi(t) = -t + c (decreasing).
Both have |psi'| = 1. The weight is independent of space, so every weighted
spatial integral factors into weight(t) times an unweighted spatial norm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError, WeightOverflowError

#: exp() overflow budget for the outer exponent s*phi
LOG_BUDGET = 700.0

PSI_INCREASING = "increasing"
PSI_DECREASING = "decreasing"


@dataclass(frozen=True)
class CarlemanWeight:
    """Weight pair phi = exp(lam*psi), theta = exp(s*phi)."""

    psi_kind: str
    lam: float
    s: float
    offset: float = 0.0

    def __post_init__(self):
        if self.psi_kind not in (PSI_INCREASING, PSI_DECREASING):
            raise PreconditionError(
                f"psi_kind must be {PSI_INCREASING!r} or {PSI_DECREASING!r}, got {self.psi_kind!r}"
            )
        if self.lam < 0 or self.s < 0:
            raise PreconditionError("lambda and s must be nonnegative")

    @property
    def psi_sign(self) -> float:
        return 1.0 if self.psi_kind == PSI_INCREASING else -1.0

    def psi(self, t):
        return self.psi_sign * np.asarray(t, dtype=float) + self.offset

    @property
    def psi_t(self) -> float:
        """Time derivative of psi; +-1 for the two affine kinds."""
        return self.psi_sign

    def phi(self, t):
        return np.exp(self.lam * self.psi(t))

    def log_theta(self, t):
        return self.s * self.phi(t)

    def theta(self, t):
        self.check_budget(t)
        return np.exp(self.log_theta(t))

    def evaluate(self, t: float) -> tuple[float, float]:
        """Return (phi(t), theta(t)), guarding the outer exponential."""
        phi = float(self.phi(t))
        exponent = self.s * phi
        if exponent > LOG_BUDGET:
            raise WeightOverflowError(self.s, self.lam, float(t), exponent)
        return phi, float(np.exp(exponent))

    def check_budget(self, t) -> None:
        exponent = np.max(self.log_theta(t))
        if exponent > LOG_BUDGET:
            t_arr = np.asarray(t, dtype=float)
            t_bad = float(t_arr.reshape(-1)[int(np.argmax(np.asarray(self.log_theta(t)).reshape(-1)))])
            raise WeightOverflowError(self.s, self.lam, t_bad, float(exponent))

    def rate(self, t):
        """mu(t) = d(log theta)/dt = s*lam*phi(t)*psi'(t)."""
        return self.s * self.lam * self.phi(t) * self.psi_t

    def rate_t(self, t):
        """mu'(t) = s*lam^2*phi*psi'^2 (psi'' = 0 for affine psi)."""
        return self.s * self.lam**2 * self.phi(t) * self.psi_t**2


@dataclass(frozen=True)
class HolderExponent:
    """Interpolation exponent in (0,1), distinct from the weight theta."""

    theta: float
    provenance: str = "fitted"

    def __post_init__(self):
        if not (0.0 < self.theta < 1.0):
            raise PreconditionError(f"Holder exponent must lie in (0,1), got {self.theta}")
