"""Finite-horizon exit-probability bound from certificate constants.

Two regimes, split on whether the unsafe threshold dominates the offset
psi/kappa: a supermartingale regime with geometric decay toward psi, and a
c-martingale regime where the bound accumulates psi mass per step.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InputError

_CLAMP_TOL = 1e-12


@dataclass(frozen=True)
class SafetyBound:
    delta: float  # bound on the probability of reaching the unsafe level
    branch: int  # 1: lambda >= psi/kappa, 2: otherwise
    gamma: float
    lam: float
    kappa: float
    psi: float
    horizon: int

    @property
    def safety(self) -> float:
        return 1.0 - self.delta

    def to_json(self) -> dict:
        return {"delta": self.delta, "safety": self.safety, "branch": self.branch,
                "gamma": self.gamma, "lambda": self.lam, "kappa": self.kappa,
                "psi": self.psi, "horizon": self.horizon}


def safety_bound(gamma: float, lam: float, kappa: float, psi: float,
                 horizon: int) -> SafetyBound:
    """Probability bound delta for sup_{k <= horizon} B(x(k)) >= lambda from
    an initial state with B <= gamma.

    Ties between lambda and psi/kappa take branch 1.  Values escaping [0, 1]
    by more than floating-point noise raise: a delta above 1 means the
    constants make the bound vacuous, which the caller should see rather
    than silently truncate.
    """
    if not (0.0 < kappa < 1.0):
        raise InputError(f"kappa must lie in (0, 1), got {kappa}")
    if lam <= 0.0:
        raise InputError(f"lambda must be positive, got {lam}")
    if gamma < 0.0 or psi < 0.0:
        raise InputError("gamma and psi must be >= 0")
    if not (gamma < lam):
        raise InputError(f"gamma={gamma} must be strictly below lambda={lam}")
    if not isinstance(horizon, int) or horizon < 0:
        raise InputError(f"horizon must be a nonnegative integer, got {horizon!r}")

    if lam >= psi / kappa:
        branch = 1
        delta = 1.0 - (1.0 - gamma / lam) * (1.0 - psi / lam) ** horizon
    else:
        branch = 2
        decay = (1.0 - kappa) ** horizon
        delta = (gamma / lam) * decay + (psi / (kappa * lam)) * (1.0 - decay)

    if delta < 0.0:
        if delta < -_CLAMP_TOL:
            raise InputError(f"computed bound {delta} is negative beyond "
                             "floating-point noise")
        delta = 0.0
    if delta > 1.0:
        if delta > 1.0 + _CLAMP_TOL:
            raise InputError(
                f"computed bound {delta:.6g} exceeds 1: the constants "
                "(psi/(kappa*lambda) > 1 over this horizon) make the bound vacuous")
        delta = 1.0
    return SafetyBound(delta=delta, branch=branch, gamma=gamma, lam=lam,
                       kappa=kappa, psi=psi, horizon=horizon)
