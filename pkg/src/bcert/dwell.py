"""Dwell-time arithmetic: mode-mismatch ratio, minimum dwell time, and the
lift from per-mode certificates to a dwell-augmented certificate.

The lift rescales each per-mode barrier by kappa_p**(-l/epsilon) and pays for
it in the constants; its hypothesis couples the dwell time k_d to the
mismatch ratio mu and the contraction rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .certify import (ApbcCertificate, CbcCertificate, CertConstants, CertStatus,
                      GridConfig, PowerLawFn, UNCHECKED, ZERO_GAIN, boxset_grid,
                      pattern_search_min, _bounding_box)
from .errors import InputError
from .model import BoxSet

_NEG_TOL = -1e-9


def _as_mode_dict(certs) -> dict[int, CbcCertificate]:
    if isinstance(certs, Mapping):
        d = dict(certs)
    else:
        d = {c.mode: c for c in certs}
        if len(d) != len(list(certs)):
            raise InputError("duplicate modes in certificate list")
    if sorted(d) != list(range(1, len(d) + 1)):
        raise InputError("certificates must cover modes 1..m")
    for p, c in d.items():
        if c.mode != p:
            raise InputError(f"certificate keyed {p} has mode {c.mode}")
    return d


@dataclass(frozen=True)
class MuEstimate:
    """Grid estimate of mu = max_{p,q} sup_X B_p / B_q.

    `raw` is the plain grid/refinement maximum (a lower bound on the true
    sup-ratio); `inflated` applies the caller's safety factor.  `argmax`
    records the ordered mode pair and state achieving the estimate."""

    raw: float
    inflated: float
    argmax: tuple[int, int, tuple[float, ...]]
    n_points: int
    skipped: int
    inflation: float

    def __float__(self) -> float:
        return self.inflated


def estimate_mu(certs, X: BoxSet, cfg: GridConfig = GridConfig(),
                inflation: float = 1.05, denom_floor: float = 1e-6) -> MuEstimate:
    """Estimate the barrier mismatch ratio over a state grid.

    Near a common zero of the barriers the pointwise ratio is numerically
    meaningless (both values are rounding dust), so points where a denominator
    barrier falls below `denom_floor` times its own grid maximum are skipped
    and counted in the report.  A barrier that goes below -1e-9 anywhere on
    the grid is rejected outright.  Pattern-search refinement pushes the ratio
    up from the best grid point, so `raw` remains a lower bound on the true
    sup; `inflated` applies the safety factor (default 5%).
    """
    d = _as_mode_dict(certs)
    modes = sorted(d)
    if inflation < 1.0:
        raise InputError(f"inflation factor must be >= 1, got {inflation}")
    grid = boxset_grid(X, cfg, 97)
    pts = grid.points
    if pts.shape[0] == 0:
        raise InputError("cannot estimate mu on an empty state set")
    vals = {p: d[p].barrier.eval_many(pts) for p in modes}
    for p in modes:
        if float(np.min(vals[p])) < _NEG_TOL:
            i = int(np.argmin(vals[p]))
            raise InputError(
                f"barrier for mode {p} is negative ({vals[p][i]:.3e}) at "
                f"{[float(v) for v in pts[i]]}; mu is undefined")
    floors = {p: denom_floor * max(1.0, float(np.max(np.abs(vals[p]))))
              for p in modes}

    best = 1.0
    best_pair = (modes[0], modes[0])
    best_x = tuple(float(v) for v in pts[0])
    skipped = 0
    for p in modes:
        for q in modes:
            if p == q:
                continue
            denom = vals[q]
            mask = denom >= floors[q]
            skipped += int(np.sum(~mask))
            if not np.any(mask):
                continue
            ratio = np.where(mask, vals[p] / np.maximum(denom, floors[q]), -np.inf)
            i = int(np.argmax(ratio))
            if ratio[i] > best:
                best = float(ratio[i])
                best_pair = (p, q)
                best_x = tuple(float(v) for v in pts[i])

    # refine the best pair with pattern search (maximize ratio = minimize -ratio)
    if best_pair[0] != best_pair[1]:
        p, q = best_pair
        lo, hi = _bounding_box(X)

        def neg_ratio(x):
            bq = d[q].barrier(x)
            if bq < floors[q]:
                return math.inf
            return -d[p].barrier(x) / bq

        x_ref, f_ref = pattern_search_min(neg_ratio, np.asarray(best_x), lo, hi,
                                          grid.resolution, cfg.refine_iters)
        if -f_ref > best and X.contains(x_ref):
            best = float(-f_ref)
            best_x = tuple(float(v) for v in x_ref)

    best = max(best, 1.0)
    return MuEstimate(raw=best, inflated=best * inflation,
                      argmax=(best_pair[0], best_pair[1], best_x),
                      n_points=pts.shape[0] * len(modes) * max(1, len(modes) - 1),
                      skipped=skipped, inflation=inflation)


def min_dwell_time(epsilon: float, mu: float, kappas) -> int:
    """Smallest integer k_d with k_d >= epsilon ln(mu)/ln(1/kappa_p) + 1 for
    every mode; mu = 1 gives 1 regardless of epsilon."""
    if epsilon <= 1.0:
        raise InputError(f"epsilon must exceed 1, got {epsilon}")
    if mu < 1.0:
        raise InputError(f"mu must be >= 1, got {mu}")
    kap = dict(kappas) if isinstance(kappas, Mapping) else \
        {i + 1: k for i, k in enumerate(kappas)}
    if not kap:
        raise InputError("at least one mode required")
    for p, k in kap.items():
        if not (0.0 < k < 1.0):
            raise InputError(f"kappa for mode {p} must lie in (0, 1), got {k}")
    bound = max(epsilon * math.log(mu) / math.log(1.0 / k) + 1.0 for k in kap.values())
    return max(1, math.ceil(bound - 1e-9))


def dwell_tradeoff(mu: float, kappas,
                   eps_grid: Sequence[float] = (1.1, 1.25, 1.5, 2.0, 3.0, 5.0, 10.0)
                   ) -> list[tuple[float, int]]:
    """(epsilon, minimal k_d) table: smaller epsilon weakens the lifted
    constants less but demands a longer dwell time."""
    return [(eps, min_dwell_time(eps, mu, kappas)) for eps in eps_grid]


def _common_exponent(fns: list[PowerLawFn], what: str) -> float:
    exps = {f.exp for f in fns if not f.is_zero()}
    if len(exps) > 1:
        raise InputError(f"{what} exponents differ across modes: {sorted(exps)}")
    return exps.pop() if exps else 2.0


def lift_to_apbc(certs, epsilon: float, k_d: int, mu: float | None = None
                 ) -> ApbcCertificate:
    """Lift per-mode certificates to a dwell-augmented certificate.

    B(x,p,l) = kappa_p**(-l/epsilon) B_p(x); the constants degrade by powers
    of kappa_p**(1/epsilon).  When `mu` is given, the dwell-time hypothesis
    k_d >= epsilon ln(mu)/ln(1/kappa_p) + 1 is enforced; otherwise the caller
    vouches for it (e.g. mu estimated elsewhere).
    """
    d = _as_mode_dict(certs)
    modes = sorted(d)
    if epsilon <= 1.0:
        raise InputError(f"epsilon must exceed 1, got {epsilon}")
    if k_d < 1:
        raise InputError(f"k_d must be >= 1, got {k_d}")
    if mu is not None:
        need = min_dwell_time(epsilon, mu, {p: d[p].constants.kappa for p in modes})
        if k_d < need:
            raise InputError(
                f"k_d={k_d} violates the dwell-time hypothesis: mu={mu} and "
                f"epsilon={epsilon} require k_d >= {need}")
    for p in modes:
        if d[p].constants.alpha is None:
            raise InputError(f"mode {p} certificate lacks an alpha comparison function")

    kap = {p: d[p].constants.kappa for p in modes}
    alpha_exp = _common_exponent([d[p].constants.alpha for p in modes], "alpha")
    rho_exp = _common_exponent([d[p].constants.rho for p in modes], "rho")

    gamma = max(kap[p] ** (-(k_d - 1) / epsilon) * d[p].constants.gamma for p in modes)
    lam = min(d[p].constants.lam for p in modes)
    kappa = max(kap[p] ** ((epsilon - 1) / epsilon) for p in modes)
    psi = max(kap[p] ** (-k_d / epsilon) * d[p].constants.psi for p in modes)
    rho_coef = max(kap[p] ** (-k_d / epsilon) * d[p].constants.rho.coef for p in modes)
    alpha_coef = min(d[p].constants.alpha.coef for p in modes)

    constants = CertConstants(
        kappa=kappa, gamma=gamma, lam=lam, psi=psi,
        alpha=PowerLawFn(alpha_coef, alpha_exp) if alpha_coef > 0 else None,
        rho=PowerLawFn(rho_coef, rho_exp) if rho_coef > 0 else ZERO_GAIN)
    if constants.alpha is None:
        raise InputError("lifted alpha coefficient must stay positive")
    return ApbcCertificate(
        barriers={p: d[p].barrier for p in modes}, kappas=kap,
        epsilon=epsilon, k_d=k_d, constants=constants, status=UNCHECKED)


def lift_derivation(certs, epsilon: float, k_d: int) -> list[dict]:
    """Human-readable table of how each lifted constant was produced."""
    d = _as_mode_dict(certs)
    modes = sorted(d)
    kap = {p: d[p].constants.kappa for p in modes}
    rows = []

    def row(name, formula, per_mode, value):
        rows.append({"constant": name, "formula": formula,
                     "per_mode": per_mode, "value": value})

    row("gamma", "max_p kappa_p^(-(k_d-1)/epsilon) * gamma_p",
        {p: kap[p] ** (-(k_d - 1) / epsilon) * d[p].constants.gamma for p in modes},
        max(kap[p] ** (-(k_d - 1) / epsilon) * d[p].constants.gamma for p in modes))
    row("lambda", "min_p lambda_p",
        {p: d[p].constants.lam for p in modes},
        min(d[p].constants.lam for p in modes))
    row("kappa", "max_p kappa_p^((epsilon-1)/epsilon)",
        {p: kap[p] ** ((epsilon - 1) / epsilon) for p in modes},
        max(kap[p] ** ((epsilon - 1) / epsilon) for p in modes))
    row("psi", "max_p kappa_p^(-k_d/epsilon) * psi_p",
        {p: kap[p] ** (-k_d / epsilon) * d[p].constants.psi for p in modes},
        max(kap[p] ** (-k_d / epsilon) * d[p].constants.psi for p in modes))
    row("rho", "max_p kappa_p^(-k_d/epsilon) * rho_p",
        {p: kap[p] ** (-k_d / epsilon) * d[p].constants.rho.coef for p in modes},
        max(kap[p] ** (-k_d / epsilon) * d[p].constants.rho.coef for p in modes))
    row("alpha", "min_p alpha_p",
        {p: d[p].constants.alpha.coef for p in modes},
        min(d[p].constants.alpha.coef for p in modes))
    return rows


def common_barrier_apbc(certs, k_d: int = 1, epsilon: float = 2.0
                        ) -> ApbcCertificate:
    """Degenerate lift for identical per-mode barriers (mu = 1): B(x,p,l) =
    B(x) is itself an augmented certificate with the undegraded constants
    gamma = max gamma_p, lambda = min lambda_p, kappa = max kappa_p,
    psi = max psi_p.  Only k_d = 1 keeps the counter factor at 1; longer
    dwell times must go through the general lift."""
    if k_d != 1:
        raise InputError("the degenerate lift is exact only for k_d = 1; "
                         "use lift_to_apbc for longer dwell times")
    d = _as_mode_dict(certs)
    modes = sorted(d)
    b0 = d[modes[0]].barrier
    for p in modes[1:]:
        if d[p].barrier != b0:
            raise InputError(
                "the degenerate lift requires identical barriers in every mode")
    for p in modes:
        if d[p].constants.alpha is None:
            raise InputError(f"mode {p} certificate lacks an alpha comparison function")
    alpha_exp = _common_exponent([d[p].constants.alpha for p in modes], "alpha")
    rho_exp = _common_exponent([d[p].constants.rho for p in modes], "rho")
    rho_coef = max(d[p].constants.rho.coef for p in modes)
    constants = CertConstants(
        kappa=max(d[p].constants.kappa for p in modes),
        gamma=max(d[p].constants.gamma for p in modes),
        lam=min(d[p].constants.lam for p in modes),
        psi=max(d[p].constants.psi for p in modes),
        alpha=PowerLawFn(min(d[p].constants.alpha.coef for p in modes), alpha_exp),
        rho=PowerLawFn(rho_coef, rho_exp) if rho_coef > 0 else ZERO_GAIN)
    return ApbcCertificate(
        barriers={p: d[p].barrier for p in modes},
        kappas={p: d[p].constants.kappa for p in modes},
        epsilon=epsilon, k_d=k_d, constants=constants, status=UNCHECKED)
