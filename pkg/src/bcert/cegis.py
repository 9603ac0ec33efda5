"""Counterexample-guided synthesis of per-mode barrier certificates.

The bilinear unknowns (kappa, lambda, alpha-coefficient) are enumerated on an
outer grid; for fixed values the remaining unknowns (theta, gamma, psi,
rho-coefficient) enter every condition linearly, so candidate fitting over a
counterexample pool is a phase-1 linear program, solved exactly (HiGHS via
scipy) and followed by lexicographic minimization of the offset constants so
the fitted certificate is not vacuously loose.  The max on the right-hand
side of the expectation condition is resolved per pool point by constraining
against the disjunct that was largest under the previous iterate (seeded by
the constant-offset disjunct, re-seeded from a levels-only fit when that
selection is infeasible).  Candidates are falsified with the independent
grid checker; the synthesizer never certifies its own output.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.stats import qmc

from .certify import (CbcCertificate, CertConstants, CertStatus, GridConfig,
                      PowerLawFn, ZERO_GAIN, all_verified, check_cbc)
from .errors import ConfigurationError, InputError
from .model import BoxSet, SubsystemSpec, VariableSpace
from .polyalg import Polynomial, expectation_over_noise, poly_compose


@dataclass(frozen=True)
class Template:
    """Search space: a dense polynomial basis up to `degree` plus outer grids
    for the constants that multiply the unknowns."""

    degree: int
    kappa_grid: tuple[float, ...] = (0.3, 0.5, 0.7, 0.9, 0.99)
    lambda_grid: tuple[float, ...] | None = None  # None: anchored to X1
    alpha_coefs: tuple[float, ...] = (1e-6, 1e-4, 1e-2)
    alpha_exp: float = 2.0
    rho_exp: float = 2.0
    theta_bound: float = 100.0

    def __post_init__(self) -> None:
        if self.degree < 0:
            raise InputError(f"degree must be >= 0, got {self.degree}")
        if not self.kappa_grid or not all(0 < k < 1 for k in self.kappa_grid):
            raise ConfigurationError("kappa candidates must lie in (0, 1)")
        if self.lambda_grid is not None and (
                not self.lambda_grid or any(v <= 0 for v in self.lambda_grid)):
            raise ConfigurationError("lambda candidates must be positive")
        if not self.alpha_coefs or any(a <= 0 for a in self.alpha_coefs):
            raise ConfigurationError("alpha-coefficient candidates must be positive")
        if self.theta_bound <= 0:
            raise ConfigurationError("theta bound must be positive")


def monomial_basis(nvars: int, degree: int) -> list[tuple[int, ...]]:
    """All exponent tuples of total degree <= degree, graded order."""
    out = []
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(nvars), total):
            exp = [0] * nvars
            for v in combo:
                exp[v] += 1
            out.append(tuple(exp))
    return out


@dataclass
class PoolPoint:
    condition: str  # C1..C4
    x: tuple[float, ...]
    w: tuple[float, ...]
    margin: float  # violation margin when added (negative); 0.0 for seeds
    seed_point: bool
    candidate: dict | None  # snapshot of the candidate it falsified


@dataclass
class CegisState:
    pool: dict[str, list[PoolPoint]]
    iterations: int
    budget: int
    best_margin: float = -math.inf
    best_candidate: dict | None = None

    def pool_sizes(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.pool.items()}


@dataclass
class SynthesisFailure:
    message: str
    iterations: int
    best_margin: float
    best_candidate: dict | None
    pool_sizes: dict[str, int]
    candidates_tried: int

    def to_json(self) -> dict:
        return {"message": self.message, "iterations": self.iterations,
                "best_margin": self.best_margin,
                "best_candidate": self.best_candidate,
                "pool_sizes": self.pool_sizes,
                "candidates_tried": self.candidates_tried}


def _lhs_points(bs: BoxSet, n: int, seed: int) -> np.ndarray:
    if bs.is_empty():
        return np.zeros((0, bs.dim))
    if bs.dim == 0:
        return np.zeros((1, 0))
    sampler = qmc.LatinHypercube(d=bs.dim, seed=seed)
    unit = sampler.random(n)
    # spread points across boxes round-robin for unions
    out = np.empty((n, bs.dim))
    for i in range(n):
        box = bs.boxes[i % len(bs.boxes)]
        lo = np.array([b[0] for b in box])
        hi = np.array([b[1] for b in box])
        out[i] = lo + unit[i] * (hi - lo)
    return out


def _default_lambda_grid(sys: SubsystemSpec, seed: int) -> tuple[float, ...]:
    """Log grid for the unsafe level, anchored to the squared state magnitude
    on X1 (a scale proxy only; the true barrier range is unknown up front, so
    the scan spans several decades around it)."""
    pts = _lhs_points(sys.X1, 128, seed)
    if pts.shape[0] == 0:
        return (1.0,)
    m = float(np.median(np.max(np.abs(pts), axis=1) ** 2))
    if m <= 0:
        return (1.0,)
    return tuple(m * f for f in (1e-3, 1e-2, 1e-1, 1.0, 10.0))


class _Lp:
    """Pool-constrained phase-1 problem for fixed (kappa, lambda, alpha).

    Unknowns z = (theta..., gamma, psi, rho_coef); every constraint is
    g(z) = a.z + b <= 0.  Feasibility is decided by an exact phase-1 linear
    program; feasible fits are then tightened by minimizing psi, the
    rho-coefficient, and gamma in turn.
    """

    SLACK = 2e-9  # strict margin kept on every row of a tightened fit

    def __init__(self, sys: SubsystemSpec, mode: int, template: Template,
                 kappa: float, lam: float, alpha_coef: float):
        self.sys = sys
        self.template = template
        self.kappa = kappa
        self.lam = lam
        self.alpha_coef = alpha_coef
        n = sys.state_dim
        self.basis = monomial_basis(n, template.degree)
        self.barrier_space = VariableSpace.make(states=list(sys.state_names))
        self.phi = [Polynomial(self.barrier_space, {exp: 1.0}) for exp in self.basis]
        # expected next-step value of each basis function, over (state, input)
        subs = {name: comp for name, comp
                in zip(sys.state_names, sys.dynamics[mode])}
        self.e_phi = [expectation_over_noise(poly_compose(ph, subs),
                                             sys.noise_specs_by_name())
                      for ph in self.phi]
        self.h = sys.external_output()
        self.nb = len(self.basis)
        self.nz = self.nb + 3  # theta, gamma, psi, rho_coef
        self.has_input = sys.input_dim > 0

    def basis_rows(self, xs: np.ndarray) -> np.ndarray:
        return np.stack([ph.eval_many(xs) for ph in self.phi], axis=-1)

    def e_rows(self, xws: np.ndarray) -> np.ndarray:
        return np.stack([ep.eval_many(xws) for ep in self.e_phi], axis=-1)

    def out_norm(self, xs: np.ndarray) -> np.ndarray:
        vals = np.stack([comp.eval_many(xs) for comp in self.h], axis=-1)
        return np.max(np.abs(vals), axis=1)

    def constraints(self, pool: dict[str, list[PoolPoint]],
                    prev: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
        """Rows (A, b) with g = A z + b <= 0 for the current pool and the
        disjunct selection induced by the previous iterate."""
        A_rows, b_rows = [], []
        ig, ip, ir = self.nb, self.nb + 1, self.nb + 2

        pts = pool["C1"]
        if pts:
            xs = np.array([p.x for p in pts])
            phi = self.basis_rows(xs)
            alpha_term = self.alpha_coef * self.out_norm(xs) ** self.template.alpha_exp
            for r, row in enumerate(phi):
                a = np.zeros(self.nz)
                a[: self.nb] = -row
                A_rows.append(a)
                b_rows.append(alpha_term[r])
        pts = pool["C2"]
        if pts:
            xs = np.array([p.x for p in pts])
            phi = self.basis_rows(xs)
            for row in phi:
                a = np.zeros(self.nz)
                a[: self.nb] = row
                a[ig] = -1.0
                A_rows.append(a)
                b_rows.append(0.0)
        pts = pool["C3"]
        if pts:
            xs = np.array([p.x for p in pts])
            phi = self.basis_rows(xs)
            for row in phi:
                a = np.zeros(self.nz)
                a[: self.nb] = -row
                A_rows.append(a)
                b_rows.append(self.lam)
        pts = pool["C4"]
        if pts:
            xs = np.array([p.x for p in pts])
            wns = np.array([np.max(np.abs(p.w)) if p.w else 0.0 for p in pts])
            xws = np.hstack([xs, np.array([p.w for p in pts])]) \
                if self.has_input else xs
            erow = self.e_rows(xws)
            phi = self.basis_rows(xs)
            for r in range(len(pts)):
                choice = "psi"
                if prev is not None:
                    theta_prev = prev[: self.nb]
                    vals = {
                        "kb": self.kappa * float(phi[r] @ theta_prev),
                        "rho": float(prev[ir]) * wns[r] ** self.template.rho_exp,
                        "psi": float(prev[ip]),
                    }
                    choice = max(("psi", "kb", "rho"), key=lambda k: vals[k])
                a = np.zeros(self.nz)
                a[: self.nb] = erow[r]
                if choice == "psi":
                    a[ip] -= 1.0
                    b_rows.append(0.0)
                elif choice == "kb":
                    a[: self.nb] -= self.kappa * phi[r]
                    b_rows.append(0.0)
                else:
                    a[ir] -= wns[r] ** self.template.rho_exp
                    b_rows.append(0.0)
                A_rows.append(a)
        if not A_rows:
            raise ConfigurationError("empty counterexample pool")
        return np.array(A_rows), np.array(b_rows)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        tb = self.template.theta_bound
        lo = np.concatenate([np.full(self.nb, -tb), [0.0, 0.0, 0.0]])
        hi = np.concatenate([np.full(self.nb, tb),
                             [0.99 * self.lam, self.lam,
                              tb if self.has_input else 0.0]])
        return lo, hi

    def _phase1(self, A, b) -> tuple[np.ndarray, float]:
        """Minimize the max constraint violation t over the variable box;
        t* <= -1e-9 certifies a strictly feasible fit."""
        lo, hi = self.bounds()
        cost = np.zeros(self.nz + 1)
        cost[-1] = 1.0
        aug = np.hstack([A, -np.ones((A.shape[0], 1))])
        res = linprog(cost, A_ub=aug, b_ub=-b,
                      bounds=list(zip(lo, hi)) + [(None, None)],
                      method="highs")
        if not res.success:
            # numerically degenerate pools surface as solver failure; report
            # them as infeasible rather than guessing a point
            return np.clip(np.zeros(self.nz), lo, hi), math.inf
        return res.x[:-1], float(res.x[-1])

    def _tightened(self, A, b, z0: np.ndarray) -> np.ndarray:
        """Lexicographically minimize psi, the rho-coefficient, and gamma
        over the feasible set; a strict row margin keeps the result off the
        pool boundary and each minimized constant is locked before the
        next."""
        lo, hi = self.bounds()
        hi = hi.copy()
        order = [self.nb + 1] + ([self.nb + 2] if self.has_input else []) \
            + [self.nb]
        z = z0
        for idx in order:
            cost = np.zeros(self.nz)
            cost[idx] = 1.0
            res = linprog(cost, A_ub=A, b_ub=-b - self.SLACK,
                          bounds=list(zip(lo, hi)), method="highs")
            if not res.success:
                break
            z = res.x
            hi[idx] = min(hi[idx], float(z[idx]) + self.SLACK)
        return z

    def solve(self, pool, prev) -> tuple[np.ndarray, float]:
        A, b = self.constraints(pool, prev)
        z, v = self._phase1(A, b)
        n_level = len(pool["C1"]) + len(pool["C2"]) + len(pool["C3"])
        if v > -1e-9 and n_level and len(pool["C4"]):
            # The disjunct selection induced by `prev` (or the all-psi seed)
            # can be infeasible even when another selection is not, and the
            # argmax re-selection cannot escape it when the infeasible fit
            # collapses to a flat barrier with psi at its cap.  Re-seed the
            # selection from a fit of the level conditions alone (which gives
            # the barrier its shape), with a small offset and a gain
            # coefficient at the candidate scale so every disjunct is
            # reachable.
            zs, vs = self._phase1(A[:n_level], b[:n_level])
            if vs <= -1e-9:
                seed = zs.copy()
                seed[self.nb + 1] = 1e-3 * self.lam
                if self.has_input:
                    seed[self.nb + 2] = self.lam
                A2, b2 = self.constraints(pool, seed)
                z2, v2 = self._phase1(A2, b2)
                if v2 < v:
                    A, b, z, v = A2, b2, z2, v2
        if v <= -1e-9:
            z = self._tightened(A, b, z)
            v = float(np.max(A @ z + b))
            # re-select the expectation-condition disjuncts under the found
            # iterate and re-fit; any selection is sound (it strengthens the
            # max), so a failed re-fit just keeps the previous iterate
            for _ in range(2):
                A2, b2 = self.constraints(pool, z)
                if A2.shape == A.shape and np.array_equal(A2, A) \
                        and np.array_equal(b2, b):
                    break
                z2, v2 = self._phase1(A2, b2)
                if v2 > -1e-9:
                    break
                z2 = self._tightened(A2, b2, z2)
                A, b, z = A2, b2, z2
                v = float(np.max(A @ z + b))
        return z, v


def _candidate_snapshot(theta, kappa, lam, alpha_coef, gamma, psi, rho_coef,
                        basis) -> dict:
    return {"theta": [float(t) for t in theta],
            "basis": [list(e) for e in basis],
            "kappa": kappa, "lambda": lam, "alpha_coef": alpha_coef,
            "gamma": float(gamma), "psi": float(psi),
            "rho_coef": float(rho_coef)}


def synthesize_cbc(sys: SubsystemSpec, mode: int, template: Template,
                   budget: int = 200, grid: GridConfig | None = None,
                   seed: int = 0, log: list | None = None
                   ) -> CbcCertificate | SynthesisFailure:
    """Synthesize a per-mode certificate, or report failure with the best
    margin seen.  Deterministic for fixed inputs and seed.

    Budget counts fit+falsify iterations summed over all outer candidates.
    Every returned certificate carries the status assigned by check_cbc.
    When `log` is a list, one record per iteration is appended (candidate
    constants, event, margin, pool sizes).
    """
    if mode not in sys.dynamics:
        raise InputError(f"mode {mode} not in mode set of {sys.id!r}")
    if budget < 1:
        raise InputError("budget must be >= 1")
    if grid is None:
        grid = GridConfig(resolution=None, points_per_dim=50, refine_starts=6,
                          refine_iters=40)
    lam_grid = template.lambda_grid or _default_lambda_grid(sys, seed + 5)
    candidates = [(k, lam, a) for k in template.kappa_grid
                  for lam in lam_grid for a in template.alpha_coefs]
    if not candidates:
        raise ConfigurationError("no (kappa, lambda, alpha) candidates to try")

    state = CegisState(pool={c: [] for c in ("C1", "C2", "C3", "C4")},
                       iterations=0, budget=budget)
    tried = 0
    for cand_idx, (kappa, lam, alpha_coef) in enumerate(candidates):
        if state.iterations >= budget:
            break
        tried += 1
        lp = _Lp(sys, mode, template, kappa, lam, alpha_coef)
        pool = {
            "C1": [PoolPoint("C1", tuple(x), (), 0.0, True, None)
                   for x in _lhs_points(sys.X, 64, seed + 11 + 1000 * cand_idx)],
            "C2": [PoolPoint("C2", tuple(x), (), 0.0, True, None)
                   for x in _lhs_points(sys.X0, 64, seed + 23 + 1000 * cand_idx)],
            "C3": [PoolPoint("C3", tuple(x), (), 0.0, True, None)
                   for x in _lhs_points(sys.X1, 64, seed + 37 + 1000 * cand_idx)],
            "C4": [],
        }
        x_seed = _lhs_points(sys.X, 64, seed + 53 + 1000 * cand_idx)
        w_seed = _lhs_points(sys.W, 64, seed + 71 + 1000 * cand_idx) \
            if sys.input_dim else np.zeros((len(x_seed), 0))
        for r in range(min(len(x_seed), len(w_seed))):
            w = tuple(w_seed[r]) if sys.input_dim else ()
            pool["C4"].append(PoolPoint("C4", tuple(x_seed[r]), w, 0.0, True, None))

        prev = None
        stalls = 0
        while state.iterations < budget:
            state.iterations += 1
            z, v = lp.solve(pool, prev)
            if v > 0.0:
                if -v > state.best_margin:
                    state.best_margin = -v
                    state.best_candidate = _candidate_snapshot(
                        z[: lp.nb], kappa, lam, alpha_coef,
                        z[lp.nb], z[lp.nb + 1], z[lp.nb + 2], lp.basis)
                # an infeasible fit can be an artifact of the expectation
                # disjuncts selected under the previous iterate; retry with
                # the best point found so the selection is redone, and only
                # abandon the candidate once that stops helping
                if log is not None:
                    log.append({"candidate": cand_idx, "kappa": kappa,
                                "lambda": lam, "alpha_coef": alpha_coef,
                                "iteration": state.iterations,
                                "event": "fit_infeasible", "margin": -v,
                                "pool_sizes": {k: len(p) for k, p in pool.items()}})
                stalls += 1
                if stalls >= 3 or (prev is not None
                                   and np.allclose(z, prev, atol=1e-12)):
                    break
                prev = z
                continue
            stalls = 0
            prev = z
            theta = z[: lp.nb]
            gamma, psi, rho_coef = float(z[lp.nb]), float(z[lp.nb + 1]), \
                float(z[lp.nb + 2])
            barrier = Polynomial(
                lp.barrier_space,
                {exp: float(t) for exp, t in zip(lp.basis, theta)})
            constants = CertConstants(
                kappa=kappa, gamma=gamma, lam=lam, psi=psi,
                alpha=PowerLawFn(alpha_coef, template.alpha_exp),
                rho=PowerLawFn(rho_coef, template.rho_exp) if rho_coef > 0
                else ZERO_GAIN)
            cert = CbcCertificate(mode=mode, barrier=barrier, constants=constants)
            snapshot = _candidate_snapshot(theta, kappa, lam, alpha_coef,
                                           gamma, psi, rho_coef, lp.basis)
            reports = check_cbc(sys, cert, grid)
            worst = min(r.worst_margin for r in reports)
            if log is not None:
                log.append({"candidate": cand_idx, "kappa": kappa,
                            "lambda": lam, "alpha_coef": alpha_coef,
                            "iteration": state.iterations, "event": "checked",
                            "margin": worst,
                            "pool_sizes": {k: len(p) for k, p in pool.items()}})
            if worst > state.best_margin:
                state.best_margin = worst
                state.best_candidate = snapshot
            if all_verified(reports):
                res = max(r.status.resolution or 0.0 for r in reports)
                return cert.with_status(CertStatus("verified", res,
                                                   "checked post-synthesis"))
            # add counterexamples to the pool
            for rep in reports:
                if rep.counterexample is None:
                    continue
                ce = rep.counterexample
                x = tuple(ce["x"])
                w = tuple(ce.get("w", ()))
                pool[rep.condition].append(PoolPoint(
                    rep.condition, x, w, float(ce["margin"]), False, snapshot))
                if log is not None:
                    log.append({"candidate": cand_idx,
                                "iteration": state.iterations,
                                "event": "counterexample",
                                "condition": rep.condition,
                                "x": list(x), "w": list(w),
                                "margin": float(ce["margin"]),
                                "falsified": snapshot})
        state.pool = pool

    return SynthesisFailure(
        message="budget exhausted without a certificate passing the "
                "independent check" if state.iterations >= budget
        else "all candidates exhausted (pool infeasible for each)",
        iterations=state.iterations, best_margin=state.best_margin,
        best_candidate=state.best_candidate,
        pool_sizes=state.pool_sizes(), candidates_tried=tried)
