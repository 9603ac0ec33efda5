"""Monte Carlo simulation of interconnected augmented systems under the
greedy barrier-induced switching controller, with empirical validation of
the exit-probability bound.

Randomness uses counter-based Philox streams keyed by (seed, subsystem,
step), so results are bitwise reproducible regardless of execution order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import beta as beta_dist

from .bound import safety_bound
from .certify import AbcCertificate, expected_next_barrier
from .errors import InputError, UnverifiedCertificateError
from .model import NetworkSpec
from .polyalg import Polynomial

MARGIN_TOL = 1e-9


def _stream(seed: int, counter: Sequence[int]) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, 0], dtype=np.uint64)
    ctr = np.array(list(counter), dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=ctr, key=key))


def clopper_pearson(k: int, n: int, confidence: float = 0.95
                    ) -> tuple[float, float]:
    """One-sided lower and upper confidence bounds for a binomial proportion."""
    if n <= 0:
        raise InputError("Clopper-Pearson needs n >= 1")
    if not (0 <= k <= n):
        raise InputError(f"count {k} outside [0, {n}]")
    a = 1.0 - confidence
    lower = 0.0 if k == 0 else float(beta_dist.ppf(a, k, n - k + 1))
    upper = 1.0 if k == n else float(beta_dist.ppf(confidence, k + 1, n - k))
    return lower, upper


class Controller:
    """Greedy switching policy: when a subsystem's dwell counter saturates,
    request the mode minimizing the one-step expected scaled barrier of the
    candidate's own dynamics, kappa_{p'}^(-l'/epsilon) E[B_{p'}(f_{p'}(x, w, .))];
    otherwise hold.  Ties break toward the lowest mode index.  (Scoring each
    candidate through the current mode's dynamics instead would make the metric
    independent of the choice whenever the modes share one barrier.)"""

    def __init__(self, net: NetworkSpec, cert: AbcCertificate):
        if list(cert.ids) != list(net.ids):
            raise InputError("certificate subsystem ids must match the network's")
        self.net = net
        self.cert = cert
        self._eb: list[dict[tuple[int, int], Polynomial]] = []
        self._choice_factor: list[dict[tuple[int, int], float]] = []
        for sub, a in zip(net.subsystems, cert.apbcs):
            if sorted(sub.dynamics) != a.modes:
                raise InputError(
                    f"certificate modes {a.modes} do not match subsystem "
                    f"{sub.id!r} modes {sorted(sub.dynamics)}")
            table = {}
            fac = {}
            for p in a.modes:
                for pn in a.modes:
                    table[(p, pn)] = expected_next_barrier(sub, p, a.barriers[pn])
                    l_next = a.k_d - 1 if pn == p else 0
                    fac[(p, pn)] = a.factor(pn, l_next)
            self._eb.append(table)
            self._choice_factor.append(fac)

    def choose(self, i: int, x: np.ndarray, w: np.ndarray, p: np.ndarray,
               l: np.ndarray) -> np.ndarray:
        """Requested mode per trajectory for subsystem i."""
        a = self.cert.apbcs[i]
        req = p.copy()
        sat = l == a.k_d - 1
        if not np.any(sat):
            return req
        xw = np.hstack([x, w])
        for cur in a.modes:
            mask = sat & (p == cur)
            if not np.any(mask):
                continue
            rows = xw[mask]
            vals = np.stack(
                [self._choice_factor[i][(cur, pn)] *
                 self._eb[i][(pn, pn)].eval_many(rows) for pn in a.modes],
                axis=-1)
            best = np.argmin(vals, axis=1)
            req[mask] = np.asarray(a.modes)[best]
        return req

    def feasibility_violations(self, i: int, x: np.ndarray, w: np.ndarray,
                               p: np.ndarray, l: np.ndarray,
                               req: np.ndarray) -> int:
        """Count points where the chosen action breaks the per-subsystem
        expectation inequality E[B(next)] <= max(kappa B, rho(|w|), psi)."""
        a = self.cert.apbcs[i]
        c = a.constants
        xw = np.hstack([x, w])
        wn = np.max(np.abs(w), axis=1) if w.shape[1] else np.zeros(len(x))
        lhs = np.empty(len(x))
        bcur = np.empty(len(x))
        fac_cur = np.empty(len(x))
        for cur in a.modes:
            mask = p == cur
            if not np.any(mask):
                continue
            bcur[mask] = a.barriers[cur].eval_many(x[mask])
            fac_cur[mask] = a.kappas[cur] ** (-l[mask] / a.epsilon)
            for pn in a.modes:
                m2 = mask & (req == pn)
                if not np.any(m2):
                    continue
                if pn == cur:
                    fac = a.kappas[pn] ** (-np.minimum(l[m2] + 1, a.k_d - 1)
                                           / a.epsilon)
                else:
                    fac = 1.0
                lhs[m2] = fac * self._eb[i][(cur, pn)].eval_many(xw[m2])
        rhs = np.maximum(np.maximum(c.kappa * fac_cur * bcur, c.rho(wn)), c.psi)
        return int(np.sum(lhs - rhs > MARGIN_TOL))


@dataclass(frozen=True)
class SimReport:
    M: int
    horizon: int
    seed: int
    semantics: str
    initial_modes: tuple[int, ...]
    exceed_count: int
    entered_count: int
    exceed_freq: float | None
    entered_freq: float | None
    exceed_cp: tuple[float, float] | None  # one-sided 95% lower/upper
    entered_cp: tuple[float, float] | None
    delta: float | None
    delta_note: str
    lam: float
    controller_warnings: int
    warnings: tuple[str, ...]
    retained: tuple | None = None  # (subsystem id, states[k][traj][comp])
    signals: tuple | None = None  # modes[k][traj][subsystem]

    def to_json(self) -> dict:
        out = {
            "M": self.M, "horizon": self.horizon, "seed": self.seed,
            "semantics": self.semantics, "initial_modes": list(self.initial_modes),
            "exceed_count": self.exceed_count, "entered_count": self.entered_count,
            "exceed_freq": self.exceed_freq, "entered_freq": self.entered_freq,
            "exceed_cp95": None if self.exceed_cp is None else list(self.exceed_cp),
            "entered_cp95": None if self.entered_cp is None else list(self.entered_cp),
            "delta": self.delta, "delta_note": self.delta_note, "lambda": self.lam,
            "controller_warnings": self.controller_warnings,
            "warnings": list(self.warnings),
        }
        return out


def run_monte_carlo(net: NetworkSpec, cert: AbcCertificate,
                    controller: Controller | None = None, M: int = 1000,
                    horizon: int = 100, seed: int = 0,
                    initial_modes=None, allow_unverified: bool = False,
                    retain: int = 0, retain_signals: bool = False) -> SimReport:
    """Simulate M closed-loop trajectories of the interconnected augmented
    system and compare the exceedance frequency of {sup_k B >= lambda}
    against the certificate bound.

    Initial states are uniform on each X0, counters start at 0, and the
    controller holds each mode until its dwell counter saturates.  An
    unverified certificate is refused unless `allow_unverified`, in which
    case the report carries a warning.
    """
    if M < 0 or horizon < 0 or retain < 0:
        raise InputError("M, horizon and retain must be >= 0")
    if retain > M:
        raise InputError(f"cannot retain {retain} of {M} trajectories")
    warnings: list[str] = []
    if not cert.status.verified:
        if not allow_unverified:
            raise UnverifiedCertificateError(
                f"certificate status is {cert.status.kind!r}; pass "
                "allow_unverified=True to simulate anyway")
        warnings.append(
            f"certificate status is {cert.status.kind!r}; the bound delta is "
            "not backed by a verified certificate")
    if controller is None:
        controller = Controller(net, cert)

    subs = net.subsystems
    N = len(subs)
    if initial_modes is None:
        p0 = [min(a.modes) for a in cert.apbcs]
    elif isinstance(initial_modes, int):
        p0 = [initial_modes] * N
    else:
        p0 = [int(v) for v in initial_modes]
        if len(p0) != N:
            raise InputError("one initial mode per subsystem required")
    for a, m0 in zip(cert.apbcs, p0):
        if m0 not in a.modes:
            raise InputError(f"initial mode {m0} not in mode set {a.modes}")

    c = cert.constants
    try:
        delta = safety_bound(c.gamma, c.lam, c.kappa, c.psi, horizon).delta
        delta_note = ""
    except InputError as e:
        delta, delta_note = None, f"bound unavailable: {e}"

    if M == 0:
        return SimReport(M=0, horizon=horizon, seed=seed, semantics=cert.semantics,
                         initial_modes=tuple(p0), exceed_count=0, entered_count=0,
                         exceed_freq=None, entered_freq=None, exceed_cp=None,
                         entered_cp=None, delta=delta, delta_note=delta_note,
                         lam=c.lam, controller_warnings=0,
                         warnings=tuple(warnings))

    init_rng = _stream(seed, [0, 0, 0, 1])
    xs = []
    for sub in subs:
        if sub.X0.is_empty():
            raise InputError(f"subsystem {sub.id!r} has an empty initial set")
        xs.append(sub.X0.sample_uniform(init_rng, M))
    p = np.array([[m0] * M for m0 in p0], dtype=np.int64).T  # (M, N)
    l = np.zeros((M, N), dtype=np.int64)

    def barrier_values() -> np.ndarray:
        tot = None
        for i, a in enumerate(cert.apbcs):
            vi = np.empty(M)
            for q in a.modes:
                mask = p[:, i] == q
                if not np.any(mask):
                    continue
                fac = a.kappas[q] ** (-l[mask, i] / a.epsilon)
                vi[mask] = fac * a.barriers[q].eval_many(xs[i][mask])
            vi = vi / cert.scalings[i]
            tot = vi if tot is None else np.maximum(tot, vi)
        return tot

    def in_unsafe() -> np.ndarray:
        flags = None
        for i, sub in enumerate(subs):
            fi = sub.X1.contains_many(xs[i]) if not sub.X1.is_empty() \
                else np.zeros(M, dtype=bool)
            if flags is None:
                flags = fi
            elif cert.semantics == "product":
                flags = flags & fi
            else:
                flags = flags | fi
        return flags

    b_sup = barrier_values()
    entered = in_unsafe()
    controller_warnings = 0
    retained_states = [xs[0][:retain].copy()] if retain else None
    signal_log = [p.copy()] if retain_signals else None

    for k in range(horizon):
        ws = [None] * N
        for i, sub in enumerate(subs):
            cols = []
            for e, _off, d in net.input_slices(sub.id):
                j = net.index(e.src)
                vec = net.subsystem(e.src).outputs[e.resolved_port()]
                for comp in vec:
                    cols.append(comp.eval_many(xs[j]))
            ws[i] = np.stack(cols, axis=-1) if cols else np.zeros((M, 0))

        req = np.empty_like(p)
        for i in range(N):
            req[:, i] = controller.choose(i, xs[i], ws[i], p[:, i], l[:, i])
            controller_warnings += controller.feasibility_violations(
                i, xs[i], ws[i], p[:, i], l[:, i], req[:, i])

        for i, sub in enumerate(subs):
            rng = _stream(seed, [k + 1, i, 0, 0])
            noise = np.stack([spec.sample(rng, M) for spec in sub.noise], axis=-1) \
                if sub.noise else np.zeros((M, 0))
            new_x = np.empty_like(xs[i])
            for q in cert.apbcs[i].modes:
                mask = p[:, i] == q
                if not np.any(mask):
                    continue
                new_x[mask] = sub.step_many(xs[i][mask], q, ws[i][mask], noise[mask])
            xs[i] = new_x
            switched = req[:, i] != p[:, i]
            l[:, i] = np.where(switched, 0,
                               np.minimum(l[:, i] + 1, cert.apbcs[i].k_d - 1))
            p[:, i] = req[:, i]

        b_sup = np.maximum(b_sup, barrier_values())
        entered |= in_unsafe()
        if retained_states is not None:
            retained_states.append(xs[0][:retain].copy())
        if signal_log is not None:
            signal_log.append(p.copy())

    exceed = int(np.sum(b_sup >= c.lam))
    entered_count = int(np.sum(entered))
    exceed_cp = clopper_pearson(exceed, M)
    entered_cp = clopper_pearson(entered_count, M)
    retained_tuple = None
    if retained_states is not None:
        retained_tuple = (subs[0].id,
                          tuple(tuple(tuple(float(v) for v in row) for row in arr)
                                for arr in retained_states))
    signals_tuple = None
    if signal_log is not None:
        signals_tuple = tuple(tuple(tuple(int(v) for v in row) for row in arr)
                              for arr in signal_log)
    return SimReport(
        M=M, horizon=horizon, seed=seed, semantics=cert.semantics,
        initial_modes=tuple(p0), exceed_count=exceed, entered_count=entered_count,
        exceed_freq=exceed / M, entered_freq=entered_count / M,
        exceed_cp=exceed_cp, entered_cp=entered_cp, delta=delta,
        delta_note=delta_note, lam=c.lam,
        controller_warnings=controller_warnings, warnings=tuple(warnings),
        retained=retained_tuple, signals=signals_tuple)


def plot_data(report: SimReport, path) -> None:
    """Write retained trajectories as CSV: one row per step, one column group
    per realization, suitable for external plotting."""
    if report.retained is None:
        raise InputError("trajectory retention was disabled for this run; "
                         "rerun with retain > 0")
    sid, states = report.retained
    n_real = len(states[0])
    n_comp = len(states[0][0]) if n_real else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        head = ["k"]
        for r in range(n_real):
            for cdx in range(n_comp):
                head.append(f"{sid}_r{r}_x{cdx}")
        writer.writerow(head)
        for k, frame in enumerate(states):
            row = [k]
            for r in range(n_real):
                row.extend(frame[r])
            writer.writerow(row)
