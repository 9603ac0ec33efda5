"""Barrier certificates and falsification-based condition checking.

Certificates come in three layers: per-mode control barrier certificates
(CBC), dwell-augmented certificates over (x, p, l) (APBC), and composed
network certificates (ABC).  Checking is grid-based with pattern-search
refinement around near-violations; a "verified" status therefore always means
"no violation found at resolution h", never a formal proof.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import InputError
from .model import BoxSet, NetworkSpec, SubsystemSpec
from .polyalg import Polynomial, expectation_over_noise, poly_compose

MARGIN_TOL = 1e-9


# ---------------------------------------------------------------------------
# scalar comparison functions and certificate constants


@dataclass(frozen=True)
class PowerLawFn:
    """s |-> coef * s**exp on s >= 0; coef == 0 encodes the zero function."""

    coef: float
    exp: float = 2.0

    def __post_init__(self) -> None:
        if self.coef < 0:
            raise InputError(f"power-law coefficient must be >= 0, got {self.coef}")
        if self.exp <= 0:
            raise InputError(f"power-law exponent must be > 0, got {self.exp}")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        out = self.coef * s ** self.exp
        return float(out) if out.ndim == 0 else out

    def is_zero(self) -> bool:
        return self.coef == 0.0

    def inverse(self, v: float) -> float:
        if self.is_zero():
            raise InputError("the zero gain has no inverse")
        return (v / self.coef) ** (1.0 / self.exp)

    def to_json(self) -> dict:
        return {"coef": self.coef, "exp": self.exp}

    @staticmethod
    def from_json(obj) -> "PowerLawFn":
        return PowerLawFn(float(obj["coef"]), float(obj.get("exp", 2.0)))


ZERO_GAIN = PowerLawFn(0.0, 2.0)


@dataclass(frozen=True)
class CertConstants:
    """The scalar data (kappa, gamma, lambda, psi) plus the comparison
    functions alpha (lower bound on B through the output) and rho (input
    gain).  alpha is None for composed certificates, which drop C1."""

    kappa: float
    gamma: float
    lam: float
    psi: float
    alpha: PowerLawFn | None = None
    rho: PowerLawFn = ZERO_GAIN

    def __post_init__(self) -> None:
        if not (0.0 < self.kappa < 1.0):
            raise InputError(f"kappa must lie in (0, 1), got {self.kappa}")
        if self.lam <= 0.0:
            raise InputError(f"lambda must be positive, got {self.lam}")
        if self.gamma < 0.0:
            raise InputError(f"gamma must be >= 0, got {self.gamma}")
        if self.psi < 0.0:
            raise InputError(f"psi must be >= 0, got {self.psi}")

    def require_gap(self) -> None:
        if not (self.gamma < self.lam):
            raise InputError(
                f"gamma={self.gamma} must be strictly below lambda={self.lam}")

    def to_json(self) -> dict:
        out = {"kappa": self.kappa, "gamma": self.gamma, "lambda": self.lam,
               "psi": self.psi, "rho": self.rho.to_json()}
        out["alpha"] = None if self.alpha is None else self.alpha.to_json()
        return out

    @staticmethod
    def from_json(obj) -> "CertConstants":
        alpha = obj.get("alpha")
        rho = obj.get("rho")
        return CertConstants(
            kappa=float(obj["kappa"]), gamma=float(obj["gamma"]),
            lam=float(obj["lambda"]), psi=float(obj["psi"]),
            alpha=None if alpha is None else PowerLawFn.from_json(alpha),
            rho=ZERO_GAIN if rho is None else PowerLawFn.from_json(rho))


# ---------------------------------------------------------------------------
# statuses and reports


@dataclass(frozen=True)
class CertStatus:
    kind: str  # "unchecked" | "verified" | "refuted"
    resolution: float | None = None
    note: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("unchecked", "verified", "refuted"):
            raise InputError(f"unknown status kind {self.kind!r}")

    @property
    def verified(self) -> bool:
        return self.kind == "verified"

    @property
    def refuted(self) -> bool:
        return self.kind == "refuted"

    def to_json(self) -> dict:
        return {"kind": self.kind, "resolution": self.resolution, "note": self.note}


UNCHECKED = CertStatus("unchecked")


@dataclass(frozen=True)
class CheckReport:
    """Outcome of checking one condition of one certificate."""

    condition: str  # "C1".."C4"
    status: CertStatus
    worst_margin: float
    n_points: int
    counterexample: dict | None = None
    note: str = ""

    @property
    def ok(self) -> bool:
        return self.status.verified

    def to_json(self) -> dict:
        return {"condition": self.condition, "status": self.status.to_json(),
                "worst_margin": self.worst_margin, "n_points": self.n_points,
                "counterexample": self.counterexample, "note": self.note}

    def __str__(self) -> str:
        tag = self.status.kind
        ce = f" at {self.counterexample}" if self.counterexample else ""
        return (f"{self.condition}: {tag} (worst margin {self.worst_margin:.3e}, "
                f"{self.n_points} points){ce}")


def all_verified(reports: Iterable[CheckReport]) -> bool:
    reports = list(reports)
    return bool(reports) and all(r.ok for r in reports)


def summary_status(reports: Sequence[CheckReport], resolution: float) -> CertStatus:
    bad = [r for r in reports if r.status.refuted]
    if bad:
        return CertStatus("refuted", resolution,
                          "; ".join(f"{r.condition} refuted" for r in bad))
    if all(r.ok for r in reports):
        return CertStatus("verified", resolution)
    return CertStatus("unchecked", resolution, "inconclusive")


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class CbcCertificate:
    """Per-mode certificate: a polynomial barrier over the subsystem state."""

    mode: int
    barrier: Polynomial
    constants: CertConstants
    status: CertStatus = UNCHECKED

    def __post_init__(self) -> None:
        if self.barrier.space.input_indices or self.barrier.space.noise_indices:
            raise InputError("a barrier must be a polynomial in state variables only")

    def with_status(self, status: CertStatus) -> "CbcCertificate":
        return dataclasses.replace(self, status=status)


@dataclass(frozen=True)
class ApbcCertificate:
    """Dwell-augmented certificate B(x, p, l) = kappa_p**(-l/epsilon) B_p(x)."""

    barriers: dict[int, Polynomial]
    kappas: dict[int, float]
    epsilon: float
    k_d: int
    constants: CertConstants
    status: CertStatus = UNCHECKED

    def __post_init__(self) -> None:
        if set(self.barriers) != set(self.kappas):
            raise InputError("barriers and kappas must cover the same mode set")
        if sorted(self.barriers) != list(range(1, len(self.barriers) + 1)):
            raise InputError("modes must be 1..m")
        if self.epsilon <= 1.0:
            raise InputError(f"epsilon must exceed 1, got {self.epsilon}")
        if self.k_d < 1:
            raise InputError(f"k_d must be >= 1, got {self.k_d}")
        for p, k in self.kappas.items():
            if not (0.0 < k < 1.0):
                raise InputError(f"kappa for mode {p} must lie in (0, 1), got {k}")

    @property
    def modes(self) -> list[int]:
        return sorted(self.barriers)

    def factor(self, p: int, l: int) -> float:
        return self.kappas[p] ** (-l / self.epsilon)

    def value(self, x, p: int, l: int) -> float:
        return self.factor(p, l) * self.barriers[p](x)

    def with_status(self, status: CertStatus) -> "ApbcCertificate":
        return dataclasses.replace(self, status=status)


@dataclass(frozen=True)
class AbcCertificate:
    """Composed certificate B = max_i B_i / s_i over the network state."""

    ids: tuple[str, ...]
    apbcs: tuple[ApbcCertificate, ...]
    scalings: tuple[float, ...]
    constants: CertConstants
    semantics: str  # "product" | "union"
    status: CertStatus = UNCHECKED

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.apbcs) or len(self.ids) != len(self.scalings):
            raise InputError("ids, apbcs and scalings must have equal length")
        if self.semantics not in ("product", "union"):
            raise InputError(f"semantics must be 'product' or 'union', got {self.semantics!r}")
        if any(s <= 0 for s in self.scalings):
            raise InputError("scalings must be positive")

    def with_status(self, status: CertStatus) -> "AbcCertificate":
        return dataclasses.replace(self, status=status)


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class GridConfig:
    """Controls grid density, the point cap, and refinement effort."""

    resolution: float | None = None
    points_per_dim: int = 50
    cap: int = 1_000_000
    refine_starts: int = 12
    refine_iters: int = 60
    seed: int = 0

    def __post_init__(self) -> None:
        if self.resolution is not None and self.resolution <= 0:
            raise InputError(f"resolution must be positive, got {self.resolution}")
        if self.points_per_dim < 2:
            raise InputError("points_per_dim must be >= 2")
        if self.cap < 1:
            raise InputError("cap must be >= 1")


@dataclass(frozen=True)
class GridSample:
    points: np.ndarray  # (m, dim)
    resolution: float
    exact: bool  # full grid (True) or capped Latin-hypercube fallback

    def __eq__(self, other):  # arrays make the default eq unusable
        return self is other


def _axis(lo: float, hi: float, h: float) -> np.ndarray:
    """Corner-anchored axis {lo, lo+h, ...} with hi appended, so the grids at
    resolutions h and h/2 are nested."""
    if hi < lo:
        raise InputError(f"empty interval [{lo}, {hi}]")
    if hi == lo:
        return np.array([lo])
    n = int(math.floor((hi - lo) / h + 1e-12))
    pts = lo + h * np.arange(n + 1)
    if pts[-1] < hi - 1e-12 * max(1.0, abs(hi)):
        pts = np.append(pts, hi)
    else:
        pts[-1] = hi
    return pts


def _box_resolution(box, cfg: GridConfig) -> float:
    if cfg.resolution is not None:
        return cfg.resolution
    widths = [hi - lo for lo, hi in box if hi > lo]
    if not widths:
        return 1.0
    return max(widths) / (cfg.points_per_dim - 1)


def _box_grid_count(box, h: float) -> int:
    n = 1
    for lo, hi in box:
        n *= len(_axis(lo, hi, h))
    return n


def boxset_grid(bs: BoxSet, cfg: GridConfig, seed_shift: int = 0) -> GridSample:
    """Nested rectangular grid over a box union; above the point cap a
    seeded Latin-hypercube sample of the same size budget is used instead."""
    if bs.is_empty():
        return GridSample(np.zeros((0, bs.dim)), cfg.resolution or 0.0, True)
    if bs.dim == 0:
        return GridSample(np.zeros((1, 0)), cfg.resolution or 0.0, True)
    res = [_box_resolution(b, cfg) for b in bs.boxes]
    counts = [_box_grid_count(b, h) for b, h in zip(bs.boxes, res)]
    total = sum(counts)
    if total <= cfg.cap:
        parts = []
        for box, h in zip(bs.boxes, res):
            axes = [_axis(lo, hi, h) for lo, hi in box]
            mesh = np.meshgrid(*axes, indexing="ij")
            parts.append(np.stack([m.ravel() for m in mesh], axis=-1))
        return GridSample(np.concatenate(parts, axis=0), max(res), True)
    # capped fallback: budget split across boxes proportionally to their
    # nominal grid sizes
    parts = []
    for i, (box, cnt) in enumerate(zip(bs.boxes, counts)):
        budget = max(1, int(cfg.cap * cnt / total))
        sampler = qmc.LatinHypercube(d=bs.dim, seed=cfg.seed + seed_shift + i)
        unit = sampler.random(budget)
        lo = np.array([b[0] for b in box])
        hi = np.array([b[1] for b in box])
        parts.append(lo + unit * (hi - lo))
    return GridSample(np.concatenate(parts, axis=0), max(res), False)


def pattern_search_min(f: Callable[[np.ndarray], float], x0: np.ndarray,
                       box_lo: np.ndarray, box_hi: np.ndarray,
                       step0: float, max_iters: int) -> tuple[np.ndarray, float]:
    """Compass pattern search minimizing f within a box; derivative-free."""
    x = np.clip(np.asarray(x0, dtype=float), box_lo, box_hi)
    fx = f(x)
    step = step0
    min_step = step0 * 2.0 ** -12
    it = 0
    d = x.size
    while step > min_step and it < max_iters:
        it += 1
        improved = False
        for i in range(d):
            for delta in (step, -step):
                y = x.copy()
                y[i] = min(max(y[i] + delta, box_lo[i]), box_hi[i])
                if y[i] == x[i]:
                    continue
                fy = f(y)
                if fy < fx:
                    x, fx = y, fy
                    improved = True
        if not improved:
            step *= 0.5
    return x, fx


def _bounding_box(bs: BoxSet) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([min(b[i][0] for b in bs.boxes) for i in range(bs.dim)])
    hi = np.array([max(b[i][1] for b in bs.boxes) for i in range(bs.dim)])
    return lo, hi


def _refine_min(margin_fn: Callable[[np.ndarray], float], pts: np.ndarray,
                margins: np.ndarray, bs: BoxSet, cfg: GridConfig,
                resolution: float) -> tuple[np.ndarray, float]:
    """Pattern-search refinement seeded at the worst grid points; the search
    stays inside the single box containing each seed."""
    order = np.argsort(margins)
    best_x = pts[order[0]].copy()
    best = float(margins[order[0]])
    for idx in order[: cfg.refine_starts]:
        x0 = pts[idx]
        box = None
        for b in bs.boxes:
            if all(lo - 1e-12 <= v <= hi + 1e-12 for v, (lo, hi) in zip(x0, b)):
                box = b
                break
        if box is None:
            continue
        lo = np.array([c[0] for c in box])
        hi = np.array([c[1] for c in box])
        x, fx = pattern_search_min(margin_fn, x0, lo, hi, resolution, cfg.refine_iters)
        if fx < best:
            best, best_x = fx, x.copy()
    return best_x, best


# ---------------------------------------------------------------------------
# expected next-step barrier


def expected_next_barrier(sys: SubsystemSpec, mode: int, barrier: Polynomial
                          ) -> Polynomial:
    """E[B(f_p(x, w, noise))] as a polynomial in (x, w): compose the barrier
    with the mode dynamics and integrate the noise moments."""
    if mode not in sys.dynamics:
        raise InputError(f"mode {mode} not in mode set of {sys.id!r}")
    if barrier.space.names[: sys.state_dim] != sys.state_names:
        raise InputError("barrier state variables must match the subsystem's")
    subs = {name: comp for name, comp in zip(sys.state_names, sys.dynamics[mode])}
    composed = poly_compose(barrier, subs)
    return expectation_over_noise(composed, sys.noise_specs_by_name())


# ---------------------------------------------------------------------------
# CBC checking


def _vacuous_report(cond: str, resolution: float, what: str) -> CheckReport:
    return CheckReport(cond, CertStatus("verified", resolution, f"vacuous: {what}"),
                       math.inf, 0, None)


def _norm_inf(arr: np.ndarray) -> np.ndarray:
    if arr.shape[1] == 0:
        return np.zeros(arr.shape[0])
    return np.max(np.abs(arr), axis=1)


def _scan(cond: str, margin_many: Callable[[np.ndarray], np.ndarray],
          domain: BoxSet, cfg: GridConfig, seed_shift: int,
          ce_fmt: Callable[[np.ndarray, float], dict]) -> CheckReport:
    """Shared grid-scan + refinement loop for a pointwise margin >= 0 claim."""
    if domain.is_empty():
        return _vacuous_report(cond, cfg.resolution or 0.0, "empty domain")
    grid = boxset_grid(domain, cfg, seed_shift)
    margins = margin_many(grid.points)
    worst = float(np.min(margins))
    n = grid.points.shape[0]
    note = "" if grid.exact else "domain above point cap; Latin-hypercube subsample"
    if worst < -MARGIN_TOL:
        i = int(np.argmin(margins))
        ce = ce_fmt(grid.points[i], worst)
        return CheckReport(cond, CertStatus("refuted", grid.resolution),
                           worst, n, ce, note)
    scalar = lambda x: float(margin_many(x.reshape(1, -1))[0])
    x_ref, m_ref = _refine_min(scalar, grid.points, margins, domain, cfg,
                               grid.resolution)
    if m_ref < -MARGIN_TOL:
        ce = ce_fmt(x_ref, m_ref)
        return CheckReport(cond, CertStatus("refuted", grid.resolution),
                           m_ref, n, ce, note + " (found by refinement)".strip())
    worst = min(worst, m_ref)
    return CheckReport(cond, CertStatus("verified", grid.resolution), worst, n,
                       None, note)


def _xw_domain(X: BoxSet, W: BoxSet) -> BoxSet:
    if X.is_empty() or (W.dim > 0 and W.is_empty()):
        return BoxSet.empty(X.dim + W.dim)
    if W.dim == 0:
        return X
    boxes = [tuple(bx) + tuple(bw) for bx in X.boxes for bw in W.boxes]
    return BoxSet(X.dim + W.dim, tuple(boxes))


def cbc_margins(sys: SubsystemSpec, cert: CbcCertificate
                ) -> dict[str, Callable[[np.ndarray], np.ndarray]]:
    """Vectorized margin functions (>= 0 iff the condition holds pointwise).

    C1/C2/C3 take state rows; C4 takes stacked (state, input) rows.
    """
    c = cert.constants
    if c.alpha is None:
        raise InputError("a per-mode certificate requires an alpha comparison function")
    B = cert.barrier
    h = sys.external_output()
    eb = expected_next_barrier(sys, cert.mode, cert.barrier)
    n = sys.state_dim

    def c1(pts):
        y = np.stack([comp.eval_many(pts) for comp in h], axis=-1)
        return B.eval_many(pts) - c.alpha(_norm_inf(y))

    def c2(pts):
        return c.gamma - B.eval_many(pts)

    def c3(pts):
        return B.eval_many(pts) - c.lam

    def c4(pts):
        x = pts[:, :n]
        bw = c.kappa * B.eval_many(x)
        rw = c.rho(_norm_inf(pts[:, n:]))
        rhs = np.maximum(np.maximum(bw, rw), c.psi)
        return rhs - eb.eval_many(pts)

    return {"C1": c1, "C2": c2, "C3": c3, "C4": c4}


def check_cbc(sys: SubsystemSpec, cert: CbcCertificate,
              cfg: GridConfig = GridConfig()) -> list[CheckReport]:
    """Check the four per-mode conditions on their stated domains.

    C1 on X, C2 on X0, C3 on X1, C4 on X x W; each report carries the worst
    margin, the point count, and a counterexample when refuted.
    """
    m = cbc_margins(sys, cert)
    n = sys.state_dim
    ce_x = lambda pt, mg: {"x": [float(v) for v in pt], "margin": mg}

    def ce_xw(pt, mg):
        return {"x": [float(v) for v in pt[:n]],
                "w": [float(v) for v in pt[n:]], "margin": mg}

    reports = [
        _scan("C1", m["C1"], sys.X, cfg, 11, ce_x),
        _scan("C2", m["C2"], sys.X0, cfg, 23, ce_x),
        _scan("C3", m["C3"], sys.X1, cfg, 37, ce_x),
        _scan("C4", m["C4"], _xw_domain(sys.X, sys.W), cfg, 53, ce_xw),
    ]
    return reports


def cbc_condition_margin(sys: SubsystemSpec, cert: CbcCertificate, cond: str,
                         x, w=None) -> float:
    """Scalar margin of one condition at one point (for independent
    re-verification of reported counterexamples)."""
    m = cbc_margins(sys, cert)
    if cond not in m:
        raise InputError(f"unknown condition {cond!r}; expected one of {sorted(m)}")
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if cond == "C4":
        w = np.zeros((1, 0)) if w is None else np.asarray(w, dtype=float).reshape(1, -1)
        return float(m["C4"](np.hstack([x, w]))[0])
    return float(m[cond](x)[0])


# ---------------------------------------------------------------------------
# APBC checking


def _admissible(p: int, l: int, k_d: int, modes: Sequence[int]) -> list[tuple[int, int]]:
    """Admissible (p', l') pairs from (p, l) under dwell time k_d."""
    if l < k_d - 1:
        return [(p, l + 1)]
    return [(q, k_d - 1 if q == p else 0) for q in modes]


def _discrete_scan(cond: str, slices, domain: BoxSet, grid: GridSample,
                   cfg: GridConfig) -> CheckReport:
    """Scan margin slices indexed by discrete (p, l) pairs over a shared state
    grid, then pattern-search the worst slice."""
    worst, ce = math.inf, None
    worst_slice = None
    n_pts = 0
    for key, margins, fn in slices:
        n_pts += margins.shape[0]
        i = int(np.argmin(margins))
        if margins[i] < worst:
            worst = float(margins[i])
            worst_slice = (key, margins, fn)
            ce = {"x": [float(v) for v in grid.points[i]],
                  "p": key[0], "l": key[1], "margin": worst}
    if worst < -MARGIN_TOL:
        return CheckReport(cond, CertStatus("refuted", grid.resolution), worst,
                           n_pts, ce)
    key, margins, fn = worst_slice
    x_ref, m_ref = _refine_min(fn, grid.points, margins, domain, cfg,
                               grid.resolution)
    if m_ref < -MARGIN_TOL:
        ce = {"x": [float(v) for v in x_ref], "p": key[0], "l": key[1],
              "margin": m_ref}
        return CheckReport(cond, CertStatus("refuted", grid.resolution), m_ref,
                           n_pts, ce, "found by refinement")
    return CheckReport(cond, CertStatus("verified", grid.resolution),
                       min(worst, m_ref), n_pts, None)


def check_apbc(sys: SubsystemSpec, cert: ApbcCertificate,
               cfg: GridConfig = GridConfig()) -> list[CheckReport]:
    """Check the augmented conditions over (x, p, l).

    The discrete coordinates are enumerated exactly; the state (and input)
    coordinates are gridded.  C4's existential over the requested mode is
    resolved as: margin(x,p,l) = max over admissible p' of the w-worst margin.
    """
    if sorted(sys.dynamics) != cert.modes:
        raise InputError("certificate mode set must match the subsystem's")
    c = cert.constants
    if c.alpha is None:
        raise InputError("an augmented certificate requires an alpha comparison function")
    k_d, eps = cert.k_d, cert.epsilon
    modes = cert.modes
    h = sys.external_output()
    n = sys.state_dim

    xg = boxset_grid(sys.X, cfg, 11)
    x0g = boxset_grid(sys.X0, cfg, 23)
    x1g = boxset_grid(sys.X1, cfg, 37)
    wg = boxset_grid(sys.W, cfg, 53)

    Bvals = {p: cert.barriers[p].eval_many(xg.points) for p in modes}
    reports: list[CheckReport] = []

    # C1: B(x,p,l) >= alpha(|h(x)|) on X x P x L
    if xg.points.shape[0]:
        yn = _norm_inf(np.stack([comp.eval_many(xg.points) for comp in h], axis=-1))
        alpha_term = c.alpha(yn)

        def c1_fn(p, l):
            fac = cert.factor(p, l)

            def f(x):
                row = x.reshape(1, -1)
                y = _norm_inf(np.stack([comp.eval_many(row) for comp in h],
                                       axis=-1))
                return float(fac * cert.barriers[p].eval_many(row)[0]
                             - c.alpha(y)[0])
            return f

        slices = [((p, l), cert.factor(p, l) * Bvals[p] - alpha_term,
                   c1_fn(p, l)) for p in modes for l in range(k_d)]
        reports.append(_discrete_scan("C1", slices, sys.X, xg, cfg))
    else:
        reports.append(_vacuous_report("C1", xg.resolution, "empty domain"))

    # C2: B(x,p,0) <= gamma on X0 x P x {0}
    if x0g.points.shape[0]:
        def c2_fn(p):
            def f(x):
                return float(c.gamma
                             - cert.barriers[p].eval_many(x.reshape(1, -1))[0])
            return f

        slices = [((p, 0), c.gamma - cert.barriers[p].eval_many(x0g.points),
                   c2_fn(p)) for p in modes]
        reports.append(_discrete_scan("C2", slices, sys.X0, x0g, cfg))
    else:
        reports.append(_vacuous_report("C2", x0g.resolution, "empty initial set"))

    # C3: B(x,p,l) >= lambda on X1 x P x L
    if x1g.points.shape[0]:
        def c3_fn(p, l):
            fac = cert.factor(p, l)

            def f(x):
                return float(fac * cert.barriers[p].eval_many(x.reshape(1, -1))[0]
                             - c.lam)
            return f

        b1 = {p: cert.barriers[p].eval_many(x1g.points) for p in modes}
        slices = [((p, l), cert.factor(p, l) * b1[p] - c.lam, c3_fn(p, l))
                  for p in modes for l in range(k_d)]
        reports.append(_discrete_scan("C3", slices, sys.X1, x1g, cfg))
    else:
        reports.append(_vacuous_report("C3", x1g.resolution, "empty unsafe set"))

    # C4 with the existential over the requested mode
    reports.append(_apbc_c4(sys, cert, xg, wg, cfg))
    return reports


def _apbc_c4(sys: SubsystemSpec, cert: ApbcCertificate, xg: GridSample,
             wg: GridSample, cfg: GridConfig) -> CheckReport:
    c = cert.constants
    modes = cert.modes
    k_d = cert.k_d
    nx = xg.points.shape[0]
    nw = max(1, wg.points.shape[0])
    if nx == 0:
        return _vacuous_report("C4", xg.resolution, "empty domain")

    q = sys.input_dim
    wpts = wg.points if q else np.zeros((1, 0))
    nw = wpts.shape[0]
    eb: dict[tuple[int, int], Polynomial] = {}
    for p in modes:
        for pn in modes:
            eb[(p, pn)] = expected_next_barrier(sys, p, cert.barriers[pn])

    subsampled = False
    pairs_full = nx * nw
    if pairs_full <= cfg.cap:
        xx = np.repeat(xg.points, nw, axis=0)
        ww = np.tile(wpts, (nx, 1))
        k = nw
    else:
        k = max(1, cfg.cap // nx)
        rng = np.random.default_rng(cfg.seed + 71)
        idx = rng.integers(0, nw, size=(nx, k))
        xx = np.repeat(xg.points, k, axis=0)
        ww = wpts[idx.ravel()]
        subsampled = True
    xw = np.hstack([xx, ww])
    rho_w = c.rho(_norm_inf(ww)).reshape(nx, k)
    eb_vals = {key: poly.eval_many(xw).reshape(nx, k) for key, poly in eb.items()}
    Bx = {p: cert.barriers[p].eval_many(xg.points) for p in modes}

    worst = math.inf
    ce = None
    for p in modes:
        for l in range(k_d):
            rhs_b = c.kappa * cert.factor(p, l) * Bx[p]  # (nx,)
            rhs = np.maximum(np.maximum(rhs_b[:, None], rho_w), c.psi)  # (nx, k)
            best_over_req = None
            per_req: list[tuple[int, np.ndarray, np.ndarray]] = []
            for pn, ln in _admissible(p, l, k_d, modes):
                lhs = cert.factor(pn, ln) * eb_vals[(p, pn)]
                marg = rhs - lhs  # (nx, k)
                wmins = np.min(marg, axis=1)
                wargs = np.argmin(marg, axis=1)
                per_req.append((pn, wmins, wargs))
                best_over_req = wmins if best_over_req is None else np.maximum(best_over_req, wmins)
            i = int(np.argmin(best_over_req))
            if best_over_req[i] < worst:
                worst = float(best_over_req[i])
                wit_ws = {}
                for pn, wmins, wargs in per_req:
                    col = int(wargs[i])
                    wit_ws[pn] = [float(v) for v in ww[i * k + col]]
                ce = {"x": [float(v) for v in xg.points[i]], "p": p, "l": l,
                      "w_by_requested_mode": wit_ws, "margin": worst}

    n_pts = nx * k * len(modes) * k_d
    note = ("input grid subsampled per state point" if subsampled else "")
    if worst < -MARGIN_TOL:
        return CheckReport("C4", CertStatus("refuted", xg.resolution), worst,
                           n_pts, ce, note)

    # refinement: at the worst states, minimize over w per requested mode
    worst_ref = worst
    if q:
        lo_w, hi_w = _bounding_box(sys.W)
        flat_min = None
        # recompute per-(p,l) point margins to pick refinement seeds
        for p in modes:
            for l in range(k_d):
                rhs_b = c.kappa * cert.factor(p, l) * Bx[p]
                rhs = np.maximum(np.maximum(rhs_b[:, None], rho_w), c.psi)
                best = None
                for pn, ln in _admissible(p, l, k_d, modes):
                    lhs = cert.factor(pn, ln) * eb_vals[(p, pn)]
                    wmins = np.min(rhs - lhs, axis=1)
                    best = wmins if best is None else np.maximum(best, wmins)
                order = np.argsort(best)[: max(1, cfg.refine_starts // (len(modes) * k_d))]
                for i in order:
                    x = xg.points[i]
                    refined = -math.inf
                    for pn, ln in _admissible(p, l, k_d, modes):
                        def wmargin(wvec, p=p, l=l, pn=pn, ln=ln, x=x):
                            xw1 = np.hstack([x, wvec]).reshape(1, -1)
                            lhs = cert.factor(pn, ln) * eb[(p, pn)].eval_many(xw1)[0]
                            rhs1 = max(c.kappa * cert.factor(p, l) *
                                       cert.barriers[p](x),
                                       float(c.rho(_norm_inf(wvec.reshape(1, -1))[0])),
                                       c.psi)
                            return rhs1 - lhs
                        w0 = wpts[np.argmin((rhs - cert.factor(pn, ln) * eb_vals[(p, pn)])[i])]
                        _, fw = pattern_search_min(wmargin, w0, lo_w, hi_w,
                                                   wg.resolution, cfg.refine_iters)
                        refined = max(refined, fw)
                    if refined < worst_ref:
                        worst_ref = refined
                        if refined < -MARGIN_TOL:
                            ce = {"x": [float(v) for v in x], "p": p, "l": l,
                                  "margin": refined,
                                  "note": "refined over inputs at a grid state"}
    if worst_ref < -MARGIN_TOL:
        return CheckReport("C4", CertStatus("refuted", xg.resolution), worst_ref,
                           n_pts, ce, (note + "; refined over inputs").strip("; "))
    return CheckReport("C4", CertStatus("verified", xg.resolution),
                       min(worst, worst_ref), n_pts, None, note)


def apbc_c4_margin(sys: SubsystemSpec, cert: ApbcCertificate, x, p: int, l: int,
                   requested: int, w=None) -> float:
    """RHS - LHS of the augmented expectation condition for one concrete
    requested mode at one point (the existential holds iff some requested
    mode has nonnegative margin for all w)."""
    pairs = _admissible(p, l, cert.k_d, cert.modes)
    match = [ln for pn, ln in pairs if pn == requested]
    if not match:
        raise InputError(f"requested mode {requested} inadmissible from (p={p}, l={l})")
    ln = match[0]
    c = cert.constants
    x = np.asarray(x, dtype=float)
    w = np.zeros(0) if w is None else np.asarray(w, dtype=float)
    xw = np.hstack([x, w]).reshape(1, -1)
    lhs = cert.factor(requested, ln) * \
        expected_next_barrier(sys, p, cert.barriers[requested]).eval_many(xw)[0]
    rhs = max(c.kappa * cert.value(x, p, l), float(c.rho(_norm_inf(w.reshape(1, -1))[0])),
              c.psi)
    return float(rhs - lhs)


# ---------------------------------------------------------------------------
# ABC checking (composed network certificate)


@dataclass
class _AbcTables:
    """Per-subsystem evaluation tables on a joint sample."""

    net: NetworkSpec
    cert: AbcCertificate
    slices: list[slice]

    def wired_inputs(self, pts: np.ndarray, i: int) -> np.ndarray:
        sub = self.net.subsystems[i]
        cols = []
        for e, _off, d in self.net.input_slices(sub.id):
            j = self.net.index(e.src)
            src_pts = pts[:, self.slices[j]]
            vec = self.net.subsystem(e.src).outputs[e.resolved_port()]
            for comp in vec:
                cols.append(comp.eval_many(src_pts))
        if not cols:
            return np.zeros((pts.shape[0], 0))
        return np.stack(cols, axis=-1)


def _joint_state_sample(parts: list[BoxSet], cfg: GridConfig, seed_shift: int
                        ) -> tuple[np.ndarray, float, bool]:
    """Grid product across subsystems if affordable, else independent
    Latin-hypercube samples stacked columnwise (budget cfg.cap)."""
    grids = [boxset_grid(bs, cfg, seed_shift + 7 * i) for i, bs in enumerate(parts)]
    total = 1
    for g in grids:
        total *= max(1, g.points.shape[0])
    res = max(g.resolution for g in grids)
    if total <= cfg.cap and all(g.exact for g in grids):
        idx = np.meshgrid(*[np.arange(max(1, g.points.shape[0])) for g in grids],
                          indexing="ij")
        cols = []
        for g, ix in zip(grids, idx):
            pts = g.points if g.points.shape[0] else np.zeros((1, g.points.shape[1]))
            cols.append(pts[ix.ravel()])
        return np.hstack(cols), res, True
    n = cfg.cap
    rng_shift = 0
    cols = []
    for i, bs in enumerate(parts):
        if bs.dim == 0:
            cols.append(np.zeros((n, 0)))
            continue
        rng = np.random.default_rng(cfg.seed + seed_shift + 131 + i)
        cols.append(bs.sample_uniform(rng, n))
    return np.hstack(cols), res, False


def check_abc(net: NetworkSpec, cert: AbcCertificate,
              cfg: GridConfig = GridConfig(), combo_cap: int = 20000
              ) -> list[CheckReport]:
    """Check the composed certificate on the interconnected augmented system.

    Conditions: nonnegativity (reported as C1), initial-set bound (C2),
    unsafe-set bound (C3, per the certificate's product/union semantics), and
    the expectation decrease (C4).  The expectation of a max has no closed
    form, so C4 uses the compositional surrogate max_i E[B_i']/s_i as the
    left-hand side; this is exactly the quantity the composition theorem
    bounds.  Discrete (p, l) coordinates enter through a separable
    lower-bound screen, and any screened point is re-searched exactly over
    joint (p, l) combinations before a refutation is reported.
    """
    if list(cert.ids) != list(net.ids):
        raise InputError("certificate subsystem ids must match the network's")
    c = cert.constants
    c.require_gap()

    subs = net.subsystems
    N = len(subs)
    dims = [s.state_dim for s in subs]
    offs = np.cumsum([0] + dims)
    slices = [slice(offs[i], offs[i + 1]) for i in range(N)]
    tables = _AbcTables(net, cert, slices)
    s_i = cert.scalings
    kds = [a.k_d for a in cert.apbcs]

    reports: list[CheckReport] = []

    def b_min_over_pl(pts: np.ndarray) -> np.ndarray:
        """min over (p, l) of B(x, p, l) = max_i (min_p B_{i,p}(x_i)) / s_i."""
        out = None
        for i, a in enumerate(cert.apbcs):
            xi = pts[:, slices[i]]
            vi = None
            for p in a.modes:
                v = a.barriers[p].eval_many(xi)
                vi = v if vi is None else np.minimum(vi, v)
            vi = vi / s_i[i]
            out = vi if out is None else np.maximum(out, vi)
        return out

    def b_max_over_pl(pts: np.ndarray) -> np.ndarray:
        out = None
        for i, a in enumerate(cert.apbcs):
            xi = pts[:, slices[i]]
            vi = None
            for p in a.modes:
                for l in range(a.k_d):
                    v = a.factor(p, l) * a.barriers[p].eval_many(xi)
                    vi = v if vi is None else np.maximum(vi, v)
            vi = vi / s_i[i]
            out = vi if out is None else np.maximum(out, vi)
        return out

    # --- C1: nonnegativity of B over X x P x L (screen with the minimum) ---
    pts, res, exact = _joint_state_sample([s.X for s in subs], cfg, 11)
    neg = None
    for i, a in enumerate(cert.apbcs):
        xi = pts[:, slices[i]]
        for p in a.modes:
            v = a.barriers[p].eval_many(xi) / s_i[i]
            neg = v if neg is None else np.minimum(neg, v)
    worst = float(np.min(neg))
    kind = "refuted" if worst < -MARGIN_TOL else "verified"
    ce = None
    if kind == "refuted":
        i = int(np.argmin(neg))
        ce = {"x": [float(v) for v in pts[i]], "margin": worst}
    reports.append(CheckReport(
        "C1", CertStatus(kind, res), worst, pts.shape[0], ce,
        "nonnegativity of every scaled component barrier"))

    # --- C2: B <= gamma on X0 x P x {0} (exact via separability) ---
    pts0, res0, exact0 = _joint_state_sample([s.X0 for s in subs], cfg, 23)
    if pts0.shape[0]:
        bmax = None
        for i, a in enumerate(cert.apbcs):
            xi = pts0[:, slices[i]]
            vi = None
            for p in a.modes:
                v = a.barriers[p].eval_many(xi)
                vi = v if vi is None else np.maximum(vi, v)
            vi = vi / s_i[i]
            bmax = vi if bmax is None else np.maximum(bmax, vi)
        margins = c.gamma - bmax
        worst = float(np.min(margins))
        kind = "refuted" if worst < -MARGIN_TOL else "verified"
        ce = None
        if kind == "refuted":
            i = int(np.argmin(margins))
            ce = {"x": [float(v) for v in pts0[i]], "margin": worst}
        reports.append(CheckReport("C2", CertStatus(kind, res0), worst,
                                   pts0.shape[0], ce,
                                   "" if exact0 else "sampled joint initial set"))
    else:
        reports.append(_vacuous_report("C2", res0, "empty initial set"))

    # --- C3: B >= lambda on the unsafe set per semantics ---
    if cert.semantics == "product":
        parts = [s.X1 for s in subs]
        if any(p.is_empty() for p in parts):
            reports.append(_vacuous_report("C3", res, "empty unsafe set"))
        else:
            pts1, res1, exact1 = _joint_state_sample(parts, cfg, 37)
            margins = b_min_over_pl(pts1) - c.lam
            worst = float(np.min(margins))
            kind = "refuted" if worst < -MARGIN_TOL else "verified"
            ce = None
            if kind == "refuted":
                i = int(np.argmin(margins))
                ce = {"x": [float(v) for v in pts1[i]], "margin": worst}
            reports.append(CheckReport("C3", CertStatus(kind, res1), worst,
                                       pts1.shape[0], ce,
                                       "product semantics: all components unsafe"))
    else:
        worst, ce, total_pts, res1 = math.inf, None, 0, 0.0
        for i_unsafe, sub in enumerate(subs):
            if sub.X1.is_empty():
                continue
            parts = [s.X1 if j == i_unsafe else s.X for j, s in enumerate(subs)]
            sub_cfg = dataclasses.replace(cfg, cap=max(1, cfg.cap // max(1, N)))
            pts1, r1, _ = _joint_state_sample(parts, sub_cfg, 37 + 17 * i_unsafe)
            res1 = max(res1, r1)
            total_pts += pts1.shape[0]
            margins = b_min_over_pl(pts1) - c.lam
            j = int(np.argmin(margins))
            if margins[j] < worst:
                worst = float(margins[j])
                ce = {"x": [float(v) for v in pts1[j]], "unsafe_component": sub.id,
                      "margin": worst}
        if total_pts == 0:
            reports.append(_vacuous_report("C3", res, "empty unsafe set"))
        else:
            kind = "refuted" if worst < -MARGIN_TOL else "verified"
            reports.append(CheckReport("C3", CertStatus(kind, res1), worst,
                                       total_pts, ce if kind == "refuted" else None,
                                       "union semantics: any component unsafe"))

    # --- C4 ---
    reports.append(_abc_c4(net, cert, tables, pts, res, exact, combo_cap))
    return reports


def _abc_c4(net: NetworkSpec, cert: AbcCertificate, tables: _AbcTables,
            pts: np.ndarray, res: float, exact: bool, combo_cap: int
            ) -> CheckReport:
    c = cert.constants
    subs = net.subsystems
    N = len(subs)
    s_i = cert.scalings
    slices = tables.slices

    # per-subsystem expected-next-barrier values for every (current, requested)
    eb_vals: list[dict[tuple[int, int], np.ndarray]] = []
    b_vals: list[dict[int, np.ndarray]] = []
    for i, (sub, a) in enumerate(zip(subs, cert.apbcs)):
        wi = tables.wired_inputs(pts, i)
        xw = np.hstack([pts[:, slices[i]], wi])
        ev = {}
        for p in a.modes:
            for pn in a.modes:
                poly = expected_next_barrier(sub, p, a.barriers[pn])
                ev[(p, pn)] = poly.eval_many(xw)
        eb_vals.append(ev)
        b_vals.append({p: a.barriers[p].eval_many(pts[:, slices[i]]) for p in a.modes})

    # separable screen: best-case RHS minus worst-case LHS over (p, l)
    worst_lhs = None
    best_r = None
    for i, a in enumerate(cert.apbcs):
        kd = a.k_d
        lhs_i = None
        for p in a.modes:
            for l in range(kd):
                opts = None
                for pn, ln in _admissible(p, l, kd, a.modes):
                    v = a.factor(pn, ln) * eb_vals[i][(p, pn)]
                    opts = v if opts is None else np.minimum(opts, v)
                lhs_i = opts if lhs_i is None else np.maximum(lhs_i, opts)
        lhs_i = lhs_i / s_i[i]
        worst_lhs = lhs_i if worst_lhs is None else np.maximum(worst_lhs, lhs_i)
        ri = None
        for p in a.modes:
            v = b_vals[i][p]
            ri = v if ri is None else np.minimum(ri, v)
        ri = ri / s_i[i]
        best_r = ri if best_r is None else np.maximum(best_r, ri)
    screen = np.maximum(c.kappa * best_r, c.psi) - worst_lhs

    n_pts = pts.shape[0]
    flagged = np.where(screen < -MARGIN_TOL)[0]
    if flagged.size == 0:
        return CheckReport(
            "C4", CertStatus("verified", res), float(np.min(screen)), n_pts, None,
            "surrogate expectation max_i E[B_i']/s_i; separable (p,l) screen"
            + ("" if exact else "; sampled joint states"))

    # exact joint (p, l) search at flagged points
    combos_total = 1
    for a in cert.apbcs:
        combos_total *= len(a.modes) * a.k_d
    if combos_total > combo_cap:
        i = int(flagged[np.argmin(screen[flagged])])
        return CheckReport(
            "C4", CertStatus("unchecked", res), float(np.min(screen)), n_pts,
            {"x": [float(v) for v in pts[i]], "margin": float(np.min(screen))},
            f"separable screen flagged {flagged.size} points but the joint "
            f"(p,l) space has {combos_total} combinations (> {combo_cap}); "
            "no exact witness search attempted")

    pl_axes = [[(p, l) for p in a.modes for l in range(a.k_d)] for a in cert.apbcs]
    worst_margin = math.inf
    ce = None
    checked = 0
    for idx in flagged[: 256]:
        checked += 1
        for combo in itertools.product(*pl_axes):
            bval = max(cert.apbcs[i].factor(p, l) * b_vals[i][p][idx] / s_i[i]
                       for i, (p, l) in enumerate(combo))
            rhs = max(c.kappa * bval, c.psi)
            lhs = -math.inf
            for i, (p, l) in enumerate(combo):
                a = cert.apbcs[i]
                term = min(a.factor(pn, ln) * eb_vals[i][(p, pn)][idx]
                           for pn, ln in _admissible(p, l, a.k_d, a.modes))
                lhs = max(lhs, term / s_i[i])
            margin = rhs - lhs
            if margin < worst_margin:
                worst_margin = margin
                ce = {"x": [float(v) for v in pts[idx]],
                      "p": [p for p, _ in combo], "l": [l for _, l in combo],
                      "margin": margin}
    if worst_margin < -MARGIN_TOL:
        return CheckReport(
            "C4", CertStatus("refuted", res), worst_margin, n_pts, ce,
            f"exact joint (p,l) witness at {checked} screened points; "
            "surrogate expectation max_i E[B_i']/s_i")
    return CheckReport(
        "C4", CertStatus("verified", res), worst_margin, n_pts, None,
        f"separable screen flagged {flagged.size} points; exact joint (p,l) "
        "re-search found no violation")


def abc_c4_margin(net: NetworkSpec, cert: AbcCertificate, x,
                  p: Sequence[int], l: Sequence[int]) -> float:
    """Exact surrogate-C4 margin at one joint point and one joint (p, l):
    max(kappa B, psi) minus max_i min_{admissible requested} scaled E[B_i']."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    subs = net.subsystems
    dims = [s.state_dim for s in subs]
    offs = np.cumsum([0] + dims)
    slices = [slice(offs[i], offs[i + 1]) for i in range(len(subs))]
    tables = _AbcTables(net, cert, slices)
    bval = max(a.factor(pi, li) * a.barriers[pi].eval_many(x[:, slices[i]])[0]
               / cert.scalings[i]
               for i, (a, pi, li) in enumerate(zip(cert.apbcs, p, l)))
    rhs = max(cert.constants.kappa * bval, cert.constants.psi)
    lhs = -math.inf
    for i, (sub, a) in enumerate(zip(subs, cert.apbcs)):
        wi = tables.wired_inputs(x, i)
        xw = np.hstack([x[:, slices[i]], wi])
        term = min(a.factor(pn, ln) *
                   expected_next_barrier(sub, p[i], a.barriers[pn]).eval_many(xw)[0]
                   for pn, ln in _admissible(p[i], l[i], a.k_d, a.modes))
        lhs = max(lhs, term / cert.scalings[i])
    return float(rhs - lhs)
