"""Network composition: small-gain analysis and the max-form composed
certificate.

Cross gains are power laws rho_i(alpha_j^{-1}(s)) = c_ij * s when the
exponents match; the small-gain condition then reduces to "every directed
cycle has coefficient product < 1", checked via the maximum cycle mean of
log-coefficients (Karp's algorithm).  Scalings that contract every edge are
recovered from longest-path potentials with a slack of half the negated
maximum cycle mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .certify import (AbcCertificate, ApbcCertificate, CertConstants, CertStatus,
                      PowerLawFn, UNCHECKED, ZERO_GAIN)
from .errors import CapabilityError, CompositionInfeasibleError, InputError
from .model import NetworkSpec


@dataclass(frozen=True)
class GainEdge:
    src: int  # index of the supplying subsystem j
    dst: int  # index of the receiving subsystem i
    coef: float  # c_ij with rho_i(alpha_j^{-1}(s)) = c_ij * s

    def __post_init__(self) -> None:
        if self.coef < 0:
            raise InputError("gain coefficients must be >= 0")


@dataclass(frozen=True)
class GainDigraph:
    nodes: tuple[str, ...]
    self_gains: tuple[float, ...]  # kappa_i
    edges: tuple[GainEdge, ...]

    def __post_init__(self) -> None:
        if len(self.self_gains) != len(self.nodes):
            raise InputError("one self gain per node required")
        for e in self.edges:
            if not (0 <= e.src < len(self.nodes) and 0 <= e.dst < len(self.nodes)):
                raise InputError(f"edge {e} references a missing node")

    def to_json(self) -> dict:
        return {"nodes": list(self.nodes),
                "self_gains": list(self.self_gains),
                "edges": [{"src": self.nodes[e.src], "dst": self.nodes[e.dst],
                           "coef": e.coef} for e in self.edges]}


def build_gain_digraph(net: NetworkSpec, apbcs: Sequence[ApbcCertificate]
                       ) -> GainDigraph:
    """One node per subsystem with self gain kappa_i; one edge per connected
    ordered pair (j supplies i) with coefficient rho_i.coef / alpha_j.coef.

    The coefficient is linear only when the rho and alpha exponents match;
    mismatched nonzero exponents make the gain genuinely nonlinear and are
    rejected (a pointwise comparison of the composed gain against the
    identity on the reachable range would be needed instead).  Edges whose
    receiving rho is the zero gain carry no influence and are dropped.
    """
    if len(apbcs) != len(net.subsystems):
        raise InputError("one augmented certificate per subsystem required")
    ids = net.ids
    pairs = set()
    for sub in net.subsystems:
        for e in net.edges_into(sub.id):
            pairs.add((net.index(e.src), net.index(sub.id)))
    edges = []
    for j, i in sorted(pairs):
        rho = apbcs[i].constants.rho
        alpha = apbcs[j].constants.alpha
        if rho.is_zero():
            continue
        if alpha is None or alpha.is_zero():
            raise InputError(
                f"subsystem {ids[j]!r} needs a positive alpha to bound the "
                f"output it supplies to {ids[i]!r}")
        if rho.exp != alpha.exp:
            raise CapabilityError(
                f"gain from {ids[j]!r} to {ids[i]!r} composes rho (exp "
                f"{rho.exp}) with alpha^-1 (exp {alpha.exp}); only matching "
                "exponents yield a linear gain; fall back to a pointwise "
                "check of rho_i(alpha_j^-1(s)) < s on the operating range")
        edges.append(GainEdge(j, i, rho.coef / alpha.coef))
    return GainDigraph(tuple(ids),
                       tuple(a.constants.kappa for a in apbcs),
                       tuple(edges))


@dataclass(frozen=True)
class SmallGainResult:
    satisfied: bool
    max_cycle_gain: float | None  # geometric mean gain of the critical cycle
    violating_cycle: tuple[str, ...] | None

    def to_json(self) -> dict:
        return {"satisfied": self.satisfied,
                "max_cycle_gain": self.max_cycle_gain,
                "violating_cycle": None if self.violating_cycle is None
                else list(self.violating_cycle)}


def _karp_max_cycle_mean(n: int, edges: Sequence[tuple[int, int, float]]
                         ) -> tuple[float, list[int]] | None:
    """Maximum cycle mean of a weighted digraph, with a cycle achieving it.

    Returns None when the graph is acyclic.  F[k][v] is the best weight of a
    k-edge walk ending at v (any start); Karp's theorem takes the max over v
    of min over k of (F[n][v] - F[k][v]) / (n - k).
    """
    NEG = -math.inf
    F = [[NEG] * n for _ in range(n + 1)]
    parent: list[list[int]] = [[-1] * n for _ in range(n + 1)]
    F[0] = [0.0] * n
    for k in range(1, n + 1):
        for u, v, w in edges:
            if F[k - 1][u] > NEG and F[k - 1][u] + w > F[k][v]:
                F[k][v] = F[k - 1][u] + w
                parent[k][v] = u
    best: float | None = None
    best_v = -1
    for v in range(n):
        if F[n][v] == NEG:
            continue
        mv = min((F[n][v] - F[k][v]) / (n - k)
                 for k in range(n) if F[k][v] > NEG)
        if best is None or mv > best:
            best, best_v = mv, v
    if best is None:
        return None
    # walk parents back from (n, best_v); a length-n walk must repeat a vertex
    walk = [best_v]
    k, v = n, best_v
    while k > 0:
        v = parent[k][v]
        k -= 1
        walk.append(v)
    walk.reverse()
    seen: dict[int, int] = {}
    cyc: list[int] = []
    for idx, v in enumerate(walk):
        if v in seen:
            cyc = walk[seen[v]: idx]
            break
        seen[v] = idx
    return best, cyc


def small_gain_check(g: GainDigraph) -> SmallGainResult:
    """Satisfied iff every self gain is < 1 and every directed cycle of cross
    gains has coefficient product strictly below 1."""
    for i, k in enumerate(g.self_gains):
        if k >= 1.0:
            return SmallGainResult(False, k, (g.nodes[i],))
    pos_edges = [(e.src, e.dst, math.log(e.coef)) for e in g.edges if e.coef > 0]
    res = _karp_max_cycle_mean(len(g.nodes), pos_edges)
    if res is None:
        return SmallGainResult(True, None, None)
    mcm, cyc = res
    gain = math.exp(mcm)
    if mcm < 0.0:
        return SmallGainResult(True, gain, None)
    return SmallGainResult(False, gain, tuple(g.nodes[v] for v in cyc))


@dataclass(frozen=True)
class ScalingSet:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if any(v <= 0 for v in self.values):
            raise InputError("scalings must be positive")

    def to_json(self) -> list[float]:
        return list(self.values)


def edge_margins(g: GainDigraph, s: ScalingSet) -> dict[tuple[str, str], float]:
    """Scaled edge gains c_ij s_j / s_i; composition needs all of them < 1."""
    return {(g.nodes[e.src], g.nodes[e.dst]):
            e.coef * s.values[e.src] / s.values[e.dst] for e in g.edges}


def find_sigma(g: GainDigraph) -> ScalingSet:
    """Scalings s_i making every scaled edge gain c_ij s_j / s_i < 1.

    All coefficients already below 1 gives the identity scaling.  Otherwise
    take longest-path potentials phi on weights log c_ij + slack (slack =
    half the negated maximum cycle mean, so no positive cycles remain) and
    set s_i = exp(phi_i); every edge then contracts by at least exp(-slack).
    """
    sg = small_gain_check(g)
    if not sg.satisfied:
        raise InputError(
            f"small-gain condition fails (cycle {sg.violating_cycle}, "
            f"gain {sg.max_cycle_gain}); no scalings exist")
    n = len(g.nodes)
    if all(e.coef < 1.0 for e in g.edges):
        return ScalingSet((1.0,) * n)
    pos_edges = [(e.src, e.dst, math.log(e.coef)) for e in g.edges if e.coef > 0]
    mcm = _karp_max_cycle_mean(n, pos_edges)[0]
    slack = -mcm / 2.0
    if slack <= 1e-12:
        raise CompositionInfeasibleError(
            f"maximum cycle gain {math.exp(mcm):.6g} leaves no slack for "
            "contracting scalings")
    w = [(u, v, lw + slack) for u, v, lw in pos_edges]
    phi = [0.0] * n
    for _ in range(n + 1):
        changed = False
        for u, v, wt in w:
            if phi[u] + wt > phi[v] + 1e-15:
                phi[v] = phi[u] + wt
                changed = True
        if not changed:
            break
    else:
        raise CompositionInfeasibleError(
            "longest-path potentials failed to converge; a positive cycle "
            "survived the slack adjustment")
    s = ScalingSet(tuple(math.exp(p) for p in phi))
    margins = edge_margins(g, s)
    bad = {k: v for k, v in margins.items() if v >= 1.0 - 1e-12}
    if bad:
        raise CompositionInfeasibleError(f"scaled gains not contractive: {bad}")
    return s


def compose_abc(net: NetworkSpec, apbcs: Sequence[ApbcCertificate],
                scalings: ScalingSet | Sequence[float] | None = None,
                semantics: str = "auto") -> AbcCertificate:
    """Compose per-subsystem augmented certificates into one network
    certificate B = max_i B_i / s_i.

    Constants: gamma = max gamma_i/s_i, psi = max psi_i/s_i, kappa = the
    larger of the self gains and the scaled cross gains, and lambda = max of
    lambda_i/s_i for product unsafe sets or min for union.  The gap
    requirement (the relevant lambda strictly above gamma) is enforced here,
    naming the offending pair.  `semantics="auto"` picks union when the
    per-subsystem thresholds coincide, product otherwise.
    """
    if len(apbcs) != len(net.subsystems):
        raise InputError("one augmented certificate per subsystem required")
    g = build_gain_digraph(net, apbcs)
    sg = small_gain_check(g)
    if not sg.satisfied:
        raise CompositionInfeasibleError(
            f"small-gain condition fails: cycle {sg.violating_cycle} has "
            f"geometric mean gain {sg.max_cycle_gain:.6g} >= 1")
    if scalings is None:
        s = find_sigma(g)
    elif isinstance(scalings, ScalingSet):
        s = scalings
    else:
        s = ScalingSet(tuple(float(v) for v in scalings))
    if len(s.values) != len(apbcs):
        raise InputError("one scaling per subsystem required")
    bad = {k: v for k, v in edge_margins(g, s).items() if v >= 1.0}
    if bad:
        raise CompositionInfeasibleError(
            f"supplied scalings leave non-contractive edges: {bad}")

    ids = net.ids
    gam = [a.constants.gamma / si for a, si in zip(apbcs, s.values)]
    lams = [a.constants.lam / si for a, si in zip(apbcs, s.values)]
    psis = [a.constants.psi / si for a, si in zip(apbcs, s.values)]
    gamma = max(gam)
    i_gam = gam.index(gamma)

    if semantics == "auto":
        semantics = "union" if math.isclose(min(lams), max(lams), rel_tol=1e-12) \
            else "product"
    if semantics not in ("product", "union"):
        raise InputError(f"semantics must be 'product', 'union' or 'auto', "
                         f"got {semantics!r}")
    if semantics == "product":
        lam = max(lams)
        i_lam = lams.index(lam)
    else:
        lam = min(lams)
        i_lam = lams.index(lam)
    if not (lam > gamma):
        raise CompositionInfeasibleError(
            f"level gap fails under {semantics} semantics: scaled lambda of "
            f"{ids[i_lam]!r} is {lam:.6g}, not above scaled gamma of "
            f"{ids[i_gam]!r} ({gamma:.6g})")

    kappa_cross = max(edge_margins(g, s).values(), default=0.0)
    kappa = max(max(g.self_gains), kappa_cross)
    constants = CertConstants(kappa=kappa, gamma=gamma, lam=lam,
                              psi=max(psis), alpha=None, rho=ZERO_GAIN)

    if all(a.status.verified for a in apbcs):
        h = max(a.status.resolution or 0.0 for a in apbcs)
        status = CertStatus("verified", h,
                            "composed from component certificates verified "
                            "at this resolution")
    else:
        status = UNCHECKED
    return AbcCertificate(ids=tuple(ids), apbcs=tuple(apbcs), scalings=s.values,
                          constants=constants, semantics=semantics, status=status)
