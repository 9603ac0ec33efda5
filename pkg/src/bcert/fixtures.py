"""Benchmark systems: a ring of heated rooms with on/off valve levels, a
ring of two-mode planar subsystems, and a scalar contraction used by the
synthesis tests.

Each builder returns a NetworkSpec; the *_cbc helpers return the published
per-mode certificates for one subsystem, which every subsystem shares by
symmetry.
"""

from __future__ import annotations

from .certify import CbcCertificate, CertConstants, PowerLawFn
from .dwell import common_barrier_apbc, lift_to_apbc, min_dwell_time
from .errors import InputError
from .model import (BoxSet, Edge, NetworkSpec, NoiseSpec, SubsystemSpec,
                    VariableSpace)
from .polyalg import Polynomial, parse_polynomial

# ---------------------------------------------------------------------------
# ring of heated rooms

ROOM_MODES = 7  # valve levels b = 0, 0.1, ..., 0.6
_ROOM_ETA = 0.005  # neighbor wall conduction
_ROOM_BETA = 0.022  # ambient leakage
_ROOM_THETA = 0.05  # heater coupling
_ROOM_TE = -1.0  # ambient temperature
_ROOM_TH = 50.0  # heater temperature
_ROOM_NOISE = 0.25

ROOM_CBC_CONSTANTS = dict(kappa=0.99, gamma=0.16, lam=1.2, psi=7.07e-4,
                          alpha_coef=4.5e-5, rho_coef=9.3e-6)
ROOM_BARRIER = "-0.00012*T^4 + 0.01045*T^3 - 0.19932*T^2 - 0.64538*T + 28.68175"


def _room_subsystem(sid: str) -> SubsystemSpec:
    space = VariableSpace.make(states=["T"], inputs=["wl", "wr"], noises=["e"])
    T = Polynomial.variable(space, "T")
    wl = Polynomial.variable(space, "wl")
    wr = Polynomial.variable(space, "wr")
    e = Polynomial.variable(space, "e")
    one = Polynomial.constant(space, 1.0)
    dynamics = {}
    for p in range(1, ROOM_MODES + 1):
        b = 0.1 * (p - 1)
        a = 1.0 - 2.0 * _ROOM_ETA - _ROOM_BETA - _ROOM_THETA * b
        f = (one * a) * T + one * (_ROOM_THETA * _ROOM_TH * b) \
            + (one * _ROOM_ETA) * wl + (one * _ROOM_ETA) * wr \
            + (one * (_ROOM_BETA * _ROOM_TE)) + (one * _ROOM_NOISE) * e
        dynamics[p] = (f,)
    out_space = space.drop_noise()
    state_space = VariableSpace.make(states=["T"])
    T_out = Polynomial.variable(state_space, "T")
    return SubsystemSpec(
        id=sid, space=space, dynamics=dynamics,
        noise=(NoiseSpec.gaussian(0.0, 1.0),),
        outputs={"ext": (T_out,), "y": (T_out,)},
        X=BoxSet.from_intervals([(1.0, 50.0)]),
        X0=BoxSet.from_intervals([(19.0, 21.0)]),
        X1=BoxSet.union([BoxSet.from_intervals([(1.0, 17.0)]),
                         BoxSet.from_intervals([(23.0, 50.0)])]),
        W=BoxSet.from_intervals([(1.0, 50.0), (1.0, 50.0)]))


def room_network(n: int = 3) -> NetworkSpec:
    """Circular corridor of n >= 2 identical rooms; each room reads its two
    neighbors' temperatures (left then right)."""
    if n < 2:
        raise InputError(f"the room ring needs at least 2 rooms, got {n}")
    subs = [_room_subsystem(f"room{i + 1}") for i in range(n)]
    edges = []
    for i in range(n):
        left = f"room{(i - 1) % n + 1}"
        right = f"room{(i + 1) % n + 1}"
        me = f"room{i + 1}"
        edges.append(Edge(left, me, "y"))
        edges.append(Edge(right, me, "y"))
    return NetworkSpec(tuple(subs), tuple(edges))


def room_cbc(mode: int) -> CbcCertificate:
    """Published certificate for one room: a common quadratic barrier with
    shared constants across all seven valve levels."""
    state_space = VariableSpace.make(states=["T"])
    barrier = parse_polynomial(ROOM_BARRIER, state_space)
    k = ROOM_CBC_CONSTANTS
    constants = CertConstants(
        kappa=k["kappa"], gamma=k["gamma"], lam=k["lam"], psi=k["psi"],
        alpha=PowerLawFn(k["alpha_coef"], 2.0), rho=PowerLawFn(k["rho_coef"], 2.0))
    return CbcCertificate(mode=mode, barrier=barrier, constants=constants)


def room_cbcs() -> dict[int, CbcCertificate]:
    return {p: room_cbc(p) for p in range(1, ROOM_MODES + 1)}


def room_apbc():
    """The common-barrier case: mu = 1 so k_d = 1 and the per-mode
    certificate is already dwell-augmented with undegraded constants."""
    return common_barrier_apbc(room_cbcs(), k_d=1, epsilon=2.0)


ROOM_MU = 1.0
ROOM_K_D = 1


# ---------------------------------------------------------------------------
# ring of two-mode planar subsystems

TWO_MODE_MODES = 2
_TM_A = {1: ((0.05, 0.0), (0.9, 0.03)), 2: ((0.02, -1.2), (0.0, 0.05))}
_TM_B = {1: (-0.9, 0.5), 2: (0.9, -0.2)}
_TM_INPUT = 0.01
_TM_NOISE = 0.1

TWO_MODE_BARRIERS = {
    1: ("0.2309*x1^2 + 0.1160*x1*x2 + 0.000001*x1 + 0.2529*x2^2 "
        "- 0.000001*x2 + 0.000000002"),
    2: ("0.2394*x1^2 + 0.1101*x1*x2 - 0.000002*x1 + 0.2588*x2^2 "
        "- 0.000008*x2 + 0.000000005"),
}
TWO_MODE_CBC_CONSTANTS = {
    1: dict(kappa=0.469, gamma=0.15, lam=2.4, psi=5.42e-6, alpha_coef=4e-5,
            rho_coef=2.71e-6),
    2: dict(kappa=0.498, gamma=0.16, lam=2.3, psi=6.88e-6, alpha_coef=5e-5,
            rho_coef=3.44e-6),
}
TWO_MODE_MU = 2.0
TWO_MODE_EPSILON = 2.0


def _two_mode_subsystem(sid: str) -> SubsystemSpec:
    space = VariableSpace.make(states=["x1", "x2"], inputs=["w1", "w2"],
                               noises=["e1", "e2"])
    x1 = Polynomial.variable(space, "x1")
    x2 = Polynomial.variable(space, "x2")
    w1 = Polynomial.variable(space, "w1")
    w2 = Polynomial.variable(space, "w2")
    e1 = Polynomial.variable(space, "e1")
    e2 = Polynomial.variable(space, "e2")
    one = Polynomial.constant(space, 1.0)
    dynamics = {}
    for p in (1, 2):
        (a11, a12), (a21, a22) = _TM_A[p]
        b1, b2 = _TM_B[p]
        f1 = one * a11 * x1 + one * a12 * x2 + one * _TM_INPUT * w1 \
            + one * b1 + one * _TM_NOISE * e1
        f2 = one * a21 * x1 + one * a22 * x2 + one * _TM_INPUT * w2 \
            + one * b2 + one * _TM_NOISE * e2
        dynamics[p] = (f1, f2)
    state_space = VariableSpace.make(states=["x1", "x2"])
    y1 = Polynomial.variable(state_space, "x1")
    y2 = Polynomial.variable(state_space, "x2")
    box = BoxSet.from_intervals([(-6.0, 6.0), (-6.0, 6.0)])
    return SubsystemSpec(
        id=sid, space=space, dynamics=dynamics,
        noise=(NoiseSpec.gaussian(0.0, 1.0), NoiseSpec.gaussian(0.0, 1.0)),
        outputs={"ext": (y1, y2), "y": (y1, y2)},
        X=box,
        X0=BoxSet.from_intervals([(-0.5, 0.5), (-0.5, 0.5)]),
        X1=BoxSet.union([
            BoxSet.from_intervals([(-6.0, -2.0), (-6.0, -2.0)]),
            BoxSet.from_intervals([(2.0, 6.0), (2.0, 6.0)])]),
        W=box)


def two_mode_network(n: int = 2) -> NetworkSpec:
    """Ring of n >= 2 planar subsystems; subsystem i reads the full state of
    its predecessor."""
    if n < 2:
        raise InputError(f"the two-mode ring needs at least 2 subsystems, got {n}")
    subs = [_two_mode_subsystem(f"sub{i + 1}") for i in range(n)]
    edges = [Edge(f"sub{(i - 1) % n + 1}", f"sub{i + 1}", "y") for i in range(n)]
    return NetworkSpec(tuple(subs), tuple(edges))


def two_mode_cbc(mode: int) -> CbcCertificate:
    state_space = VariableSpace.make(states=["x1", "x2"])
    barrier = parse_polynomial(TWO_MODE_BARRIERS[mode], state_space)
    k = TWO_MODE_CBC_CONSTANTS[mode]
    constants = CertConstants(
        kappa=k["kappa"], gamma=k["gamma"], lam=k["lam"], psi=k["psi"],
        alpha=PowerLawFn(k["alpha_coef"], 2.0), rho=PowerLawFn(k["rho_coef"], 2.0))
    return CbcCertificate(mode=mode, barrier=barrier, constants=constants)


def two_mode_cbcs() -> dict[int, CbcCertificate]:
    return {p: two_mode_cbc(p) for p in (1, 2)}


def two_mode_k_d() -> int:
    kappas = {p: TWO_MODE_CBC_CONSTANTS[p]["kappa"] for p in (1, 2)}
    return min_dwell_time(TWO_MODE_EPSILON, TWO_MODE_MU, kappas)


def two_mode_apbc():
    return lift_to_apbc(two_mode_cbcs(), TWO_MODE_EPSILON, two_mode_k_d(),
                        mu=TWO_MODE_MU)


# ---------------------------------------------------------------------------
# scalar contraction plant for synthesis tests


def contraction_plant() -> SubsystemSpec:
    """One mode, no inputs: x+ = 0.5 x + 0.1 e on [-1, 1], initial set
    [-0.1, 0.1], unsafe |x| >= 0.8."""
    space = VariableSpace.make(states=["x"], noises=["e"])
    x = Polynomial.variable(space, "x")
    e = Polynomial.variable(space, "e")
    one = Polynomial.constant(space, 1.0)
    state_space = VariableSpace.make(states=["x"])
    return SubsystemSpec(
        id="plant", space=space,
        dynamics={1: (one * 0.5 * x + one * 0.1 * e,)},
        noise=(NoiseSpec.gaussian(0.0, 1.0),),
        outputs={"ext": (Polynomial.variable(state_space, "x"),)},
        X=BoxSet.from_intervals([(-1.0, 1.0)]),
        X0=BoxSet.from_intervals([(-0.1, 0.1)]),
        X1=BoxSet.union([BoxSet.from_intervals([(-1.0, -0.8)]),
                         BoxSet.from_intervals([(0.8, 1.0)])]),
        W=BoxSet.point(0))
