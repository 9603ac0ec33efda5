"""Switched subsystems, their interconnection, and the flatten oracle.

A network is a list of subsystems plus directed edges; each edge wires one
named output port of the source into a contiguous slice of the target's
internal-input vector, in edge-list order.  ``flatten`` substitutes the wiring
into the dynamics to produce a monolithic switched system used as a
simulation cross-check oracle (joint modes materialized lazily).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError
from .polyalg import (
    NoiseSpec,
    Polynomial,
    STD_GAUSSIAN,
    VariableSpace,
    parse_polynomial,
    poly_compose,
)

EXT_PORT = "ext"


@dataclass(frozen=True)
class BoxSet:
    """Union of axis-aligned boxes; `boxes` is a tuple of ((lo, hi), ...) tuples."""

    dim: int
    boxes: tuple[tuple[tuple[float, float], ...], ...]

    def __post_init__(self) -> None:
        for box in self.boxes:
            if len(box) != self.dim:
                raise InputError(f"box {box} does not match dimension {self.dim}")
            for lo, hi in box:
                if lo > hi:
                    raise InputError(f"interval [{lo}, {hi}] has lo > hi")

    @staticmethod
    def from_intervals(intervals: Sequence[Sequence[float]]) -> "BoxSet":
        box = tuple((float(lo), float(hi)) for lo, hi in intervals)
        return BoxSet(len(box), (box,))

    @staticmethod
    def union(parts: Iterable["BoxSet"]) -> "BoxSet":
        parts = list(parts)
        if not parts:
            raise InputError("union of zero box sets has no dimension")
        dim = parts[0].dim
        boxes: list = []
        for p in parts:
            if p.dim != dim:
                raise InputError("union of box sets with mixed dimensions")
            boxes.extend(p.boxes)
        return BoxSet(dim, tuple(boxes))

    @staticmethod
    def empty(dim: int) -> "BoxSet":
        return BoxSet(dim, ())

    @staticmethod
    def point(dim: int = 0) -> "BoxSet":
        """A single zero-volume box; with dim=0 this is the one-point set of empty tuples."""
        return BoxSet(dim, (((0.0, 0.0),) * dim,))

    def is_empty(self) -> bool:
        return not self.boxes

    def contains(self, point, tol: float = 0.0) -> bool:
        pt = tuple(float(v) for v in point)
        if len(pt) != self.dim:
            raise InputError(f"point dim {len(pt)} != set dim {self.dim}")
        for box in self.boxes:
            if all(lo - tol <= v <= hi + tol for v, (lo, hi) in zip(pt, box)):
                return True
        return False

    def contains_many(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        """Boolean membership per row of an (m, dim) array."""
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.dim:
            raise InputError(f"expected points of shape (m, {self.dim})")
        out = np.zeros(points.shape[0], dtype=bool)
        for box in self.boxes:
            inside = np.ones(points.shape[0], dtype=bool)
            for j, (lo, hi) in enumerate(box):
                inside &= (points[:, j] >= lo - tol) & (points[:, j] <= hi + tol)
            out |= inside
        return out

    def covers_box(self, box: tuple[tuple[float, float], ...], tol: float = 1e-12) -> bool:
        """True if some single member box contains `box` entirely."""
        for mine in self.boxes:
            if all(mlo - tol <= lo and hi <= mhi + tol
                   for (lo, hi), (mlo, mhi) in zip(box, mine)):
                return True
        return False

    def covers(self, other: "BoxSet", tol: float = 1e-12) -> bool:
        return all(self.covers_box(b, tol) for b in other.boxes)

    def volume(self) -> float:
        total = 0.0
        for box in self.boxes:
            v = 1.0
            for lo, hi in box:
                v *= hi - lo
            total += v
        return total

    def sample_uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n points uniform over the union (boxes weighted by volume; all-zero
        volumes fall back to uniform box choice)."""
        if self.is_empty():
            raise InputError("cannot sample from an empty box set")
        vols = np.array([np.prod([hi - lo for lo, hi in box]) if box else 1.0
                         for box in self.boxes])
        weights = vols / vols.sum() if vols.sum() > 0 else np.full(len(vols), 1 / len(vols))
        picks = rng.choice(len(self.boxes), size=n, p=weights)
        out = np.empty((n, self.dim))
        for b, box in enumerate(self.boxes):
            mask = picks == b
            k = int(mask.sum())
            if k == 0:
                continue
            lows = np.array([lo for lo, _ in box])
            highs = np.array([hi for _, hi in box])
            out[mask] = lows + (highs - lows) * rng.random((k, self.dim))
        return out

    def to_json(self) -> list:
        return [[[lo, hi] for lo, hi in box] for box in self.boxes]

    @staticmethod
    def from_json(obj: list, dim: int | None = None) -> "BoxSet":
        boxes = tuple(tuple((float(lo), float(hi)) for lo, hi in box) for box in obj)
        if dim is None:
            if not boxes:
                raise InputError("cannot infer dimension of an empty box set")
            dim = len(boxes[0])
        return BoxSet(dim, boxes)


def _interval_pow(lo: float, hi: float, k: int) -> tuple[float, float]:
    if k == 0:
        return 1.0, 1.0
    a, b = lo**k, hi**k
    if k % 2 == 0 and lo < 0 < hi:
        return 0.0, max(a, b)
    return min(a, b), max(a, b)


def poly_range_on_box(p: Polynomial, box: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Interval-arithmetic over-approximation of p's range on a box."""
    lo_total, hi_total = 0.0, 0.0
    for exp, coef in p.terms.items():
        lo, hi = 1.0, 1.0
        for (xlo, xhi), k in zip(box, exp):
            plo, phi = _interval_pow(xlo, xhi, k)
            cands = (lo * plo, lo * phi, hi * plo, hi * phi)
            lo, hi = min(cands), max(cands)
        tlo, thi = (coef * lo, coef * hi) if coef >= 0 else (coef * hi, coef * lo)
        lo_total += tlo
        hi_total += thi
    return lo_total, hi_total


def poly_range_on_boxset(p: Polynomial, bs: BoxSet) -> tuple[float, float]:
    los, his = zip(*(poly_range_on_box(p, box) for box in bs.boxes))
    return min(los), max(his)


@dataclass(frozen=True, eq=True)
class SubsystemSpec:
    """One switched subsystem: per-mode polynomial dynamics over
    (state, internal-input, noise) variables, output ports, and its boxes."""

    id: str
    space: VariableSpace
    dynamics: dict[int, tuple[Polynomial, ...]]
    noise: tuple[NoiseSpec, ...]
    outputs: dict[str, tuple[Polynomial, ...]]
    X: BoxSet
    X0: BoxSet
    X1: BoxSet
    W: BoxSet

    def __post_init__(self) -> None:
        n = self.state_dim
        modes = sorted(self.dynamics)
        if modes != list(range(1, len(modes) + 1)):
            raise InputError(f"{self.id}: mode set must be 1..m, got {modes}")
        for p, vec in self.dynamics.items():
            if len(vec) != n:
                raise InputError(f"{self.id}: mode {p} dynamics vector has length "
                                 f"{len(vec)}, state dim is {n}")
            for comp in vec:
                if comp.space != self.space:
                    raise InputError(f"{self.id}: dynamics not over the subsystem space")
        if len(self.noise) != len(self.space.noise_indices):
            raise InputError(f"{self.id}: {len(self.noise)} noise specs for "
                             f"{len(self.space.noise_indices)} noise variables")
        for name, vec in self.outputs.items():
            for comp in vec:
                if comp.space != self.state_space:
                    raise InputError(f"{self.id}: output {name!r} must be over state variables")
        for label, bs, want in (("X", self.X, n), ("X0", self.X0, n), ("X1", self.X1, n),
                                ("W", self.W, self.input_dim)):
            if bs.dim != want:
                raise InputError(f"{self.id}: {label} has dim {bs.dim}, expected {want}")

    @property
    def state_names(self) -> tuple[str, ...]:
        return tuple(self.space.names[i] for i in self.space.state_indices)

    @property
    def input_names(self) -> tuple[str, ...]:
        return tuple(self.space.names[i] for i in self.space.input_indices)

    @property
    def noise_names(self) -> tuple[str, ...]:
        return tuple(self.space.names[i] for i in self.space.noise_indices)

    @property
    def state_dim(self) -> int:
        return len(self.space.state_indices)

    @property
    def input_dim(self) -> int:
        return len(self.space.input_indices)

    @property
    def noise_dim(self) -> int:
        return len(self.space.noise_indices)

    @property
    def mode_count(self) -> int:
        return len(self.dynamics)

    @property
    def modes(self) -> tuple[int, ...]:
        return tuple(range(1, len(self.dynamics) + 1))

    @property
    def state_space(self) -> VariableSpace:
        return VariableSpace.make(states=self.state_names)

    def external_output(self) -> tuple[Polynomial, ...]:
        try:
            return self.outputs[EXT_PORT]
        except KeyError:
            raise InputError(f"{self.id}: no external output port {EXT_PORT!r}") from None

    def noise_specs_by_name(self) -> dict[str, NoiseSpec]:
        return dict(zip(self.noise_names, self.noise))

    def step(self, x, mode: int, w=(), noise=()) -> np.ndarray:
        """One step of mode `mode` at an explicit noise draw."""
        point = tuple(x) + tuple(w) + tuple(noise)
        vec = self.dynamics.get(mode)
        if vec is None:
            raise InputError(f"{self.id}: no mode {mode}")
        return np.array([comp(point) for comp in vec])

    def step_many(self, x: np.ndarray, mode: int, w: np.ndarray | None = None,
                  noise: np.ndarray | None = None) -> np.ndarray:
        """Vectorized step: x is (m, n); returns (m, n)."""
        if mode not in self.dynamics:
            raise InputError(f"{self.id}: no mode {mode}")
        cols = [np.asarray(x, dtype=float)]
        if self.input_dim:
            cols.append(np.asarray(w, dtype=float))
        if self.noise_dim:
            cols.append(np.asarray(noise, dtype=float))
        pts = np.hstack(cols)
        return np.column_stack([comp.eval_many(pts) for comp in self.dynamics[mode]])


@dataclass(frozen=True, eq=True)
class Edge:
    """Wire: output port `port` of subsystem `src` feeds the next input slice of `dst`."""

    src: str
    dst: str
    port: str | None = None

    def resolved_port(self) -> str:
        return self.port if self.port is not None else self.dst


@dataclass(frozen=True, eq=True)
class NetworkSpec:
    subsystems: tuple[SubsystemSpec, ...]
    edges: tuple[Edge, ...]

    def __post_init__(self) -> None:
        ids = [s.id for s in self.subsystems]
        if len(set(ids)) != len(ids):
            raise InputError(f"duplicate subsystem ids in {ids}")

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.subsystems)

    def subsystem(self, sid: str) -> SubsystemSpec:
        for s in self.subsystems:
            if s.id == sid:
                return s
        raise InputError(f"unknown subsystem {sid!r}")

    def index(self, sid: str) -> int:
        for i, s in enumerate(self.subsystems):
            if s.id == sid:
                return i
        raise InputError(f"unknown subsystem {sid!r}")

    def edges_into(self, sid: str) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if e.dst == sid)

    def input_slices(self, sid: str) -> list[tuple[Edge, int, int]]:
        """(edge, offset, dim) per incoming edge, tiling the input vector in
        edge-list order."""
        out = []
        offset = 0
        for e in self.edges_into(sid):
            src = self.subsystem(e.src)
            vec = src.outputs.get(e.resolved_port())
            d = len(vec) if vec is not None else 0
            out.append((e, offset, d))
            offset += d
        return out


@dataclass(frozen=True)
class Violation:
    severity: str  # "error" | "warning"
    subsystem: str
    condition: str
    message: str
    edge: Edge | None = None

    def __str__(self) -> str:
        where = f" edge {self.edge.src}->{self.edge.dst}" if self.edge else ""
        return f"[{self.severity}] {self.subsystem}{where}: {self.condition}: {self.message}"


def validate_network(net: NetworkSpec) -> list[Violation]:
    """All wiring/dimension/containment violations, as data (empty list = valid)."""
    out: list[Violation] = []
    ids = set(net.ids)
    for e in net.edges:
        if e.src not in ids or e.dst not in ids:
            out.append(Violation("error", e.dst, "edge-endpoints",
                                 f"edge references unknown subsystem ({e.src} -> {e.dst})", e))
    for sub in net.subsystems:
        if EXT_PORT not in sub.outputs:
            out.append(Violation("error", sub.id, "external-output",
                                 f"missing output port {EXT_PORT!r}"))
        # initial/unsafe sets inside the state set
        for label, bs in (("X0", sub.X0), ("X1", sub.X1)):
            if not bs.is_empty() and not sub.X.covers(bs):
                out.append(Violation("error", sub.id, f"{label}-containment",
                                     f"{label} not contained in X (box containment)"))
        # wiring of this subsystem's inputs
        offset = 0
        for e in net.edges_into(sub.id):
            if e.src not in ids:
                continue
            src = net.subsystem(e.src)
            vec = src.outputs.get(e.resolved_port())
            if vec is None:
                out.append(Violation("error", sub.id, "missing-port",
                                     f"{e.src} has no output port {e.resolved_port()!r}", e))
                continue
            d = len(vec)
            if offset + d > sub.input_dim:
                out.append(Violation("error", sub.id, "dimension-mismatch",
                                     f"input slices overflow W dimension {sub.input_dim}", e))
                offset += d
                continue
            # range containment h(X_src) within the matching W slice (warning only)
            if not src.X.is_empty() and not sub.W.is_empty():
                for c, comp in enumerate(vec):
                    lo, hi = poly_range_on_boxset(comp, src.X)
                    slice_ivals = [box[offset + c] for box in sub.W.boxes]
                    wlo = min(iv[0] for iv in slice_ivals)
                    whi = max(iv[1] for iv in slice_ivals)
                    if lo < wlo - 1e-9 or hi > whi + 1e-9:
                        out.append(Violation(
                            "warning", sub.id, "range-containment",
                            f"output range [{lo:g}, {hi:g}] of {e.src}.{e.resolved_port()}[{c}] "
                            f"exceeds W slice [{wlo:g}, {whi:g}]", e))
            offset += d
        if offset != sub.input_dim:
            out.append(Violation("error", sub.id, "dimension-mismatch",
                                 f"input slices tile {offset} of {sub.input_dim} dims"))
    return out


def wiring_substitution(net: NetworkSpec, sid: str,
                        target: VariableSpace,
                        rename: dict[str, str]) -> dict[str, Polynomial]:
    """Map subsystem sid's variables into `target`: input variables are replaced
    by the wired neighbor outputs (renamed into target), others by `rename`."""
    sub = net.subsystem(sid)
    mapping: dict[str, Polynomial] = {}
    for name in sub.state_names + sub.noise_names:
        mapping[name] = Polynomial.variable(target, rename[name])
    inames = sub.input_names
    for e, offset, d in net.input_slices(sid):
        src = net.subsystem(e.src)
        vec = src.outputs[e.resolved_port()]
        for c in range(d):
            src_rename = {n: Polynomial.variable(target, f"{src.id}.{n}")
                          for n in src.state_names}
            mapping[inames[offset + c]] = poly_compose(vec[c], src_rename)
    return mapping


class FlattenedSystem:
    """Monolithic view of a network: joint state, joint noise, no inputs.

    Joint modes are tuples (p_1, ..., p_N); dynamics for a given joint mode are
    substituted lazily and cached, since the product mode set is astronomically
    large for big N.
    """

    def __init__(self, net: NetworkSpec):
        errors = [v for v in validate_network(net) if v.severity == "error"]
        if errors:
            raise InputError("cannot flatten an invalid network: "
                             + "; ".join(str(v) for v in errors))
        self.net = net
        states = []
        noises = []
        self._noise_specs: list[NoiseSpec] = []
        for sub in net.subsystems:
            states.extend(f"{sub.id}.{n}" for n in sub.state_names)
            noises.extend(f"{sub.id}.{n}" for n in sub.noise_names)
            self._noise_specs.extend(sub.noise)
        self.space = VariableSpace.make(states=states, noises=noises)
        self.noise = tuple(self._noise_specs)
        self._cache: dict[tuple[int, ...], tuple[Polynomial, ...]] = {}
        self.X = _product_boxset([s.X for s in net.subsystems])
        self.X0 = _product_boxset([s.X0 for s in net.subsystems])

    @property
    def state_dim(self) -> int:
        return len(self.space.state_indices)

    @property
    def mode_sets(self) -> tuple[tuple[int, ...], ...]:
        return tuple(s.modes for s in self.net.subsystems)

    def joint_mode_count(self) -> int:
        out = 1
        for s in self.net.subsystems:
            out *= s.mode_count
        return out

    def joint_modes(self):
        """Iterator over all joint mode tuples (use only for small networks)."""
        return itertools.product(*(s.modes for s in self.net.subsystems))

    def dynamics_for(self, joint_mode: tuple[int, ...]) -> tuple[Polynomial, ...]:
        joint_mode = tuple(int(p) for p in joint_mode)
        cached = self._cache.get(joint_mode)
        if cached is not None:
            return cached
        if len(joint_mode) != len(self.net.subsystems):
            raise InputError("joint mode length does not match subsystem count")
        comps: list[Polynomial] = []
        for sub, p in zip(self.net.subsystems, joint_mode):
            if p not in sub.dynamics:
                raise InputError(f"{sub.id}: no mode {p}")
            rename = {n: f"{sub.id}.{n}" for n in sub.state_names + sub.noise_names}
            mapping = wiring_substitution(self.net, sub.id, self.space, rename)
            for comp in sub.dynamics[p]:
                comps.append(poly_compose(comp, mapping))
        result = tuple(comps)
        self._cache[joint_mode] = result
        return result

    def step(self, x, joint_mode: tuple[int, ...], noise) -> np.ndarray:
        point = tuple(x) + tuple(noise)
        return np.array([comp(point) for comp in self.dynamics_for(joint_mode)])


def _product_boxset(parts: Sequence[BoxSet]) -> BoxSet:
    dim = sum(p.dim for p in parts)
    count = 1
    for p in parts:
        count *= max(len(p.boxes), 1)
        if count > 4096:
            # box-union product explodes combinatorially; callers at this size
            # only need per-subsystem sets, which remain available on the net
            return BoxSet.empty(dim)
    combos = itertools.product(*(p.boxes for p in parts))
    boxes = tuple(tuple(itertools.chain.from_iterable(c)) for c in combos)
    return BoxSet(dim, boxes)


def flatten(net: NetworkSpec) -> FlattenedSystem:
    """Monolithic switched system equivalent to the wired network."""
    return FlattenedSystem(net)


# ---------------------------------------------------------------------------
# JSON system files
# ---------------------------------------------------------------------------

def subsystem_to_json(sub: SubsystemSpec) -> dict:
    return {
        "id": sub.id,
        "state": list(sub.state_names),
        "inputs": list(sub.input_names),
        "noise_vars": list(sub.noise_names),
        "noise": [n.to_json() for n in sub.noise],
        "dynamics": {str(p): [c.to_string() for c in vec]
                     for p, vec in sorted(sub.dynamics.items())},
        "outputs": {port: [c.to_string() for c in vec]
                    for port, vec in sorted(sub.outputs.items())},
        "X": sub.X.to_json(),
        "X0": sub.X0.to_json(),
        "X1": sub.X1.to_json(),
        "W": sub.W.to_json(),
    }


def subsystem_from_json(obj: dict, default_noise: NoiseSpec = STD_GAUSSIAN) -> SubsystemSpec:
    if not isinstance(obj, dict):
        raise InputError("subsystem payload must be a JSON object")
    missing = [k for k in ("id", "state", "dynamics", "X") if k not in obj]
    if missing:
        raise InputError(f"subsystem payload missing keys: {missing}")
    states = list(obj["state"])
    inputs = list(obj.get("inputs", []))
    noise_vars = list(obj.get("noise_vars", []))
    space = VariableSpace.make(states=states, inputs=inputs, noises=noise_vars)
    state_space = VariableSpace.make(states=states)
    if "noise" in obj:
        noise = tuple(NoiseSpec.from_json(n) for n in obj["noise"])
    else:
        noise = tuple(default_noise for _ in noise_vars)
    dynamics = {int(p): tuple(parse_polynomial(s, space) for s in vec)
                for p, vec in obj["dynamics"].items()}
    outputs = {port: tuple(parse_polynomial(s, state_space) for s in vec)
               for port, vec in obj.get("outputs", {}).items()}
    return SubsystemSpec(
        id=obj["id"], space=space, dynamics=dynamics, noise=noise, outputs=outputs,
        X=BoxSet.from_json(obj["X"], len(states)),
        X0=BoxSet.from_json(obj.get("X0", []), len(states)),
        X1=BoxSet.from_json(obj.get("X1", []), len(states)),
        W=BoxSet.from_json(obj.get("W", []), len(inputs)),
    )


def network_to_json(net: NetworkSpec) -> dict:
    edges = []
    for e in net.edges:
        item = {"from": e.src, "to": e.dst}
        if e.port is not None:
            item["port"] = e.port
        edges.append(item)
    return {"subsystems": [subsystem_to_json(s) for s in net.subsystems], "edges": edges}


def network_from_json(obj: dict) -> NetworkSpec:
    if not isinstance(obj, dict) or not isinstance(obj.get("subsystems"), list):
        raise InputError("network payload needs a 'subsystems' list")
    default_noise = (NoiseSpec.from_json(obj["noise"])
                     if "noise" in obj else STD_GAUSSIAN)
    subs = tuple(subsystem_from_json(s, default_noise) for s in obj["subsystems"])
    edges = tuple(Edge(e["from"], e["to"], e.get("port")) for e in obj.get("edges", []))
    return NetworkSpec(subs, edges)
