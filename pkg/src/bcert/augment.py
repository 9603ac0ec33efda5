"""Dwell-time-augmented execution semantics.

The augmented system carries (x, p, l): the state, the active mode, and the
number of steps since the last switch capped at k_d - 1.  Switching is only
admissible when the counter is saturated; the dynamics of a step always use
the current mode, so a requested switch takes effect the following step.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DwellViolationError, InputError
from .model import NetworkSpec, SubsystemSpec


@dataclass(frozen=True)
class AugmentedState:
    x: tuple[float, ...]
    p: int
    l: int

    def __post_init__(self) -> None:
        if self.l < 0:
            raise InputError(f"dwell counter {self.l} negative")


def augmented_step(s: AugmentedState, requested_mode: int, w, noise,
                   sys: SubsystemSpec, k_d: int) -> AugmentedState:
    """One transition of the augmented system.

    x' = f_p(x, w, noise) with the CURRENT mode p; the counter enforces the
    dwell-time scenarios: below saturation only p'=p is admissible and the
    counter increments; at saturation a hold keeps l = k_d - 1 and a switch
    resets l to 0.
    """
    if k_d < 1:
        raise InputError(f"k_d must be >= 1, got {k_d}")
    if s.p not in sys.dynamics:
        raise InputError(f"current mode {s.p} not in mode set of {sys.id!r}")
    if requested_mode not in sys.dynamics:
        raise InputError(f"requested mode {requested_mode} not in mode set of {sys.id!r}")
    if s.l > k_d - 1:
        raise InputError(f"dwell counter {s.l} exceeds k_d - 1 = {k_d - 1}")
    if s.l < k_d - 1:
        if requested_mode != s.p:
            raise DwellViolationError(
                f"switch {s.p} -> {requested_mode} requested at counter {s.l} < {k_d - 1}")
        l_new = s.l + 1
    else:
        l_new = k_d - 1 if requested_mode == s.p else 0
    x_new = sys.step(s.x, s.p, w, noise)
    return AugmentedState(tuple(float(v) for v in x_new), requested_mode, l_new)


def check_dwell_time(signal: Sequence[int], k_d: int) -> bool:
    """True iff the first switch instant is >= k_d and consecutive switch
    instants differ by >= k_d (vacuously true for constant signals)."""
    if k_d < 1:
        raise InputError(f"k_d must be >= 1, got {k_d}")
    last_switch: int | None = None
    for k in range(1, len(signal)):
        if signal[k] != signal[k - 1]:
            if last_switch is None:
                if k < k_d:
                    return False
            elif k - last_switch < k_d:
                return False
            last_switch = k
    return True


def network_wired_inputs(net: NetworkSpec, states: Sequence[Sequence[float]]
                         ) -> list[tuple[float, ...]]:
    """Internal-input vector per subsystem, from pre-step neighbor states."""
    by_id = {sid: tuple(states[i]) for i, sid in enumerate(net.ids)}
    out = []
    for sub in net.subsystems:
        w: list[float] = []
        for e, _offset, d in net.input_slices(sub.id):
            src = net.subsystem(e.src)
            vec = src.outputs[e.resolved_port()]
            xs = by_id[e.src]
            w.extend(vec[c](xs) for c in range(d))
        out.append(tuple(w))
    return out


def network_augmented_step(net: NetworkSpec, states: Sequence[AugmentedState],
                           requested: Sequence[int], noises: Sequence[Sequence[float]],
                           k_ds: Sequence[int]) -> list[AugmentedState]:
    """Synchronous interconnected step: all wired inputs evaluated at the
    pre-step states, then per-subsystem augmented steps."""
    if not (len(states) == len(requested) == len(noises) == len(k_ds) == len(net.subsystems)):
        raise InputError("per-subsystem argument lists must match the network size")
    ws = network_wired_inputs(net, [s.x for s in states])
    return [augmented_step(s, req, w, nz, sub, kd)
            for s, req, w, nz, sub, kd in
            zip(states, requested, ws, noises, net.subsystems, k_ds)]


def _output_at(sys: SubsystemSpec, x) -> tuple[float, ...]:
    return tuple(comp(x) for comp in sys.external_output())


def equivalence_check(sys: SubsystemSpec, k_d: int, signal: Sequence[int],
                      w_seq, noise_seq, horizon: int,
                      x0: Sequence[float] | None = None) -> bool:
    """Proposition-style dual simulation: the switched system driven by a
    dwell-feasible signal and the augmented system driven by the matching
    requested-mode sequence produce bit-identical output trajectories.

    `signal[k]` is the active mode at step k, so the augmented run requests
    `signal[k+1]` at step k; the signal must have at least horizon+1 entries.
    """
    if len(signal) < horizon + 1:
        raise InputError(f"signal needs >= {horizon + 1} entries for horizon {horizon}")
    if not check_dwell_time(signal, k_d):
        raise InputError("switching signal violates the dwell-time condition")
    w_seq = np.asarray(w_seq, dtype=float).reshape(horizon, sys.input_dim)
    noise_seq = np.asarray(noise_seq, dtype=float).reshape(horizon, sys.noise_dim)
    if x0 is None:
        if sys.X0.is_empty():
            x0 = (0.0,) * sys.state_dim
        else:
            box = sys.X0.boxes[0]
            x0 = tuple((lo + hi) / 2 for lo, hi in box)

    # direct switched recursion
    direct: list[tuple[float, ...]] = []
    x = tuple(float(v) for v in x0)
    for k in range(horizon):
        direct.append(_output_at(sys, x))
        x = tuple(float(v) for v in sys.step(x, signal[k], w_seq[k], noise_seq[k]))
    direct.append(_output_at(sys, x))

    # augmented recursion with requested modes signal[k+1]
    aug: list[tuple[float, ...]] = []
    s = AugmentedState(tuple(float(v) for v in x0), signal[0], 0)
    for k in range(horizon):
        aug.append(_output_at(sys, s.x))
        s = augmented_step(s, signal[k + 1], w_seq[k], noise_seq[k], sys, k_d)
    aug.append(_output_at(sys, s.x))

    return direct == aug


def dump_trajectory(path, rows: Sequence[tuple], header: dict) -> None:
    """CSV trajectory dump with a JSON sidecar recording seed/config.

    Rows are (k, subsystem-id, x-components..., p, l); ragged state widths are
    padded with empty cells.
    """
    rows = list(rows)
    max_n = max((len(r) - 4 for r in rows), default=0)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "subsystem"] + [f"x{i}" for i in range(max_n)] + ["p", "l"])
        for r in rows:
            k, sid, *rest = r
            xs, p, l = rest[:-2], rest[-2], rest[-1]
            writer.writerow([k, sid] + list(xs) + [""] * (max_n - len(xs)) + [p, l])
    with open(f"{path}.json", "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
