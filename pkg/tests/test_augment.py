import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcert import fixtures
from bcert.augment import (AugmentedState, augmented_step, check_dwell_time,
                           dump_trajectory, equivalence_check,
                           network_augmented_step, network_wired_inputs)
from bcert.errors import DwellViolationError, InputError


def _hold(sub, s, w=(20.0, 20.0), e=(0.0,), k_d=3):
    return augmented_step(s, s.p, w, e, sub, k_d)


class TestAugmentedStep:
    def test_counter_saturates(self, room_sub):
        s = AugmentedState((20.0,), 1, 0)
        s = _hold(room_sub, s)
        assert s.l == 1
        s = _hold(room_sub, s)
        assert s.l == 2
        s = _hold(room_sub, s)
        assert (s.p, s.l) == (1, 2)

    def test_early_switch_refused(self, room_sub):
        s = AugmentedState((20.0,), 1, 1)
        with pytest.raises(DwellViolationError):
            augmented_step(s, 2, (20.0, 20.0), (0.0,), room_sub, k_d=3)

    def test_switch_uses_current_mode_dynamics(self, room_sub):
        # the step itself must still run mode 1; mode 7 only becomes active
        # on the next step
        s = AugmentedState((20.0,), 1, 2)
        nxt = augmented_step(s, 7, (20.0, 20.0), (0.0,), room_sub, k_d=3)
        hold = room_sub.step((20.0,), 1, (20.0, 20.0), (0.0,))
        np.testing.assert_allclose(nxt.x, hold)
        assert (nxt.p, nxt.l) == (7, 0)

    def test_counter_validation(self, room_sub):
        with pytest.raises(InputError):
            AugmentedState((20.0,), 1, -1)
        with pytest.raises(InputError):
            augmented_step(AugmentedState((20.0,), 1, 5), 1,
                           (20.0, 20.0), (0.0,), room_sub, k_d=3)
        with pytest.raises(InputError):
            augmented_step(AugmentedState((20.0,), 9, 0), 9,
                           (20.0, 20.0), (0.0,), room_sub, k_d=3)

    def test_k_d_one_allows_every_step_to_switch(self, room_sub):
        s = AugmentedState((20.0,), 1, 0)
        for mode in (3, 5, 2, 7):
            s = augmented_step(s, mode, (20.0, 20.0), (0.0,), room_sub, k_d=1)
            assert s.l == 0
        assert s.p == 7


class TestDwellTime:
    @pytest.mark.parametrize("signal,k_d,ok", [
        ([1, 1, 1, 1], 3, True),
        ([1, 1, 1, 2, 2, 2], 3, True),
        ([1, 1, 2], 3, False),
        ([1, 1, 1, 2, 2, 1], 3, False),
        ([1, 2, 1, 2], 1, True),
        ([1], 5, True),
        ([], 2, True),
    ])
    def test_cases(self, signal, k_d, ok):
        assert check_dwell_time(signal, k_d) is ok

    def test_bad_k_d(self):
        with pytest.raises(InputError):
            check_dwell_time([1, 1], 0)


class TestNetworkStep:
    def test_wired_inputs_are_neighbour_temperatures(self, room_net):
        ws = network_wired_inputs(room_net, [(18.0,), (20.0,), (22.0,)])
        # ring: room1 sees room3 (left) and room2 (right) in edge order
        assert set(ws[0]) == {20.0, 22.0}
        assert set(ws[1]) == {18.0, 22.0}
        assert set(ws[2]) == {18.0, 20.0}

    def test_synchronous_update(self, room_net):
        states = [AugmentedState((18.0,), 1, 0), AugmentedState((20.0,), 1, 0),
                  AugmentedState((22.0,), 1, 0)]
        out = network_augmented_step(room_net, states, [1, 1, 1],
                                     [(0.0,)] * 3, [1, 1, 1])
        ws = network_wired_inputs(room_net, [s.x for s in states])
        for got, s, w, sub in zip(out, states, ws, room_net.subsystems):
            np.testing.assert_allclose(
                got.x, sub.step(s.x, 1, w, (0.0,)))

    def test_length_mismatch(self, room_net):
        with pytest.raises(InputError):
            network_augmented_step(room_net, [AugmentedState((20.0,), 1, 0)],
                                   [1], [(0.0,)], [1])


def _dwell_feasible_signals(k_d: int, length: int, modes):
    """Strategy over mode signals satisfying the dwell-time condition."""
    def build(choices):
        signal = []
        idx = 0
        while len(signal) < length:
            mode = modes[choices[idx % len(choices)] % len(modes)]
            if signal and mode == signal[-1]:
                mode = modes[(choices[idx % len(choices)] + 1) % len(modes)]
            run = k_d + choices[(idx + 1) % len(choices)] % 3
            signal.extend([mode] * run)
            idx += 2
        return signal[:length]
    return st.lists(st.integers(0, 10), min_size=4, max_size=12).map(build)


class TestEquivalence:
    @given(_dwell_feasible_signals(3, 13, (1, 4, 7)), st.integers(0, 10 ** 6))
    @settings(max_examples=100, deadline=None)
    def test_dual_simulation_bitwise(self, signal, seed):
        room_sub = fixtures.room_network(3).subsystem("room1")
        rng = np.random.default_rng(seed)
        horizon = 12
        w_seq = rng.uniform(1, 50, size=(horizon, 2))
        noise_seq = rng.standard_normal((horizon, 1))
        assert equivalence_check(room_sub, 3, signal, w_seq, noise_seq,
                                 horizon, x0=(rng.uniform(15, 25),))

    def test_infeasible_signal_rejected(self, room_sub):
        with pytest.raises(InputError):
            equivalence_check(room_sub, 3, [1, 2, 2, 2, 2], np.zeros((4, 2)),
                              np.zeros((4, 1)), 4)

    def test_short_signal_rejected(self, room_sub):
        with pytest.raises(InputError):
            equivalence_check(room_sub, 1, [1, 1], np.zeros((4, 2)),
                              np.zeros((4, 1)), 4)


class TestDump:
    def test_csv_and_sidecar(self, tmp_path):
        path = tmp_path / "traj.csv"
        rows = [(0, "room1", 20.0, 1, 0), (1, "room1", 19.5, 1, 1),
                (0, "sub1", 1.0, -2.0, 1, 0)]
        dump_trajectory(path, rows, {"seed": 7})
        with open(path) as fh:
            table = list(csv.reader(fh))
        assert table[0][:2] == ["k", "subsystem"]
        assert len(table) == 4
        assert (tmp_path / "traj.csv.json").exists()
