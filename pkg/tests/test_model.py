import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcert import fixtures
from bcert.errors import InputError
from bcert.model import (BoxSet, Edge, NetworkSpec, flatten,
                         network_from_json, network_to_json,
                         poly_range_on_box, poly_range_on_boxset,
                         subsystem_from_json, subsystem_to_json,
                         validate_network, wiring_substitution)
from bcert.polyalg import VariableSpace, parse_polynomial

XY = VariableSpace.make(states=["x", "y"])


class TestBoxSet:
    def test_contains_and_volume(self):
        bs = BoxSet.from_intervals([(0.0, 2.0), (-1.0, 1.0)])
        assert bs.contains((1.0, 0.0))
        assert not bs.contains((3.0, 0.0))
        assert bs.volume() == pytest.approx(4.0)

    def test_union_of_disjoint_pieces(self):
        left = BoxSet.from_intervals([(-1.0, -0.5)])
        right = BoxSet.from_intervals([(0.5, 1.0)])
        u = BoxSet.union([left, right])
        assert u.contains((-0.7,)) and u.contains((0.7,))
        assert not u.contains((0.0,))
        assert u.volume() == pytest.approx(1.0)

    def test_covers(self):
        outer = BoxSet.from_intervals([(0.0, 10.0)])
        inner = BoxSet.from_intervals([(2.0, 3.0)])
        assert outer.covers(inner)
        assert not inner.covers(outer)
        assert outer.covers_box(((1.0, 9.0),))

    def test_empty(self):
        assert BoxSet.point(2).dim == 2
        assert not BoxSet.from_intervals([(0.0, 1.0)]).is_empty()

    def test_sample_uniform_stays_inside(self, rng):
        bs = BoxSet.union([BoxSet.from_intervals([(-2.0, -1.0)]),
                           BoxSet.from_intervals([(4.0, 5.0)])])
        pts = bs.sample_uniform(rng, 500)
        assert pts.shape == (500, 1)
        assert all(bs.contains(p) for p in pts)
        # both pieces get visited
        assert (pts < 0).any() and (pts > 0).any()

    def test_json_round_trip(self):
        bs = BoxSet.union([BoxSet.from_intervals([(0.0, 1.0), (2.0, 3.0)]),
                           BoxSet.from_intervals([(5.0, 6.0), (7.0, 8.0)])])
        again = BoxSet.from_json(bs.to_json())
        assert again.to_json() == bs.to_json()


class TestPolyRange:
    @pytest.mark.parametrize("text,box,lo,hi", [
        ("x", [(-1.0, 2.0), (0.0, 0.0)], -1.0, 2.0),
        ("2*x - 3*y", [(0.0, 1.0), (0.0, 1.0)], -3.0, 2.0),
        ("x*y", [(-1.0, 1.0), (-1.0, 1.0)], -1.0, 1.0),
        ("x^2", [(-2.0, 1.0), (0.0, 0.0)], 0.0, 4.0),
    ])
    def test_interval_bounds_enclose(self, text, box, lo, hi):
        p = parse_polynomial(text, XY)
        got_lo, got_hi = poly_range_on_box(p, box)
        assert got_lo <= lo + 1e-12
        assert got_hi >= hi - 1e-12

    def test_boxset_version_unions(self):
        p = parse_polynomial("x", VariableSpace.make(states=["x"]))
        bs = BoxSet.union([BoxSet.from_intervals([(0.0, 1.0)]),
                           BoxSet.from_intervals([(5.0, 6.0)])])
        lo, hi = poly_range_on_boxset(p, bs)
        assert lo <= 0.0 and hi >= 6.0


class TestSubsystemStep:
    def test_room_step_matches_hand_expansion(self, room_sub):
        # valve shut in mode 1: T' = 0.968 T + 0.005 (wl + wr) - 0.022 + 0.25 e
        x, w, e = (20.0,), (18.0, 22.0), (0.5,)
        got = room_sub.step(x, 1, w, e)
        expected = 0.968 * 20.0 + 0.005 * 40.0 - 0.022 + 0.25 * 0.5
        np.testing.assert_allclose(got, [expected], rtol=1e-14)

    def test_step_many_matches_loop(self, room_sub, rng):
        xs = rng.uniform(1, 50, size=(30, 1))
        ws = rng.uniform(1, 50, size=(30, 2))
        es = rng.standard_normal((30, 1))
        batch = room_sub.step_many(xs, 4, ws, es)
        rows = [room_sub.step(xs[i], 4, ws[i], es[i]) for i in range(30)]
        np.testing.assert_allclose(batch, np.array(rows).reshape(30, 1))

    def test_unknown_mode_raises(self, room_sub):
        with pytest.raises(InputError):
            room_sub.step((20.0,), 99, (20.0, 20.0), (0.0,))

    def test_dimensions(self, two_mode_sub):
        assert two_mode_sub.state_dim == 2
        assert two_mode_sub.input_dim == 2
        assert two_mode_sub.noise_dim == 2
        assert two_mode_sub.modes == (1, 2)


class TestValidateNetwork:
    def test_fixtures_are_clean(self, room_net, two_mode_net):
        assert validate_network(room_net) == []
        assert validate_network(two_mode_net) == []

    def test_dangling_edge_is_flagged(self, room_net):
        bad = NetworkSpec(room_net.subsystems,
                          room_net.edges[:-1] + (Edge("room9", "room1", "y"),))
        issues = validate_network(bad)
        assert any(v.severity == "error" for v in issues)

    def test_underwired_input_is_flagged(self, room_net):
        bad = NetworkSpec(room_net.subsystems, room_net.edges[:-1])
        issues = validate_network(bad)
        assert any("input" in v.condition or "input" in v.message.lower()
                   for v in issues)


class TestFlatten:
    def test_joint_mode_count(self, room_net):
        fl = flatten(room_net)
        assert len(list(fl.joint_modes())) == 7 ** 3

    def test_matches_networked_stepping(self, room_net, rng):
        fl = flatten(room_net)
        subs = room_net.subsystems
        for _ in range(25):
            x = rng.uniform(1, 50, size=3)
            noise = rng.standard_normal(3)
            jm = tuple(rng.integers(1, 8, size=3))
            got = fl.step(x, jm, noise)
            # wire each room to its ring neighbours by hand
            manual = []
            for i, sub in enumerate(subs):
                wl = x[(i - 1) % 3]
                wr = x[(i + 1) % 3]
                manual.append(sub.step((x[i],), jm[i], (wl, wr),
                                       (noise[i],))[0])
            np.testing.assert_allclose(got, manual, atol=1e-12, rtol=0)

    def test_wiring_substitution_names(self, room_net):
        # flattened naming convention: each subsystem variable is prefixed
        target = VariableSpace.make(
            states=[f"room{i}.T" for i in (1, 2, 3)],
            noises=[f"room{i}.e" for i in (1, 2, 3)])
        sub = wiring_substitution(room_net, "room1", target,
                                  {"T": "room1.T", "e": "room1.e"})
        assert {"T", "e", "wl", "wr"} <= set(sub)
        # ring neighbours of room1 are room2 and room3
        wired = sub["wl"].used_variables() | sub["wr"].used_variables()
        assert wired == {"room2.T", "room3.T"}


class TestJson:
    def test_subsystem_round_trip(self, two_mode_sub):
        again = subsystem_from_json(subsystem_to_json(two_mode_sub))
        assert again.id == two_mode_sub.id
        assert again.state_names == two_mode_sub.state_names
        assert again.modes == two_mode_sub.modes
        x, w, e = (1.0, -2.0), (0.5, 0.25), (0.1, -0.1)
        np.testing.assert_allclose(again.step(x, 2, w, e),
                                   two_mode_sub.step(x, 2, w, e))

    def test_network_round_trip(self, room_net):
        again = network_from_json(network_to_json(room_net))
        assert again.ids == room_net.ids
        assert len(again.edges) == len(room_net.edges)
        assert validate_network(again) == []

    def test_bad_payload_rejected(self):
        with pytest.raises(InputError):
            network_from_json({"subsystems": "nope"})


@given(st.integers(2, 5), st.integers(0, 10 ** 6))
@settings(max_examples=20, deadline=None)
def test_ring_flatten_equivalence_any_size(n, seed):
    net = fixtures.room_network(n)
    fl = flatten(net)
    rng = np.random.default_rng(seed)
    x = rng.uniform(1, 50, size=n)
    noise = rng.standard_normal(n)
    jm = tuple(rng.integers(1, 8, size=n))
    got = fl.step(x, jm, noise)
    manual = [net.subsystems[i].step((x[i],), jm[i],
                                     (x[(i - 1) % n], x[(i + 1) % n]),
                                     (noise[i],))[0]
              for i in range(n)]
    np.testing.assert_allclose(got, manual, atol=1e-12, rtol=0)
