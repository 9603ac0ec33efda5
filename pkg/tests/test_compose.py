import math

import pytest

from bcert import fixtures
from bcert.compose import (GainDigraph, GainEdge, ScalingSet,
                           build_gain_digraph, compose_abc, edge_margins,
                           find_sigma, small_gain_check)
from bcert.errors import CompositionInfeasibleError, InputError


def _graph(self_gains, coefs):
    """Small helper: coefs is {(src, dst): c}."""
    n = len(self_gains)
    return GainDigraph(tuple(f"s{i}" for i in range(n)), tuple(self_gains),
                       tuple(GainEdge(u, v, c) for (u, v), c in coefs.items()))


class TestGainDigraph:
    def test_two_mode_cross_gains(self, two_mode_net):
        apbcs = [fixtures.two_mode_apbc()] * 2
        g = build_gain_digraph(two_mode_net, apbcs)
        # rho_i / alpha_j with the lifted coefficients
        expected = 9.788461306988289e-06 / 4e-05
        assert [(e.src, e.dst) for e in g.edges] == [(0, 1), (1, 0)]
        for e in g.edges:
            assert e.coef == pytest.approx(expected, rel=1e-12)
        assert g.self_gains == (0.705691150575094,) * 2

    def test_room_ring_gains(self, room_net):
        apbcs = [fixtures.room_apbc()] * 3
        g = build_gain_digraph(room_net, apbcs)
        assert len(g.edges) == 6
        for e in g.edges:
            assert e.coef == pytest.approx(9.3e-6 / 4.5e-5, rel=1e-12)

    def test_validation(self):
        with pytest.raises(InputError):
            GainDigraph(("a",), (0.5, 0.5), ())
        with pytest.raises(InputError):
            _graph([0.5], {(0, 3): 0.1})


class TestSmallGain:
    def test_fixtures_satisfy(self, room_net, two_mode_net):
        for net, apbc in ((room_net, fixtures.room_apbc()),
                          (two_mode_net, fixtures.two_mode_apbc())):
            g = build_gain_digraph(net, [apbc] * len(net.ids))
            sg = small_gain_check(g)
            assert sg.satisfied
            assert sg.max_cycle_gain < 1.0

    def test_critical_cycle_gain_is_geometric_mean(self):
        g = _graph([0.1, 0.1], {(0, 1): 2.0, (1, 0): 0.32})
        sg = small_gain_check(g)
        assert sg.satisfied
        assert sg.max_cycle_gain == pytest.approx(math.sqrt(2.0 * 0.32))

    def test_hot_cycle_detected(self):
        g = _graph([0.1, 0.1, 0.1], {(0, 1): 2.0, (1, 0): 0.6,
                                     (1, 2): 0.5, (2, 1): 0.5})
        sg = small_gain_check(g)
        assert not sg.satisfied
        assert sg.max_cycle_gain >= 1.0
        assert set(sg.violating_cycle) == {"s0", "s1"}

    def test_acyclic_graph_passes(self):
        g = _graph([0.2, 0.2], {(0, 1): 100.0})
        sg = small_gain_check(g)
        assert sg.satisfied


class TestFindSigma:
    def test_identity_when_gains_small(self):
        g = _graph([0.5, 0.5], {(0, 1): 0.3, (1, 0): 0.3})
        assert find_sigma(g).values == (1.0, 1.0)

    def test_rebalances_large_edges(self):
        g = _graph([0.1, 0.1], {(0, 1): 2.0, (1, 0): 0.32})
        s = find_sigma(g)
        margins = edge_margins(g, s)
        assert all(m < 1.0 for m in margins.values())

    def test_infeasible_graph_rejected(self):
        g = _graph([0.1, 0.1], {(0, 1): 2.0, (1, 0): 0.5})
        with pytest.raises(InputError):
            find_sigma(g)

    def test_edge_margins_formula(self):
        g = _graph([0.1, 0.1], {(0, 1): 0.4, (1, 0): 0.9})
        s = ScalingSet((2.0, 1.0))
        m = edge_margins(g, s)
        assert m[("s0", "s1")] == pytest.approx(0.4 * 2.0 / 1.0)
        assert m[("s1", "s0")] == pytest.approx(0.9 * 1.0 / 2.0)


class TestComposeAbc:
    def test_two_mode_network_certificate(self, two_mode_net):
        abc = compose_abc(two_mode_net, [fixtures.two_mode_apbc()] * 2)
        c = abc.constants
        assert c.kappa == pytest.approx(0.705691150575094, rel=1e-12)
        assert c.gamma == pytest.approx(0.321285140562249, rel=1e-12)
        assert c.lam == pytest.approx(2.3)
        assert c.psi == pytest.approx(1.9576922613976578e-05, rel=1e-12)
        assert abc.semantics == "union"
        assert abc.scalings == (1.0, 1.0)
        assert c.rho.coef == 0.0  # internal inputs are gone after composition

    def test_room_ring_keeps_published_constants(self, room_net):
        abc = compose_abc(room_net, [fixtures.room_apbc()] * 3)
        c = abc.constants
        assert (c.kappa, c.gamma, c.lam, c.psi) == (0.99, 0.16, 1.2, 7.07e-4)

    def test_identity_scalings_accepted_explicitly(self, two_mode_net):
        abc = compose_abc(two_mode_net, [fixtures.two_mode_apbc()] * 2,
                          scalings=[1.0, 1.0])
        assert abc.scalings == (1.0, 1.0)

    def test_union_takes_weakest_threshold(self, two_mode_net):
        abc = compose_abc(two_mode_net, [fixtures.two_mode_apbc()] * 2,
                          scalings=[1.0, 4.0], semantics="union")
        assert abc.constants.lam == pytest.approx(2.3 / 4.0)
        # auto switches to product when the scaled thresholds split
        auto = compose_abc(two_mode_net, [fixtures.two_mode_apbc()] * 2,
                           scalings=[1.0, 4.0])
        assert auto.semantics == "product"

    def test_level_gap_enforced(self, two_mode_net):
        import dataclasses
        apbc = fixtures.two_mode_apbc()
        tight = dataclasses.replace(
            apbc, constants=dataclasses.replace(apbc.constants, lam=0.33))
        with pytest.raises(CompositionInfeasibleError):
            compose_abc(two_mode_net, [tight, tight], scalings=[1.0, 1.05],
                        semantics="union")

    def test_product_semantics_takes_max_threshold(self, two_mode_net):
        abc = compose_abc(two_mode_net, [fixtures.two_mode_apbc()] * 2,
                          scalings=[1.0, 2.0], semantics="product")
        assert abc.constants.lam == pytest.approx(2.3)
        assert abc.constants.gamma == pytest.approx(0.321285140562249)

    def test_bad_scaling_count(self, two_mode_net):
        with pytest.raises(InputError):
            compose_abc(two_mode_net, [fixtures.two_mode_apbc()] * 2,
                        scalings=[1.0])

    def test_scalings_breaking_contraction_rejected(self, two_mode_net):
        with pytest.raises(CompositionInfeasibleError):
            compose_abc(two_mode_net, [fixtures.two_mode_apbc()] * 2,
                        scalings=[1e-3, 1.0])

    def test_unverified_components_leave_status_unchecked(self, two_mode_net):
        abc = compose_abc(two_mode_net, [fixtures.two_mode_apbc()] * 2)
        assert not abc.status.verified
