import numpy as np
import pytest

from bcert import fixtures
from bcert.certify import (CertConstants, GridConfig, PowerLawFn, all_verified,
                           boxset_grid, cbc_condition_margin, check_apbc,
                           check_cbc, expected_next_barrier,
                           pattern_search_min, summary_status)
from bcert.errors import InputError
from bcert.model import BoxSet
from bcert.polyalg import poly_eval

ROOM_CFG = GridConfig(resolution=0.05)
TM_CFG = GridConfig(resolution=0.1)


def _room_barrier_value(t):
    return (-0.00012 * t**4 + 0.01045 * t**3 - 0.19932 * t**2
            - 0.64538 * t + 28.68175)


class TestConstants:
    def test_power_law(self):
        f = PowerLawFn(2.0, 3.0)
        assert f(2.0) == pytest.approx(16.0)
        assert f(0.0) == 0.0

    def test_constants_validation(self):
        with pytest.raises(InputError):
            CertConstants(kappa=1.5, gamma=0.1, lam=1.0, psi=0.0)
        with pytest.raises(InputError):
            CertConstants(kappa=0.5, gamma=-0.1, lam=1.0, psi=0.0)


class TestGrid:
    def test_corner_anchored_with_endpoint(self):
        gs = boxset_grid(BoxSet.from_intervals([(0.0, 1.0)]),
                         GridConfig(resolution=0.3))
        np.testing.assert_allclose(sorted(gs.points[:, 0]),
                                   [0.0, 0.3, 0.6, 0.9, 1.0])

    def test_resolution_from_points_per_dim(self):
        gs = boxset_grid(BoxSet.from_intervals([(0.0, 2.0)]),
                         GridConfig(resolution=None, points_per_dim=5))
        assert len(gs.points) >= 5
        assert gs.resolution <= 0.5 + 1e-12

    def test_union_pieces_all_sampled(self):
        bs = BoxSet.union([BoxSet.from_intervals([(0.0, 1.0)]),
                           BoxSet.from_intervals([(5.0, 6.0)])])
        gs = boxset_grid(bs, GridConfig(resolution=0.5))
        xs = gs.points[:, 0]
        assert (xs <= 1.0).any() and (xs >= 5.0).any()

    def test_cap_limits_grid_size(self):
        gs = boxset_grid(BoxSet.from_intervals([(0.0, 1.0)] * 4),
                         GridConfig(resolution=1e-3, cap=1000))
        assert len(gs.points) <= 1000


class TestPatternSearch:
    def test_finds_quadratic_minimum(self):
        def f(x):
            return float((x[0] - 0.37) ** 2 + (x[1] + 0.21) ** 2)
        x, v = pattern_search_min(f, np.array([0.9, 0.9]),
                                  np.array([-1.0, -1.0]), np.array([1.0, 1.0]),
                                  0.5, 200)
        np.testing.assert_allclose(x, [0.37, -0.21], atol=1e-3)
        assert v < 1e-5

    def test_respects_box(self):
        def f(x):
            return float(x[0])
        x, v = pattern_search_min(f, np.array([0.5]), np.array([-2.0]),
                                  np.array([3.0]), 1.0, 100)
        assert x[0] >= -2.0 - 1e-12
        assert v == pytest.approx(-2.0, abs=1e-6)


class TestPointMargins:
    def test_room_margins_by_hand(self, room_sub):
        cert = fixtures.room_cbc(4)
        b = _room_barrier_value(25.0)
        assert cbc_condition_margin(room_sub, cert, "C1", (25.0,)) == \
            pytest.approx(b - 4.5e-5 * 25.0**2)
        assert cbc_condition_margin(room_sub, cert, "C2", (25.0,)) == \
            pytest.approx(0.16 - b)
        assert cbc_condition_margin(room_sub, cert, "C3", (25.0,)) == \
            pytest.approx(b - 1.2)

    def test_c4_margin_against_quadrature(self, room_sub):
        # independent expectation oracle: Gauss-Hermite over the unit normal,
        # with the mode-1 update written out by hand (valve shut)
        cert = fixtures.room_cbc(1)
        x, w = 25.0, (20.0, 20.0)
        nodes, weights = np.polynomial.hermite_e.hermegauss(24)
        mean = 0.968 * x + 0.005 * (w[0] + w[1]) - 0.022
        expect = float(np.sum(weights * _room_barrier_value(
            mean + 0.25 * nodes)) / np.sqrt(2 * np.pi))
        rhs = max(0.99 * _room_barrier_value(x), 9.3e-6 * 20.0**2, 7.07e-4)
        got = cbc_condition_margin(room_sub, cert, "C4", (25.0,), w)
        assert got == pytest.approx(rhs - expect, rel=1e-9)

    def test_unknown_condition(self, room_sub):
        with pytest.raises(InputError):
            cbc_condition_margin(room_sub, fixtures.room_cbc(1), "C9", (25.0,))


class TestExpectedNextBarrier:
    def test_linear_dynamics_quadratic_barrier(self, plant):
        # x' = 0.5 x + 0.1 e, B = x^2: E[B(x')] = 0.25 x^2 + 0.01
        from bcert.polyalg import Polynomial, VariableSpace
        sp = VariableSpace.make(states=["x"])
        barrier = Polynomial(sp, {(2,): 1.0})
        e = expected_next_barrier(plant, 1, barrier)
        assert poly_eval(e, (2.0,)) == pytest.approx(0.25 * 4.0 + 0.01)
        assert poly_eval(e, (0.0,)) == pytest.approx(0.01)


@pytest.fixture(scope="module")
def room_reports():
    net = fixtures.room_network(3)
    sub = net.subsystem("room1")
    return check_cbc(sub, fixtures.room_cbc(4), ROOM_CFG)


class TestRoomCheck:
    """Grid verification of the packaged degree-4 room certificate."""

    @pytest.fixture
    def reports(self, room_reports):
        return room_reports

    def test_nonnegativity_and_unsafe_level_hold(self, reports):
        by = {r.condition: r for r in reports}
        assert by["C1"].status.kind == "verified"
        assert by["C1"].worst_margin == pytest.approx(0.41666493, abs=1e-6)
        assert by["C3"].status.kind == "verified"
        assert by["C3"].worst_margin == pytest.approx(0.22514, abs=1e-6)

    def test_initial_level_fails_inside_the_initial_box(self, reports):
        by = {r.condition: r for r in reports}
        assert by["C2"].status.kind == "refuted"
        assert by["C2"].worst_margin == pytest.approx(-0.50838, abs=1e-5)
        assert 19.0 <= by["C2"].counterexample["x"][0] <= 21.0

    def test_contraction_fails_near_the_hot_boundary(self, reports):
        by = {r.condition: r for r in reports}
        assert by["C4"].status.kind == "refuted"
        assert by["C4"].worst_margin < -2.9
        assert by["C4"].counterexample["x"][0] > 49.0

    def test_counterexamples_reproduce(self, reports, room_sub):
        cert = fixtures.room_cbc(4)
        for r in reports:
            if r.counterexample is None:
                continue
            ce = r.counterexample
            again = cbc_condition_margin(room_sub, cert, r.condition,
                                         ce["x"], ce.get("w"))
            assert again == pytest.approx(ce["margin"], rel=1e-9)
            assert again < -1e-9


class TestTwoModeCheck:
    @pytest.mark.parametrize("mode,verdicts", [
        (1, {"C1": "verified", "C2": "verified", "C3": "refuted",
             "C4": "refuted"}),
        (2, {"C1": "verified", "C2": "verified", "C3": "verified",
             "C4": "refuted"}),
    ])
    def test_published_certificates(self, two_mode_sub, mode, verdicts):
        reports = check_cbc(two_mode_sub, fixtures.two_mode_cbc(mode), TM_CFG)
        got = {r.condition: r.status.kind for r in reports}
        assert got == verdicts

    def test_augmented_lift_check(self, two_mode_sub):
        apbc = fixtures.two_mode_apbc()
        reports = check_apbc(two_mode_sub, apbc, TM_CFG)
        by = {r.condition: r for r in reports}
        assert by["C1"].status.kind == "verified"
        assert by["C2"].status.kind == "verified"
        assert by["C3"].status.kind == "verified"
        assert by["C4"].status.kind == "refuted"
        assert by["C4"].worst_margin == pytest.approx(-22.68045, abs=1e-4)


class TestStatus:
    def test_all_verified_and_summary(self, two_mode_sub):
        reports = check_cbc(two_mode_sub, fixtures.two_mode_cbc(2), TM_CFG)
        assert not all_verified(reports)
        status = summary_status(reports, 0.1)
        assert status.kind == "refuted"
        assert status.resolution == 0.1
