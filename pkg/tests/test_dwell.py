import math

import pytest

from bcert import fixtures
from bcert.certify import GridConfig
from bcert.dwell import (common_barrier_apbc, dwell_tradeoff, estimate_mu,
                         lift_derivation, lift_to_apbc, min_dwell_time)
from bcert.errors import InputError

TM = fixtures.TWO_MODE_CBC_CONSTANTS


def _lift_by_hand(epsilon, k_d):
    """Direct evaluation of the per-constant worst-mode formulas."""
    kappa = max(TM[p]["kappa"] ** ((epsilon - 1) / epsilon) for p in TM)
    gamma = max(TM[p]["kappa"] ** (-(k_d - 1) / epsilon) * TM[p]["gamma"]
                for p in TM)
    lam = min(TM[p]["lam"] for p in TM)
    psi = max(TM[p]["kappa"] ** (-k_d / epsilon) * TM[p]["psi"] for p in TM)
    rho = max(TM[p]["kappa"] ** (-k_d / epsilon) * TM[p]["rho_coef"]
              for p in TM)
    return kappa, gamma, lam, psi, rho


class TestLift:
    def test_constants_match_hand_formulas(self):
        apbc = lift_to_apbc(fixtures.two_mode_cbcs(), 2.0, 3, mu=2.0)
        kappa, gamma, lam, psi, rho = _lift_by_hand(2.0, 3)
        c = apbc.constants
        assert c.kappa == pytest.approx(kappa, rel=1e-12)
        assert c.gamma == pytest.approx(gamma, rel=1e-12)
        assert c.lam == lam
        assert c.psi == pytest.approx(psi, rel=1e-12)
        assert c.rho.coef == pytest.approx(rho, rel=1e-12)
        assert c.alpha.coef == pytest.approx(4e-05)
        assert apbc.k_d == 3
        assert apbc.epsilon == 2.0

    def test_derivation_is_consistent(self):
        apbc = lift_to_apbc(fixtures.two_mode_cbcs(), 2.0, 3)
        deriv = {d["constant"]: d["value"]
                 for d in lift_derivation(fixtures.two_mode_cbcs(), 2.0, 3)}
        assert deriv["kappa"] == apbc.constants.kappa
        assert deriv["psi"] == apbc.constants.psi
        assert deriv["rho"] == apbc.constants.rho.coef

    def test_epsilon_trades_contraction_against_dwell(self):
        # larger epsilon sharpens the lifted contraction factor, at the price
        # of a longer minimum dwell time
        certs = fixtures.two_mode_cbcs()
        k2 = lift_to_apbc(certs, 2.0, 3).constants.kappa
        k5 = lift_to_apbc(certs, 5.0, 3).constants.kappa
        assert k5 < k2 < 1.0
        kappas = {p: TM[p]["kappa"] for p in TM}
        assert min_dwell_time(5.0, 2.0, kappas) > min_dwell_time(2.0, 2.0, kappas)

    def test_epsilon_must_exceed_one(self):
        with pytest.raises(InputError):
            lift_to_apbc(fixtures.two_mode_cbcs(), 1.0, 3)


class TestCommonBarrier:
    def test_room_degenerate_lift_keeps_constants(self):
        apbc = common_barrier_apbc(fixtures.room_cbcs(), k_d=1, epsilon=2.0)
        c = apbc.constants
        assert (c.kappa, c.gamma, c.lam, c.psi) == (0.99, 0.16, 1.2, 7.07e-4)
        assert c.rho.coef == pytest.approx(9.3e-6)
        assert apbc.k_d == 1

    def test_requires_identical_barriers(self):
        with pytest.raises(InputError):
            common_barrier_apbc(fixtures.two_mode_cbcs(), k_d=1)


class TestMinDwellTime:
    def test_published_value(self):
        assert min_dwell_time(2.0, 2.0, {1: 0.469, 2: 0.498}) == 3

    def test_mu_one_needs_no_dwell(self):
        assert min_dwell_time(2.0, 1.0, {1: 0.5}) == 1

    def test_mu_below_one_rejected(self):
        with pytest.raises(InputError):
            min_dwell_time(2.0, 0.9, {1: 0.5})

    def test_tradeoff_agrees_with_pointwise_calls(self):
        kappas = {1: 0.469, 2: 0.498}
        for eps, k_d in dwell_tradeoff(2.0, kappas):
            assert k_d == min_dwell_time(eps, 2.0, kappas)

    def test_tradeoff_grows_with_epsilon(self):
        rows = dwell_tradeoff(2.0, {1: 0.469, 2: 0.498})
        k_ds = [k for _, k in rows]
        assert k_ds == sorted(k_ds)
        assert rows[0] == (1.1, 3)
        assert rows[-1] == (10.0, 11)


@pytest.fixture(scope="module")
def est():
    sub = fixtures.two_mode_network(2).subsystem("sub1")
    return estimate_mu(fixtures.two_mode_cbcs(), sub.X,
                       GridConfig(resolution=0.1))


class TestEstimateMu:

    def test_respects_published_bound(self, est):
        assert 1.0 <= est.raw <= fixtures.TWO_MODE_MU
        assert est.raw == pytest.approx(1.0567880232121436, rel=1e-9)

    def test_inflation_reported_separately(self, est):
        assert est.inflated == pytest.approx(1.05 * est.raw, rel=1e-12)
        assert est.inflation == 1.05
        assert float(est) == est.inflated

    def test_singular_ratio_points_are_skipped_and_counted(self, est):
        assert est.skipped == 2

    def test_argmax_is_an_ordered_mode_pair(self, est):
        p, q, x = est.argmax
        assert {p, q} <= {1, 2} and p != q
        assert len(x) == 2

    def test_floor_at_one(self):
        # identical barriers in both modes: every ratio is 1
        sub = fixtures.room_network(2).subsystem("room1")
        certs = {1: fixtures.room_cbc(1), 2: fixtures.room_cbc(2)}
        est = estimate_mu(certs, sub.X, GridConfig(resolution=1.0))
        assert est.raw == 1.0
