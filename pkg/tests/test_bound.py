import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcert.bound import SafetyBound, safety_bound
from bcert.errors import InputError


class TestBranchOne:
    def test_formula_by_hand(self):
        b = safety_bound(0.16, 1.2, 0.99, 7.07e-4, 10)
        expected = 1.0 - (1.0 - 0.16 / 1.2) * (1.0 - 7.07e-4 / 1.2) ** 10
        assert b.branch == 1
        assert b.delta == pytest.approx(expected, rel=1e-14)
        assert b.safety == pytest.approx(1.0 - expected, rel=1e-14)

    def test_zero_horizon_reduces_to_initial_ratio(self):
        b = safety_bound(0.3, 1.5, 0.9, 0.01, 0)
        assert b.delta == pytest.approx(0.2)

    def test_zero_psi_is_pure_supermartingale(self):
        b = safety_bound(0.25, 1.0, 0.5, 0.0, 1000)
        assert b.delta == pytest.approx(0.25)

    def test_tie_takes_branch_one(self):
        # lambda exactly equal to psi/kappa
        b = safety_bound(0.1, 2.0, 0.5, 1.0, 5)
        assert b.branch == 1


class TestBranchTwo:
    def test_selected_when_threshold_below_offset_ratio(self):
        b = safety_bound(0.1, 1.0, 0.5, 0.8, 1)
        assert b.branch == 2
        decay = 0.5 ** 1
        expected = 0.1 / 1.0 * decay + 0.8 / (0.5 * 1.0) * (1.0 - decay)
        assert b.delta == pytest.approx(expected, rel=1e-14)

    def test_vacuous_constants_raise(self):
        # branch 2 accumulates psi mass toward psi/(kappa*lambda) > 1, so a
        # long enough horizon always pushes the bound past one
        with pytest.raises(InputError):
            safety_bound(0.1, 1.0, 0.5, 0.8, 10)


class TestValidation:
    @pytest.mark.parametrize("args", [
        (0.1, 1.0, 0.0, 0.0, 5),
        (0.1, 1.0, 1.0, 0.0, 5),
        (0.1, -1.0, 0.5, 0.0, 5),
        (-0.1, 1.0, 0.5, 0.0, 5),
        (0.1, 1.0, 0.5, -0.1, 5),
        (1.2, 1.0, 0.5, 0.0, 5),
        (1.0, 1.0, 0.5, 0.0, 5),
    ])
    def test_rejected(self, args):
        with pytest.raises(InputError):
            safety_bound(*args)

    def test_horizon_must_be_integer(self):
        with pytest.raises(InputError):
            safety_bound(0.1, 1.0, 0.5, 0.0, 2.5)
        with pytest.raises(InputError):
            safety_bound(0.1, 1.0, 0.5, 0.0, -1)

    def test_delta_stays_in_unit_interval(self):
        b = safety_bound(0.999, 1.0, 0.01, 0.009, 10_000)
        assert 0.0 <= b.delta <= 1.0


class TestReport:
    def test_json_fields(self):
        b = safety_bound(0.16, 1.2, 0.99, 7.07e-4, 10)
        payload = b.to_json()
        assert payload["branch"] == 1
        assert payload["lambda"] == 1.2
        assert payload["safety"] == pytest.approx(b.safety)
        assert isinstance(b, SafetyBound)


admissible = st.tuples(
    st.floats(0.01, 0.99),  # kappa
    st.floats(0.0, 5.0),    # gamma
    st.floats(1e-3, 10.0),  # lambda gap above gamma
    st.floats(0.0, 2.0),    # psi
    st.integers(0, 200),
)


class TestMonotonicity:
    @given(admissible)
    @settings(max_examples=200, deadline=None)
    def test_delta_nondecreasing_in_horizon(self, draw):
        kappa, gamma, gap, psi, horizon = draw
        lam = gamma + gap
        try:
            d0 = safety_bound(gamma, lam, kappa, psi, horizon).delta
            d1 = safety_bound(gamma, lam, kappa, psi, horizon + 1).delta
        except InputError:
            return  # vacuous-constant draws are admissible to reject
        assert d1 >= d0 - 1e-12

    @given(admissible, st.floats(1e-6, 1.0))
    @settings(max_examples=200, deadline=None)
    def test_delta_nonincreasing_in_lambda(self, draw, bump):
        kappa, gamma, gap, psi, horizon = draw
        lam = gamma + gap
        try:
            d0 = safety_bound(gamma, lam, kappa, psi, horizon).delta
            d1 = safety_bound(gamma, lam + bump, kappa, psi, horizon).delta
        except InputError:
            return
        assert d1 <= d0 + 1e-12
