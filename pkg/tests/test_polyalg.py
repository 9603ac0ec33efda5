import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcert.errors import CapabilityError, InputError
from bcert.polyalg import (NoiseSpec, Polynomial, VariableSpace,
                           expectation_over_noise, parse_polynomial,
                           poly_compose, poly_eval, polynomial_to_json_str)

XY = VariableSpace.make(states=["x", "y"])
XYE = VariableSpace.make(states=["x", "y"], noises=["e"])


class TestVariableSpace:
    def test_roles_and_indices(self):
        sp = VariableSpace.make(states=["x"], inputs=["w"], noises=["e"])
        assert sp.names == ("x", "w", "e")
        assert sp.state_indices == (0,)
        assert sp.input_indices == (1,)
        assert sp.noise_indices == (2,)
        assert sp.index("w") == 1

    def test_duplicate_names_rejected(self):
        with pytest.raises(InputError):
            VariableSpace.make(states=["x", "x"])

    def test_drop_noise(self):
        sp = VariableSpace.make(states=["x"], inputs=["w"], noises=["e"])
        assert sp.drop_noise().names == ("x", "w")


class TestParse:
    @pytest.mark.parametrize("text,point,value", [
        ("x + y", (1.0, 2.0), 3.0),
        ("2*x^2*y - 0.5", (3.0, 1.0), 17.5),
        ("-x", (4.0, 0.0), -4.0),
        ("x*x*x", (2.0, 0.0), 8.0),
        ("1.5e-2", (0.0, 0.0), 0.015),
        ("y^3 - 2*y", (0.0, 2.0), 4.0),
    ])
    def test_values(self, text, point, value):
        p = parse_polynomial(text, XY)
        assert poly_eval(p, point) == pytest.approx(value)

    def test_unknown_variable_rejected(self):
        with pytest.raises(InputError):
            parse_polynomial("x + z", XY)

    def test_like_terms_collected(self):
        p = parse_polynomial("x + x + y - y", XY)
        assert p.terms == {(1, 0): 2.0}

    def test_round_trip_through_string(self):
        p = parse_polynomial("0.25*x^3*y - 3*x + 7", XY)
        q = parse_polynomial(p.to_string(), XY)
        assert p.terms == q.terms


class TestPolynomial:
    def test_degree_and_constant(self):
        p = parse_polynomial("x^2*y + 4", XY)
        assert p.degree() == 3
        c = Polynomial.constant(XY, 4.0)
        assert poly_eval(c, (9.0, 9.0)) == 4.0
        assert Polynomial.zero(XY).is_zero()
        assert Polynomial.zero(XY).degree() == 0

    def test_eval_many_matches_pointwise(self, rng):
        p = parse_polynomial("x^3 - 2*x*y + 0.5*y^2", XY)
        pts = rng.uniform(-3, 3, size=(40, 2))
        vals = p.eval_many(pts)
        expected = [poly_eval(p, pt) for pt in pts]
        np.testing.assert_allclose(vals, expected, rtol=1e-13)

    def test_variable_and_used_variables(self):
        x = Polynomial.variable(XY, "x")
        assert poly_eval(x, (5.0, 1.0)) == 5.0
        p = parse_polynomial("y^2 + 1", XY)
        assert p.used_variables() == {"y"}

    def test_json_round_trip(self):
        p = parse_polynomial("2*x^2 - y + 0.125", XY)
        q = Polynomial.from_json(p.to_json())
        assert q.terms == p.terms
        assert q.space.names == p.space.names
        assert "terms" in polynomial_to_json_str(p)


class TestCompose:
    def test_affine_substitution(self):
        p = parse_polynomial("x^2 + y", XY)
        sub = {"x": parse_polynomial("x + 1", XY),
               "y": parse_polynomial("2*y", XY)}
        q = poly_compose(p, sub)
        # (x+1)^2 + 2y = x^2 + 2x + 1 + 2y
        assert q.terms == {(2, 0): 1.0, (1, 0): 2.0, (0, 0): 1.0, (0, 1): 2.0}

    def test_missing_variables_stay_fixed(self):
        p = parse_polynomial("x + y", XY)
        q = poly_compose(p, {"x": parse_polynomial("3*x", XY)})
        assert poly_eval(q, (1.0, 5.0)) == pytest.approx(8.0)

    @given(st.floats(-2, 2), st.floats(-2, 2))
    @settings(max_examples=30, deadline=None)
    def test_compose_commutes_with_eval(self, a, b):
        p = parse_polynomial("x^2*y - 3*y + 2", XY)
        sub = {"x": parse_polynomial("y - 1", XY),
               "y": parse_polynomial("x*y", XY)}
        q = poly_compose(p, sub)
        inner = (poly_eval(sub["x"], (a, b)), poly_eval(sub["y"], (a, b)))
        assert poly_eval(q, (a, b)) == pytest.approx(poly_eval(p, inner),
                                                     rel=1e-10, abs=1e-10)


class TestNoiseSpec:
    def test_validation(self):
        with pytest.raises(InputError):
            NoiseSpec.gaussian(0.0, -1.0)
        with pytest.raises(InputError):
            NoiseSpec.uniform(2.0, 1.0)
        with pytest.raises(CapabilityError):
            NoiseSpec("laplace", 0.0, 1.0)

    @pytest.mark.parametrize("k,value", [
        (0, 1.0), (1, 0.0), (2, 1.0), (3, 0.0), (4, 3.0), (6, 15.0),
    ])
    def test_standard_gaussian_moments(self, k, value):
        assert NoiseSpec.gaussian(0.0, 1.0).raw_moment(k) == pytest.approx(value)

    def test_shifted_gaussian_second_moment(self):
        # E[(m + s Z)^2] = m^2 + s^2
        assert NoiseSpec.gaussian(2.0, 3.0).raw_moment(2) == pytest.approx(13.0)

    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
    def test_uniform_moments(self, k):
        lo, hi = -1.0, 3.0
        exact = (hi ** (k + 1) - lo ** (k + 1)) / ((k + 1) * (hi - lo))
        assert NoiseSpec.uniform(lo, hi).raw_moment(k) == pytest.approx(exact)

    def test_degenerate_uniform(self):
        assert NoiseSpec.uniform(2.0, 2.0).raw_moment(3) == pytest.approx(8.0)

    def test_sampled_moments_match(self, rng):
        spec = NoiseSpec.uniform(-2.0, 5.0)
        xs = spec.sample(rng, 200_000)
        assert np.mean(xs**2) == pytest.approx(spec.raw_moment(2), rel=0.02)

    def test_json_round_trip(self):
        for spec in (NoiseSpec.gaussian(1.0, 2.0), NoiseSpec.uniform(0.0, 1.0)):
            assert NoiseSpec.from_json(spec.to_json()) == spec


class TestExpectation:
    def test_gaussian_square(self):
        # E[(x + e)^2] = x^2 + 2x E[e] + E[e^2] with e ~ N(1, 2)
        p = parse_polynomial("x^2 + 2*x*e + e^2",
                             VariableSpace.make(states=["x"], noises=["e"]))
        q = expectation_over_noise(p, {"e": NoiseSpec.gaussian(1.0, 2.0)})
        assert q.space.noise_indices == ()
        assert poly_eval(q, (3.0,)) == pytest.approx(9.0 + 6.0 + 5.0)

    def test_independent_product_factorizes(self):
        sp = VariableSpace.make(states=["x"], noises=["e", "f"])
        p = parse_polynomial("x*e*f + e^2*f^2", sp)
        q = expectation_over_noise(p, {"e": NoiseSpec.gaussian(0.0, 1.0),
                                       "f": NoiseSpec.uniform(0.0, 2.0)})
        # E[e]=0, E[e^2]=1, E[f^2]=4/3
        assert poly_eval(q, (7.0,)) == pytest.approx(4.0 / 3.0)

    def test_noise_free_polynomial_unchanged(self):
        p = parse_polynomial("x^2 - 1", XYE)
        q = expectation_over_noise(p, {"e": NoiseSpec.gaussian(0.0, 1.0)})
        assert poly_eval(q, (2.0, 0.0)) == pytest.approx(3.0)

    @given(st.integers(0, 3), st.integers(0, 4))
    @settings(max_examples=25, deadline=None)
    def test_monomial_expectation_is_product_of_moments(self, i, j):
        sp = VariableSpace.make(states=["x"], noises=["e"])
        p = Polynomial(sp, {(i, j): 1.0})
        spec = NoiseSpec.uniform(-1.0, 2.0)
        q = expectation_over_noise(p, {"e": spec})
        assert poly_eval(q, (1.5,)) == pytest.approx(1.5**i * spec.raw_moment(j))

    def test_monte_carlo_oracle(self, rng):
        # the closed-form expectation must sit within 3 standard errors of a
        # large-sample Monte Carlo average, at a spread of state points
        sp = VariableSpace.make(states=["x"], noises=["e", "f"])
        p = parse_polynomial("x^2*e^2 - 0.3*x*f^3 + e*f + 0.7", sp)
        noise = {"e": NoiseSpec.gaussian(0.5, 1.5), "f": NoiseSpec.uniform(-1.0, 1.0)}
        q = expectation_over_noise(p, noise)
        n = 60_000
        draws_e = noise["e"].sample(rng, n)
        draws_f = noise["f"].sample(rng, n)
        for x in np.linspace(-2.0, 2.0, 20):
            vals = p.eval_many(np.column_stack(
                [np.full(n, x), draws_e, draws_f]))
            se = np.std(vals, ddof=1) / math.sqrt(n)
            assert abs(poly_eval(q, (x,)) - np.mean(vals)) <= 3 * se
