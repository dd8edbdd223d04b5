import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from symlevel.angles import (
    CYCLIC,
    GAUSSIAN,
    UNIFORM,
    DegenerateReadoutError,
    SymmetrySpec,
    canonicalize_angle,
    compose,
    cyclic_elements,
    geodesic_distance,
    inverse,
    sample_spec,
    xi_from_vector,
)

finite_angles = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


class TestCanonicalize:
    @pytest.mark.parametrize("raw,expected", [(190.0, -170.0), (360.0, 0.0), (-180.0, 180.0)])
    def test_examples(self, raw, expected):
        assert canonicalize_angle(raw) == pytest.approx(expected, abs=1e-12)

    @given(finite_angles)
    def test_idempotent(self, raw):
        once = canonicalize_angle(raw)
        assert canonicalize_angle(once) == once

    @given(finite_angles)
    def test_range_and_congruence(self, raw):
        a = canonicalize_angle(raw)
        assert -180.0 < a <= 180.0
        assert math.isclose(math.fmod(a - raw, 360.0), 0.0, abs_tol=1e-6)

    @pytest.mark.parametrize("bad", [float("nan"), float("inf"), -float("inf")])
    def test_nonfinite_rejected(self, bad):
        with pytest.raises(ValueError):
            canonicalize_angle(bad)


class TestGroupOps:
    def test_compose_examples(self):
        assert compose(30.0, 40.0) == pytest.approx(70.0)
        assert compose(170.0, 20.0) == pytest.approx(-170.0)
        assert compose(25.0, 0.0) == pytest.approx(25.0)

    def test_inverse_examples(self):
        assert inverse(30.0) == pytest.approx(-30.0)
        assert inverse(180.0) == pytest.approx(180.0)
        assert inverse(0.0) == 0.0

    @given(finite_angles, finite_angles)
    def test_inverse_left_cancels(self, a, b):
        g = canonicalize_angle(a)
        assert compose(inverse(g), g) == pytest.approx(0.0, abs=1e-9)

    @given(finite_angles, finite_angles, finite_angles)
    def test_associativity(self, a, b, c):
        left = compose(compose(a, b), c)
        right = compose(a, compose(b, c))
        assert geodesic_distance(left, right) < 1e-9


class TestGeodesic:
    def test_examples(self):
        assert geodesic_distance(170.0, -170.0) == pytest.approx(20.0)
        assert geodesic_distance(0.0, 0.0) == 0.0
        assert geodesic_distance(90.0, -90.0) == pytest.approx(180.0)

    @given(finite_angles, finite_angles)
    def test_symmetric_and_bounded(self, a, b):
        d = geodesic_distance(a, b)
        assert 0.0 <= d <= 180.0
        assert d == pytest.approx(geodesic_distance(b, a), abs=1e-9)

    @given(finite_angles)
    def test_distance_to_identity_is_abs_angle(self, a):
        g = canonicalize_angle(a)
        assert geodesic_distance(g, 0.0) == pytest.approx(abs(g), abs=1e-9)


class TestReadout:
    @pytest.mark.parametrize("v,expected", [((1, 0), 0.0), ((0, 1), 90.0), ((-1, 0), 180.0)])
    def test_axis_examples(self, v, expected):
        assert xi_from_vector(v) == pytest.approx(expected)

    def test_grid_round_trip(self):
        for deg in range(-179, 181):
            rad = math.radians(deg)
            got = xi_from_vector((math.cos(rad), math.sin(rad)))
            assert abs(got - deg) < 1e-6

    def test_degenerate_rejected(self):
        with pytest.raises(DegenerateReadoutError):
            xi_from_vector((1e-9, -1e-9))


class TestCyclicElements:
    def test_examples(self):
        assert cyclic_elements(1) == (0.0,)
        assert set(cyclic_elements(2)) == {0.0, 180.0}
        assert set(cyclic_elements(4)) == {0.0, 90.0, 180.0, -90.0}

    @pytest.mark.parametrize("n", range(1, 13))
    def test_cardinality_and_closure(self, n):
        elements = cyclic_elements(n)
        assert len(set(elements)) == n
        for a in elements:
            for b in elements:
                combined = compose(a, b)
                assert min(abs(canonicalize_angle(combined - e)) for e in elements) < 1e-9

    def test_zero_order_rejected(self):
        with pytest.raises(ValueError):
            cyclic_elements(0)


class TestSampling:
    def test_degenerate_specs(self):
        rng = np.random.default_rng(0)
        assert all(sample_spec(SymmetrySpec(UNIFORM, 0.0), rng) == 0.0 for _ in range(10))
        assert all(sample_spec(SymmetrySpec(CYCLIC, 1), rng) == 0.0 for _ in range(10))

    def test_uniform_bounds_and_moments(self):
        # Monte Carlo over the sampler itself: E|angle| = theta/2 for U[-60, 60]
        rng = np.random.default_rng(7)
        spec = SymmetrySpec(UNIFORM, 60.0)
        draws = np.array([sample_spec(spec, rng) for _ in range(100_000)])
        assert np.abs(draws).max() <= 60.0
        assert abs(np.abs(draws).mean() - 30.0) < 0.5

    def test_cyclic_membership(self):
        rng = np.random.default_rng(3)
        spec = SymmetrySpec(CYCLIC, 4)
        elements = cyclic_elements(4)
        for _ in range(200):
            assert sample_spec(spec, rng) in elements

    def test_gaussian_canonicalized(self):
        rng = np.random.default_rng(5)
        spec = SymmetrySpec(GAUSSIAN, 81.0)
        draws = [sample_spec(spec, rng) for _ in range(2000)]
        assert all(-180.0 < a <= 180.0 for a in draws)

    def test_deterministic_given_seed(self):
        spec = SymmetrySpec(UNIFORM, 45.0)
        a = [sample_spec(spec, np.random.default_rng(9)) for _ in range(5)]
        b = [sample_spec(spec, np.random.default_rng(9)) for _ in range(5)]
        assert a == b


class TestSpecValidation:
    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            SymmetrySpec(UNIFORM, 200.0)
        with pytest.raises(ValueError):
            SymmetrySpec(GAUSSIAN, -1.0)
        with pytest.raises(ValueError):
            SymmetrySpec(CYCLIC, 0)
        with pytest.raises(ValueError):
            SymmetrySpec("triangular", 10.0)
