import numpy as np
import pytest

from symlevel.testbed import (
    OraclePsi,
    check_prop1,
    check_prop2,
    check_prop3,
    default_sweep,
    expected_l2,
    monte_carlo_l2,
    render_report,
)


class TestOracle:
    def test_equivariant_by_construction(self):
        oracle = OraclePsi(bias=15.0)
        assert oracle.predict(60.0) == pytest.approx(75.0)
        assert oracle.predict(175.0) == pytest.approx(-170.0)  # wraps


class TestProp1:
    def test_unbiased_holds(self):
        report = check_prop1(60.0, 500, 0.0)
        assert report.condition_holds and report.passed

    @pytest.mark.parametrize("beta", [15.0, -15.0])
    def test_biased_flagged_with_witness(self, beta):
        report = check_prop1(60.0, 500, beta)
        assert not report.condition_holds
        assert report.passed  # the violation was expected
        assert "outside" in report.witness

    def test_extreme_offsets_always_injected(self):
        # the +60 -> 75 witness exists even with few random samples
        report = check_prop1(60.0, 100, 15.0)
        assert "75" in report.witness or "-75" in report.witness

    def test_preconditions(self):
        with pytest.raises(ValueError):
            check_prop1(0.0, 500, 0.0)
        with pytest.raises(ValueError):
            check_prop1(60.0, 10, 0.0)


class TestProp2:
    def test_unbiased_set_equality(self):
        report = check_prop2(18.0, 500, 0.0)
        assert report.condition_holds and report.passed

    @pytest.mark.parametrize("beta", [5.0, -5.0, 15.0])
    def test_biased_max_element_violation(self, beta):
        report = check_prop2(18.0, 500, beta)
        assert not report.condition_holds
        assert report.passed
        assert "drawn set" in report.witness

    def test_empirical_std_tracks_sigma(self):
        report = check_prop2(18.0, 10_000, 0.0)
        assert report.extras["empirical_std"] == pytest.approx(18.0, rel=0.03)

    def test_sigma_positive_required(self):
        with pytest.raises(ValueError):
            check_prop2(0.0, 500, 0.0)


class TestProp3:
    def test_group_bias_preserves_image(self):
        report = check_prop3(4, 200, 90.0)
        assert report.condition_holds and report.expected_to_hold and report.passed

    def test_off_group_bias_gives_coset(self):
        report = check_prop3(4, 200, 45.0)
        assert not report.condition_holds
        assert report.passed
        assert "not in C_4" in report.witness

    def test_order_one(self):
        assert check_prop3(1, 200, 0.0).condition_holds
        assert not check_prop3(1, 200, 15.0).condition_holds
        assert check_prop3(1, 200, 360.0).condition_holds  # 360 wraps to identity

    def test_full_turn_multiple_of_every_order(self):
        for n in range(1, 9):
            report = check_prop3(n, 100, 360.0 / n)
            assert report.condition_holds and report.passed


class TestExpectedL2:
    @pytest.mark.parametrize(
        "theta,alpha0,expected",
        [(60.0, 0.0, 30.0), (60.0, 60.0, 60.0), (90.0, 30.0, 50.0)],
    )
    def test_closed_form_values(self, theta, alpha0, expected):
        assert expected_l2(theta, alpha0) == pytest.approx(expected)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            expected_l2(0.0, 0.0)
        with pytest.raises(ValueError):
            expected_l2(30.0, 40.0)

    def test_even_convex_minimum_at_zero(self):
        theta = 75.0
        grid = np.linspace(-theta, theta, 51)
        values = np.array([expected_l2(theta, a) for a in grid])
        assert np.allclose(values, values[::-1])  # even
        assert np.argmin(values) == 25  # unique minimum at alpha0 = 0
        diffs2 = np.diff(values, 2)
        assert (diffs2 > 0).all()  # strictly convex on the grid


class TestMonteCarloL2:
    @pytest.mark.parametrize("theta,alpha0", [(60.0, 0.0), (90.0, 30.0)])
    def test_matches_closed_form(self, theta, alpha0):
        got = monte_carlo_l2(theta, alpha0, 1_000_000, seed=3)
        want = expected_l2(theta, alpha0)
        se = theta / np.sqrt(1_000_000)  # upper bound on the standard error
        assert abs(got - want) < max(3 * se, 0.01 * want)

    def test_minimizer_at_zero_with_common_draws(self):
        theta = 60.0
        rng = np.random.default_rng(11)
        draws = rng.uniform(-theta, theta, 1_000_000)
        sweep = {a0: monte_carlo_l2(theta, a0, len(draws), draws=draws)
                 for a0 in (-60.0, -45.0, -30.0, -15.0, 0.0, 15.0, 30.0, 45.0, 60.0)}
        assert min(sweep, key=sweep.get) == 0.0

    def test_minimum_draw_count_enforced(self):
        with pytest.raises(ValueError):
            monte_carlo_l2(60.0, 0.0, 100)


class TestSweep:
    def test_all_checks_pass(self):
        reports = default_sweep(seed=0)
        assert all(r.passed for r in reports)

    def test_report_format(self):
        reports = default_sweep(seed=0)
        text = render_report(reports)
        lines = text.splitlines()
        assert len(lines) == len(reports) + 1
        assert all(("PASS" in line or "FAIL" in line) for line in lines[:-1])
        assert f"total {len(reports)}/{len(reports)}" in lines[-1]
