"""
Tests for ECDF ranks, kernels, kernel smoothing and the Rosenblatt transforms.
"""
import numpy as np
import pytest
from scipy.integrate import quad

from services.citest.errors import DegenerateKernelWarning, InvalidInputError
from services.citest.transform import (
    QUARTIC,
    Bandwidth,
    ContinuousZ,
    DiscreteZ,
    KernelName,
    Sample,
    TransformedSample,
    ecdf_leave_one_out,
    ecdf_leave_one_out_all,
    get_kernel,
    kernel_conditional_cdf,
    kernel_propensity,
    oracle_transformed_sample,
    population_transform,
    quartic_kernel,
    rosenblatt_transform,
    triweight_kernel,
)


def brute_force_ecdf(values):
    n = len(values)
    return np.array([sum(values[j] <= values[i] for j in range(n) if j != i) / (n - 1) for i in range(n)])


def brute_force_smoothed(values, u_hat, h):
    n = len(values)
    out = np.empty(n)
    for i in range(n):
        num = den = 0.0
        for j in range(n):
            if j == i:
                continue
            w = quartic_kernel((u_hat[j] - u_hat[i]) / h) / h
            num += w * (values[j] <= values[i])
            den += w
        out[i] = num / den
    return out


@pytest.fixture
def ten_rows():
    rng = np.random.default_rng(2024)
    x = rng.random(10)
    z = 0.3 * x + 0.7 * rng.random(10)
    y = np.sin(3 * x) + rng.standard_normal(10)
    return Sample(y=y, z=z, x=x)


class TestEcdfLeaveOneOut:
    def test_examples(self):
        """Direct counts with the weak inequality."""
        assert ecdf_leave_one_out([3, 1, 2], 0) == 1.0
        assert ecdf_leave_one_out([3, 1, 2], 1) == 0.0
        assert ecdf_leave_one_out([5, 5, 1], 0) == 1.0

    def test_needs_two_values(self):
        with pytest.raises(InvalidInputError):
            ecdf_leave_one_out([1.0], 0)
        with pytest.raises(InvalidInputError):
            ecdf_leave_one_out_all([1.0])

    def test_index_out_of_range(self):
        with pytest.raises(InvalidInputError):
            ecdf_leave_one_out([1.0, 2.0], 2)

    def test_vectorised_matches_scalar_with_ties(self, rng):
        values = rng.integers(0, 5, size=30).astype(float)
        expected = [ecdf_leave_one_out(values, i) for i in range(30)]
        np.testing.assert_array_equal(ecdf_leave_one_out_all(values), expected)
        np.testing.assert_array_equal(ecdf_leave_one_out_all(values), brute_force_ecdf(values))

    def test_distinct_values_give_evenly_spaced_ranks(self, rng):
        values = rng.standard_normal(12)
        ranks = np.sort(ecdf_leave_one_out_all(values))
        np.testing.assert_allclose(ranks, np.arange(12) / 11, rtol=0, atol=1e-15)


class TestKernels:
    def test_quartic_values(self):
        assert quartic_kernel(0.0) == 0.9375
        assert quartic_kernel(1.0) == 0.0
        assert quartic_kernel(1.5) == 0.0

    @pytest.mark.parametrize("kernel", [quartic_kernel, triweight_kernel])
    def test_integrates_to_one(self, kernel):
        value, _ = quad(kernel, -1.0, 1.0, epsabs=1e-13, epsrel=1e-13)
        assert abs(value - 1.0) < 1e-10

    @pytest.mark.parametrize("kernel", [quartic_kernel, triweight_kernel])
    def test_symmetric_and_nonnegative(self, kernel, rng):
        u = rng.uniform(-2, 2, size=1000)
        np.testing.assert_array_equal(kernel(u), kernel(-u))
        assert np.all(kernel(u) >= 0)

    def test_registry(self):
        assert get_kernel("quartic") is QUARTIC
        assert get_kernel(KernelName.TRIWEIGHT).name is KernelName.TRIWEIGHT
        assert get_kernel("quartic").support_radius == 1.0

    def test_unknown_kernel(self):
        with pytest.raises(InvalidInputError, match="Unknown kernel"):
            get_kernel("gaussian")


class TestBandwidth:
    def test_resolve(self):
        assert Bandwidth().resolve(100) == pytest.approx(100 ** -0.2)
        assert Bandwidth(constant=2.0, exponent=0.25).resolve(16) == pytest.approx(1.0)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            Bandwidth(constant=0.0)
        with pytest.raises(ValueError):
            Bandwidth(exponent=-0.2)


class TestKernelConditionalCdf:
    def test_equal_positions_reduce_to_ecdf(self):
        value = kernel_conditional_cdf(2.0, 0.5, [1.0, 2.0, 3.0], [0.5, 0.5, 0.5], h=0.2)
        assert value == pytest.approx(2 / 3)

    def test_bounds(self):
        responses, u_hat = [1.0, 2.0, 3.0], [0.4, 0.5, 0.6]
        assert kernel_conditional_cdf(0.0, 0.5, responses, u_hat, h=0.5) == 0.0
        assert kernel_conditional_cdf(3.0, 0.5, responses, u_hat, h=0.5) == 1.0

    def test_hand_weighted_example(self):
        """n=4, leave out the last point; only j=0 has a response <= 1."""
        u_hat = np.array([0.1, 0.2, 0.8, 0.9])
        h = 0.2
        w = [quartic_kernel((u_hat[j] - 0.15) / h) / h for j in range(3)]
        expected = w[0] / sum(w)
        value = kernel_conditional_cdf(1.0, 0.15, [1.0, 2.0, 3.0, 4.0], u_hat, h, leave_out=3)
        assert value == pytest.approx(expected, abs=1e-15)
        assert value == pytest.approx(0.5)

    def test_nondecreasing_in_y(self, rng):
        responses = rng.standard_normal(40)
        u_hat = rng.random(40)
        values = [kernel_conditional_cdf(y, 0.5, responses, u_hat, 0.3) for y in np.linspace(-3, 3, 50)]
        assert np.all(np.diff(values) >= 0)
        assert all(0.0 <= v <= 1.0 for v in values)

    def test_zero_denominator_falls_back_with_warning(self, counter_value):
        with pytest.warns(DegenerateKernelWarning):
            value = kernel_conditional_cdf(2.0, 0.5, [1.0, 2.0, 3.0, 4.0], [0.0, 0.1, 0.9, 1.0], h=0.01)
        assert value == pytest.approx(0.5)
        assert counter_value("kernel_fallback_total", {"estimator": "pointwise"}) == 1

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            kernel_conditional_cdf(0.0, 0.5, [1.0, 2.0], [0.5], h=0.2)


class TestKernelPropensity:
    def test_equal_positions(self):
        value = kernel_propensity(1.0, 0.5, [1, 1, 0, 0], [0.5] * 4, h=0.2, leave_out=3)
        assert value == pytest.approx(2 / 3)

    def test_clamped(self):
        value = kernel_propensity(1.0, 0.5, [1, 1, 1], [0.4, 0.5, 0.6], h=0.5, support=[0.0, 1.0])
        assert value == pytest.approx(1 - 1e-3)

    def test_unknown_support_value(self):
        with pytest.raises(InvalidInputError):
            kernel_propensity(2.0, 0.5, [0, 1, 1], [0.4, 0.5, 0.6], h=0.5)

    def test_matches_brute_force(self, rng):
        u_hat = rng.random(15)
        codes = rng.integers(0, 2, size=15).astype(float)
        i, h = 4, 0.2
        num = den = 0.0
        for j in range(15):
            if j != i:
                w = quartic_kernel((u_hat[j] - u_hat[i]) / h) / h
                num += w * (codes[j] == 1.0)
                den += w
        expected = min(max(num / den, 1e-3), 1 - 1e-3)
        value = kernel_propensity(1.0, u_hat[i], codes, u_hat, h, leave_out=i)
        assert value == pytest.approx(expected, abs=1e-14)


class TestSample:
    def test_minimum_size(self):
        with pytest.raises(InvalidInputError):
            Sample(y=[1.0], z=[0.0], x=[0.5])

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            Sample(y=[1.0, 2.0], z=[0.0], x=[0.5, 0.6])

    def test_non_finite(self):
        with pytest.raises(InvalidInputError, match="non-finite"):
            Sample(y=[1.0, np.nan], z=[0.0, 1.0], x=[0.5, 0.6])

    def test_discrete_support_membership(self):
        with pytest.raises(InvalidInputError, match="support"):
            Sample(y=[1.0, 2.0], z=[0.0, 2.0], x=[0.5, 0.6], z_kind=DiscreteZ((0.0, 1.0)))

    def test_support_must_increase(self):
        with pytest.raises(InvalidInputError):
            DiscreteZ((1.0, 0.0))

    def test_arrays_are_read_only(self):
        sample = Sample(y=[1.0, 2.0], z=[0.0, 1.0], x=[0.5, 0.6])
        assert sample.x.shape == (2, 1)
        with pytest.raises(ValueError):
            sample.y[0] = 5.0
        assert isinstance(sample.z_kind, ContinuousZ)


class TestRosenblattTransform:
    def test_two_observations(self):
        sample = Sample(y=[1.0, 2.0], z=[0.3, 0.6], x=[0.1, 0.9])
        ts = rosenblatt_transform(sample, sample.x[:, 0], 0.5, 0.5)
        assert set(ts.u_hat.tolist()) <= {0.0, 1.0}

    def test_matches_brute_force(self, ten_rows):
        h = 0.8
        ts = rosenblatt_transform(ten_rows, ten_rows.x[:, 0], h, h)
        u_hat = brute_force_ecdf(ten_rows.x[:, 0])
        np.testing.assert_allclose(ts.u_hat, u_hat, rtol=0, atol=1e-15)
        np.testing.assert_allclose(ts.y_hat, brute_force_smoothed(ten_rows.y, u_hat, h), rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(ts.z_hat, brute_force_smoothed(ten_rows.z, u_hat, h), rtol=1e-12, atol=1e-14)
        assert ts.warnings == ()

    def test_rank_invariance_of_index(self, ten_rows):
        index = ten_rows.x[:, 0]
        first = rosenblatt_transform(ten_rows, index, 0.6, 0.6)
        second = rosenblatt_transform(ten_rows, np.exp(3 * index) - 7, 0.6, 0.6)
        np.testing.assert_array_equal(first.u_hat, second.u_hat)
        np.testing.assert_array_equal(first.y_hat, second.y_hat)
        np.testing.assert_array_equal(first.z_hat, second.z_hat)

    def test_invariance_to_monotone_y_and_z(self, ten_rows):
        index = ten_rows.x[:, 0]
        base = rosenblatt_transform(ten_rows, index, 0.6, 0.6)
        moved = Sample(y=ten_rows.y ** 3, z=np.exp(ten_rows.z), x=ten_rows.x)
        other = rosenblatt_transform(moved, index, 0.6, 0.6)
        np.testing.assert_array_equal(base.y_hat, other.y_hat)
        np.testing.assert_array_equal(base.z_hat, other.z_hat)

    def test_values_in_unit_interval(self, rng):
        sample = Sample(y=rng.standard_normal(60), z=rng.random(60), x=rng.random(60))
        ts = rosenblatt_transform(sample, sample.x[:, 0], Bandwidth(), Bandwidth(constant=0.5))
        for values in (ts.u_hat, ts.y_hat, ts.z_hat):
            assert np.all((values >= 0) & (values <= 1))

    def test_discrete_propensities(self, rng):
        n, h = 25, 0.5
        x = rng.random(n)
        z = (rng.random(n) < x).astype(float)
        sample = Sample(y=rng.standard_normal(n), z=z, x=x, z_kind=DiscreteZ((0.0, 1.0)))
        ts = rosenblatt_transform(sample, x, h, h)
        assert ts.is_discrete and ts.z_hat is None
        assert ts.p_hat.shape == (n, 2)
        u_hat = brute_force_ecdf(x)
        for i in range(n):
            w = np.array([quartic_kernel((u_hat[j] - u_hat[i]) / h) / h if j != i else 0.0 for j in range(n)])
            expected = np.clip([w[z == 0].sum() / w.sum(), w[z == 1].sum() / w.sum()], 1e-3, 1 - 1e-3)
            np.testing.assert_allclose(ts.p_hat[i], expected, rtol=1e-12, atol=1e-14)
        assert np.all((ts.p_hat >= 1e-3) & (ts.p_hat <= 1 - 1e-3))

    def test_tiny_bandwidth_records_warnings(self, ten_rows, counter_value):
        ts = rosenblatt_transform(ten_rows, ten_rows.x[:, 0], 1e-4, 1e-4)
        assert len(ts.warnings) == 2
        assert counter_value("kernel_fallback_total", {"estimator": "y_hat"}) == 10
        np.testing.assert_allclose(ts.y_hat, brute_force_ecdf(ten_rows.y))

    def test_index_length_mismatch(self, ten_rows):
        with pytest.raises(InvalidInputError):
            rosenblatt_transform(ten_rows, np.zeros(3), 0.5, 0.5)


class TestPopulationTransform:
    def test_uniform_identity(self, rng):
        """With F(y | u) = y for independent uniforms the transform returns Y itself."""
        y, u = rng.random(200), rng.random(200)
        np.testing.assert_array_equal(population_transform(y, u, lambda v, c: np.clip(v, 0, 1)), y)


class TestOracleTransformedSample:
    def test_continuous(self, rng):
        ts = oracle_transformed_sample(50, rng)
        assert not ts.is_discrete
        assert ts.z_hat.shape == (50,)

    def test_discrete_with_propensity(self, rng):
        ts = oracle_transformed_sample(40, rng, support=(0, 1),
                                       propensity=lambda u: np.column_stack([1 - 0.5 * u, 0.5 * u]))
        assert ts.support == (0.0, 1.0)
        assert set(np.unique(ts.z_codes)) <= {0.0, 1.0}
        np.testing.assert_allclose(ts.p_hat[:, 1], np.clip(0.5 * ts.u_hat, 1e-3, 1 - 1e-3))

    def test_propensity_shape_checked(self, rng):
        with pytest.raises(InvalidInputError):
            oracle_transformed_sample(10, rng, support=(0, 1), propensity=lambda u: u)


class TestTransformedSample:
    def test_discrete_needs_propensities(self):
        with pytest.raises(InvalidInputError):
            TransformedSample(u_hat=[0.1, 0.2], y_hat=[0.3, 0.4], support=(0.0, 1.0))
