# Copyright 2025 sasopt contributors
# SPDX-License-Identifier: Apache-2.0

"""Tests for benchfns.py module."""

import numpy as np
import pytest

from sasopt.benchfns import (
    BenchmarkFunction,
    DimensionError,
    FunctionKind,
    FunctionSpec,
    evaluate,
    gradient,
    make_function,
    sample_initial,
)


def shifted(kind, shift):
    return BenchmarkFunction(kind=kind, dims=len(shift), shift=np.asarray(shift, dtype=float))


class TestEvaluate:
    """Test objective values."""

    def test_ackley_minimum_at_shift(self):
        """Test the shifted Ackley minimum is zero."""
        fn = shifted(FunctionKind.ACKLEY, [1.3, -0.7])
        assert evaluate(fn, [1.3, -0.7]) == pytest.approx(0.0, abs=1e-12)

    def test_rastrigin_minimum_8d(self):
        """Test Rastrigin at the origin with zero shift."""
        fn = make_function(FunctionKind.RASTRIGIN, 8)
        assert evaluate(fn, np.zeros(8)) == pytest.approx(0.0, abs=1e-12)

    def test_rastrigin_hand_value(self):
        """Test 10 + 0.25 - 10 cos(pi) = 20.25."""
        fn = make_function(FunctionKind.RASTRIGIN, 1)
        assert evaluate(fn, [0.5]) == pytest.approx(20.25)

    def test_sphere(self):
        """Test sphere is the squared norm."""
        fn = make_function(FunctionKind.SPHERE, 2)
        assert evaluate(fn, [3.0, 4.0]) == pytest.approx(25.0)

    def test_callable(self):
        """Test functions can be called directly."""
        fn = make_function(FunctionKind.SPHERE, 2)
        assert fn([1.0, 1.0]) == pytest.approx(2.0)

    def test_dimension_mismatch(self):
        """Test wrong point length raises an argument error."""
        fn = make_function(FunctionKind.ACKLEY, 2)
        with pytest.raises(DimensionError):
            evaluate(fn, [0.0, 0.0, 0.0])
        with pytest.raises(ValueError):
            evaluate(fn, [0.0])


class TestGradient:
    """Test analytic gradients."""

    @pytest.mark.parametrize("kind", list(FunctionKind))
    def test_zero_at_shift(self, kind):
        """Test the gradient vanishes at the minimum."""
        fn = shifted(kind, [0.4, -1.1, 2.0])
        np.testing.assert_allclose(gradient(fn, [0.4, -1.1, 2.0]), np.zeros(3), atol=1e-12)

    def test_sphere(self):
        """Test the sphere gradient is 2x."""
        fn = make_function(FunctionKind.SPHERE, 2)
        np.testing.assert_allclose(gradient(fn, [1.0, 2.0]), [2.0, 4.0])

    @pytest.mark.parametrize("kind", [FunctionKind.ACKLEY, FunctionKind.RASTRIGIN])
    def test_matches_finite_differences(self, kind):
        """Test analytic gradient against central differences."""
        fn = make_function(kind, 2)
        x = np.array([0.3, -0.2])
        h = 1e-6
        numeric = np.array([
            (evaluate(fn, x + h * e) - evaluate(fn, x - h * e)) / (2 * h) for e in np.eye(2)
        ])
        np.testing.assert_allclose(gradient(fn, x), numeric, rtol=1e-6)

    def test_dimension_mismatch(self):
        """Test wrong point length raises an argument error."""
        fn = make_function(FunctionKind.SPHERE, 2)
        with pytest.raises(DimensionError):
            gradient(fn, [1.0])


class TestSampleInitial:
    """Test starting-point sampling."""

    def test_deterministic(self):
        """Test the same seed yields the same point."""
        fn = make_function(FunctionKind.ACKLEY, 4)
        a = sample_initial(fn, np.random.default_rng(3))
        b = sample_initial(fn, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_mean_near_center(self):
        """Test uniform samples average near the domain center."""
        fn = make_function(FunctionKind.SPHERE, 2, domain=(-5.0, 5.0))
        rng = np.random.default_rng(0)
        samples = np.array([sample_initial(fn, rng) for _ in range(10_000)])
        assert np.all(np.abs(samples.mean(axis=0)) < 0.15)

    def test_within_domain(self):
        """Test every coordinate lies in the domain."""
        fn = make_function(FunctionKind.RASTRIGIN, 8)
        x = sample_initial(fn, np.random.default_rng(1))
        assert x.shape == (8,)
        assert np.all((x >= fn.domain_lo) & (x <= fn.domain_hi))


class TestFunctionSpec:
    """Test the run-config form of functions."""

    def test_build_is_reproducible(self):
        """Test the same shift seed gives the same shift."""
        spec = FunctionSpec.from_dict({"kind": "Ackley", "dims": 2, "shift_seed": 5})
        np.testing.assert_array_equal(spec.build().shift, spec.build().shift)

    def test_shift_in_range(self):
        """Test shifts stay within the shift range."""
        fn = make_function(FunctionKind.ACKLEY, 8, shift_seed=9, shift_range=2.0)
        assert np.all(np.abs(fn.shift) <= 2.0)

    def test_no_seed_means_no_shift(self):
        """Test a missing seed gives a zero shift."""
        fn = FunctionSpec(FunctionKind.SPHERE, 3).build()
        np.testing.assert_array_equal(fn.shift, np.zeros(3))

    def test_labels(self):
        """Test table labels."""
        assert make_function(FunctionKind.ACKLEY, 2).label == "2D Ackley"
        assert make_function(FunctionKind.RASTRIGIN, 8).label == "8D Rastr."

    def test_to_dict(self):
        """Test the serialized form keeps every field."""
        spec = FunctionSpec.from_dict({"kind": "rastrigin", "dims": 8, "shift_seed": 4})
        assert spec.to_dict() == {
            "kind": "rastrigin",
            "dims": 8,
            "shift_seed": 4,
            "domain": [-5.12, 5.12],
            "shift_range": 2.0,
        }

    def test_invalid_shape(self):
        """Test a shift of the wrong length is rejected."""
        with pytest.raises(DimensionError):
            BenchmarkFunction(kind=FunctionKind.SPHERE, dims=2, shift=np.zeros(3))
