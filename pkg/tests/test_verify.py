"""Tests for the verification checks."""

import unittest

import pytest

from sequential_stopping.verify import CHECKS, run_checks

FAST_CHECKS = [
    "normal_cdf",
    "normal_quantile",
    "scaled_t_moments",
    "arch_stability",
    "arch_batch_variance",
    "cv_optimal_parameter",
    "cv_variance_identity",
    "cv_limits",
]


class TestChecks(unittest.TestCase):
    """Test the verification checks."""

    def test_fast_checks(self) -> None:
        """Test that the quick checks pass."""
        results = run_checks(FAST_CHECKS, progress=False)
        self.assertEqual(FAST_CHECKS, [result.name for result in results])
        for result in results:
            with self.subTest(check=result.name):
                self.assertTrue(result.passed, msg=f"{result.measured} {result.detail}")

    def test_known_values(self) -> None:
        """Test the measured values of the exact checks."""
        (quantile, parameter) = run_checks(
            ["normal_quantile", "cv_optimal_parameter"], progress=False
        )
        self.assertAlmostEqual(1.9599639845400545, quantile.measured, delta=1e-9)
        self.assertAlmostEqual(-0.5, parameter.measured, places=12)

    def test_invalid(self) -> None:
        """Test unknown checks and invalid numbers of draws."""
        with self.assertRaises(ValueError):
            run_checks(["nope"], progress=False)
        with self.assertRaises(ValueError):
            run_checks(["normal_cdf"], draws=0, progress=False)

    def test_registry(self) -> None:
        """Test that every check reports under its own name."""
        for name in FAST_CHECKS:
            with self.subTest(name=name):
                self.assertIn(name, CHECKS)
        self.assertEqual(
            set(FAST_CHECKS) | {"arch_moments", "unbiasedness", "stopping_scaling"}, set(CHECKS)
        )


@pytest.mark.slow
class TestSlowChecks(unittest.TestCase):
    """Test the checks that simulate many samples or runs."""

    def test_slow_checks(self) -> None:
        """Test that the ARCH(1) moment, unbiasedness, and scaling checks pass."""
        names = ["arch_moments", "unbiasedness", "stopping_scaling"]
        for result in run_checks(names, progress=False):
            with self.subTest(check=result.name):
                self.assertTrue(result.passed, msg=f"{result.measured} {result.detail}")
