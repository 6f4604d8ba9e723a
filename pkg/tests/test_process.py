"""Tests for the process models."""

import pickle
import unittest

import numpy as np

from sequential_stopping.process import (
    USQ_HALF,
    Arch1Model,
    CheckpointMismatchError,
    ControlVariateModel,
    IidModel,
    ModelFactory,
    ModelState,
    PolynomialIntegrand,
    branch_for_resample,
    parse_model,
)
from sequential_stopping.schedule import DEFAULT_SCHEDULE, BatchSchedule
from sequential_stopping.stats import RngStream


class TestIidModel(unittest.TestCase):
    """Test independent samples."""

    def test_normal(self) -> None:
        """Test normal samples and their conditional variances."""
        model = IidModel("normal", mean=2.0, variance=4.0)
        x, cond_var = model.sample_batch(RngStream(0), 10_000)
        self.assertEqual((10_000,), x.shape)
        self.assertIsNotNone(cond_var)
        np.testing.assert_array_equal(np.full(10_000, 4.0), cond_var)
        self.assertAlmostEqual(2.0, float(x.mean()), delta=0.1)
        self.assertEqual(2.0, model.true_mean())
        self.assertEqual(4.0, model.theoretical_batch_variance(DEFAULT_SCHEDULE, 3))

    def test_uniform(self) -> None:
        """Test that uniform samples stay within the mean plus or minus sqrt(3 variance)."""
        model = IidModel("uniform", mean=1.0, variance=3.0)
        x, _ = model.sample_batch(RngStream(0), 10_000)
        self.assertTrue(np.all((x >= -2.0) & (x <= 4.0)))
        self.assertAlmostEqual(3.0, float(x.var()), delta=0.15)

    def test_degenerate(self) -> None:
        """Test a model with zero variance."""
        x, _ = IidModel(mean=0.25, variance=0.0).sample_batch(RngStream(0), 5)
        np.testing.assert_array_equal(np.full(5, 0.25), x)

    def test_invalid(self) -> None:
        """Test invalid parameters."""
        with self.assertRaises(ValueError):
            IidModel("cauchy")  # type:ignore[arg-type]
        with self.assertRaises(ValueError):
            IidModel(variance=-1.0)
        with self.assertRaises(ValueError):
            IidModel(mean=float("nan"))


class TestArch1Model(unittest.TestCase):
    """Test the ARCH(1) model."""

    def test_conditional_variance(self) -> None:
        """Test the conditional variance from a zero and from a unit lag."""
        model = Arch1Model()
        _, cond_var = model.next_sample(RngStream(0))
        self.assertAlmostEqual(0.3, cond_var)

        model.restore(ModelState("arch1", (1.0,)))
        x, cond_var = model.next_sample(RngStream(1))
        self.assertAlmostEqual(0.33, cond_var)
        self.assertEqual((x,), model.checkpoint().values)

    def test_recursion(self) -> None:
        """Test that each conditional variance follows from the previous sample."""
        model = Arch1Model()
        x, cond_var = model.sample_batch(RngStream(0), 1000)
        self.assertIsNotNone(cond_var)
        np.testing.assert_allclose(0.3 + 0.03 * x[:-1] ** 2, cond_var[1:], rtol=1e-14)

    def test_theoretical_batch_variance(self) -> None:
        """Test the theoretical batch variance against its first value and its limit."""
        model = Arch1Model()
        self.assertAlmostEqual(0.3, model.theoretical_batch_variance(DEFAULT_SCHEDULE, 1))
        self.assertAlmostEqual(
            0.3 / 0.97, model.theoretical_batch_variance(DEFAULT_SCHEDULE, 20), places=12
        )
        values = [model.theoretical_batch_variance(DEFAULT_SCHEDULE, t) for t in range(1, 10)]
        self.assertEqual(sorted(values), values)
        self.assertAlmostEqual(0.309278, model.stationary_variance(), places=6)

    def test_direct_sum(self) -> None:
        """Test the closed form against a direct average of the per-sample variances."""
        model = Arch1Model()
        schedule = BatchSchedule.explicit([1, 3, 10, 11])
        for t in range(1, 5):
            lower, upper = schedule.batch_bound(t - 1), schedule.batch_bound(t)
            direct = np.mean([0.3 * (1 - 0.03**k) / 0.97 for k in range(lower + 1, upper + 1)])
            with self.subTest(t=t):
                self.assertAlmostEqual(
                    direct, model.theoretical_batch_variance(schedule, t), places=14
                )

    def test_moments(self) -> None:
        """Test the stationary moments and the stability ratio."""
        model = Arch1Model()
        self.assertAlmostEqual(0.0054, model.stability_ratio())
        self.assertAlmostEqual(0.57651, model.stationary_fourth_moment(), places=4)

    def test_invalid(self) -> None:
        """Test invalid parameters."""
        for kwargs in [
            {"alpha": 0.0},
            {"alpha": 1.0},
            {"beta": 0.0},
            {"dof": 4},
            {"alpha": 0.9, "dof": 6},
        ]:
            with self.subTest(kwargs=kwargs), self.assertRaises(ValueError):
                Arch1Model(**kwargs)  # type:ignore[arg-type]

    def test_checkpoint(self) -> None:
        """Test that restoring a checkpoint replays the same path."""
        model = Arch1Model()
        model.sample_batch(RngStream(0), 50)
        state = model.checkpoint()
        first, _ = model.copy().sample_batch(RngStream(1), 20)
        model.sample_batch(RngStream(2), 20)
        model.restore(state)
        second, _ = model.sample_batch(RngStream(1), 20)
        np.testing.assert_array_equal(first, second)

    def test_checkpoint_mismatch(self) -> None:
        """Test that checkpoints of another kind are rejected."""
        with self.assertRaises(CheckpointMismatchError):
            Arch1Model().restore(IidModel().checkpoint())


class TestPolynomialIntegrand(unittest.TestCase):
    """Test polynomial integrands."""

    def test_usq_half(self) -> None:
        """Test the moments of u^2/2."""
        self.assertAlmostEqual(1.0 / 6.0, USQ_HALF.mean(), places=15)
        self.assertAlmostEqual(1.0 / 45.0, USQ_HALF.variance(), places=15)
        (theta,) = USQ_HALF.optimal_parameter()
        self.assertAlmostEqual(-0.5, theta, places=15)
        np.testing.assert_allclose([0.0, 0.125, 0.5], USQ_HALF(np.array([[0.0], [0.5], [1.0]])))

    def test_dimension(self) -> None:
        """Test that an additive integrand sums over coordinates."""
        integrand = PolynomialIntegrand(coefficients=(0.0, 0.0, 0.5), dimension=3)
        self.assertAlmostEqual(0.5, integrand.mean())
        self.assertAlmostEqual(3.0 / 45.0, integrand.variance())
        np.testing.assert_allclose([-0.5, -0.5, -0.5], integrand.optimal_parameter(), rtol=1e-12)
        self.assertEqual("poly:0.0,0.0,0.5:3", integrand.to_string())

    def test_linear(self) -> None:
        """Test that a linear integrand is cancelled exactly by its optimal parameter."""
        integrand = PolynomialIntegrand(coefficients=(1.0, 2.0))
        (theta,) = integrand.optimal_parameter()
        self.assertAlmostEqual(-2.0, theta)
        model = ControlVariateModel(integrand)
        self.assertAlmostEqual(0.0, model.conditional_variance(np.array([theta])), places=12)

    def test_invalid(self) -> None:
        """Test invalid integrands."""
        with self.assertRaises(ValueError):
            PolynomialIntegrand(coefficients=())
        with self.assertRaises(ValueError):
            PolynomialIntegrand(coefficients=(float("inf"),))
        with self.assertRaises(ValueError):
            PolynomialIntegrand(coefficients=(1.0,), dimension=0)


class TestControlVariateModel(unittest.TestCase):
    """Test adaptive control variates."""

    def test_conditional_variance(self) -> None:
        """Test the variance at zero and at the optimal parameter."""
        model = ControlVariateModel()
        self.assertAlmostEqual(1.0 / 45.0, model.conditional_variance())
        self.assertAlmostEqual(
            1.0 / 45.0 - 1.0 / 48.0, model.conditional_variance(np.array([-0.5])), places=15
        )

    def test_adaptation(self) -> None:
        """Test that the parameter is learned after a batch and frozen during one."""
        model = ControlVariateModel()
        self.assertEqual((0.0,), model.parameter())
        model.sample_batch(RngStream(0), 100_000)
        self.assertEqual((0.0,), model.parameter())
        model.on_batch_end(None)  # type:ignore[arg-type]
        (theta,) = model.parameter()
        self.assertAlmostEqual(-0.5, theta, delta=0.03)
        _, cond_var = model.sample_batch(RngStream(1), 10)
        self.assertIsNotNone(cond_var)
        self.assertAlmostEqual(model.conditional_variance(), float(cond_var[0]))
        self.assertLess(model.conditional_variance(), 0.01)

    def test_samples(self) -> None:
        """Test that samples add the centered uniforms weighted by the parameter."""
        model = ControlVariateModel()
        model.restore(ModelState("cv", ((-0.5,), (0.0,), 0)))
        x, _ = model.sample_batch(RngStream(3), 10)
        u = RngStream(3).uniform((10, 1))[:, 0]
        np.testing.assert_allclose(0.5 * u**2 - 0.5 * (u - 0.5), x, rtol=1e-14, atol=1e-15)

    def test_crude(self) -> None:
        """Test that the crude model never adapts."""
        model = ControlVariateModel(adaptive=False)
        model.sample_batch(RngStream(0), 1000)
        model.on_batch_end(None)  # type:ignore[arg-type]
        self.assertEqual((0.0,), model.parameter())

    def test_checkpoint(self) -> None:
        """Test that restoring a checkpoint restores the parameter."""
        model = ControlVariateModel()
        model.sample_batch(RngStream(0), 1000)
        model.on_batch_end(None)  # type:ignore[arg-type]
        state = model.checkpoint()
        theta = model.parameter()
        model.sample_batch(RngStream(1), 1000)
        model.on_batch_end(None)  # type:ignore[arg-type]
        self.assertNotEqual(theta, model.parameter())
        model.restore(state)
        self.assertEqual(theta, model.parameter())


class TestBranch(unittest.TestCase):
    """Test resampling a batch from a checkpoint."""

    def test_original_untouched(self) -> None:
        """Test that resampling leaves the original model alone."""
        model = Arch1Model()
        model.sample_batch(RngStream(0), 100)
        state = model.checkpoint()
        model.sample_batch(RngStream(1), 100)
        after = model.checkpoint()
        mu_star = branch_for_resample(model, state, RngStream(0).branch_stream(), 100)
        self.assertEqual(after, model.checkpoint())
        self.assertTrue(np.isfinite(mu_star))

    def test_reproducible(self) -> None:
        """Test that the resampled mean only depends on the checkpoint and the stream."""
        model = ControlVariateModel()
        state = model.checkpoint()
        first = branch_for_resample(model, state, RngStream(9, branch=True), 500)
        model.sample_batch(RngStream(1), 100)
        second = branch_for_resample(model, state, RngStream(9, branch=True), 500)
        self.assertEqual(first, second)
        x, _ = ControlVariateModel().sample_batch(RngStream(9, branch=True), 500)
        self.assertAlmostEqual(float(x.mean()), first, places=14)


class TestParseModel(unittest.TestCase):
    """Test model specifications."""

    def test_parse(self) -> None:
        """Test building models from their string forms."""
        for spec, cls in [
            ("iid", IidModel),
            ("iid:uniform", IidModel),
            ("iid:normal:1:2", IidModel),
            ("arch1", Arch1Model),
            ("arch1:0.05:0.2:8", Arch1Model),
            ("cv:usq_half", ControlVariateModel),
            ("cv:usq_half:crude", ControlVariateModel),
            ("cv:poly:0,0,0.5", ControlVariateModel),
            ("cv:poly:1,2,3:4", ControlVariateModel),
        ]:
            with self.subTest(spec=spec):
                self.assertIsInstance(parse_model(spec)(), cls)

    def test_parameters(self) -> None:
        """Test that parameters are passed through."""
        model = parse_model("arch1:0.05:0.2:8")()
        self.assertIsInstance(model, Arch1Model)
        self.assertEqual((0.05, 0.2, 8), (model.alpha, model.beta, model.dof))  # type:ignore
        crude = parse_model("cv:usq_half:crude")()
        self.assertIsInstance(crude, ControlVariateModel)
        self.assertFalse(crude.adaptive)  # type:ignore
        self.assertAlmostEqual(1.0 / 6.0, parse_model("cv:usq_half").true_mean())
        self.assertEqual(1.0, parse_model("iid:normal:1:2").true_mean())

    def test_fresh_instances(self) -> None:
        """Test that a factory builds independent models and survives pickling."""
        factory = parse_model("arch1")
        self.assertIsNot(factory(), factory())
        self.assertEqual(factory, pickle.loads(pickle.dumps(factory)))  # noqa:S301
        self.assertIs(factory, parse_model(factory))
        self.assertEqual("arch1", str(factory))
        self.assertEqual(ModelFactory(spec="arch1"), factory)

    def test_invalid(self) -> None:
        """Test invalid specifications."""
        for spec in [
            "",
            "garch",
            "iid:cauchy",
            "iid:normal:0:1:2",
            "iid:normal:x",
            "arch1:a",
            "arch1:0.03:0.3:6.5",
            "arch1:0.03:0.3:6:1",
            "arch1:2",
            "cv:nope",
            "cv:poly:1,x",
            "cv:poly:1:x",
        ]:
            with self.subTest(spec=spec), self.assertRaises(ValueError):
                parse_model(spec)
