import unittest
import math
import numpy as np
import spectralrank
from spectralrank.propagation import ActivationSpec
from spectralrank.exceptions import CenteredActivation
from spectralrank.exceptions import ZeroColumn
from spectralrank.exceptions import ShapeMismatch
from spectralrank.exceptions import PropagationError


def gaussian(seed, rows, cols):
    return np.random.default_rng(seed).standard_normal((rows, cols))


def unit_columns(seed, rows, cols):
    X = gaussian(seed, rows, cols)
    return X / np.sqrt(np.sum(X * X, axis=0))


def mean_spike_kinds():
    return [kind for kind in spectralrank.propagation.ACTIVATION_KINDS
            if abs(ActivationSpec(kind).moments()[0]) > 1e-12]


class TestActivations(unittest.TestCase):

    def test_parse(self):
        act = ActivationSpec.parse("leaky_relu:1.0:0.25")
        self.assertEqual(act.kind, "leaky_relu")
        self.assertEqual(act.beta, 0.25)
        self.assertEqual(ActivationSpec.parse("gelu"), ActivationSpec("gelu"))
        with self.assertRaises(PropagationError):
            ActivationSpec("swish")
        with self.assertRaises(PropagationError):
            ActivationSpec("leaky_relu", 0.1, 0.5)

    def test_moment_ratio_table(self):
        expected = {"relu": math.pi, "abs": math.pi / 2.0,
                    "squared_relu": 6.0, "quadratic": 3.0}
        for kind, ratio in expected.items():
            self.assertAlmostEqual(spectralrank.propagation.msi_ratio(kind),
                                   ratio, places=10)
            stats = spectralrank.propagation.gaussian_activation_stats(kind)
            self.assertLess(abs(stats.m2 / stats.m1 ** 2 - ratio),
                            0.05 * ratio, kind)

    def test_leaky_relu_ratio(self):
        act = ActivationSpec("leaky_relu", 1.0, 0.2)
        expected = math.pi * (1.0 + 0.04) / 0.64
        self.assertAlmostEqual(spectralrank.propagation.msi_ratio(act),
                               expected)

    def test_hermite_table(self):
        expected = {"relu": 0.5, "linear": 1.0, "silu": 0.5, "gelu": 0.5}
        for kind, value in expected.items():
            stats = spectralrank.propagation.gaussian_activation_stats(kind)
            self.assertLess(abs(stats.h1 - value), 0.02, kind)

    def test_quadrature_matches_closed_forms(self):
        for kind in ("relu", "squared_relu", "hardtanh"):
            act = ActivationSpec(kind)
            for s in (0.5, 1.0, 2.0):
                quadrature = spectralrank.propagation.gaussian_expectation(
                    lambda g: act(s * g) * g) / s
                self.assertAlmostEqual(act.h1_over_s(s), quadrature,
                                       places=2)

    def test_stein_identity(self):
        act = ActivationSpec("gelu")
        for s in (0.5, 1.0, 3.0):
            direct = spectralrank.propagation.gaussian_expectation(
                lambda g: act(s * g) * g)
            stein = s * spectralrank.propagation.gaussian_expectation(
                lambda g: act.derivative(s * g))
            self.assertAlmostEqual(direct, stein, places=8)

    def test_monte_carlo_within_standard_error(self):
        act = ActivationSpec("tanh")
        stats = spectralrank.propagation.gaussian_activation_stats(act, s=1.5)
        self.assertLess(abs(stats.h1 - 1.5 * act.h1_over_s(1.5)),
                        5.0 * stats.h1_se)
        self.assertLess(abs(stats.m2 - spectralrank.propagation
                            .gaussian_expectation(lambda g: act(1.5 * g)
                                                  ** 2)),
                        5.0 * stats.m2_se)

    def test_centered(self):
        for kind in ("linear", "tanh", "softsign"):
            with self.assertRaises(CenteredActivation):
                spectralrank.propagation.msi_ratio(kind)

    def test_gelu_bound(self):
        self.assertAlmostEqual(spectralrank.propagation.gelu_msi_bound(1.0),
                               4.0 * math.pi)
        self.assertLessEqual(spectralrank.propagation.msi_ratio("gelu"),
                             spectralrank.propagation.gelu_msi_bound(1.0))
        with self.assertRaises(ValueError):
            spectralrank.propagation.gelu_msi_bound(0.0)

    def test_hermite_p(self):
        self.assertAlmostEqual(spectralrank.propagation.hermite_p("relu"),
                               0.25)
        self.assertAlmostEqual(spectralrank.propagation.hermite_p("abs"), 0.0)

    def test_stats_arguments(self):
        with self.assertRaises(ValueError):
            spectralrank.propagation.gaussian_activation_stats("relu",
                                                               n_mc=100)
        with self.assertRaises(ValueError):
            spectralrank.propagation.gaussian_activation_stats("relu", s=0.0)


class TestTransforms(unittest.TestCase):

    def test_rms_normalize(self):
        X = gaussian(0, 7, 20)
        A = spectralrank.propagation.rms_normalize(X)
        np.testing.assert_allclose(np.sum(A * A, axis=0), 7.0, rtol=1e-12)
        X[:, 3] = 0.0
        with self.assertRaises(ZeroColumn):
            spectralrank.propagation.rms_normalize(X)

    def test_linear_stage_preserves_energy(self):
        for seed in range(5):
            X = gaussian(seed, 40, 60)
            generator = spectralrank.rng.stream(seed, "test.linear")
            Y = spectralrank.propagation.linear_stage(X, 1000, generator)
            ratio = (np.sum(Y * Y) / 1000) / (np.sum(X * X) / 40)
            self.assertGreater(ratio, 0.8)
            self.assertLess(ratio, 1.2)

    def test_mean_spike_bound(self):
        act = ActivationSpec("relu")
        X = gaussian(1, 100, 500)
        generator = spectralrank.rng.stream(1, "test.msi")
        Y = spectralrank.propagation.pointwise_stage(
            spectralrank.propagation.rms_normalize(X), act, 2000, generator)
        self.assertLessEqual(spectralrank.linalg.stable_rank(Y),
                             1.5 * spectralrank.propagation.msi_ratio(act))

    def test_mean_spike_bound_every_activation(self):
        X = spectralrank.propagation.rms_normalize(gaussian(2, 100, 500))
        for kind in mean_spike_kinds():
            generator = spectralrank.rng.stream(2, "test.msi." + kind)
            Y = spectralrank.propagation.pointwise_stage(
                X, ActivationSpec(kind), 2000, generator)
            self.assertLessEqual(
                spectralrank.linalg.stable_rank(Y),
                1.5 * spectralrank.propagation.msi_ratio(kind), kind)

    def test_tanh_stage(self):
        act = ActivationSpec("tanh")
        X = gaussian(2, 100, 300)
        generator = spectralrank.rng.stream(2, "test.tanh")
        Y = spectralrank.propagation.pointwise_stage(X, act, 1000, generator)
        p = spectralrank.propagation.hermite_p(act, 1.0)
        self.assertLessEqual(spectralrank.linalg.stable_rank(Y),
                             1.5 / p * spectralrank.linalg.stable_rank(X))

    def test_residual_column_norms(self):
        d = 1000
        X = gaussian(3, d, 40)
        act = ActivationSpec("relu")
        generator = spectralrank.rng.stream(3, "test.residual")
        H = spectralrank.propagation.pointwise_stage(X, act, d, generator)
        W = spectralrank.propagation.gaussian_weights(d, d, 1.0 / d,
                                                      generator)
        out = X + W @ H
        lhs = np.sum(out * out, axis=0) / d
        reference = np.sum(X * X, axis=0) / d + np.sum(H * H, axis=0) / d
        self.assertTrue(np.all(lhs >= 0.8 * reference))
        self.assertTrue(np.all(lhs <= 1.2 * reference))

    def test_residual_stage_shape(self):
        X = gaussian(4, 12, 9)
        generator = spectralrank.rng.stream(4, "test.residual_shape")
        out = spectralrank.propagation.residual_stage(X, 30, "relu",
                                                      generator)
        self.assertEqual(out.shape, (12, 9))

    def test_gated_block(self):
        Z, X = gaussian(5, 6, 10), gaussian(6, 8, 10)
        out = spectralrank.propagation.gated_block(Z, X, "silu", 16, seed=1)
        self.assertEqual(out.shape, (16, 10))
        again = spectralrank.propagation.gated_block(Z, X, "silu", 16, seed=1)
        np.testing.assert_array_equal(out, again)
        with self.assertRaises(ShapeMismatch):
            spectralrank.propagation.gated_block(Z, X[:, :5], "silu", 16)

    def test_gating_rank_grows_with_width(self):
        X = unit_columns(7, 256, 1024)
        ranks = {k: spectralrank.linalg.stable_rank(
            spectralrank.propagation.gated_block(X, X, "silu", k, seed=7))
            for k in (128, 256, 512)}
        self.assertGreater(ranks[256], ranks[128])
        self.assertGreater(ranks[512], ranks[256])
        self.assertGreaterEqual(ranks[512], 1.4 * ranks[128])
        # Far above the mean-spike regime of a plain SiLU stage.
        self.assertGreaterEqual(ranks[256], 40.0)

    def test_relu_gating_bound(self):
        X = unit_columns(8, 256, 1024)
        Q = spectralrank.propagation.gated_block(X, X, "relu", 256, seed=8)
        self.assertLessEqual(spectralrank.linalg.stable_rank(Q),
                             20.0 * spectralrank.linalg.stable_rank(X))

    def test_token_embedding_bound(self):
        for seed in range(3):
            H = spectralrank.propagation.token_indicator(
                [64, 64, 64, 16, 16, 16, 16], seed)
            generator = spectralrank.rng.stream(seed, "test.embed")
            X = spectralrank.propagation.token_embed_stage(H, 512, generator)
            self.assertLessEqual(spectralrank.linalg.stable_rank(X),
                                 1.1 * 4.0)

    def test_token_indicator(self):
        H = spectralrank.propagation.token_indicator([3, 0, 2], seed=7)
        self.assertEqual(H.shape, (3, 5))
        np.testing.assert_array_equal(H.sum(axis=1), [3, 0, 2])
        np.testing.assert_array_equal(H.sum(axis=0), np.ones(5))


class TestAttention(unittest.TestCase):

    def test_mixing_is_column_stochastic(self):
        for causal in (False, True):
            generator = spectralrank.rng.stream(0, "test.mixing")
            P = spectralrank.propagation.attention_mixing(12, generator,
                                                          causal)
            np.testing.assert_allclose(P.sum(axis=0), 1.0, atol=1e-12)
            self.assertTrue(np.all(P >= 0.0))
        # Keys after the query get no weight.
        self.assertTrue(np.all(np.tril(P, -1) == 0.0))
        self.assertEqual(P[0, 0], 1.0)

    def test_sublayer_mixed_columns(self):
        X = gaussian(1, 16, 24)
        generator = spectralrank.rng.stream(1, "test.attention")
        out, mixed = spectralrank.propagation.attention_sublayer(
            X, 4, generator)
        self.assertEqual(out.shape, X.shape)
        self.assertEqual(len(mixed), 4)
        for Y in mixed:
            self.assertTrue(np.all(np.sum(Y * Y, axis=0) <= 16.0 + 1e-9))

    def test_heads_must_divide(self):
        generator = spectralrank.rng.stream(0, "test.heads")
        with self.assertRaises(ShapeMismatch):
            spectralrank.propagation.attention_sublayer(gaussian(0, 10, 5), 3,
                                                        generator)

    def test_moe(self):
        X = gaussian(2, 8, 30)
        for routing in ("onehot", "soft"):
            generator = spectralrank.rng.stream(2, "test.moe")
            out = spectralrank.propagation.moe_sublayer(
                X, ActivationSpec("gelu"), 16, 3, generator, routing)
            self.assertEqual(out.shape, X.shape)
        with self.assertRaises(PropagationError):
            spectralrank.propagation.moe_sublayer(
                X, ActivationSpec("gelu"), 16, 3, generator, "topk")


class TestChain(unittest.TestCase):

    def test_parse(self):
        stage = spectralrank.propagation.ChainStage.parse(
            "pointwise:64:squared_relu")
        self.assertEqual(stage.width, 64)
        self.assertEqual(stage.name, "pointwise(squared_relu)")
        stage = spectralrank.propagation.ChainStage.parse("attention::2")
        self.assertEqual(stage.heads, 2)
        self.assertEqual(stage.name, "attention")
        with self.assertRaises(PropagationError):
            spectralrank.propagation.ChainStage.parse("conv:3")

    def test_propagate(self):
        stages = ["rmsnorm", "attention", "mlp:64:gelu", "moe:32:relu:2",
                  "residual:32:relu", "gating:24:silu", "linear:16"]
        X0 = gaussian(0, 32, 40)
        records = spectralrank.propagation.propagate_chain(stages, X0, 5)
        self.assertEqual(len(records), len(stages))
        self.assertEqual(records[-1].summary.singular_values.size, 16)
        again = spectralrank.propagation.propagate_chain(stages, X0, 5)
        for first, second in zip(records, again):
            self.assertEqual(first.summary.stable_rank,
                             second.summary.stable_rank)
        for record in records[:2]:
            self.assertGreaterEqual(record.column_envelope[1],
                                    record.column_envelope[0])

    def test_token_chain(self):
        H = spectralrank.propagation.token_indicator([10] * 8, seed=1)
        records = spectralrank.propagation.propagate_chain(
            ["token_embed:64", "rmsnorm"], H, 1)
        self.assertLessEqual(records[0].summary.stable_rank, 8.0 + 1e-9)

    def test_quadratic_depth(self):
        ranks = spectralrank.propagation.quadratic_depth_experiment(
            3, 64, seed=0, n=128)
        self.assertEqual(len(ranks), 4)
        self.assertLess(ranks[1], ranks[0])
        with self.assertRaises(ShapeMismatch):
            spectralrank.propagation.quadratic_depth_experiment(3, [64, 64])


if __name__ == '__main__':
    unittest.main()
