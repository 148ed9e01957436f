from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riseform.nn import (
    ShapeMismatch,
    ThreeLayerNN,
    TuningGains,
    estimation_error_decomposition,
    forward_arrays,
    mu_bound,
    neuron_counts,
    sigmoid,
    sigmoid_prime,
    tuning_derivatives,
)


def scalar_sigmoid(s: float) -> float:
    return 1.0 / (1.0 + math.exp(-s))


def elementwise_forward(nn: ThreeLayerNN, x: np.ndarray) -> np.ndarray:
    """Loop-by-loop recomputation with no matrix products."""
    h2 = [1.0]
    for c in range(nn.m1):
        h2.append(scalar_sigmoid(sum(x[r] * nn.V_hat[r, c] for r in range(nn.n1 + 1))))
    h1 = [1.0]
    for c in range(nn.m2):
        h1.append(scalar_sigmoid(sum(h2[r] * nn.Z_hat[r, c] for r in range(nn.m1 + 1))))
    return np.array([sum(h1[r] * nn.W_hat[r, k] for r in range(nn.m2 + 1)) for k in range(nn.n2)])


def random_net(rng, n1, m1, m2, n2, scale=1.0) -> ThreeLayerNN:
    return ThreeLayerNN(
        scale * rng.normal(size=(n1 + 1, m1)),
        scale * rng.normal(size=(m1 + 1, m2)),
        scale * rng.normal(size=(m2 + 1, n2)),
    )


class TestSizing:
    @pytest.mark.parametrize("n,expected", [(1, (7, 16)), (2, (10, 22)), (3, (13, 28))])
    def test_neuron_counts(self, n, expected):
        assert neuron_counts(n) == expected

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            neuron_counts(0)


class TestSigmoid:
    @given(st.floats(-700, 700))
    def test_range(self, s):
        v = float(sigmoid(np.float64(s)))
        assert 0.0 <= v <= 1.0
        if abs(s) < 30:
            assert 0.0 < v < 1.0

    @given(st.floats(-20, 20))
    def test_derivative_matches_central_difference(self, s):
        h = 1e-5
        fd = (sigmoid(s + h) - sigmoid(s - h)) / (2 * h)
        assert abs(sigmoid_prime(s) - fd) <= 1e-8
        assert sigmoid_prime(s) == pytest.approx(sigmoid(s) * (1 - sigmoid(s)), rel=1e-15, abs=0)


class TestForward:
    def test_zero_output_weights(self):
        rng = np.random.default_rng(0)
        nn = random_net(rng, 3, 4, 5, 2)
        nn.W_hat[:] = 0
        y, _ = nn.forward(rng.normal(size=3))
        np.testing.assert_array_equal(y, 0.0)

    def test_all_ones_output(self):
        nn = ThreeLayerNN(np.zeros((4, 5)), np.zeros((6, 7)), np.ones((8, 1)))
        y, _ = nn.forward(np.array([0.3, -1.0, 2.0]))
        assert y[0] == pytest.approx(0.5 * 7 + 1)

    def test_small_network_against_elementwise_oracle(self):
        rng = np.random.default_rng(7)
        nn = random_net(rng, 2, 2, 2, 1)
        x = nn.augment(rng.normal(size=2))
        y, b = nn.forward_augmented(x)
        np.testing.assert_allclose(y, elementwise_forward(nn, x), rtol=1e-13)
        assert b.sigma2_hat[0] == 1.0 and b.sigma1_hat[0] == 1.0
        assert np.all((b.sigma2_hat[1:] > 0) & (b.sigma2_hat[1:] < 1))
        np.testing.assert_allclose(b.sigma1_prime, b.sigma1_hat[1:] * (1 - b.sigma1_hat[1:]))

    def test_full_sized_against_oracle(self):
        rng = np.random.default_rng(8)
        nn = ThreeLayerNN.initialize(10, 10, 22, 2, rng)
        nn.W_hat[:] = rng.normal(size=nn.W_hat.shape)
        x = nn.augment(rng.normal(size=10))
        np.testing.assert_allclose(nn.forward_augmented(x)[0], elementwise_forward(nn, x), rtol=1e-12)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(9)
        nets = [random_net(rng, 4, 3, 5, 2) for _ in range(3)]
        xs = np.array([n.augment(rng.normal(size=4)) for n in nets])
        y, _ = forward_arrays(
            np.stack([n.V_hat for n in nets]), np.stack([n.Z_hat for n in nets]), np.stack([n.W_hat for n in nets]), xs
        )
        for k, n in enumerate(nets):
            np.testing.assert_allclose(y[k], n.forward_augmented(xs[k])[0], rtol=1e-14)

    def test_shape_errors(self):
        nn = ThreeLayerNN.zeros(3, 4, 5, 2)
        with pytest.raises(ShapeMismatch):
            nn.forward(np.zeros(4))
        with pytest.raises(ShapeMismatch):
            ThreeLayerNN(np.zeros((4, 4)), np.zeros((4, 5)), np.zeros((6, 2)))
        with pytest.raises(ShapeMismatch):
            ThreeLayerNN(np.zeros((4, 4)), np.zeros((5, 5)), np.zeros((5, 2)))

    def test_nonfinite_weights_rejected(self):
        with pytest.raises(ValueError):
            ThreeLayerNN(np.full((2, 2), np.nan), np.zeros((3, 2)), np.zeros((3, 1)))

    def test_first_order_in_output_weights(self):
        rng = np.random.default_rng(10)
        nn = random_net(rng, 10, 10, 22, 2)
        x = nn.augment(rng.normal(size=10))
        delta = rng.normal(size=nn.W_hat.shape)
        y0, b = nn.forward_augmented(x)
        # exactly linear in W_hat
        y1, _ = ThreeLayerNN(nn.V_hat, nn.Z_hat, nn.W_hat + 1e-3 * delta).forward_augmented(x)
        np.testing.assert_allclose(y1 - y0, 1e-3 * delta.T @ b.sigma1_hat, atol=1e-14)


class TestInit:
    def test_seeded_and_bounded(self):
        a = ThreeLayerNN.initialize(10, 10, 22, 2, np.random.default_rng(3))
        b = ThreeLayerNN.initialize(10, 10, 22, 2, np.random.default_rng(3))
        np.testing.assert_array_equal(a.V_hat, b.V_hat)
        assert np.abs(a.V_hat).max() <= 1 / math.sqrt(11)
        assert np.abs(a.Z_hat).max() <= 1 / math.sqrt(11)
        np.testing.assert_array_equal(a.W_hat, 0.0)

    def test_json_roundtrip(self):
        nn = random_net(np.random.default_rng(4), 3, 4, 5, 2)
        doc = json.loads(nn.to_json())
        assert doc["dims"] == {"n1": 3, "m1": 4, "m2": 5, "n2": 2}
        back = ThreeLayerNN.from_json(nn.to_json())
        np.testing.assert_array_equal(back.Z_hat, nn.Z_hat)

    def test_norms(self):
        nn = random_net(np.random.default_rng(5), 3, 4, 5, 2)
        assert nn.norms() == pytest.approx(
            (math.sqrt((nn.V_hat**2).sum()), math.sqrt((nn.Z_hat**2).sum()), math.sqrt((nn.W_hat**2).sum()))
        )


def explicit_tuning(nn, x, zeta, k2, g):
    """Direct transcription with explicit diagonal Jacobian matrices."""
    _, b = nn.forward_augmented(x)
    s1p = np.vstack([np.zeros(nn.m2), np.diag(b.sigma1_prime)])  # (m2+1) x m2
    s2p = np.vstack([np.zeros(nn.m1), np.diag(b.sigma2_prime)])  # (m1+1) x m1
    V, Z, W = nn.V_hat, nn.Z_hat, nn.W_hat
    z = zeta[:, None]
    l1 = np.abs(zeta).sum()
    dW = g.alpha * (k2 * (b.sigma1_hat - s1p @ Z.T @ b.sigma2_hat - s1p @ Z.T @ s2p @ V.T @ x)[:, None] @ z.T - l1 * W)
    dZ = g.beta * (k2 * (b.sigma2_hat - s2p @ V.T @ x)[:, None] @ z.T @ W.T @ s1p - l1 * Z)
    dV = g.gamma * (k2 * x[:, None] @ z.T @ W.T @ s1p @ Z.T @ s2p - l1 * V)
    return dW, dZ, dV


class TestTuning:
    def test_zero_zeta_zero_update_from_zero(self):
        nn = ThreeLayerNN.zeros(10, 10, 22, 2)
        x = nn.augment(np.zeros(10))
        _, b = nn.forward_augmented(x)
        for d in tuning_derivatives(nn, b, x, np.zeros(2), 37.5, TuningGains(0.05, 0.05, 0.05)):
            np.testing.assert_array_equal(d, 0.0)

    def test_zero_zeta_any_weights(self):
        rng = np.random.default_rng(1)
        nn = random_net(rng, 4, 3, 5, 2)
        x = nn.augment(rng.normal(size=4))
        _, b = nn.forward_augmented(x)
        for d in tuning_derivatives(nn, b, x, np.zeros(2), 2.0, TuningGains(1, 1, 1)):
            np.testing.assert_array_equal(d, 0.0)

    def test_zero_weights_nonzero_zeta(self):
        nn = ThreeLayerNN.zeros(10, 10, 22, 2)
        x = nn.augment(np.linspace(-1, 1, 10))
        _, b = nn.forward_augmented(x)
        zeta = np.array([0.3, -0.7])
        dW, dZ, dV = tuning_derivatives(nn, b, x, zeta, 37.5, TuningGains(0.05, 0.1, 0.2))
        np.testing.assert_array_equal(dZ, 0.0)
        np.testing.assert_array_equal(dV, 0.0)
        sig1 = np.r_[1.0, np.full(22, 0.5)]
        # the linearisation terms vanish because Z_hat = 0 and V_hat = 0
        np.testing.assert_allclose(dW, 0.05 * 37.5 * np.outer(sig1, zeta))

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_explicit_matrices(self, seed):
        rng = np.random.default_rng(seed)
        nn = random_net(rng, 10, 10, 22, 2)
        x = nn.augment(rng.normal(size=10))
        _, b = nn.forward_augmented(x)
        zeta = rng.normal(size=2)
        g = TuningGains(0.05, 0.07, 0.11)
        got = tuning_derivatives(nn, b, x, zeta, 37.5, g)
        for a, e in zip(got, explicit_tuning(nn, x, zeta, 37.5, g)):
            np.testing.assert_allclose(a, e, rtol=1e-12, atol=1e-12)

    def test_bias_rows_have_no_sigma_prime_path(self):
        # with Z_hat = 0 the sigma1' terms vanish, leaving dZ's bias row from sigma2 only
        rng = np.random.default_rng(2)
        nn = random_net(rng, 3, 4, 5, 2)
        x = nn.augment(rng.normal(size=3))
        _, b = nn.forward_augmented(x)
        dW, dZ, dV = tuning_derivatives(nn, b, x, np.array([1.0, -1.0]), 1.0, TuningGains(1, 1, 1))
        # bias row of dZ: (sigma2_hat - sigma2' V^T X)[0] = 1
        g1 = (nn.W_hat @ np.array([1.0, -1.0]))[1:] * b.sigma1_prime
        np.testing.assert_allclose(dZ[0], g1 - 2.0 * nn.Z_hat[0])

    def test_tuning_gains_validation(self):
        with pytest.raises(ValueError):
            TuningGains(0.0, 1.0, 1.0)

    def test_shape_checks(self):
        nn = ThreeLayerNN.zeros(3, 4, 5, 2)
        x = nn.augment(np.zeros(3))
        _, b = nn.forward_augmented(x)
        with pytest.raises(ShapeMismatch):
            tuning_derivatives(nn, b, x, np.zeros(3), 1.0, TuningGains(1, 1, 1))


class TestDecomposition:
    def test_identical_networks(self):
        rng = np.random.default_rng(11)
        nn = random_net(rng, 4, 3, 5, 2)
        x = nn.augment(rng.normal(size=4))
        eps = rng.normal(size=2)
        lin, eb = estimation_error_decomposition(nn, nn, x, eps)
        np.testing.assert_allclose(lin, 0.0, atol=1e-15)
        np.testing.assert_allclose(eb, eps, atol=1e-15)

    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 3.0))
    @settings(max_examples=100)
    def test_exactness(self, seed, scale):
        rng = np.random.default_rng(seed)
        ideal = random_net(rng, 10, 10, 22, 2, scale)
        hat = random_net(rng, 10, 10, 22, 2, scale)
        x = hat.augment(rng.normal(size=10))
        eps = rng.normal(size=2)
        lin, eb = estimation_error_decomposition(ideal, hat, x, eps)
        y = ideal.forward_augmented(x)[0] + eps
        yh = hat.forward_augmented(x)[0]
        assert np.max(np.abs(lin + eb - (y - yh))) <= 1e-10

    def test_output_perturbation_residual_is_linear(self):
        # only W differs: the remainders vanish, but eps_bar keeps the
        # W_tilde^T sigma1' (Z^T sigma2 + Z^T sigma2' V^T X) terms, which are first order
        rng = np.random.default_rng(12)
        ideal = random_net(rng, 4, 3, 5, 2)
        delta = rng.normal(size=ideal.W_hat.shape)
        x = ideal.augment(rng.normal(size=4))
        eps = rng.normal(size=2)
        _, b = ideal.forward_augmented(x)
        inner = ideal.Z_hat.T @ b.sigma2_hat + ideal.Z_hat.T @ np.r_[0.0, b.sigma2_prime * (ideal.V_hat.T @ x)]
        carried = np.r_[0.0, b.sigma1_prime * inner]
        for h in (1e-2, 1e-3):
            hat = ThreeLayerNN(ideal.V_hat, ideal.Z_hat, ideal.W_hat + h * delta)
            _, eb = estimation_error_decomposition(ideal, hat, x, eps)
            np.testing.assert_allclose(eb - eps, -h * delta.T @ carried, rtol=1e-9, atol=1e-15)

    def test_second_order_in_hidden_perturbation(self):
        rng = np.random.default_rng(13)
        ideal = random_net(rng, 4, 3, 5, 2)
        dv = rng.normal(size=ideal.V_hat.shape)
        x = ideal.augment(rng.normal(size=4))
        errs = []
        for h in (1e-2, 1e-3):
            hat = ThreeLayerNN(ideal.V_hat + h * dv, ideal.Z_hat, ideal.W_hat)
            _, eb = estimation_error_decomposition(ideal, hat, x, np.zeros(2))
            errs.append(np.linalg.norm(eb))
        order = math.log10(errs[0] / errs[1])
        assert order >= 1.9

    def test_dimension_mismatch(self):
        a = ThreeLayerNN.zeros(3, 4, 5, 2)
        b = ThreeLayerNN.zeros(3, 4, 6, 2)
        with pytest.raises(ShapeMismatch):
            estimation_error_decomposition(a, b, a.augment(np.zeros(3)), np.zeros(2))


class TestMu:
    def test_zero_weights(self):
        nn = ThreeLayerNN.zeros(3, 4, 5, 2)
        assert mu_bound(nn, nn.augment(np.zeros(3))) == 1.0

    def test_unit_norms(self):
        def unit(shape):
            m = np.zeros(shape)
            m[0, 0] = 1.0
            return m

        nn = ThreeLayerNN(unit((4, 4)), unit((5, 5)), unit((6, 2)))
        x = np.r_[1.0, 0.0, 0.0, 0.0]
        assert mu_bound(nn, x) == pytest.approx(8.0)

    def test_random_against_independent_norms(self):
        rng = np.random.default_rng(14)
        nn = random_net(rng, 4, 3, 5, 2)
        x = nn.augment(rng.normal(size=4))
        v, z, w = (math.sqrt(float((m**2).sum())) for m in (nn.V_hat, nn.Z_hat, nn.W_hat))
        nx = math.sqrt(float((x**2).sum()))
        expected = w + w * nx + w * v * nx + w * z * nx + z * v * nx + w * z * v * nx + z + 1
        assert mu_bound(nn, x) == pytest.approx(expected, rel=1e-14)

    def test_ratio_bounded_over_corpus(self):
        rng = np.random.default_rng(15)
        ratios = []
        for _ in range(300):
            ideal = random_net(rng, 4, 3, 5, 2)
            hat = random_net(rng, 4, 3, 5, 2)
            for m in (ideal, hat):
                for name in ("V_hat", "Z_hat", "W_hat"):
                    a = getattr(m, name)
                    a *= rng.uniform(0, 5) / np.linalg.norm(a)
            xb = rng.normal(size=4)
            xb *= rng.uniform(0, 4.8) / np.linalg.norm(xb)
            x = hat.augment(xb)
            _, eb = estimation_error_decomposition(ideal, hat, x, np.zeros(2))
            ratios.append(np.linalg.norm(eb) / mu_bound(hat, x))
        ratios = np.array(ratios)
        assert np.all(np.isfinite(ratios))
        gamma_star = ratios.max()
        assert gamma_star < 1e3
