import itertools
import math

import numpy as np
import pytest

from bvihead.dist import DiagonalGaussian
from bvihead.errors import ConfigError, ContractError, ShapeError
from bvihead.layers import (
    DETERMINISTIC_INFERENCE,
    FLIPOUT,
    MC_INFERENCE,
    REPARAM,
    TRAIN,
    DenseDeterministic,
    DenseVariational,
    DropoutSpec,
    NoiseDraw,
    dense_forward,
    draw_layer_noise,
    dropout_forward,
    variational_forward_flipout,
    variational_forward_reparam,
    zero_layer_noise,
)
from bvihead.tensor import Tensor

from helpers import assert_gradients_match


def make_variational(d_in, d_out, estimator, seed=0, rho=-1.0):
    rng = np.random.default_rng(seed)
    return DenseVariational(
        weight_post=DiagonalGaussian(
            Tensor(rng.normal(size=(d_in, d_out))),
            Tensor(np.full((d_in, d_out), rho)),
        ),
        bias_post=DiagonalGaussian(
            Tensor(rng.normal(size=d_out)), Tensor(np.full(d_out, rho))
        ),
        estimator=estimator,
    )


def mean_weight_output(layer, x):
    return x @ layer.weight_post.mu.data + layer.bias_post.mu.data


# ---- deterministic dense ---------------------------------------------------


def test_dense_identity():
    layer = DenseDeterministic(Tensor(np.eye(3)), Tensor(np.zeros(3)))
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(dense_forward(layer, Tensor(x)).data, x)


def test_dense_hand_case():
    layer = DenseDeterministic(Tensor([[1.0], [1.0]]), Tensor([1.0]))
    out = dense_forward(layer, Tensor([[1.0, 1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0]])


def test_dense_gradient():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(3, 2))
    b = rng.normal(size=2)

    def loss(ts):
        layer = DenseDeterministic(ts[0], ts[1])
        return dense_forward(layer, Tensor(x)).sum()

    assert_gradients_match(loss, [w, b], rel=1e-6)


def test_dense_shape_mismatch():
    layer = DenseDeterministic(Tensor(np.zeros((3, 2))), Tensor(np.zeros(2)))
    with pytest.raises(ShapeError):
        dense_forward(layer, Tensor(np.zeros((2, 4))))


# ---- reparam estimator -----------------------------------------------------


def test_reparam_zero_noise_collapses_to_means():
    layer = make_variational(3, 2, REPARAM, seed=1)
    x = np.random.default_rng(2).normal(size=(4, 3))
    out, _ = variational_forward_reparam(layer, Tensor(x), zero_layer_noise(layer, 4))
    np.testing.assert_allclose(out.data, mean_weight_output(layer, x), rtol=1e-12)


def test_reparam_tiny_std_limit():
    layer = make_variational(3, 2, REPARAM, seed=3, rho=-30.0)
    x = np.random.default_rng(4).normal(size=(2, 3))
    rng = np.random.default_rng(5)
    outs = []
    for _ in range(20):
        noise = draw_layer_noise(layer, 2, rng)
        out, _ = variational_forward_reparam(layer, Tensor(x), noise)
        outs.append(out.data)
    spread = np.stack(outs).std(axis=0)
    assert spread.max() < 1e-10


def test_reparam_mean_over_draws_is_unbiased():
    layer = make_variational(3, 2, REPARAM, seed=6)
    x = np.random.default_rng(7).normal(size=(4, 3))
    rng = np.random.default_rng(8)
    n = 20000
    acc = np.zeros((n, 4, 2))
    for t in range(n):
        noise = draw_layer_noise(layer, 4, rng)
        out, _ = variational_forward_reparam(layer, Tensor(x), noise)
        acc[t] = out.data
    se = acc.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(acc.mean(axis=0) - mean_weight_output(layer, x)) < 4 * se)


def test_reparam_estimator_mismatch():
    layer = make_variational(3, 2, FLIPOUT, seed=9)
    with pytest.raises(ContractError):
        variational_forward_reparam(
            layer, Tensor(np.zeros((1, 3))), zero_layer_noise(layer, 1)
        )


def test_reparam_gradient_through_posterior():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(3, 2))
    mu = rng.normal(size=(2, 2))
    rho = rng.uniform(-1.5, 0.5, size=(2, 2))
    bmu = rng.normal(size=2)
    brho = rng.uniform(-1.5, 0.5, size=2)
    noise = NoiseDraw(rng.standard_normal((2, 2)), rng.standard_normal(2))

    def loss(ts):
        layer = DenseVariational(
            DiagonalGaussian(ts[0], ts[1]),
            DiagonalGaussian(ts[2], ts[3]),
            estimator=REPARAM,
        )
        out, kl = variational_forward_reparam(layer, Tensor(x), noise)
        return out.sum() + kl * 0.1

    assert_gradients_match(loss, [mu, rho, bmu, brho], rel=1e-6)


# ---- flipout estimator -----------------------------------------------------


def test_flipout_zero_perturbation_ignores_signs():
    layer = make_variational(3, 2, FLIPOUT, seed=11)
    x = np.random.default_rng(12).normal(size=(4, 3))
    rng = np.random.default_rng(13)
    signs_in = rng.integers(0, 2, size=(4, 3)) * 2.0 - 1.0
    signs_out = rng.integers(0, 2, size=(4, 2)) * 2.0 - 1.0
    noise = NoiseDraw(np.zeros((3, 2)), np.zeros(2), signs_in, signs_out)
    out, _ = variational_forward_flipout(layer, Tensor(x), noise)
    np.testing.assert_allclose(out.data, mean_weight_output(layer, x), rtol=1e-12)


def test_flipout_sign_enumeration_is_exactly_unbiased():
    # Averaging over all sign assignments must recover the mean forward.
    layer = make_variational(2, 1, FLIPOUT, seed=14)
    x = np.array([[0.7, -1.3]])
    eps_w = np.random.default_rng(15).standard_normal((2, 1))
    outs = []
    for si in itertools.product([-1.0, 1.0], repeat=2):
        for so in [-1.0, 1.0]:
            noise = NoiseDraw(
                eps_w, np.zeros(1), np.array([si]), np.array([[so]])
            )
            out, _ = variational_forward_flipout(layer, Tensor(x), noise)
            outs.append(out.data)
    np.testing.assert_allclose(
        np.mean(outs, axis=0), mean_weight_output(layer, x), rtol=1e-12
    )


def test_flipout_single_example_matches_reparam_moments():
    flip = make_variational(3, 2, FLIPOUT, seed=16, rho=-0.5)
    rep = DenseVariational(
        flip.weight_post, flip.bias_post, estimator=REPARAM
    )
    x = np.random.default_rng(17).normal(size=(1, 3))
    rng = np.random.default_rng(18)
    n = 30000
    flip_draws = np.empty((n, 2))
    rep_draws = np.empty((n, 2))
    for t in range(n):
        fn = draw_layer_noise(flip, 1, rng)
        out_f, _ = variational_forward_flipout(flip, Tensor(x), fn)
        flip_draws[t] = out_f.data[0]
        rn = draw_layer_noise(rep, 1, rng)
        out_r, _ = variational_forward_reparam(rep, Tensor(x), rn)
        rep_draws[t] = out_r.data[0]
    mean_se = np.sqrt(
        flip_draws.var(axis=0, ddof=1) / n + rep_draws.var(axis=0, ddof=1) / n
    )
    assert np.all(
        np.abs(flip_draws.mean(axis=0) - rep_draws.mean(axis=0)) < 4 * mean_se
    )
    # std of a Gaussian-ish sample: se(sigma) ~ sigma / sqrt(2n)
    sf = flip_draws.std(axis=0, ddof=1)
    sr = rep_draws.std(axis=0, ddof=1)
    std_se = np.sqrt(sf**2 / (2 * n) + sr**2 / (2 * n))
    assert np.all(np.abs(sf - sr) < 4 * std_se)


def test_flipout_per_example_mean_is_unbiased():
    layer = make_variational(3, 2, FLIPOUT, seed=19)
    x = np.random.default_rng(20).normal(size=(4, 3))
    rng = np.random.default_rng(21)
    n = 20000
    acc = np.empty((n, 4, 2))
    for t in range(n):
        noise = draw_layer_noise(layer, 4, rng)
        out, _ = variational_forward_flipout(layer, Tensor(x), noise)
        acc[t] = out.data
    se = acc.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(acc.mean(axis=0) - mean_weight_output(layer, x)) < 4 * se)


def test_flipout_kl_matches_reparam_kl_and_ignores_noise():
    layer = make_variational(4, 3, FLIPOUT, seed=22)
    x = Tensor(np.random.default_rng(23).normal(size=(2, 4)))
    rng = np.random.default_rng(24)
    _, kl_one = variational_forward_flipout(layer, x, draw_layer_noise(layer, 2, rng))
    _, kl_two = variational_forward_flipout(layer, x, draw_layer_noise(layer, 2, rng))
    assert float(kl_one.data) == float(kl_two.data)


def test_flipout_decorrelates_identical_rows():
    layer = make_variational(3, 2, FLIPOUT, seed=25)
    row = np.random.default_rng(26).normal(size=3)
    x = np.stack([row, row])
    eps_w = np.random.default_rng(27).standard_normal((3, 2))
    noise = NoiseDraw(
        eps_w,
        np.zeros(2),
        np.array([[1.0, 1.0, 1.0], [1.0, -1.0, 1.0]]),
        np.array([[1.0, 1.0], [1.0, 1.0]]),
    )
    out, _ = variational_forward_flipout(layer, Tensor(x), noise)
    assert not np.allclose(out.data[0], out.data[1])


def test_flipout_gradient_through_posterior():
    rng = np.random.default_rng(28)
    x = rng.normal(size=(3, 2))
    mu = rng.normal(size=(2, 2))
    rho = rng.uniform(-1.5, 0.5, size=(2, 2))
    bmu = rng.normal(size=2)
    brho = rng.uniform(-1.5, 0.5, size=2)
    signs_in = rng.integers(0, 2, size=(3, 2)) * 2.0 - 1.0
    signs_out = rng.integers(0, 2, size=(3, 2)) * 2.0 - 1.0
    noise = NoiseDraw(
        rng.standard_normal((2, 2)), rng.standard_normal(2), signs_in, signs_out
    )

    def loss(ts):
        layer = DenseVariational(
            DiagonalGaussian(ts[0], ts[1]),
            DiagonalGaussian(ts[2], ts[3]),
            estimator=FLIPOUT,
        )
        out, kl = variational_forward_flipout(layer, Tensor(x), noise)
        return out.sum() + kl * 0.1

    assert_gradients_match(loss, [mu, rho, bmu, brho], rel=1e-6)


def test_flipout_estimator_mismatch():
    layer = make_variational(3, 2, REPARAM, seed=29)
    with pytest.raises(ContractError):
        variational_forward_flipout(
            layer, Tensor(np.zeros((1, 3))), zero_layer_noise(layer, 1)
        )


# ---- dropout ---------------------------------------------------------------


def test_dropout_rate_zero_is_identity_in_all_phases():
    spec = DropoutSpec(0.0)
    x = Tensor(np.random.default_rng(30).normal(size=(3, 4)))
    for phase in (TRAIN, MC_INFERENCE, DETERMINISTIC_INFERENCE):
        out = dropout_forward(spec, x, np.zeros((3, 4)), phase)
        assert out is x


def test_dropout_deterministic_inference_is_identity():
    spec = DropoutSpec(0.7)
    x = Tensor(np.random.default_rng(31).normal(size=(2, 5)))
    assert dropout_forward(spec, x, None, DETERMINISTIC_INFERENCE) is x


def test_dropout_preserves_expectation():
    spec = DropoutSpec(0.3)
    row = np.random.default_rng(32).normal(size=4) + 2.0
    n = 10**5
    x = np.tile(row, (n, 1))
    mask_noise = np.random.default_rng(33).uniform(size=(n, 4))
    out = dropout_forward(spec, Tensor(x), mask_noise, TRAIN)
    se = out.data.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(out.data.mean(axis=0) - row) < 3 * se)


def test_dropout_mask_shape_checked():
    spec = DropoutSpec(0.5)
    with pytest.raises(ShapeError):
        dropout_forward(spec, Tensor(np.zeros((2, 3))), np.zeros((2, 2)), TRAIN)


def test_dropout_rate_validation():
    with pytest.raises(ConfigError):
        DropoutSpec(1.0)
    with pytest.raises(ConfigError):
        DropoutSpec(-0.1)


def test_dropout_gradient_flows_through_mask():
    rng = np.random.default_rng(34)
    x = rng.normal(size=(3, 4))
    mask_noise = rng.uniform(size=(3, 4))
    spec = DropoutSpec(0.4)

    def loss(ts):
        return dropout_forward(spec, ts[0], mask_noise, TRAIN).sum()

    assert_gradients_match(loss, [x], rel=1e-6)
