"""Dense layer families: deterministic, variational (reparam/Flipout), dropout.

Noise is always supplied by the caller as plain arrays, so every forward
is a pure function of (parameters, input, noise). That keeps stochastic
passes reproducible and lets tests freeze the noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dist import DiagonalGaussian, PriorSpec, kl_to_prior, sample, softplus_std
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor

REPARAM = "reparam"
FLIPOUT = "flipout"
ESTIMATORS = (REPARAM, FLIPOUT)

# forward-pass phases
TRAIN = "train"
MC_INFERENCE = "mc-inference"
DETERMINISTIC_INFERENCE = "deterministic-inference"
PHASES = (TRAIN, MC_INFERENCE, DETERMINISTIC_INFERENCE)


@dataclass
class DenseDeterministic:
    weight: Tensor  # (in, out)
    bias: Tensor    # (out,)

    def __post_init__(self):
        if len(self.weight.shape) != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(
                f"weight {self.weight.shape} and bias {self.bias.shape} are inconsistent"
            )


@dataclass
class DenseVariational:
    weight_post: DiagonalGaussian  # over (in, out)
    bias_post: DiagonalGaussian    # over (out,)
    estimator: str = FLIPOUT
    prior: PriorSpec = PriorSpec()

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        win = self.weight_post.shape
        if len(win) != 2 or self.bias_post.shape != (win[1],):
            raise ShapeError(
                f"weight posterior {win} and bias posterior {self.bias_post.shape}"
                " are inconsistent"
            )


@dataclass(frozen=True)
class DropoutSpec:
    rate: float
    mc_at_inference: bool = False

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.rate}")


@dataclass(frozen=True)
class NoiseDraw:
    """One batch worth of noise for a variational layer.

    weight_eps/bias_eps are standard-normal draws matching the posterior
    shapes. sign_in/sign_out are per-example Rademacher vectors, only used
    by the Flipout estimator.
    """

    weight_eps: np.ndarray
    bias_eps: np.ndarray
    sign_in: np.ndarray | None = None
    sign_out: np.ndarray | None = None


def dense_forward(layer: DenseDeterministic, x: Tensor) -> Tensor:
    """x W + b with the bias broadcast across rows."""
    if len(x.shape) != 2 or x.shape[1] != layer.weight.shape[0]:
        raise ShapeError(
            f"input {x.shape} does not match weight {layer.weight.shape}"
        )
    return (x @ layer.weight) + layer.bias


def _layer_kl(layer: DenseVariational) -> Tensor:
    return kl_to_prior(layer.weight_post, layer.prior) + kl_to_prior(
        layer.bias_post, layer.prior
    )


def variational_forward_reparam(
    layer: DenseVariational, x: Tensor, noise: NoiseDraw
) -> tuple[Tensor, Tensor]:
    """One weight/bias draw shared by the whole batch: x W_sample + b_sample."""
    if layer.estimator != REPARAM:
        raise ContractError(f"layer estimator is {layer.estimator!r}, not {REPARAM!r}")
    _check_input(layer, x)
    w = sample(layer.weight_post, Tensor(noise.weight_eps))
    b = sample(layer.bias_post, Tensor(noise.bias_eps))
    return (x @ w) + b, _layer_kl(layer)


def variational_forward_flipout(
    layer: DenseVariational, x: Tensor, noise: NoiseDraw
) -> tuple[Tensor, Tensor]:
    """Pseudo-independent per-example weight perturbations.

    Row n sees x_n W_mu + ((x_n * r_n) (std * eps)) * s_n with a shared
    perturbation base eps and per-example sign vectors r_n, s_n. The bias
    is sampled once per batch by plain reparameterization.
    """
    if layer.estimator != FLIPOUT:
        raise ContractError(f"layer estimator is {layer.estimator!r}, not {FLIPOUT!r}")
    _check_input(layer, x)
    m = x.shape[0]
    d_in, d_out = layer.weight_post.shape
    if noise.sign_in is None or noise.sign_out is None:
        raise ContractError("flipout noise draw is missing sign vectors")
    if noise.sign_in.shape != (m, d_in) or noise.sign_out.shape != (m, d_out):
        raise ShapeError(
            f"sign shapes {noise.sign_in.shape}/{noise.sign_out.shape} do not match"
            f" batch {m} with dims ({d_in}, {d_out})"
        )
    delta = softplus_std(layer.weight_post.rho) * Tensor(noise.weight_eps)
    mean_out = x @ layer.weight_post.mu
    perturbed = ((x * Tensor(noise.sign_in)) @ delta) * Tensor(noise.sign_out)
    b = sample(layer.bias_post, Tensor(noise.bias_eps))
    return (mean_out + perturbed) + b, _layer_kl(layer)


def dropout_forward(
    spec: DropoutSpec, x: Tensor, mask_noise: np.ndarray | None, phase: str
) -> Tensor:
    """Inverted dropout: zero with probability rate, scale survivors.

    DeterministicInference is the identity map regardless of rate.
    """
    if phase not in PHASES:
        raise ConfigError(f"unknown phase {phase!r}")
    if phase == DETERMINISTIC_INFERENCE or spec.rate == 0.0:
        return x
    if mask_noise is None or mask_noise.shape != x.shape:
        got = None if mask_noise is None else mask_noise.shape
        raise ShapeError(f"mask noise shape {got} does not match input {x.shape}")
    keep = (mask_noise >= spec.rate).astype(np.float64) / (1.0 - spec.rate)
    return x * Tensor(keep)


def _check_input(layer: DenseVariational, x: Tensor) -> None:
    if len(x.shape) != 2 or x.shape[1] != layer.weight_post.shape[0]:
        raise ShapeError(
            f"input {x.shape} does not match weight posterior {layer.weight_post.shape}"
        )


def draw_layer_noise(
    layer: DenseVariational, m: int, rng: np.random.Generator
) -> NoiseDraw:
    """Fresh standard-normal (and Rademacher, for Flipout) draws for one batch."""
    d_in, d_out = layer.weight_post.shape
    weight_eps = rng.standard_normal((d_in, d_out))
    bias_eps = rng.standard_normal(d_out)
    if layer.estimator == FLIPOUT:
        sign_in = rng.integers(0, 2, size=(m, d_in)).astype(np.float64) * 2.0 - 1.0
        sign_out = rng.integers(0, 2, size=(m, d_out)).astype(np.float64) * 2.0 - 1.0
        return NoiseDraw(weight_eps, bias_eps, sign_in, sign_out)
    return NoiseDraw(weight_eps, bias_eps)


def zero_layer_noise(layer: DenseVariational, m: int) -> NoiseDraw:
    """All-zero noise: collapses any estimator onto the posterior means."""
    d_in, d_out = layer.weight_post.shape
    draw = NoiseDraw(np.zeros((d_in, d_out)), np.zeros(d_out))
    if layer.estimator == FLIPOUT:
        return NoiseDraw(
            draw.weight_eps, draw.bias_eps, np.ones((m, d_in)), np.ones((m, d_out))
        )
    return draw
