"""Mean-field Gaussian posteriors: reparameterized sampling and analytic KL.

Each parameter tensor of a variational layer owns a DiagonalGaussian whose
scale is kept positive through a softplus of the raw `rho` values. The KL
divergence to an independent Gaussian prior has a closed form, so it is
computed analytically; the Monte Carlo estimator exists only in the tests
as an oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class PriorSpec:
    """Independent Gaussian prior, one (mean, std) shared by all elements."""

    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if not self.std > 0:
            raise ConfigError(f"prior std must be positive, got {self.std}")


class DiagonalGaussian:
    """Posterior q(w) = N(mu, softplus(rho)^2), elementwise independent.

    `mu` and `rho` are leaf tensors; sampling and KL build graph nodes on
    top of them so gradients reach both.
    """

    def __init__(self, mu: Tensor, rho: Tensor):
        if mu.shape != rho.shape:
            raise ShapeError(f"mu shape {mu.shape} != rho shape {rho.shape}")
        self.mu = mu
        self.rho = rho

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mu.shape

    def std(self) -> Tensor:
        return softplus_std(self.rho)


def softplus_std(rho: Tensor) -> Tensor:
    """Positive scale ln(1 + exp(rho)), saturating to rho above 30."""
    return rho.softplus()


def sample(g: DiagonalGaussian, eps: Tensor) -> Tensor:
    """Reparameterized draw w = mu + softplus(rho) * eps."""
    if eps.shape != g.shape:
        raise ShapeError(f"eps shape {eps.shape} != posterior shape {g.shape}")
    return g.mu + softplus_std(g.rho) * eps


def kl_to_prior(g: DiagonalGaussian, prior: PriorSpec = PriorSpec()) -> Tensor:
    """Closed-form KL[q || p] summed over elements, differentiable in mu/rho.

    Per element: ln(s_p/s_q) + (s_q^2 + (m_q - m_p)^2) / (2 s_p^2) - 1/2.
    """
    s_q = softplus_std(g.rho)
    dm = g.mu - prior.mean
    quad = (s_q * s_q + dm * dm) * (1.0 / (2.0 * prior.std**2))
    per_element = quad - s_q.log() + (math.log(prior.std) - 0.5)
    return per_element.sum()
