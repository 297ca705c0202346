"""Diagonal-Gaussian distribution operations on autodiff tensors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation
from .tensor import Tensor, as_tensor, log, mul, softplus, square, tsum

LOG_2PI = math.log(2.0 * math.pi)

# Floor added to softplus-mapped stddevs so KL / Wasserstein terms stay
# non-degenerate.
STD_FLOOR = 1e-4


@dataclass
class GaussianDiag:
    """Diagonal Gaussian given by mean and (strictly positive) stddev."""

    mean: Tensor
    stddev: Tensor

    def __post_init__(self):
        if self.mean.shape != self.stddev.shape:
            raise ContractViolation(
                f"mean/stddev shape mismatch: {self.mean.shape} vs {self.stddev.shape}"
            )

    @classmethod
    def from_raw(cls, mean: Tensor, raw_std: Tensor) -> "GaussianDiag":
        """Build a distribution from an unconstrained stddev parameterization."""
        return cls(mean, softplus(raw_std) + STD_FLOOR)


def _check_match(dist: GaussianDiag, x: Tensor, what: str) -> None:
    if dist.mean.shape != x.shape:
        raise ContractViolation(f"{what}: shape {x.shape} does not match {dist.mean.shape}")


def gaussian_log_prob_lastdim(dist: GaussianDiag, x) -> Tensor:
    """Per-row log density, summed over the last axis only."""
    x = as_tensor(x)
    _check_match(dist, x, "gaussian_log_prob")
    z = (x - dist.mean) / dist.stddev
    terms = -0.5 * LOG_2PI - log(dist.stddev) - 0.5 * square(z)
    return tsum(terms, axis=-1)


def gaussian_log_prob(dist: GaussianDiag, x) -> Tensor:
    """Total log density of x under the distribution (scalar)."""
    x = as_tensor(x)
    _check_match(dist, x, "gaussian_log_prob")
    z = (x - dist.mean) / dist.stddev
    terms = -0.5 * LOG_2PI - log(dist.stddev) - 0.5 * square(z)
    return tsum(terms)


def _kl_terms(p: GaussianDiag, q: GaussianDiag) -> Tensor:
    if p.mean.shape != q.mean.shape:
        raise ContractViolation(f"kl_diag: shape {p.mean.shape} vs {q.mean.shape}")
    var_ratio = square(p.stddev / q.stddev)
    mean_term = square((p.mean - q.mean) / q.stddev)
    return 0.5 * (var_ratio + mean_term - 1.0) + log(q.stddev) - log(p.stddev)


def kl_diag(p: GaussianDiag, q: GaussianDiag) -> Tensor:
    """Closed-form KL(p || q) for diagonal Gaussians (scalar, >= 0)."""
    return tsum(_kl_terms(p, q))


def kl_diag_lastdim(p: GaussianDiag, q: GaussianDiag) -> Tensor:
    return tsum(_kl_terms(p, q), axis=-1)


def _w2_terms(p: GaussianDiag, q: GaussianDiag) -> Tensor:
    if p.mean.shape != q.mean.shape:
        raise ContractViolation(f"w2_diag: shape {p.mean.shape} vs {q.mean.shape}")
    return square(p.mean - q.mean) + square(p.stddev - q.stddev)


def w2_diag(p: GaussianDiag, q: GaussianDiag) -> Tensor:
    """Squared 2-Wasserstein distance between diagonal Gaussians (scalar).

    ||mu_p - mu_q||^2 + ||sigma_p - sigma_q||^2, the diagonal specialization of
    the Gaussian closed form (Frobenius norm of the covariance-root difference).
    """
    return tsum(_w2_terms(p, q))


def w2_diag_lastdim(p: GaussianDiag, q: GaussianDiag) -> Tensor:
    return tsum(_w2_terms(p, q), axis=-1)


def reparam_sample(dist: GaussianDiag, noise) -> Tensor:
    """Pathwise sample mean + stddev * noise; gradients flow to both params."""
    noise = as_tensor(noise)
    _check_match(dist, noise, "reparam_sample")
    return dist.mean + mul(dist.stddev, noise)


def sample(dist: GaussianDiag, rng: np.random.Generator) -> Tensor:
    """Draw one reparameterized sample using noise from rng."""
    noise = rng.standard_normal(dist.mean.shape)
    return reparam_sample(dist, Tensor(noise))


def entropy_lastdim(dist: GaussianDiag) -> Tensor:
    """Differential entropy per row: sum_d [0.5*log(2*pi*e) + log sigma_d]."""
    return tsum(0.5 * (LOG_2PI + 1.0) + log(dist.stddev), axis=-1)
