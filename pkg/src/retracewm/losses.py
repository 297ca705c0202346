"""Forward ELBO and retrace (cycle-consistency) objectives.

The combined objective averages per-step ELBO losses over batch and time, and
adds the retrace weight times the mask-gated per-step retrace losses under the
same 1/(N*T) normalization. Retrace losses come in three variants: the
squared combination of latent L1 distance, reward-model KL, and discounted
transition Wasserstein distance; plain latent L2; and decoder reconstruction
under the retraced latent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .numcore import (
    GaussianDiag,
    Tensor,
    absolute,
    concat,
    gaussian_log_prob_lastdim,
    kl_diag_lastdim,
    square,
    stop_gradient,
    tmean,
    tsum,
    w2_diag_lastdim,
)
from .worldmodel import ModelParams, RetraceResult, SweepResult, decode, reward_head
from .worldmodel.model import _gru_cell, _prior_dist

RETRACE_VARIANTS = ("bisimulation", "l2", "reconstruction")


@dataclass
class LossConfig:
    beta: float = 1.0            # KL weight in the ELBO
    retrace_weight: float = 1.0  # multiplier on the retrace term
    gamma: float = 0.99          # discount inside the bisimulation loss
    retrace_variant: str = "bisimulation"

    def __post_init__(self):
        if self.beta < 0 or self.retrace_weight < 0:
            raise ContractViolation("beta and retrace_weight must be >= 0")
        if not (0.0 < self.gamma < 1.0):
            raise ContractViolation("gamma must lie in (0, 1)")
        if self.retrace_variant not in RETRACE_VARIANTS:
            raise ContractViolation(f"retrace_variant must be one of {RETRACE_VARIANTS}")


@dataclass
class LossReport:
    total: float
    elbo_term: float
    kl_term: float
    recon_term: float
    retrace_term: float
    masked_fraction: float


def elbo_loss(obs, prior: GaussianDiag, posterior: GaussianDiag, posterior_sample: Tensor,
              decoder_dist: GaussianDiag, beta: float) -> Tensor:
    """Negated single-sample free energy, averaged over leading rows."""
    obs = obs if isinstance(obs, Tensor) else Tensor(np.asarray(obs, dtype=np.float64))
    recon = gaussian_log_prob_lastdim(decoder_dist, obs)
    kl = kl_diag_lastdim(posterior, prior)
    return tmean(-(recon - beta * kl))


def _bisim_steps(z_tilde: Tensor, z_check: Tensor, h: Tensor, params: ModelParams,
                 policy_fn, gamma: float) -> Tensor:
    """Squared bisimulation residual per row.

    (||z~ - zv||_1 - KL[R(.|z~) || R(.|zv)] - gamma * W2(T(z~, pi), T(zv, pi)))^2

    Policy actions are mean actions with gradients stopped: the controller is
    not trained through the model objective.
    """
    l1 = tsum(absolute(z_tilde - z_check), axis=-1)
    kl = kl_diag_lastdim(reward_head(params, z_tilde), reward_head(params, z_check))
    a_tilde = stop_gradient(policy_fn(z_tilde))
    a_check = stop_gradient(policy_fn(z_check))
    trans_tilde = _prior_dist(params, _gru_cell(params, h, concat([z_tilde, a_tilde], axis=1)))
    trans_check = _prior_dist(params, _gru_cell(params, h, concat([z_check, a_check], axis=1)))
    w2 = w2_diag_lastdim(trans_tilde, trans_check)
    return square(l1 - kl - gamma * w2)


def retrace_loss_bisim(z_tilde: Tensor, z_check: Tensor, h: Tensor, params: ModelParams,
                       policy_fn, gamma: float) -> Tensor:
    """Mean squared bisimulation residual over the batch (one retrace sample)."""
    return tmean(_bisim_steps(z_tilde, z_check, h, params, policy_fn, gamma))


def retrace_loss_l2(z_tilde: Tensor, z_check: Tensor) -> Tensor:
    """Mean squared latent distance."""
    if z_tilde.shape != z_check.shape:
        raise ContractViolation(f"latent shape mismatch {z_tilde.shape} vs {z_check.shape}")
    return tmean(tsum(square(z_tilde - z_check), axis=-1))


def retrace_loss_recon(obs, z_check: Tensor, params: ModelParams) -> Tensor:
    """Negative decoder log-likelihood of the original observation under the retraced latent."""
    obs = obs if isinstance(obs, Tensor) else Tensor(np.asarray(obs, dtype=np.float64))
    return tmean(-gaussian_log_prob_lastdim(decode(params, z_check), obs))


def total_loss(obs: np.ndarray, sweep: SweepResult, retrace: RetraceResult | None,
               mask: np.ndarray, params: ModelParams, policy_fn,
               config: LossConfig) -> tuple[Tensor, LossReport]:
    """Masked combined objective over a batch of segments.

    obs is the [N, T+1, obs_dim] segment batch that produced the sweep; mask
    is the [N, T-1] binary gate over retraced pairs. The ELBO part is never
    masked. Returns the scalar loss tensor plus a float report.
    """
    obs = np.asarray(obs, dtype=np.float64)
    N, T = sweep.batch, sweep.horizon
    targets = np.transpose(obs[:, 1:, :], (1, 0, 2)).reshape(T * N, obs.shape[2])

    recon = gaussian_log_prob_lastdim(decode(params, sweep.post_z_flat), Tensor(targets))
    kl = kl_diag_lastdim(sweep.post_dist_flat, sweep.prior_dist_flat)
    elbo_steps = -(recon - config.beta * kl)
    elbo_term = tmean(elbo_steps)

    mask = np.asarray(mask, dtype=np.float64)
    if retrace is not None:
        if mask.shape != (N, T - 1):
            raise ContractViolation(f"mask shape {mask.shape} != {(N, T - 1)}")
        if not np.all((mask == 0.0) | (mask == 1.0)):
            raise ContractViolation("mask entries must be 0 or 1")
        rows = (T - 1) * N
        z_tilde = sweep.post_z_flat[:rows, :]
        if config.retrace_variant == "bisimulation":
            h = sweep.h_flat[:rows, :]
            steps = _bisim_steps(z_tilde, retrace.states.z, h, params, policy_fn, config.gamma)
        elif config.retrace_variant == "l2":
            steps = tsum(square(z_tilde - retrace.states.z), axis=-1)
        else:
            steps = -gaussian_log_prob_lastdim(decode(params, retrace.states.z),
                                               Tensor(targets[: (T - 1) * N]))
        gate = Tensor(mask.T.reshape(-1))  # time-major to match the stacked steps
        retrace_term = tsum(steps * gate) / float(N * T)
        masked_fraction = float(1.0 - mask.mean())
    else:
        retrace_term = Tensor(0.0)
        masked_fraction = 0.0

    loss = elbo_term + config.retrace_weight * retrace_term
    report = LossReport(
        total=loss.item(),
        elbo_term=elbo_term.item(),
        kl_term=float(np.mean(kl.data)),
        recon_term=float(-np.mean(recon.data)),
        retrace_term=retrace_term.item(),
        masked_fraction=masked_fraction,
    )
    return loss, report
