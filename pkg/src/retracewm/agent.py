"""Actor-critic controller trained on imagined latent rollouts.

The policy is a squashed diagonal Gaussian: samples are tanh-transformed, so
actions always lie strictly inside the bounds, and log-probabilities carry the
change-of-variables correction. The critic models the state value as a
Gaussian with a learned state-independent stddev and is trained toward
lambda-return targets; the policy follows advantage-weighted log-likelihood
with gradient-stopped advantages from generalized advantage estimation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .numcore import (
    GaussianDiag,
    Tensor,
    affine,
    concat,
    elu,
    entropy_lastdim,
    gaussian_log_prob_lastdim,
    no_grad,
    relu,
    softplus,
    tanh,
    tmean,
)
from .numcore.dists import STD_FLOOR
from .worldmodel import ModelParams, reward_head
from .worldmodel.model import LatentState, ROLE_PRIOR, _glorot, _gru_cell, _prior_dist, _zeros, prior_step

ATANH_CLIP = 1.0 - 1e-7
SQUASH_EPS = 1e-6


@dataclass
class AgentConfig:
    horizon: int = 15
    gamma: float = 0.99
    lambda_return_decay: float = 0.95  # lambda for the value targets
    gae_decay: float = 0.95            # lambda for the advantage estimator
    entropy_weight: float = 1e-4
    hidden_dim: int = 128

    def __post_init__(self):
        if self.horizon < 1:
            raise ContractViolation("horizon must be >= 1")
        for name in ("lambda_return_decay", "gae_decay"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ContractViolation(f"{name} must lie in [0, 1]")


def init_policy(z_dim: int, action_dim: int, hidden_dim: int,
                rng: np.random.Generator) -> dict[str, Tensor]:
    return {
        "w1": _glorot(rng, z_dim, hidden_dim), "b1": _zeros(hidden_dim),
        "w2": _glorot(rng, hidden_dim, 2 * action_dim), "b2": _zeros(2 * action_dim),
    }


def init_value(z_dim: int, hidden_dim: int, rng: np.random.Generator) -> dict[str, Tensor]:
    return {
        "w1": _glorot(rng, z_dim, hidden_dim), "b1": _zeros(hidden_dim),
        "w2": _glorot(rng, hidden_dim, 1), "b2": _zeros(1),
        "raw_std": _zeros(1),
    }


def policy_dist(policy: dict, z: Tensor) -> GaussianDiag:
    """Pre-squash action distribution at a batch of latents."""
    out = affine(elu(affine(z, policy["w1"], policy["b1"])), policy["w2"], policy["b2"])
    A = out.shape[-1] // 2
    mean = out[:, :A]
    raw = out[:, A:]
    return GaussianDiag.from_raw(mean, raw)


def mean_action(policy: dict, z: Tensor) -> Tensor:
    """Greedy action: tanh of the pre-squash mean."""
    return tanh(policy_dist(policy, z).mean)


def sample_action(policy: dict, z: Tensor, rng: np.random.Generator) -> np.ndarray:
    """Stochastic squashed action, detached from the graph."""
    with no_grad():
        d = policy_dist(policy, z)
        u = d.mean.data + d.stddev.data * rng.standard_normal(d.mean.shape)
    return np.tanh(u)


def squashed_log_prob(dist: GaussianDiag, actions: np.ndarray) -> Tensor:
    """log pi(a|z) for tanh-squashed samples of the pre-squash Gaussian."""
    a = np.clip(np.asarray(actions, dtype=np.float64), -ATANH_CLIP, ATANH_CLIP)
    u = np.arctanh(a)
    correction = np.sum(np.log(1.0 - a * a + SQUASH_EPS), axis=-1)
    return gaussian_log_prob_lastdim(dist, Tensor(u)) - Tensor(correction)


def value_dist(value: dict, z: Tensor) -> GaussianDiag:
    mean = affine(relu(affine(z, value["w1"], value["b1"])), value["w2"], value["b2"])
    std = (softplus(value["raw_std"]) + STD_FLOOR) * Tensor(np.ones(mean.shape))
    return GaussianDiag(mean, std)


def q_value(model: ModelParams, value: dict, h: np.ndarray, z: np.ndarray,
            action: np.ndarray, gamma: float) -> np.ndarray:
    """Q(z, a) = reward-head mean after the prior transition + gamma * value there.

    Computed with gradients disabled; used by the truncation detector.
    """
    with no_grad():
        h_t = Tensor(np.asarray(h, dtype=np.float64))
        z_t = Tensor(np.asarray(z, dtype=np.float64))
        a_t = Tensor(np.asarray(action, dtype=np.float64))
        h2 = _gru_cell(model, h_t, concat([z_t, a_t], axis=1))
        z_next = _prior_dist(model, h2).mean
        r = reward_head(model, z_next).mean.data[:, 0]
        v = value_dist(value, z_next).mean.data[:, 0]
    return r + gamma * v


def lambda_return(rewards: np.ndarray, values: np.ndarray, gamma: float,
                  lam: float) -> np.ndarray:
    """Recursive lambda-return targets.

    rewards[t] is earned on the transition into the state whose value estimate
    is values[t]; the final entry bootstraps on values[-1]:
    G[t] = r[t] + gamma * ((1-lam) * v[t] + lam * G[t+1]), G[last] = r + gamma*v.
    Accepts [H] or time-major [H, B] arrays.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ContractViolation(f"length mismatch {rewards.shape} vs {values.shape}")
    if not (0.0 <= lam <= 1.0):
        raise ContractViolation("lambda must lie in [0, 1]")
    H = rewards.shape[0]
    out = np.zeros_like(rewards)
    out[H - 1] = rewards[H - 1] + gamma * values[H - 1]
    for t in range(H - 2, -1, -1):
        out[t] = rewards[t] + gamma * ((1.0 - lam) * values[t] + lam * out[t + 1])
    return out


def gae_advantages(rewards: np.ndarray, values: np.ndarray, gamma: float,
                   lam: float) -> np.ndarray:
    """Discounted sums of TD residuals with decay gamma*lam.

    values holds the pre-transition estimates and may carry one extra
    bootstrap entry ([H+1]); with [H] entries the final value bootstraps
    itself. delta[t] = r[t] + gamma * v[t+1] - v[t].
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    H = rewards.shape[0]
    if values.shape[0] == H:
        values = np.concatenate([values, values[-1:]], axis=0)
    if values.shape[0] != H + 1:
        raise ContractViolation(f"need {H} or {H + 1} values, got {values.shape[0]}")
    if not (0.0 <= lam <= 1.0):
        raise ContractViolation("lambda must lie in [0, 1]")
    deltas = rewards + gamma * values[1:] - values[:-1]
    out = np.zeros_like(rewards)
    acc = np.zeros_like(np.asarray(deltas[-1]))
    for t in range(H - 1, -1, -1):
        acc = deltas[t] + gamma * lam * acc
        out[t] = acc
    return out


@dataclass
class ImaginedRollout:
    """Latent rollout of length H driven by the policy through the prior."""

    latents: np.ndarray    # [H, B, z_dim], states s_1..s_H
    hs: np.ndarray         # [H, B, h_dim]
    actions: np.ndarray    # [H, B, action_dim], a_i taken at s_i
    rewards: np.ndarray    # [H, B], reward-head means at s_{i+1}
    values: np.ndarray     # [H, B], value means at s_1..s_H
    start_z: np.ndarray    # [B, z_dim]
    start_value: np.ndarray  # [B]
    horizon: int


def imagine(model: ModelParams, policy: dict, value: dict, start_h: np.ndarray,
            start_z: np.ndarray, horizon: int, rng: np.random.Generator) -> ImaginedRollout:
    """Roll the prior dynamics forward under policy-sampled actions, grad-free."""
    if horizon < 1:
        raise ContractViolation("horizon must be >= 1")
    start_h = np.asarray(start_h, dtype=np.float64)
    start_z = np.asarray(start_z, dtype=np.float64)
    B = start_z.shape[0]
    latents = np.zeros((horizon, B, model.cfg.z_dim))
    hs = np.zeros((horizon, B, model.cfg.h_dim))
    actions = np.zeros((horizon, B, model.cfg.action_dim))
    rewards = np.zeros((horizon, B))
    values = np.zeros((horizon, B))
    with no_grad():
        state = LatentState(h=Tensor(start_h), z=Tensor(start_z),
                            dist=GaussianDiag(Tensor(start_z), Tensor(np.ones_like(start_z))),
                            role=ROLE_PRIOR)
        start_value = value_dist(value, state.z).mean.data[:, 0].copy()
        for i in range(horizon):
            a = sample_action(policy, state.z, rng)
            state = prior_step(model, state, a, rng)
            actions[i] = a
            latents[i] = state.z.data
            hs[i] = state.h.data
            rewards[i] = reward_head(model, state.z).mean.data[:, 0]
            values[i] = value_dist(value, state.z).mean.data[:, 0]
    return ImaginedRollout(latents=latents, hs=hs, actions=actions, rewards=rewards,
                           values=values, start_z=start_z, start_value=start_value,
                           horizon=horizon)


def actor_critic_update(policy: dict, value: dict, rollout: ImaginedRollout,
                        cfg: AgentConfig, policy_opt, value_opt) -> tuple[float, float]:
    """One policy and one value update from an imagined rollout.

    Targets and advantages are computed outside the graph (gradient-stopped);
    only the log-likelihood terms backpropagate, so world-model parameters are
    never touched.
    """
    H, B = rollout.horizon, rollout.start_z.shape[0]
    targets = lambda_return(rollout.rewards, rollout.values, cfg.gamma,
                            cfg.lambda_return_decay)
    values_full = np.concatenate([rollout.start_value[None, :], rollout.values], axis=0)
    advantages = gae_advantages(rollout.rewards, values_full, cfg.gamma, cfg.gae_decay)

    # critic: likelihood of the lambda-return targets at s_1..s_H
    z_value = Tensor(rollout.latents.reshape(H * B, -1))
    vdist = value_dist(value, z_value)
    critic_loss = tmean(-gaussian_log_prob_lastdim(vdist, Tensor(targets.reshape(H * B, 1))))

    # actor: advantage-weighted log-likelihood at s_0..s_{H-1}, entropy bonus
    z_policy = np.concatenate([rollout.start_z[None], rollout.latents[:-1]], axis=0)
    pdist = policy_dist(policy, Tensor(z_policy.reshape(H * B, -1)))
    logp = squashed_log_prob(pdist, rollout.actions.reshape(H * B, -1))
    adv = Tensor(advantages.reshape(H * B))
    actor_loss = tmean(-(adv * logp)) - cfg.entropy_weight * tmean(entropy_lastdim(pdist))

    policy_opt.zero_grad()
    actor_loss.backward()
    policy_opt.step()
    value_opt.zero_grad()
    critic_loss.backward()
    value_opt.step()
    return actor_loss.item(), critic_loss.item()
