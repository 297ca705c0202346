"""Recurrent latent state-space model with forward and retrace sweeps.

The transition core is a gated recurrent cell over (latent sample, action)
driving a deterministic state h. The prior head reads h alone; the posterior
head additionally sees the observation embedding and shares the same h. The
retrace sweep re-applies the prior transition (same parameter objects)
backward in time using actions proposed by the reverse-action approximator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation, NumericError
from ..numcore import (
    GaussianDiag,
    Tensor,
    affine,
    concat,
    matmul,
    mul,
    relu,
    reshape,
    sample,
    sigmoid,
    softplus,
    stop_gradient,
    take,
    tanh,
)
from ..numcore.dists import STD_FLOOR

ROLE_PRIOR = "prior"
ROLE_POSTERIOR = "posterior"
ROLE_RETRACED = "retraced"


@dataclass
class ModelConfig:
    obs_dim: int
    action_dim: int
    z_dim: int = 32
    h_dim: int = 256
    embed_dim: int = 64
    hidden_dim: int = 128
    decoder_std: float = 1.0
    # gradients flow from the retrace branch into the posterior estimates by
    # default; set True to cut them at the retrace inputs
    stop_retrace_grad: bool = False


@dataclass
class LatentState:
    """Deterministic recurrent state plus one stochastic latent sample."""

    h: Tensor
    z: Tensor
    dist: GaussianDiag
    role: str


@dataclass
class ModelParams:
    cfg: ModelConfig
    phi: dict = field(default_factory=dict)    # observation embedding
    psi1: dict = field(default_factory=dict)   # recurrent core + prior head
    psi2: dict = field(default_factory=dict)   # posterior head
    theta: dict = field(default_factory=dict)  # decoder + reward head
    zeta: dict = field(default_factory=dict)   # reverse-action approximator

    def groups(self) -> dict:
        return {"phi": self.phi, "psi1": self.psi1, "psi2": self.psi2,
                "theta": self.theta, "zeta": self.zeta}

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for gname, group in self.groups().items():
            for pname, p in group.items():
                out[f"{gname}.{pname}"] = p
        return out


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)


def _zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    p = ModelParams(cfg)
    gru_in = cfg.z_dim + cfg.action_dim
    p.phi = {
        "w1": _glorot(rng, cfg.obs_dim, cfg.hidden_dim), "b1": _zeros(cfg.hidden_dim),
        "w2": _glorot(rng, cfg.hidden_dim, cfg.embed_dim), "b2": _zeros(cfg.embed_dim),
    }
    p.psi1 = {
        # fused gate weights: columns [reset | update | candidate]
        "gru_wx": _glorot(rng, gru_in, 3 * cfg.h_dim),
        "gru_b": _zeros(3 * cfg.h_dim),
        "gru_whru": _glorot(rng, cfg.h_dim, 2 * cfg.h_dim),
        "gru_whc": _glorot(rng, cfg.h_dim, cfg.h_dim),
        "head_w1": _glorot(rng, cfg.h_dim, cfg.hidden_dim), "head_b1": _zeros(cfg.hidden_dim),
        "head_w2": _glorot(rng, cfg.hidden_dim, 2 * cfg.z_dim), "head_b2": _zeros(2 * cfg.z_dim),
    }
    p.psi2 = {
        "head_w1": _glorot(rng, cfg.h_dim + cfg.embed_dim, cfg.hidden_dim),
        "head_b1": _zeros(cfg.hidden_dim),
        "head_w2": _glorot(rng, cfg.hidden_dim, 2 * cfg.z_dim), "head_b2": _zeros(2 * cfg.z_dim),
    }
    p.theta = {
        "dec_w1": _glorot(rng, cfg.z_dim, cfg.hidden_dim), "dec_b1": _zeros(cfg.hidden_dim),
        "dec_w2": _glorot(rng, cfg.hidden_dim, cfg.obs_dim), "dec_b2": _zeros(cfg.obs_dim),
        "rew_w1": _glorot(rng, cfg.z_dim, cfg.hidden_dim), "rew_b1": _zeros(cfg.hidden_dim),
        "rew_w2": _glorot(rng, cfg.hidden_dim, 1), "rew_b2": _zeros(1),
        "rew_raw_std": _zeros(1),
    }
    p.zeta = {
        "w1": _glorot(rng, 2 * cfg.z_dim, cfg.hidden_dim), "b1": _zeros(cfg.hidden_dim),
        "w2": _glorot(rng, cfg.hidden_dim, cfg.action_dim), "b2": _zeros(cfg.action_dim),
    }
    return p


def initial_state(params: ModelParams, batch: int, rng: np.random.Generator) -> LatentState:
    """h starts at zero; the latent sample starts from a standard normal."""
    cfg = params.cfg
    h = Tensor(np.zeros((batch, cfg.h_dim)))
    dist = GaussianDiag(Tensor(np.zeros((batch, cfg.z_dim))), Tensor(np.ones((batch, cfg.z_dim))))
    z = Tensor(rng.standard_normal((batch, cfg.z_dim)))
    return LatentState(h=h, z=z, dist=dist, role=ROLE_PRIOR)


# -- component networks --------------------------------------------------------


def embed(params: ModelParams, obs) -> Tensor:
    """Deterministic context vector for a batch of observations [B, obs_dim]."""
    obs = obs if isinstance(obs, Tensor) else Tensor(np.asarray(obs, dtype=np.float64))
    if obs.shape[-1] != params.cfg.obs_dim:
        raise ContractViolation(f"expected obs_dim {params.cfg.obs_dim}, got {obs.shape}")
    p = params.phi
    return affine(relu(affine(obs, p["w1"], p["b1"])), p["w2"], p["b2"])


def _gru_cell(params: ModelParams, h: Tensor, x: Tensor) -> Tensor:
    p = params.psi1
    H = params.cfg.h_dim
    gates_x = affine(x, p["gru_wx"], p["gru_b"])
    gates_h = matmul(h, p["gru_whru"])
    r = sigmoid(take(gates_x, (slice(None), slice(0, H))) + take(gates_h, (slice(None), slice(0, H))))
    u = sigmoid(take(gates_x, (slice(None), slice(H, 2 * H))) + take(gates_h, (slice(None), slice(H, 2 * H))))
    c = tanh(take(gates_x, (slice(None), slice(2 * H, 3 * H))) + matmul(mul(r, h), p["gru_whc"]))
    return mul(u, h) + mul(1.0 - u, c)


def _core(params: ModelParams, state: LatentState, action: Tensor) -> Tensor:
    """Shared deterministic transition h' = cell(h, [z, a])."""
    return _gru_cell(params, state.h, concat([state.z, action], axis=1))


def _gaussian_head(x: Tensor, w1, b1, w2, b2) -> GaussianDiag:
    out = affine(relu(affine(x, w1, b1)), w2, b2)
    D = out.shape[-1] // 2
    mean = take(out, (slice(None), slice(0, D)))
    raw = take(out, (slice(None), slice(D, 2 * D)))
    return GaussianDiag.from_raw(mean, raw)


def _prior_dist(params: ModelParams, h: Tensor) -> GaussianDiag:
    p = params.psi1
    return _gaussian_head(h, p["head_w1"], p["head_b1"], p["head_w2"], p["head_b2"])


def _posterior_dist(params: ModelParams, h: Tensor, e: Tensor) -> GaussianDiag:
    p = params.psi2
    return _gaussian_head(concat([h, e], axis=1), p["head_w1"], p["head_b1"],
                          p["head_w2"], p["head_b2"])


def prior_step(params: ModelParams, state: LatentState, action,
               rng: np.random.Generator) -> LatentState:
    action = action if isinstance(action, Tensor) else Tensor(np.asarray(action, dtype=np.float64))
    h = _core(params, state, action)
    dist = _prior_dist(params, h)
    return LatentState(h=h, z=sample(dist, rng), dist=dist, role=ROLE_PRIOR)


def posterior_step(params: ModelParams, state: LatentState, action, e: Tensor,
                   rng: np.random.Generator) -> LatentState:
    action = action if isinstance(action, Tensor) else Tensor(np.asarray(action, dtype=np.float64))
    h = _core(params, state, action)
    dist = _posterior_dist(params, h, e)
    return LatentState(h=h, z=sample(dist, rng), dist=dist, role=ROLE_POSTERIOR)


def decode(params: ModelParams, z: Tensor) -> GaussianDiag:
    """Observation model: Gaussian with learned mean and fixed stddev."""
    p = params.theta
    mean = affine(relu(affine(z, p["dec_w1"], p["dec_b1"])), p["dec_w2"], p["dec_b2"])
    std = Tensor(np.full(mean.shape, params.cfg.decoder_std))
    return GaussianDiag(mean, std)


def reward_head(params: ModelParams, z: Tensor) -> GaussianDiag:
    """Univariate Gaussian over reward; stddev is a learned state-independent scalar."""
    p = params.theta
    mean = affine(relu(affine(z, p["rew_w1"], p["rew_b1"])), p["rew_w2"], p["rew_b2"])
    std = (softplus(p["rew_raw_std"]) + STD_FLOOR) * Tensor(np.ones(mean.shape))
    return GaussianDiag(mean, std)


def reverse_action(params: ModelParams, z_next: Tensor, z_prev: Tensor) -> Tensor:
    """Approximate action leading back from z_next to z_prev, in [-1, 1]."""
    p = params.zeta
    x = concat([z_next, z_prev], axis=1)
    return tanh(affine(relu(affine(x, p["w1"], p["b1"])), p["w2"], p["b2"]))


# -- sweeps ---------------------------------------------------------------------


@dataclass
class SweepResult:
    """Per-step prior and posterior latent states, sharing deterministic h.

    Time-major flattened views ([T*N, .]) of the same graph nodes are kept
    alongside for batched loss evaluation.
    """

    posteriors: list[LatentState]
    h_flat: Tensor
    post_z_flat: Tensor
    post_dist_flat: GaussianDiag
    prior_z_flat: Tensor
    prior_dist_flat: GaussianDiag
    _priors: list[LatentState] | None = None

    @property
    def horizon(self) -> int:
        return len(self.posteriors)

    @property
    def batch(self) -> int:
        return self.posteriors[0].z.shape[0]

    @property
    def priors(self) -> list[LatentState]:
        if self._priors is None:
            N = self.batch
            states = []
            for tau in range(self.horizon):
                rows = slice(tau * N, (tau + 1) * N)
                dist = GaussianDiag(take(self.prior_dist_flat.mean, (rows, slice(None))),
                                    take(self.prior_dist_flat.stddev, (rows, slice(None))))
                states.append(LatentState(h=self.posteriors[tau].h,
                                          z=take(self.prior_z_flat, (rows, slice(None))),
                                          dist=dist, role=ROLE_PRIOR))
            self._priors = states
        return self._priors


@dataclass
class RetraceResult:
    """Reverse actions and retraced latents for steps 1..T-1 (batched time-major)."""

    actions: Tensor          # [(T-1)*N, action_dim]
    states: LatentState      # retraced latents, z: [(T-1)*N, z_dim]
    steps: int               # T-1
    batch: int               # N


def forward_sweep(params: ModelParams, obs: np.ndarray, actions: np.ndarray,
                  rng: np.random.Generator, init: LatentState | None = None) -> SweepResult:
    """One-step filtering through a batch of segments.

    obs is [N, T+1, obs_dim] and actions [N, T, action_dim]; step tau in 1..T
    consumes actions[:, tau-1] and conditions the posterior on the embedding
    of obs[:, tau]. obs[:, 0] is not used: the initial latent is random.

    Only the posterior head runs inside the recurrence (its sample feeds the
    next cell); the prior head and its samples are evaluated once over the
    stacked deterministic states.
    """
    obs = np.asarray(obs, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if obs.ndim != 3 or actions.ndim != 3 or obs.shape[1] != actions.shape[1] + 1 \
            or obs.shape[0] != actions.shape[0]:
        raise ContractViolation(f"inconsistent batch shapes {obs.shape} / {actions.shape}")
    N, T = actions.shape[0], actions.shape[1]

    # embed all target observations in one pass, time-major
    flat = np.transpose(obs[:, 1:, :], (1, 0, 2)).reshape(T * N, obs.shape[2])
    embeds = embed(params, Tensor(flat))

    state = init if init is not None else initial_state(params, N, rng)
    posteriors: list[LatentState] = []
    for tau in range(T):
        try:
            a = Tensor(actions[:, tau, :])
            h = _core(params, state, a)
            e = take(embeds, (slice(tau * N, (tau + 1) * N), slice(None)))
            post_d = _posterior_dist(params, h, e)
            post = LatentState(h=h, z=sample(post_d, rng), dist=post_d, role=ROLE_POSTERIOR)
        except NumericError as err:
            raise NumericError(f"forward sweep failed at step {tau + 1}: {err}") from err
        posteriors.append(post)
        state = post

    h_flat = concat([s.h for s in posteriors], axis=0)
    post_z_flat = concat([s.z for s in posteriors], axis=0)
    post_dist_flat = GaussianDiag(concat([s.dist.mean for s in posteriors], axis=0),
                                  concat([s.dist.stddev for s in posteriors], axis=0))
    prior_dist_flat = _prior_dist(params, h_flat)
    prior_z_flat = sample(prior_dist_flat, rng)
    return SweepResult(posteriors=posteriors, h_flat=h_flat, post_z_flat=post_z_flat,
                       post_dist_flat=post_dist_flat, prior_z_flat=prior_z_flat,
                       prior_dist_flat=prior_dist_flat)


def retrace_sweep(params: ModelParams, sweep: SweepResult,
                  rng: np.random.Generator) -> RetraceResult:
    """Retrace every forward transition using the same prior dynamics.

    For tau = 1..T-1 the reverse-action approximator proposes the action that
    leads from the posterior at tau+1 back to the posterior at tau, and the
    prior transition (identical psi1 parameter objects) samples the retraced
    latent. All steps are independent given the forward sweep, so they run as
    one batched cell application.
    """
    T, N = sweep.horizon, sweep.batch
    if T < 2:
        raise ContractViolation("retrace needs at least two posterior steps")
    rows = (T - 1) * N
    z_prev = take(sweep.post_z_flat, (slice(0, rows), slice(None)))
    z_next = take(sweep.post_z_flat, (slice(N, None), slice(None)))
    h_next = take(sweep.h_flat, (slice(N, None), slice(None)))
    if params.cfg.stop_retrace_grad:
        z_prev, z_next, h_next = (stop_gradient(z_prev), stop_gradient(z_next),
                                  stop_gradient(h_next))
    try:
        back_actions = reverse_action(params, z_next, z_prev)
        h = _gru_cell(params, h_next, concat([z_next, back_actions], axis=1))
        dist = _prior_dist(params, h)
        z_check = sample(dist, rng)
    except NumericError as err:
        raise NumericError(f"retrace sweep failed: {err}") from err
    states = LatentState(h=h, z=z_check, dist=dist, role=ROLE_RETRACED)
    return RetraceResult(actions=back_actions, states=states, steps=T - 1, batch=N)


def open_loop_rollout(params: ModelParams, observations: np.ndarray, actions: np.ndarray,
                      context: int, horizon: int, rng: np.random.Generator):
    """Filter `context` observations, then predict `horizon` steps open loop.

    observations is [L+1, obs_dim] with actions [L, action_dim]; requires
    L >= context - 1 + horizon. Returns (predicted means [horizon, obs_dim],
    per-step MSE [horizon]).
    """
    observations = np.asarray(observations, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if context < 1:
        raise ContractViolation("context must be >= 1")
    if horizon < 0:
        raise ContractViolation("horizon must be >= 0")
    needed = context - 1 + horizon
    if actions.shape[0] < needed or observations.shape[0] < needed + 1:
        raise ContractViolation(
            f"need {needed} transitions for context {context} + horizon {horizon}")

    state = initial_state(params, 1, rng)
    # posterior filtering over obs[1..context-1]
    for tau in range(1, context):
        e = embed(params, observations[tau][None, :])
        state = posterior_step(params, state, actions[tau - 1][None, :], e, rng)

    preds = np.zeros((horizon, observations.shape[1]))
    errs = np.zeros(horizon)
    for k in range(horizon):
        idx = context - 1 + k
        state = prior_step(params, state, actions[idx][None, :], rng)
        mean = decode(params, state.z).mean.data[0]
        preds[k] = mean
        errs[k] = float(np.mean((mean - observations[idx + 1]) ** 2))
    return preds, errs
