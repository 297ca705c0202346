"""Replay buffer, the interleaved training loop, evaluation, and transfer."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .agent import (
    AgentConfig,
    actor_critic_update,
    imagine,
    init_policy,
    init_value,
    mean_action,
    q_value,
    sample_action,
)
from .envs import EnvSpec, make_env, perturb
from .errors import ContractViolation, NotReadyError, NumericError
from .losses import LossConfig, LossReport, total_loss
from .numcore import Adam, Tensor, no_grad, zero_grad
from .truncation import TruncationConfig, masks_for_batch
from .worldmodel import (
    ModelConfig,
    forward_sweep,
    init_params,
    initial_state,
    open_loop_rollout,
    posterior_step,
    retrace_sweep,
    save_checkpoint,
)
from .worldmodel.model import embed

METRICS_COLUMNS = ("step", "total", "elbo", "kl", "recon", "retrace", "masked_fraction",
                   "actor_loss", "critic_loss", "eval_return_mean", "eval_return_sd")


@dataclass
class Episode:
    obs: np.ndarray          # [L+1, obs_dim]
    actions: np.ndarray      # [L, action_dim]
    rewards: np.ndarray      # [L]
    terminals: np.ndarray    # [L]
    irreversible: np.ndarray  # [L]

    def __post_init__(self):
        L = self.actions.shape[0]
        if self.obs.shape[0] != L + 1 or self.rewards.shape[0] != L \
                or self.terminals.shape[0] != L or self.irreversible.shape[0] != L:
            raise ContractViolation("inconsistent episode field lengths")

    @property
    def length(self) -> int:
        return self.actions.shape[0]


@dataclass
class TrajectoryBatch:
    obs: np.ndarray          # [N, T+1, obs_dim]
    actions: np.ndarray      # [N, T, action_dim]
    rewards: np.ndarray      # [N, T]
    terminals: np.ndarray    # [N, T]
    irreversible: np.ndarray  # [N, T]


class EpisodeBuffer:
    """Ring buffer of completed episodes with capacity counted in steps."""

    def __init__(self, capacity_steps: int):
        if capacity_steps < 1:
            raise ContractViolation("capacity must be >= 1")
        self.capacity_steps = capacity_steps
        self.episodes: list[Episode] = []
        self._steps = 0

    def add(self, episode: Episode) -> None:
        self.episodes.append(episode)
        self._steps += episode.length
        while self._steps > self.capacity_steps and len(self.episodes) > 1:
            evicted = self.episodes.pop(0)
            self._steps -= evicted.length

    @property
    def total_steps(self) -> int:
        return self._steps

    def __len__(self) -> int:
        return len(self.episodes)

    def sample_segments(self, n: int, t: int, rng: np.random.Generator) -> TrajectoryBatch:
        """n uniformly chosen (episode, offset) segments of exactly t transitions."""
        eligible = [(i, ep.length - t + 1) for i, ep in enumerate(self.episodes)
                    if ep.length >= t]
        if not eligible:
            raise NotReadyError(f"no stored episode has length >= {t}")
        counts = np.array([c for _, c in eligible])
        cum = np.cumsum(counts)
        draws = rng.integers(0, cum[-1], size=n)
        obs, acts, rews, terms, irrs = [], [], [], [], []
        for d in draws:
            slot = int(np.searchsorted(cum, d, side="right"))
            ep = self.episodes[eligible[slot][0]]
            off = int(d - (cum[slot - 1] if slot else 0))
            obs.append(ep.obs[off:off + t + 1])
            acts.append(ep.actions[off:off + t])
            rews.append(ep.rewards[off:off + t])
            terms.append(ep.terminals[off:off + t])
            irrs.append(ep.irreversible[off:off + t])
        return TrajectoryBatch(np.stack(obs), np.stack(acts), np.stack(rews),
                               np.stack(terms), np.stack(irrs))


@dataclass
class TrainConfig:
    env: EnvSpec = field(default_factory=EnvSpec)
    batch_size: int = 64          # N sampled segments per step
    segment_len: int = 50         # T transitions per segment
    total_steps: int = 5000
    eval_every: int = 10_000
    eval_episodes: int = 5
    buffer_capacity: int = 100_000
    warmup_episodes: int = 5
    env_steps_per_train_step: int = 1
    seed: int = 0
    model_lr: float = 6e-4
    value_lr: float = 8e-5
    policy_lr: float = 8e-5
    grad_clip: float = 100.0
    model_window: int = 0         # latent horizon K for sub-window averaging; 0 = full T
    imagine_batch: int = 128
    explore_noise: float = 0.3
    z_dim: int = 32
    h_dim: int = 256
    embed_dim: int = 64
    hidden_dim: int = 128
    stop_retrace_grad: bool = False
    losses: LossConfig = field(default_factory=LossConfig)
    truncation: TruncationConfig = field(default_factory=TruncationConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)

    def __post_init__(self):
        if self.batch_size < 1 or self.segment_len < 1:
            raise ContractViolation("batch_size and segment_len must be >= 1")
        if self.truncation.mode in ("adaptive", "both") \
                and self.segment_len - 1 <= self.truncation.window:
            raise ContractViolation(
                "segment_len must exceed the truncation window by at least 2")
        if self.model_window and not (2 <= self.model_window < self.segment_len):
            raise ContractViolation("model_window must satisfy 2 <= K < segment_len")


def welch_t_one_sided(a, b) -> tuple[float, float]:
    """One-sided Welch t-test statistic and p-value for H1: mean(a) > mean(b).

    Identical samples give t = 0 and p = 0.5 by convention.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ContractViolation("need at least two evaluations per side")
    if np.var(a) == 0.0 and np.var(b) == 0.0:
        if float(np.mean(a)) == float(np.mean(b)):
            return 0.0, 0.5
        return (np.inf, 0.0) if np.mean(a) > np.mean(b) else (-np.inf, 1.0)
    res = stats.ttest_ind(a, b, equal_var=False, alternative="greater")
    return float(res.statistic), float(res.pvalue)


class Trainer:
    """Owns parameters, replay, and the model/agent update loop."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.env = make_env(config.env)
        seq = np.random.SeedSequence(config.seed)
        (init_seed, collect_seed, sweep_seed, sample_seed, agent_seed,
         envseed_seed) = seq.spawn(6)
        self._collect_rng = np.random.default_rng(collect_seed)
        self._sweep_rng = np.random.default_rng(sweep_seed)
        self._sample_rng = np.random.default_rng(sample_seed)
        self._agent_rng = np.random.default_rng(agent_seed)
        self._env_seed_rng = np.random.default_rng(envseed_seed)

        init_rng = np.random.default_rng(init_seed)
        self.model_cfg = ModelConfig(
            obs_dim=self.env.obs_dim, action_dim=self.env.action_dim,
            z_dim=config.z_dim, h_dim=config.h_dim, embed_dim=config.embed_dim,
            hidden_dim=config.hidden_dim, stop_retrace_grad=config.stop_retrace_grad)
        self.model = init_params(self.model_cfg, init_rng)
        self.policy = init_policy(config.z_dim, self.env.action_dim,
                                  config.agent.hidden_dim, init_rng)
        self.value = init_value(config.z_dim, config.agent.hidden_dim, init_rng)
        self.model_opt = Adam(self.model.named_parameters(), lr=config.model_lr,
                              clip_norm=config.grad_clip)
        self.policy_opt = Adam(self.policy, lr=config.policy_lr, clip_norm=config.grad_clip)
        self.value_opt = Adam(self.value, lr=config.value_lr, clip_norm=config.grad_clip)

        self.buffer = EpisodeBuffer(config.buffer_capacity)
        self.global_step = 0
        self.metrics: list[dict] = []
        self._col = None  # ongoing collection state

    # -- collection -------------------------------------------------------------

    def _policy_fn(self):
        return lambda z: mean_action(self.policy, z)

    def _begin_episode(self, explore: bool, seed: int | None = None):
        if seed is None:
            seed = int(self._env_seed_rng.integers(2**31 - 1))
        first = self.env.reset(seed)
        state = initial_state(self.model, 1, self._collect_rng)
        self._col = {
            "explore": explore,
            "state": state,
            "prev_action": np.zeros(self.env.action_dim),
            "obs": [first.observation],
            "actions": [], "rewards": [], "terminals": [], "irreversible": [],
        }

    def _collect_one_step(self, random_policy: bool = False) -> bool:
        """Advance the ongoing episode by one agent step; returns True at episode end."""
        col = self._col
        with no_grad():
            e = embed(self.model, col["obs"][-1][None, :])
            col["state"] = posterior_step(self.model, col["state"],
                                          col["prev_action"][None, :], e, self._collect_rng)
            if random_policy:
                a = self._collect_rng.uniform(-1, 1, size=self.env.action_dim)
            elif col["explore"]:
                a = sample_action(self.policy, col["state"].z, self._collect_rng)[0]
                a = np.clip(a + self._collect_rng.normal(
                    scale=self.config.explore_noise, size=a.shape), -1.0, 1.0)
            else:
                a = mean_action(self.policy, col["state"].z).data[0]
        res = self.env.step(a)
        col["prev_action"] = np.asarray(a, dtype=np.float64)
        col["obs"].append(res.observation)
        col["actions"].append(np.asarray(a, dtype=np.float64))
        col["rewards"].append(res.reward)
        col["terminals"].append(res.terminal)
        col["irreversible"].append(res.irreversible_flag)
        if res.terminal:
            self.buffer.add(Episode(
                np.stack(col["obs"]), np.stack(col["actions"]), np.array(col["rewards"]),
                np.array(col["terminals"], dtype=bool),
                np.array(col["irreversible"], dtype=bool)))
            self._col = None
            return True
        return False

    def collect_episode(self, explore: bool, seed: int | None = None,
                        random_policy: bool = False) -> Episode:
        """Run one full episode with posterior-filtered acting and store it."""
        self._begin_episode(explore, seed)
        while not self._collect_one_step(random_policy=random_policy):
            pass
        return self.buffer.episodes[-1]

    def warmup(self) -> None:
        """Random-policy episodes until the buffer supports a full batch."""
        need = self.config.batch_size * self.config.segment_len
        while len(self.buffer) < self.config.warmup_episodes or self.buffer.total_steps < need:
            self.collect_episode(explore=True, random_policy=True)

    # -- training ----------------------------------------------------------------

    def _q_values_for_mask(self, sweep, actions: np.ndarray) -> np.ndarray:
        """Q(z~_tau, a_tau) per trajectory for tau = 1..T-1, shape [N, T-1]."""
        T1 = sweep.horizon - 1
        N = sweep.batch
        h = sweep.h_flat.data[:T1 * N]
        z = sweep.post_z_flat.data[:T1 * N]
        a = np.transpose(actions[:, 1:, :], (1, 0, 2)).reshape(T1 * N, -1)
        q = q_value(self.model, self.value, h, z, a, self.config.agent.gamma)
        return q.reshape(T1, N).T

    def _window_loss(self, obs, actions):
        cfg = self.config
        sweep = forward_sweep(self.model, obs, actions, self._sweep_rng)
        retrace = None
        mask = np.ones((actions.shape[0], actions.shape[1] - 1))
        if cfg.losses.retrace_weight > 0.0 and actions.shape[1] >= 2:
            if cfg.truncation.mode != "off":
                q = self._q_values_for_mask(sweep, actions)
                mask = masks_for_batch(q, cfg.truncation, self.global_step)
            retrace = retrace_sweep(self.model, sweep, self._sweep_rng)
        loss, report = total_loss(obs, sweep, retrace, mask, self.model,
                                  self._policy_fn(), cfg.losses)
        return loss, report, sweep

    def train_step(self) -> dict:
        """One Algorithm-style update: model loss (masked) then agent update."""
        cfg = self.config
        batch = self.buffer.sample_segments(cfg.batch_size, cfg.segment_len,
                                            self._sample_rng)
        T = cfg.segment_len
        K = cfg.model_window or T
        if K >= T:
            windows = [(0, T)]
        else:
            windows = [(k, k + K) for k in range(T - K)]

        losses, reports = [], []
        last_sweep = None
        for lo, hi in windows:
            loss_k, report_k, sweep = self._window_loss(
                batch.obs[:, lo:hi + 1], batch.actions[:, lo:hi])
            losses.append(loss_k)
            reports.append(report_k)
            last_sweep = sweep
        loss_avg = losses[0] if len(losses) == 1 else \
            sum(losses[1:], start=losses[0]) * (1.0 / len(losses))

        zero_grad(self.model.named_parameters().values())
        try:
            loss_avg.backward()
        except NumericError as err:
            raise NumericError(
                f"model backward failed at step {self.global_step}: {err}") from err
        self.model_opt.step()

        # agent update from imagined rollouts started at posterior latents
        starts_h = last_sweep.h_flat.data
        starts_z = last_sweep.post_z_flat.data
        if starts_z.shape[0] > cfg.imagine_batch:
            idx = self._agent_rng.choice(starts_z.shape[0], size=cfg.imagine_batch,
                                         replace=False)
            starts_h, starts_z = starts_h[idx], starts_z[idx]
        rollout = imagine(self.model, self.policy, self.value, starts_h, starts_z,
                          cfg.agent.horizon, self._agent_rng)
        actor_loss, critic_loss = actor_critic_update(
            self.policy, self.value, rollout, cfg.agent, self.policy_opt, self.value_opt)

        def avg(name):
            return float(np.mean([getattr(r, name) for r in reports]))

        report = {
            "total": avg("total"), "elbo": avg("elbo_term"), "kl": avg("kl_term"),
            "recon": avg("recon_term"), "retrace": avg("retrace_term"),
            "masked_fraction": avg("masked_fraction"),
            "actor_loss": actor_loss, "critic_loss": critic_loss,
        }
        return report

    def train(self, on_eval=None) -> None:
        """Run the interleaved collect/update loop to total_steps."""
        cfg = self.config
        self.warmup()
        self._begin_episode(explore=True)
        while self.global_step < cfg.total_steps:
            for _ in range(cfg.env_steps_per_train_step):
                if self._col is None:
                    self._begin_episode(explore=True)
                if self._collect_one_step():
                    pass
            report = self.train_step()
            self.global_step += 1
            row = {"step": self.global_step, **report,
                   "eval_return_mean": "", "eval_return_sd": ""}
            if cfg.eval_every > 0 and self.global_step % cfg.eval_every == 0:
                mean, sd, _ = self.evaluate(cfg.eval_episodes)
                row["eval_return_mean"] = mean
                row["eval_return_sd"] = sd
                if on_eval is not None:
                    on_eval(self, mean, sd)
            self.metrics.append(row)

    # -- evaluation ----------------------------------------------------------------

    def evaluate(self, episodes: int, seed: int | None = None,
                 spec: EnvSpec | None = None) -> tuple[float, float, list[float]]:
        """Greedy mean-action episodes on a fresh environment instance."""
        spec = spec or self.config.env
        env = make_env(spec)
        base = self.config.seed * 100_003 + 17 if seed is None else seed
        returns = []
        for k in range(episodes):
            rng = np.random.default_rng(base + 7919 * k)
            res = env.reset(int(base + k))
            state = initial_state(self.model, 1, rng)
            prev_action = np.zeros(env.action_dim)
            total = 0.0
            while not res.terminal:
                with no_grad():
                    e = embed(self.model, res.observation[None, :])
                    state = posterior_step(self.model, state, prev_action[None, :], e, rng)
                    a = mean_action(self.policy, state.z).data[0]
                res = env.step(a)
                prev_action = np.asarray(a, dtype=np.float64)
                total += res.reward
            returns.append(total)
        mean = float(np.mean(returns))
        sd = float(np.std(returns, ddof=0)) if episodes > 1 else 0.0
        return mean, sd, returns

    def checkpoint_blocks(self) -> dict[str, np.ndarray]:
        blocks = {}
        for name, p in self.model.named_parameters().items():
            blocks[f"model.{name}"] = p.data
        for name, p in self.policy.items():
            blocks[f"policy.{name}"] = p.data
        for name, p in self.value.items():
            blocks[f"value.{name}"] = p.data
        for label, opt in (("model", self.model_opt), ("policy", self.policy_opt),
                           ("value", self.value_opt)):
            for name, arr in opt.state.m.items():
                blocks[f"optim.{label}.m.{name}"] = arr
            for name, arr in opt.state.v.items():
                blocks[f"optim.{label}.v.{name}"] = arr
        return blocks

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {
            "step": self.global_step,
            "optim_steps": {"model": self.model_opt.state.step_count,
                            "policy": self.policy_opt.state.step_count,
                            "value": self.value_opt.state.step_count},
        }
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, self.checkpoint_blocks(), meta)

    def load_blocks(self, blocks: dict[str, np.ndarray], meta: dict) -> None:
        for name, p in self.model.named_parameters().items():
            p.data[:] = blocks[f"model.{name}"]
        for name, p in self.policy.items():
            p.data[:] = blocks[f"policy.{name}"]
        for name, p in self.value.items():
            p.data[:] = blocks[f"value.{name}"]
        for label, opt in (("model", self.model_opt), ("policy", self.policy_opt),
                           ("value", self.value_opt)):
            for name in opt.state.m:
                opt.state.m[name][:] = blocks[f"optim.{label}.m.{name}"]
                opt.state.v[name][:] = blocks[f"optim.{label}.v.{name}"]
            opt.state.step_count = int(meta["optim_steps"][label])
        self.global_step = int(meta["step"])


def transfer_eval(trainer: Trainer, change_sets: list[dict], n_seeds: int = 15,
                  eval_episodes: int = 1, compare: Trainer | None = None) -> list[dict]:
    """Zero-shot evaluation on perturbed environments, optionally with a
    Welch one-sided test against a comparison agent."""
    rows = []
    for changes in change_sets:
        spec = perturb(trainer.config.env, changes)
        returns = [trainer.evaluate(eval_episodes, seed=1000 + 31 * s, spec=spec)[0]
                   for s in range(n_seeds)]
        row = {"changes": dict(changes), "mean": float(np.mean(returns)),
               "sd": float(np.std(returns, ddof=0)), "returns": returns}
        if compare is not None:
            other = [compare.evaluate(eval_episodes, seed=1000 + 31 * s, spec=spec)[0]
                     for s in range(n_seeds)]
            t, p = welch_t_one_sided(returns, other)
            row["t"] = t
            row["p_value"] = p
            row["compare_mean"] = float(np.mean(other))
        rows.append(row)
    return rows


def rollout_error_eval(trainer: Trainer, horizons: list[int], n_trajectories: int = 5,
                       context: int = 5, seed: int = 0,
                       action_source: str = "random") -> dict[int, float]:
    """Mean open-loop observation MSE per horizon over freshly collected trajectories.

    Trajectories are rolled with random actions by default so two models can
    be compared on identical data; "policy" uses greedy actions instead.
    """
    horizons = sorted(set(int(h) for h in horizons))
    if not horizons or horizons[0] < 1:
        raise ContractViolation("horizons must be >= 1")
    kmax = max(horizons)
    env = make_env(trainer.config.env)
    errs = {h: [] for h in horizons}
    for traj in range(n_trajectories):
        rng = np.random.default_rng(seed + 613 * traj)
        res = env.reset(seed + traj)
        obs, acts = [res.observation], []
        state = initial_state(trainer.model, 1, rng)
        prev_action = np.zeros(env.action_dim)
        while not res.terminal:
            if action_source == "random":
                a = rng.uniform(-1, 1, size=env.action_dim)
            else:
                with no_grad():
                    e = embed(trainer.model, res.observation[None, :])
                    state = posterior_step(trainer.model, state, prev_action[None, :], e, rng)
                    a = mean_action(trainer.policy, state.z).data[0]
                prev_action = np.asarray(a, dtype=np.float64)
            res = env.step(a)
            obs.append(res.observation)
            acts.append(np.asarray(a, dtype=np.float64))
        obs, acts = np.stack(obs), np.stack(acts)
        if acts.shape[0] < context - 1 + kmax:
            continue
        _, step_errs = open_loop_rollout(trainer.model, obs, acts, context, kmax,
                                         np.random.default_rng(seed + 801 * traj))
        for h in horizons:
            errs[h].append(float(np.mean(step_errs[:h])))
    return {h: float(np.mean(v)) for h, v in errs.items() if v}


def export_latents(trainer: Trainer, episode: Episode) -> np.ndarray:
    """Rows of (step_in_episode, posterior latent, retraced latent) for one episode."""
    obs = episode.obs[None, :, :]
    acts = episode.actions[None, :, :]
    with no_grad():
        sweep = forward_sweep(trainer.model, obs, acts, np.random.default_rng(0))
        retrace = retrace_sweep(trainer.model, sweep, np.random.default_rng(1))
    T1 = retrace.steps
    z_tilde = np.concatenate([s.z.data for s in sweep.posteriors[:-1]], axis=0)
    z_check = retrace.states.z.data
    steps = np.arange(1, T1 + 1, dtype=np.float64)[:, None]
    return np.concatenate([steps, z_tilde, z_check], axis=1)
