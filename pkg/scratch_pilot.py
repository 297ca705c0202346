"""Pilot run: criteria 6/7/8 feasibility on the symmetric point maze."""
import sys
import time

import numpy as np

from retracewm.agent import AgentConfig
from retracewm.envs import EnvSpec, make_env
from retracewm.losses import LossConfig
from retracewm.numcore import Tensor, no_grad
from retracewm.trainer import TrainConfig, Trainer, rollout_error_eval
from retracewm.truncation import TruncationConfig
from retracewm.worldmodel import forward_sweep, reverse_action


def smoke_config(seed, retrace_weight, steps=1500):
    return TrainConfig(
        env=EnvSpec(name="pointmaze", action_dim=2, symmetric=True),
        batch_size=16, segment_len=16, total_steps=steps, eval_every=0,
        z_dim=12, h_dim=48, embed_dim=24, hidden_dim=48,
        imagine_batch=64, seed=seed,
        losses=LossConfig(retrace_weight=retrace_weight),
        truncation=TruncationConfig(mode="off"),
        agent=AgentConfig(horizon=10, hidden_dim=48),
    )


def reverse_action_cosine(trainer, n_transitions=1000, seed=999):
    """Mean cosine between predicted reverse actions and -a on held-out data."""
    env = make_env(trainer.config.env)
    rng = np.random.default_rng(seed)
    sims, count = [], 0
    ep_idx = 0
    while count < n_transitions:
        res = env.reset(seed + ep_idx)
        obs, acts = [res.observation], []
        while not res.terminal:
            a = rng.uniform(-1, 1, size=env.action_dim)
            res = env.step(a)
            obs.append(res.observation)
            acts.append(a)
        ep_idx += 1
        obs, acts = np.stack(obs), np.stack(acts)
        with no_grad():
            sweep = forward_sweep(trainer.model, obs[None], acts[None],
                                  np.random.default_rng(seed + ep_idx))
            posts = sweep.posteriors
            z_prev = np.concatenate([s.z.data for s in posts[:-1]])
            z_next = np.concatenate([s.z.data for s in posts[1:]])
            pred = reverse_action(trainer.model, Tensor(z_next), Tensor(z_prev)).data
        target = -acts[1:]
        dots = np.sum(pred * target, axis=1)
        norms = np.linalg.norm(pred, axis=1) * np.linalg.norm(target, axis=1) + 1e-12
        sims.extend((dots / norms).tolist())
        count += len(dots)
    return float(np.mean(sims[:n_transitions]))


def main():
    steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1500
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
    results = {}
    for weight in (1.0, 0.0):
        t0 = time.time()
        tr = Trainer(smoke_config(seed, weight, steps))
        tr.train()
        dt = time.time() - t0
        totals = [m["total"] for m in tr.metrics]
        drop = totals[-1] / totals[99]
        cos = reverse_action_cosine(tr) if weight > 0 else float("nan")
        mse = rollout_error_eval(tr, horizons=[20], n_trajectories=5, seed=4242)
        results[weight] = (drop, cos, mse[20], dt)
        print(f"w={weight}: {dt:.0f}s, loss[99]={totals[99]:.3f} -> last={totals[-1]:.3f} "
              f"(ratio {drop:.3f}), cos={cos:.3f}, mse20={mse[20]:.5f}")
    print("mse ratio (w1/w0):", results[1.0][2] / results[0.0][2])


if __name__ == "__main__":
    main()
