"""Recurrent latent dynamics model, sweeps, rollouts, and checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .model import (
    LatentState,
    ModelConfig,
    ModelParams,
    RetraceResult,
    SweepResult,
    decode,
    embed,
    forward_sweep,
    init_params,
    initial_state,
    open_loop_rollout,
    posterior_step,
    prior_step,
    retrace_sweep,
    reverse_action,
    reward_head,
)

__all__ = [
    "LatentState",
    "ModelConfig",
    "ModelParams",
    "RetraceResult",
    "SweepResult",
    "decode",
    "embed",
    "forward_sweep",
    "init_params",
    "initial_state",
    "load_checkpoint",
    "open_loop_rollout",
    "posterior_step",
    "prior_step",
    "retrace_sweep",
    "reverse_action",
    "reward_head",
    "save_checkpoint",
]
