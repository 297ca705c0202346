"""Toy continuous-control environments with known reversibility structure."""

from .base import (
    PERTURBABLE_FIELDS,
    EnvSpec,
    StepResult,
    make_env,
    perturb,
    reverse_action_oracle,
)
from .cliffwalker import CliffWalker1D
from .pointmaze import PointMaze

__all__ = [
    "CliffWalker1D",
    "EnvSpec",
    "PERTURBABLE_FIELDS",
    "PointMaze",
    "StepResult",
    "make_env",
    "perturb",
    "reverse_action_oracle",
]
