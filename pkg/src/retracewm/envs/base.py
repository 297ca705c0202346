"""Environment interface, specs, perturbation, and the reverse-action oracle."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation

PHYSICS_FIELDS = ("mass", "friction", "stiffness")
PERTURBABLE_FIELDS = PHYSICS_FIELDS + ("reward_offset",)


@dataclass(frozen=True)
class EnvSpec:
    """Static environment description; physics fields are perturbable."""

    name: str = "pointmaze"
    action_dim: int = 2
    mass: float = 1.0
    friction: float = 0.5
    stiffness: float = 1.0
    reward_offset: float = 0.0
    dt: float = 0.1
    max_episode_steps: int = 200  # integrator substeps per episode
    action_repeat: int = 2
    distractor_dim: int = 0
    symmetric: bool = False  # kinematic (first-order) point: exactly reversible

    def __post_init__(self):
        if self.action_dim < 1:
            raise ContractViolation("action_dim must be >= 1")
        for f in PHYSICS_FIELDS:
            if getattr(self, f) <= 0:
                raise ContractViolation(f"physics parameter '{f}' must be > 0")
        if self.max_episode_steps <= 0:
            raise ContractViolation("max_episode_steps must be > 0")
        if self.dt <= 0:
            raise ContractViolation("dt must be > 0")
        if self.action_repeat < 1:
            raise ContractViolation("action_repeat must be >= 1")
        if self.distractor_dim < 0:
            raise ContractViolation("distractor_dim must be >= 0")


@dataclass
class StepResult:
    """One agent-level transition outcome. irreversible_flag is test-only ground truth."""

    observation: np.ndarray
    reward: float
    terminal: bool
    irreversible_flag: bool

    def __post_init__(self):
        if not np.all(np.isfinite(self.observation)) or not np.isfinite(self.reward):
            raise ContractViolation("non-finite observation or reward")


def perturb(spec: EnvSpec, changes: dict) -> EnvSpec:
    """Return a new spec with physics/reward changes applied.

    Reward offset adds a constant to every emitted reward and leaves the
    dynamics untouched; physics values must stay positive.
    """
    for key, value in changes.items():
        if key not in PERTURBABLE_FIELDS:
            raise ContractViolation(f"unknown perturbable field '{key}'")
        if key in PHYSICS_FIELDS and value <= 0:
            raise ContractViolation(f"physics parameter '{key}' must be > 0, got {value}")
    return dataclasses.replace(spec, **changes)


class Env:
    """Base class: subclasses implement _reset_state, _substep, _observe, _reward."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self._rng: np.random.Generator | None = None
        self._steps_taken = 0  # substeps
        self._terminal = True

    @property
    def obs_dim(self) -> int:
        return self._core_obs_dim() + self.spec.distractor_dim

    @property
    def action_dim(self) -> int:
        return self.spec.action_dim

    # -- contract -------------------------------------------------------------

    def reset(self, seed: int) -> StepResult:
        self._rng = np.random.default_rng(seed)
        self._steps_taken = 0
        self._terminal = False
        self._reset_state(self._rng)
        return StepResult(self._observe_full(), 0.0, False, self._irreversible())

    def step(self, action) -> StepResult:
        if self._terminal:
            raise ContractViolation("step() called on a terminal episode")
        action = np.clip(np.asarray(action, dtype=np.float64).reshape(self.action_dim), -1.0, 1.0)
        for _ in range(self.spec.action_repeat):
            self._substep(action)
            self._steps_taken += 1
            if self._steps_taken >= self.spec.max_episode_steps:
                break
        reward = self._reward() + self.spec.reward_offset
        self._terminal = self._steps_taken >= self.spec.max_episode_steps or self._done()
        return StepResult(self._observe_full(), reward, self._terminal, self._irreversible())

    # -- state access for oracles / evaluation --------------------------------

    def get_state(self) -> np.ndarray:
        raise NotImplementedError

    def set_state(self, state: np.ndarray) -> None:
        raise NotImplementedError

    def clone(self) -> "Env":
        other = type(self)(self.spec)
        other._rng = np.random.default_rng(0)
        other._steps_taken = 0
        other._terminal = False
        other.set_state(self.get_state())
        return other

    # -- hooks -----------------------------------------------------------------

    def _core_obs_dim(self) -> int:
        raise NotImplementedError

    def _reset_state(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def _substep(self, action: np.ndarray) -> None:
        raise NotImplementedError

    def _observe(self) -> np.ndarray:
        raise NotImplementedError

    def _reward(self) -> float:
        raise NotImplementedError

    def _done(self) -> bool:
        return False

    def _irreversible(self) -> bool:
        return False

    def _reverse_action(self, s: np.ndarray, a: np.ndarray, s_next: np.ndarray):
        """Candidate action reversing (s, a, s_next), or None."""
        return None

    def _observe_full(self) -> np.ndarray:
        core = self._observe()
        if self.spec.distractor_dim:
            noise = self._rng.uniform(-1.0, 1.0, size=self.spec.distractor_dim)
            return np.concatenate([core, noise])
        return core


def reverse_action_oracle(env: Env, s: np.ndarray, a: np.ndarray, s_next: np.ndarray,
                          tol: float = 1e-6):
    """Ground-truth reverse action for a recorded transition, or None.

    Solves the one-step update for a candidate reversing action, re-simulates
    it from s_next on a cloned environment, and only returns the action when
    the full state comes back within tol.
    """
    candidate = env._reverse_action(np.asarray(s, float), np.asarray(a, float),
                                    np.asarray(s_next, float))
    if candidate is None:
        return None
    if np.any(np.abs(candidate) > 1.0 + 1e-12):
        return None  # reversing action exists but is outside the action bounds
    sim = env.clone()
    sim.set_state(np.asarray(s_next, float))
    sim.step(candidate)
    if np.max(np.abs(sim.get_state() - np.asarray(s, float))) < tol:
        return np.clip(candidate, -1.0, 1.0)
    return None


def make_env(spec: EnvSpec) -> Env:
    from .cliffwalker import CliffWalker1D
    from .pointmaze import PointMaze

    if spec.name == "pointmaze":
        return PointMaze(spec)
    if spec.name == "cliffwalker":
        return CliffWalker1D(spec)
    raise ContractViolation(f"unknown environment '{spec.name}'")
