"""1-D walker with a posture variable and a cliff past which no action helps.

Inside the safe band the position responds first-order to the action, so the
negated action reverses any uncontested transition exactly. Crossing the cliff
threshold latches the irreversible flag: the posture then decays toward the
fallen value regardless of action, the position freezes, and reward drops to
zero. The episode terminates once the posture is fully fallen.
"""

from __future__ import annotations

import numpy as np

from .base import Env, EnvSpec

X_RANGE = 1.2
CLIFF_X = 0.8
GOAL_X = 0.4
START_X = -0.5
START_JITTER = 0.1
POSTURE_DECAY = 2.0  # exp decay rate once fallen
FALLEN_THRESHOLD = 0.05


class CliffWalker1D(Env):
    def __init__(self, spec: EnvSpec):
        super().__init__(spec)
        self._x = 0.0
        self._posture = 1.0
        self._crossed = False

    def _core_obs_dim(self) -> int:
        return 2

    def _reset_state(self, rng: np.random.Generator) -> None:
        self._x = START_X + rng.uniform(-START_JITTER, START_JITTER)
        self._posture = 1.0
        self._crossed = False

    def _substep(self, action: np.ndarray) -> None:
        sp = self.spec
        if self._crossed:
            self._posture *= np.exp(-POSTURE_DECAY * sp.dt)
            return
        self._x = float(np.clip(self._x + (sp.stiffness / sp.mass) * action[0] * sp.dt,
                                -X_RANGE, X_RANGE))
        if self._x >= CLIFF_X:
            self._crossed = True

    def _observe(self) -> np.ndarray:
        return np.array([self._x, self._posture])

    def _reward(self) -> float:
        if self._crossed:
            return 0.0
        return 1.0 - 0.5 * abs(self._x - GOAL_X)

    def _done(self) -> bool:
        return self._crossed and self._posture < FALLEN_THRESHOLD

    def _irreversible(self) -> bool:
        return self._crossed

    def get_state(self) -> np.ndarray:
        return np.array([self._x, self._posture, float(self._crossed)])

    def set_state(self, state: np.ndarray) -> None:
        self._x = float(state[0])
        self._posture = float(state[1])
        self._crossed = bool(state[2] > 0.5)

    def _reverse_action(self, s, a, s_next):
        if s[2] > 0.5 or s_next[2] > 0.5:
            return None  # transition touches the fallen region
        return -a
