"""Damped point-mass navigating a walled arena toward a fixed goal.

Two physics modes share the wall geometry and reward:

* inertial (default): explicit Euler on (position, velocity),
  position += velocity*dt, velocity += (stiffness*action/mass - friction*velocity)*dt.
  One-step reversal is solvable in closed form for the velocity but only
  special transitions return the full state, so the reverse oracle usually
  reports None.
* symmetric (``spec.symmetric``): first-order kinematics, position +=
  (stiffness*action/mass)*dt and no velocity state. Away from walls every
  transition is exactly reversed by the negated action (friction does not
  enter this regime).
"""

from __future__ import annotations

import numpy as np

from .base import Env, EnvSpec

ARENA = 1.0  # half-width of the outer box
GOAL = np.array([0.0, 0.55])
START = np.array([0.0, -0.55])
START_JITTER = 0.1
# inner wall with a central door: two rectangles (xmin, xmax, ymin, ymax)
INNER_WALLS = (
    (-ARENA, -0.3, -0.06, 0.06),
    (0.3, ARENA, -0.06, 0.06),
)


def _resolve_walls(pos: np.ndarray, vel: np.ndarray | None) -> None:
    """Project a position out of walls in place; zero the normal velocity."""
    for axis in (0, 1):
        if pos[axis] > ARENA:
            pos[axis] = ARENA
            if vel is not None:
                vel[axis] = 0.0
        elif pos[axis] < -ARENA:
            pos[axis] = -ARENA
            if vel is not None:
                vel[axis] = 0.0
    for xmin, xmax, ymin, ymax in INNER_WALLS:
        if xmin < pos[0] < xmax and ymin < pos[1] < ymax:
            # push out along the axis of least penetration
            dx = min(pos[0] - xmin, xmax - pos[0])
            dy = min(pos[1] - ymin, ymax - pos[1])
            if dx < dy:
                pos[0] = xmin if pos[0] - xmin < xmax - pos[0] else xmax
                if vel is not None:
                    vel[0] = 0.0
            else:
                pos[1] = ymin if pos[1] - ymin < ymax - pos[1] else ymax
                if vel is not None:
                    vel[1] = 0.0


def in_free_space(pos: np.ndarray) -> bool:
    if np.any(np.abs(pos) > ARENA):
        return False
    for xmin, xmax, ymin, ymax in INNER_WALLS:
        if xmin < pos[0] < xmax and ymin < pos[1] < ymax:
            return False
    return True


class PointMaze(Env):
    def __init__(self, spec: EnvSpec):
        super().__init__(spec)
        self._pos = np.zeros(2)
        self._vel = np.zeros(2)

    def _core_obs_dim(self) -> int:
        return 2 if self.spec.symmetric else 4

    def _reset_state(self, rng: np.random.Generator) -> None:
        self._pos = START + rng.uniform(-START_JITTER, START_JITTER, size=2)
        self._vel = np.zeros(2)

    def _substep(self, action: np.ndarray) -> None:
        sp = self.spec
        gain = sp.stiffness / sp.mass
        if sp.symmetric:
            self._pos = self._pos + gain * action * sp.dt
            _resolve_walls(self._pos, None)
        else:
            self._pos = self._pos + self._vel * sp.dt
            self._vel = self._vel + (gain * action - sp.friction * self._vel) * sp.dt
            _resolve_walls(self._pos, self._vel)

    def _observe(self) -> np.ndarray:
        if self.spec.symmetric:
            return self._pos.copy()
        return np.concatenate([self._pos, self._vel])

    def _reward(self) -> float:
        return -float(np.linalg.norm(self._pos - GOAL))

    def get_state(self) -> np.ndarray:
        if self.spec.symmetric:
            return self._pos.copy()
        return np.concatenate([self._pos, self._vel])

    def set_state(self, state: np.ndarray) -> None:
        state = np.asarray(state, dtype=np.float64)
        if self.spec.symmetric:
            self._pos = state[:2].copy()
            self._vel = np.zeros(2)
        else:
            self._pos = state[:2].copy()
            self._vel = state[2:4].copy()

    def _reverse_action(self, s, a, s_next):
        if self.spec.symmetric:
            return -a
        # invert the linear velocity update over action_repeat substeps:
        # v' = v*c^k + gain*a*dt*sum(c^i), c = 1 - friction*dt
        sp = self.spec
        k = sp.action_repeat
        c = 1.0 - sp.friction * sp.dt
        gain = sp.stiffness / sp.mass
        geom = sum(c**i for i in range(k))
        v0, v1 = s[2:4], s_next[2:4]
        return (v0 - v1 * c**k) / (gain * sp.dt * geom)
