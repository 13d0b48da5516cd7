"""Scripted waypoint experts: approach, grip, transport, release.

The controller is a pure function of the current state, so it is robust to
action noise and reusable as an oracle policy during chain evaluation.
"""

from __future__ import annotations

import numpy as np

from .world import DRAWER_X, DRAWER_TRAVEL, HANDLE_Y_CLOSED, STEP_SCALE, WorldState, handle_pos
from .tasks import TASKS, ZONE_CENTER

__all__ = ["ExpertController", "rollout_expert", "InfeasibleTaskError"]

GRAB_TOL = 0.015
GRIP_HOLD = 1.0
GRIP_FREE = -1.0
CRUISE = 0.5  # motion cap: demos run tens of steps and keep direction readable


class InfeasibleTaskError(ValueError):
    """The requested task is not feasible from the given state."""


def _toward(gripper, target) -> np.ndarray:
    return np.clip((np.asarray(target) - gripper) / STEP_SCALE, -CRUISE, CRUISE)


def _move(gripper, target, grip) -> np.ndarray:
    return np.array([*(_toward(gripper, target)), grip])


_PLACE = {
    "push_red_left": ("red", lambda s: (0.10, float(np.clip(s.blocks[0, 1], 0.25, 0.65)))),
    "push_blue_right": ("blue", lambda s: (0.90, float(np.clip(s.blocks[2, 1], 0.25, 0.65)))),
    "move_green_to_zone": ("green", lambda s: ZONE_CENTER),
}


class ExpertController:
    """Emits one action per call; optionally jittered for demo diversity."""

    def __init__(self, task_id: str, rng: np.random.Generator | None = None, noise: float = 0.05):
        self.task_id = task_id
        self.rng = rng
        self.noise = noise

    def action(self, state: WorldState) -> np.ndarray:
        a = self._plan(state)
        if self.rng is not None and self.noise > 0:
            a = a + self.rng.uniform(-self.noise, self.noise, 3)
        return np.clip(a, -1.0, 1.0)

    def _plan(self, s: WorldState) -> np.ndarray:
        task = self.task_id
        if task in _PLACE:
            block, place = _PLACE[task]
            target = np.array(place(s))
            if s.held == block:
                if np.abs(s.gripper - target).max() <= GRAB_TOL:
                    return np.array([0.0, 0.0, GRIP_FREE])
                return _move(s.gripper, target, GRIP_HOLD)
            if s.held is not None or s.grip_closed:
                return np.array([0.0, 0.0, GRIP_FREE])
            block_pos = s.blocks[("red", "green", "blue").index(block)]
            if np.linalg.norm(s.gripper - block_pos) <= GRAB_TOL:
                return np.array([0.0, 0.0, GRIP_HOLD])
            return _move(s.gripper, block_pos, GRIP_FREE)

        if task in ("open_drawer", "close_drawer"):
            want_ext = 1.0 if task == "open_drawer" else 0.0
            if s.held == "handle":
                done = s.drawer_ext >= 0.92 if task == "open_drawer" else s.drawer_ext <= 0.08
                if done:
                    return np.array([0.0, 0.0, GRIP_FREE])
                return _move(s.gripper, (DRAWER_X, HANDLE_Y_CLOSED - DRAWER_TRAVEL * want_ext), GRIP_HOLD)
            if s.held is not None or s.grip_closed:
                return np.array([0.0, 0.0, GRIP_FREE])
            hp = handle_pos(s)
            if np.linalg.norm(s.gripper - hp) <= GRAB_TOL:
                return np.array([0.0, 0.0, GRIP_HOLD])
            return _move(s.gripper, hp, GRIP_FREE)

        if task in ("light_on", "light_off"):
            want = task == "light_on"
            if s.light_on == want:
                return np.array([0.0, 0.0, GRIP_FREE])  # release to finish
            if np.linalg.norm(s.gripper - s.lamp_pos) <= 0.03:
                if s.grip_closed:
                    return np.array([0.0, 0.0, GRIP_FREE])  # re-press needs an edge
                return np.array([0.0, 0.0, GRIP_HOLD])
            return _move(s.gripper, s.lamp_pos, GRIP_FREE)

        raise KeyError(f"unknown task id: {task}")


def rollout_expert(task_id: str, state: WorldState, rng: np.random.Generator, max_steps: int = 120, noise: float = 0.05):
    """Drive the world to task success; returns (states, actions) or None on
    controller timeout. ``states[t]`` is the state the action ``actions[t]``
    was taken from; the final state is appended last."""
    from .world import step

    task = TASKS[task_id]
    if not task.feasible(state):
        raise InfeasibleTaskError(f"{task_id} not feasible from the given state")
    controller = ExpertController(task_id, rng=rng, noise=noise)
    states = [state]
    actions = []
    for _ in range(max_steps):
        a = controller.action(state)
        state = step(state, a)
        actions.append(a)
        states.append(state)
        if task.success(state):
            return states, np.array(actions, dtype=np.float32)
    return None
