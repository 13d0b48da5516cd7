"""2D tabletop world: gripper, three colored blocks, a sliding drawer, and
a toggle lamp on a unit-square table.

Dynamics are total and purely functional: ``step`` maps (state, action) to
a new state with no randomness. Blocks move only while held; the drawer
tray follows its handle; the lamp toggles on a grip-press edge inside the
button zone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = ["WorldState", "step", "sample_initial_state", "BLOCK_NAMES"]

STEP_SCALE = 0.04  # table units of motion per unit action
GRAB_RADIUS = 0.05
BLOCK_HALF = 0.035
BLOCK_NAMES = ("red", "green", "blue")

DRAWER_X = 0.78
HANDLE_Y_CLOSED = 0.885
DRAWER_TRAVEL = 0.16  # handle y drops by this much when fully open

LAMP_BASE = (0.10, 0.88)
BUTTON_RADIUS = 0.05

ZONE_CENTER = (0.50, 0.15)
ZONE_HALF = 0.07


@dataclass(frozen=True)
class WorldState:
    gripper: np.ndarray  # (2,) position in [0,1]^2
    grip_closed: bool
    blocks: np.ndarray  # (3, 2) rows follow BLOCK_NAMES
    drawer_ext: float  # 0 closed .. 1 open
    light_on: bool
    held: str | None = None  # block name or "handle"
    lamp_pos: np.ndarray = field(default_factory=lambda: np.array(LAMP_BASE))


def handle_pos(state: WorldState) -> np.ndarray:
    return np.array([DRAWER_X, HANDLE_Y_CLOSED - DRAWER_TRAVEL * state.drawer_ext])


def _pressing(state_gripper, closed, lamp_pos) -> bool:
    return bool(closed and np.linalg.norm(state_gripper - lamp_pos) <= BUTTON_RADIUS)


def step(state: WorldState, action) -> WorldState:
    """Advance one step under [dx, dy, g]; components clamped to [-1, 1]."""
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    gripper = np.clip(state.gripper + a[:2] * STEP_SCALE, 0.0, 1.0)

    closed = state.grip_closed
    held = state.held
    if a[2] > 0 and not closed:
        closed = True
        held = _nearest_graspable(state, gripper)
    elif a[2] < 0 and closed:
        closed = False
        held = None

    blocks = state.blocks
    drawer_ext = state.drawer_ext
    if held == "handle":
        drawer_ext = float(np.clip((HANDLE_Y_CLOSED - gripper[1]) / DRAWER_TRAVEL, 0.0, 1.0))
    elif held is not None:
        blocks = blocks.copy()
        blocks[BLOCK_NAMES.index(held)] = np.clip(gripper, BLOCK_HALF, 1.0 - BLOCK_HALF)

    was_pressing = _pressing(state.gripper, state.grip_closed, state.lamp_pos)
    now_pressing = _pressing(gripper, closed, state.lamp_pos)
    light_on = state.light_on ^ (now_pressing and not was_pressing)

    return replace(
        state,
        gripper=gripper,
        grip_closed=closed,
        blocks=blocks,
        drawer_ext=drawer_ext,
        light_on=light_on,
        held=held,
    )


def _nearest_graspable(state: WorldState, gripper) -> str | None:
    candidates = [(float(np.linalg.norm(gripper - state.blocks[i])), name) for i, name in enumerate(BLOCK_NAMES)]
    candidates.append((float(np.linalg.norm(gripper - handle_pos(state))), "handle"))
    dist, name = min(candidates)
    return name if dist <= GRAB_RADIUS else None


def sample_initial_state(rng: np.random.Generator, shift: bool = False) -> WorldState:
    """Randomized but always-workable start: blocks in the central band,
    drawer crisply open or closed, light either way."""
    while True:
        blocks = np.column_stack([rng.uniform(0.30, 0.70, 3), rng.uniform(0.30, 0.60, 3)])
        d01 = np.linalg.norm(blocks[0] - blocks[1])
        d02 = np.linalg.norm(blocks[0] - blocks[2])
        d12 = np.linalg.norm(blocks[1] - blocks[2])
        if min(d01, d02, d12) >= 0.12:
            break
    drawer_ext = float(rng.uniform(0.0, 0.08)) if rng.random() < 0.5 else float(rng.uniform(0.92, 1.0))
    lamp = np.array(LAMP_BASE)
    if shift:
        lamp = lamp + rng.uniform(-0.03, 0.03, 2)
    return WorldState(
        gripper=rng.uniform([0.15, 0.15], [0.85, 0.55]),
        grip_closed=False,
        blocks=blocks,
        drawer_ext=drawer_ext,
        light_on=bool(rng.random() < 0.5),
        held=None,
        lamp_pos=lamp,
    )
