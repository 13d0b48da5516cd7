"""Task definitions: predicates, instruction variants, and nominal effects.

Each task carries a standard instruction plus four fixed paraphrases (the
paraphrase lists stand in for generated ones so runs are reproducible).
``feasible`` gates sampling; ``apply_effect`` advances an abstract state
during chain construction so successive subtasks stay consistent.

Success additionally requires an open gripper ("hands-free" completion),
so every demonstration ends released and later chain subtasks start from
states the experts also start from.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .world import BLOCK_NAMES, ZONE_CENTER, WorldState

__all__ = ["TaskSpec", "TASKS", "TASK_ORDER", "instruction_corpus"]

LEFT_X = 0.18
RIGHT_X = 0.82
ZONE_TOL = 0.06


def _red(s: WorldState) -> np.ndarray:
    return s.blocks[BLOCK_NAMES.index("red")]


def _green(s: WorldState) -> np.ndarray:
    return s.blocks[BLOCK_NAMES.index("green")]


def _blue(s: WorldState) -> np.ndarray:
    return s.blocks[BLOCK_NAMES.index("blue")]


def _set_block(s: WorldState, name: str, pos) -> WorldState:
    blocks = s.blocks.copy()
    blocks[BLOCK_NAMES.index(name)] = pos
    return replace(s, blocks=blocks)


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    standard: str
    paraphrases: tuple[str, str, str, str]
    success: Callable[[WorldState], bool]
    feasible: Callable[[WorldState], bool]
    apply_effect: Callable[[WorldState], WorldState]

    def instructions(self) -> list[str]:
        return [self.standard, *self.paraphrases]


_SPECS = [
    TaskSpec(
        task_id="push_red_left",
        standard="push the red block to the left",
        paraphrases=(
            "slide the red block left",
            "move the red block to the left side",
            "shove the red block leftwards",
            "take the red block and push it left",
        ),
        success=lambda s: _red(s)[0] <= LEFT_X and not s.grip_closed,
        feasible=lambda s: _red(s)[0] >= 0.30,
        apply_effect=lambda s: _set_block(s, "red", [0.10, float(_red(s)[1])]),
    ),
    TaskSpec(
        task_id="push_blue_right",
        standard="push the blue block to the right",
        paraphrases=(
            "slide the blue block right",
            "move the blue block to the right side",
            "shove the blue block rightwards",
            "take the blue block and push it right",
        ),
        success=lambda s: _blue(s)[0] >= RIGHT_X and not s.grip_closed,
        feasible=lambda s: _blue(s)[0] <= 0.70,
        apply_effect=lambda s: _set_block(s, "blue", [0.90, float(_blue(s)[1])]),
    ),
    TaskSpec(
        task_id="move_green_to_zone",
        standard="move the green block into the zone",
        paraphrases=(
            "put the green block in the marked zone",
            "place the green block inside the zone",
            "carry the green block over to the zone",
            "drop the green block in the target area",
        ),
        success=lambda s: float(np.abs(_green(s) - ZONE_CENTER).max()) <= ZONE_TOL and not s.grip_closed,
        feasible=lambda s: float(np.abs(_green(s) - ZONE_CENTER).max()) >= 0.12,
        apply_effect=lambda s: _set_block(s, "green", list(ZONE_CENTER)),
    ),
    TaskSpec(
        task_id="open_drawer",
        standard="open the drawer",
        paraphrases=(
            "pull the drawer out",
            "slide open the drawer",
            "pull out the drawer",
            "yank the drawer open",
        ),
        success=lambda s: s.drawer_ext >= 0.8 and not s.grip_closed,
        feasible=lambda s: s.drawer_ext <= 0.2,
        apply_effect=lambda s: replace(s, drawer_ext=1.0),
    ),
    TaskSpec(
        task_id="close_drawer",
        standard="close the drawer",
        paraphrases=(
            "push the drawer shut",
            "slide the drawer closed",
            "push the drawer back in",
            "shut the drawer",
        ),
        success=lambda s: s.drawer_ext <= 0.2 and not s.grip_closed,
        feasible=lambda s: s.drawer_ext >= 0.8,
        apply_effect=lambda s: replace(s, drawer_ext=0.0),
    ),
    TaskSpec(
        task_id="light_on",
        standard="turn on the light",
        paraphrases=(
            "switch the light on",
            "press the button to turn on the lamp",
            "make the lamp glow",
            "flip the light on",
        ),
        success=lambda s: s.light_on and not s.grip_closed,
        feasible=lambda s: not s.light_on,
        apply_effect=lambda s: replace(s, light_on=True),
    ),
    TaskSpec(
        task_id="light_off",
        standard="turn off the light",
        paraphrases=(
            "switch the light off",
            "press the button to turn off the lamp",
            "make the lamp go dark",
            "flip the light off",
        ),
        success=lambda s: not s.light_on and not s.grip_closed,
        feasible=lambda s: s.light_on,
        apply_effect=lambda s: replace(s, light_on=False),
    ),
]

TASKS: dict[str, TaskSpec] = {t.task_id: t for t in _SPECS}
TASK_ORDER: tuple[str, ...] = tuple(TASKS)


def instruction_corpus() -> list[str]:
    """Every instruction string in the benchmark, standard first."""
    out = []
    for task in TASKS.values():
        out.extend(task.instructions())
    return out
