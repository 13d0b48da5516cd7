"""Built-in 2D tabletop benchmark: world, renderer, tasks, experts, data."""

from .dataset import Demonstration, DatasetError, gen_dataset, load_dataset, save_dataset
from .env import MiniEnv
from .expert import ExpertController, InfeasibleTaskError, rollout_expert
from .render import RenderConfig, observe_u8, render_view, render_views
from .tasks import TASK_ORDER, TASKS, TaskSpec, instruction_corpus
from .world import BLOCK_NAMES, WorldState, sample_initial_state, step

__all__ = [
    "WorldState",
    "step",
    "sample_initial_state",
    "BLOCK_NAMES",
    "TASKS",
    "TASK_ORDER",
    "TaskSpec",
    "instruction_corpus",
    "RenderConfig",
    "render_view",
    "render_views",
    "observe_u8",
    "ExpertController",
    "rollout_expert",
    "InfeasibleTaskError",
    "Demonstration",
    "gen_dataset",
    "save_dataset",
    "load_dataset",
    "DatasetError",
    "MiniEnv",
]
