"""Demonstration records and the binary dataset container.

Container layout: magic ``RBDS``, u32 version, u32 demo count; per demo a
length-prefixed UTF-8 task id, five length-prefixed UTF-8 instruction
strings (standard first), u32 step count T, frames as raw u8 RGB in
view-major order (2, T, 3, 48, 48), then actions as T x 3 float32
little-endian.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .expert import rollout_expert
from .render import RenderConfig, observe_u8
from .tasks import TASKS
from .world import WorldState, sample_initial_state

__all__ = ["Demonstration", "gen_dataset", "save_dataset", "load_dataset", "DatasetError"]

MAGIC = b"RBDS"
VERSION = 1
N_VIEWS = 2
RES = 48


class DatasetError(RuntimeError):
    """Malformed dataset container."""


@dataclass
class Demonstration:
    """One expert trajectory with its full instruction set."""

    task_id: str
    instructions: list[str]  # standard phrasing first, then 4 paraphrases
    frames: np.ndarray  # (2, T, 3, 48, 48) uint8, view-major
    actions: np.ndarray  # (T, 3) float32
    success: bool = True

    @property
    def length(self) -> int:
        return self.actions.shape[0]

    def check(self) -> None:
        v, t, c, h, w = self.frames.shape
        if (v, c, h, w) != (N_VIEWS, 3, RES, RES) or t != self.actions.shape[0]:
            raise DatasetError(f"inconsistent demo shapes: frames {self.frames.shape}, actions {self.actions.shape}")
        if len(self.instructions) != 5:
            raise DatasetError(f"expected 5 instruction variants, got {len(self.instructions)}")


def record_demo(task_id: str, state: WorldState, rng: np.random.Generator, render_cfg: RenderConfig = RenderConfig()) -> Demonstration | None:
    rolled = rollout_expert(task_id, state, rng)
    if rolled is None:
        return None
    states, actions = rolled
    # frame t is the observation the action at t was taken from
    frames = np.stack([observe_u8(s, render_cfg) for s in states[:-1]], axis=1)
    return Demonstration(
        task_id=task_id,
        instructions=TASKS[task_id].instructions(),
        frames=frames,
        actions=actions,
    )


def gen_dataset(n_per_task: int, seed: int, path: str | None = None) -> list[Demonstration]:
    """Expert demos for every task from randomized feasible starts; writes
    the container when ``path`` is given. Same seed, same bytes."""
    if n_per_task < 1:
        raise ValueError("n_per_task must be >= 1")
    demos = []
    for ti, (task_id, task) in enumerate(TASKS.items()):
        for j in range(n_per_task):
            rng = np.random.default_rng(np.random.SeedSequence([seed, ti, j]))
            demo = None
            while demo is None:
                state = sample_initial_state(rng)
                if not task.feasible(state):
                    continue
                demo = record_demo(task_id, state, rng)
            demo.check()
            demos.append(demo)
    if path is not None:
        save_dataset(demos, path)
    return demos


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def save_dataset(demos: list[Demonstration], path: str) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(demos))]
    for demo in demos:
        demo.check()
        parts.append(_pack_str(demo.task_id))
        for instr in demo.instructions:
            parts.append(_pack_str(instr))
        parts.append(struct.pack("<I", demo.length))
        parts.append(np.ascontiguousarray(demo.frames, dtype=np.uint8).tobytes())
        parts.append(np.ascontiguousarray(demo.actions, dtype="<f4").tobytes())
    payload = b"".join(parts)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_dataset(path: str) -> list[Demonstration]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise DatasetError(f"{path}: bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise DatasetError(f"{path}: unsupported version {version}")
    off = 12
    demos = []

    def read_str():
        nonlocal off
        (n,) = struct.unpack_from("<I", blob, off)
        off += 4
        s = blob[off : off + n].decode("utf-8")
        off += n
        return s

    try:
        for _ in range(count):
            task_id = read_str()
            instructions = [read_str() for _ in range(5)]
            (t,) = struct.unpack_from("<I", blob, off)
            off += 4
            n_frame_bytes = N_VIEWS * t * 3 * RES * RES
            frames = np.frombuffer(blob, dtype=np.uint8, count=n_frame_bytes, offset=off).reshape(N_VIEWS, t, 3, RES, RES)
            off += n_frame_bytes
            actions = np.frombuffer(blob, dtype="<f4", count=t * 3, offset=off).reshape(t, 3).copy()
            off += 4 * t * 3
            demo = Demonstration(task_id=task_id, instructions=instructions, frames=frames.copy(), actions=actions)
            demo.check()
            demos.append(demo)
    except (struct.error, ValueError) as exc:
        raise DatasetError(f"{path}: truncated at offset {off}") from exc
    if off != len(blob):
        raise DatasetError(f"{path}: {len(blob) - off} trailing bytes")
    return demos
