"""Sequential 5-subtask chain evaluation and the average-length metric.

A chain runs subtasks in order against one persistent world: the
instruction resets between subtasks, the world does not, and the chain
stops at the first failure (prefix success semantics). The headline
metric is the sum of positional success rates, in [0, 5].
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .minisim import MiniEnv, TASKS, sample_initial_state
from .minisim.expert import ExpertController
from .minisim.tasks import TaskSpec

__all__ = [
    "ChainResult",
    "EvalSummary",
    "sample_chain",
    "run_chain",
    "avg_length",
    "evaluate",
    "write_results",
    "OracleChainPolicy",
    "RandomPolicy",
]

BUDGET_PER_TASK = 160  # roughly twice the worst expert episode
CHAIN_LENGTH = 5


@dataclass(frozen=True)
class ChainResult:
    """Per-position outcomes for one chain; flags are a prefix of trues."""

    task_ids: tuple[str, ...]
    successes: tuple[bool, ...]
    steps_used: tuple[int, ...]

    def __post_init__(self):
        seen_failure = False
        for ok in self.successes:
            if seen_failure and ok:
                raise ValueError(f"success flags violate prefix semantics: {self.successes}")
            seen_failure |= not ok

    @property
    def n_completed(self) -> int:
        return int(sum(self.successes))


@dataclass(frozen=True)
class EvalSummary:
    rates: np.ndarray  # (5,) positional success rates, averaged over seeds
    avg_length: float
    std_over_seeds: float
    mode: str  # "standard" | "natural"
    shift: bool
    n_chains: int
    per_seed: tuple  # (seed, rates tuple, avg_length) triples

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "shift": self.shift,
            "n_chains": self.n_chains,
            "rates": [float(r) for r in self.rates],
            "avg_length": self.avg_length,
            "std_over_seeds": self.std_over_seeds,
            "per_seed": [
                {"seed": s, "rates": [float(r) for r in rates], "avg_length": al} for s, rates, al in self.per_seed
            ],
        }


def avg_length(rates) -> float:
    """Sum of positional success rates; rejects rate vectors that violate
    the prefix aggregation (a later position cannot outperform an earlier)."""
    rates = np.asarray(rates, dtype=np.float64)
    if rates.min() < 0.0 or rates.max() > 1.0:
        raise ValueError(f"rates must lie in [0, 1], got {rates}")
    if (np.diff(rates) > 1e-12).any():
        raise ValueError(f"rates must be non-increasing under prefix semantics, got {rates}")
    return float(rates.sum())


def sample_chain(state, rng: np.random.Generator, length: int = CHAIN_LENGTH) -> list[TaskSpec]:
    """Feasibility-consistent chain: each pick is feasible under the
    nominal effects of everything before it."""
    abstract = state
    chain = []
    for _ in range(length):
        candidates = [t for t in TASKS.values() if t.feasible(abstract)]
        if not candidates:
            raise RuntimeError("no feasible task remains; the task set should prevent this")
        task = candidates[int(rng.integers(len(candidates)))]
        chain.append(task)
        abstract = task.apply_effect(abstract)
    return chain


def run_chain(policy, env: MiniEnv, chain, instructions, budget_per_task: int = BUDGET_PER_TASK) -> ChainResult:
    """Drive the policy through the chain; the world persists across
    subtasks and the chain stops at the first failure."""
    successes = []
    steps_used = []
    for task, text in zip(chain, instructions):
        policy.set_instruction(text)
        done = task.success(env.state)
        used = 0
        while not done and used < budget_per_task:
            action = policy.act(env.observe())
            env.step(action)
            used += 1
            done = task.success(env.state)
        successes.append(done)
        steps_used.append(used)
        if not done:
            break
    pad = CHAIN_LENGTH - len(successes)
    return ChainResult(
        task_ids=tuple(t.task_id for t in chain),
        successes=tuple(successes) + (False,) * pad,
        steps_used=tuple(steps_used) + (0,) * pad,
    )


def _chain_instructions(chain, mode: str, rng: np.random.Generator) -> list[str]:
    if mode == "standard":
        return [t.standard for t in chain]
    if mode == "natural":
        return [t.paraphrases[int(rng.integers(len(t.paraphrases)))] for t in chain]
    raise ValueError(f"unknown instruction mode {mode!r}")


def _one_chain(make_policy, seed: int, c: int, mode: str, shift: bool, budget: int):
    rng = np.random.default_rng(np.random.SeedSequence([seed, c, 0xE7A1]))
    state = sample_initial_state(rng, shift=shift)
    env = MiniEnv(state=state, shift=shift)
    chain = sample_chain(state, rng)
    instructions = _chain_instructions(chain, mode, rng)
    policy = make_policy(env, seed * 1_000_003 + c)
    return run_chain(policy, env, chain, instructions, budget)


def _run_seed(make_policy, seed: int, n_chains: int, mode: str, shift: bool, budget: int, workers: int = 1) -> np.ndarray:
    flags = np.zeros((n_chains, CHAIN_LENGTH), dtype=bool)
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = pool.map(lambda c: _one_chain(make_policy, seed, c, mode, shift, budget), range(n_chains))
            for c, result in enumerate(results):
                flags[c] = result.successes
    else:
        for c in range(n_chains):
            flags[c] = _one_chain(make_policy, seed, c, mode, shift, budget).successes
    return flags.mean(axis=0)


def evaluate(
    make_policy,
    n_chains: int = 100,
    mode: str = "standard",
    seeds=(0, 1, 2),
    shift: bool = False,
    budget_per_task: int = BUDGET_PER_TASK,
    workers: int | None = None,
) -> EvalSummary:
    """Run ``n_chains`` chains per seed and aggregate positional rates.

    ``make_policy(env, policy_seed)`` builds a fresh policy per chain; the
    environment handle lets oracle baselines read the true state. Chains,
    instructions, and initial states are deterministic per seed, and the
    aggregation order is fixed regardless of the worker count (the
    RBBT_THREADS environment variable, or the explicit argument).
    """
    if workers is None:
        workers = int(os.environ.get("RBBT_THREADS", "1"))
    per_seed = []
    all_rates = []
    for seed in seeds:
        rates = _run_seed(make_policy, int(seed), n_chains, mode, shift, budget_per_task, workers)
        per_seed.append((int(seed), tuple(float(r) for r in rates), float(rates.sum())))
        all_rates.append(rates)
    rates = np.mean(all_rates, axis=0)
    lengths = [al for _, _, al in per_seed]
    return EvalSummary(
        rates=rates,
        avg_length=float(rates.sum()),
        std_over_seeds=float(np.std(lengths, ddof=1)) if len(lengths) > 1 else 0.0,
        mode=mode,
        shift=shift,
        n_chains=n_chains,
        per_seed=tuple(per_seed),
    )


def write_results(summary: EvalSummary, json_path: str, csv_path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(json_path)), exist_ok=True)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(summary.to_dict(), fh, indent=2)
        fh.write("\n")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "r1", "r2", "r3", "r4", "r5", "avg_len"])
        for seed, rates, al in summary.per_seed:
            writer.writerow([seed, *[f"{r:.4f}" for r in rates], f"{al:.4f}"])


# ---------------------------------------------------------------------------
# reference policies


class OracleChainPolicy:
    """Scripted-expert upper bound; reads the true state from the env."""

    def __init__(self, env: MiniEnv, seed: int = 0):
        self.env = env
        self.rng = np.random.default_rng(seed)
        self.controller: ExpertController | None = None
        self._by_instruction = {}
        for task in TASKS.values():
            for text in task.instructions():
                self._by_instruction[text] = task.task_id

    def set_instruction(self, text: str) -> None:
        self.controller = ExpertController(self._by_instruction[text], rng=self.rng)

    def act(self, frames) -> np.ndarray:
        return self.controller.action(self.env.state)


class RandomPolicy:
    """Uniform random actions; the floor any trained policy must clear."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def set_instruction(self, text: str) -> None:
        pass

    def act(self, frames) -> np.ndarray:
        return self.rng.uniform(-1.0, 1.0, 3)
