"""Finite-difference validation of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .params import ParameterSet

__all__ = ["gradient_check", "GradCheckReport", "NonDeterministicClosureError"]


class NonDeterministicClosureError(RuntimeError):
    """The loss closure returned different values on repeated evaluation."""


@dataclass
class GradCheckReport:
    """Per-parameter worst relative error between analytic and numeric."""

    errors: dict[str, float] = field(default_factory=dict)
    worst_param: str = ""
    worst_error: float = 0.0

    def ok(self, tolerance: float) -> bool:
        return self.worst_error <= tolerance

    def failing(self, tolerance: float) -> list[str]:
        return [n for n, e in self.errors.items() if e > tolerance]


def _loss_value(closure, params) -> float:
    with ad.no_grad():
        out = closure(params)
    return float(out.data if isinstance(out, ad.Tensor) else out)


def gradient_check(
    closure,
    params: ParameterSet,
    tolerance: float = 1e-4,
    h: float = 1e-6,
    max_elements_per_param: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``closure(params)`` against central
    finite differences.

    The closure must map the parameter set to a scalar loss deterministically;
    non-determinism is detected by evaluating twice and rejected. With
    ``max_elements_per_param`` set, a deterministic random subset of each
    parameter's elements is probed instead of every element.
    """
    first = _loss_value(closure, params)
    second = _loss_value(closure, params)
    if first != second:
        raise NonDeterministicClosureError(f"closure returned {first} then {second}")

    params.zero_grads()
    loss = closure(params)
    ad.backward(loss)

    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for name, p in params.items():
        if params.is_frozen(name):
            continue
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        n = flat.size
        if max_elements_per_param is not None and n > max_elements_per_param:
            idx = rng.choice(n, size=max_elements_per_param, replace=False)
        else:
            idx = np.arange(n)
        worst = 0.0
        aflat = analytic.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = _loss_value(closure, params)
            flat[i] = orig - h
            down = _loss_value(closure, params)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = float(aflat[i])
            denom = max(abs(a), abs(numeric), 1e-8)
            err = abs(a - numeric) / denom
            # both gradients ~0: agreement, not error
            if abs(a) < 1e-10 and abs(numeric) < 1e-7:
                err = 0.0
            worst = max(worst, err)
        report.errors[name] = worst
        if worst >= report.worst_error:
            if worst > report.worst_error or not report.worst_param:
                report.worst_param = name
                report.worst_error = worst
    params.zero_grads()
    return report
