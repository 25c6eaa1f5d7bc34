"""Gradient verification against central finite differences."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import Parameter, Tensor, backward


@dataclass
class GradCheckReport:
    """Per-input worst relative error between reverse mode and central differences."""

    per_input: list[float] = field(default_factory=list)
    max_rel_err: float = 0.0

    def passed(self, tol: float) -> bool:
        return self.max_rel_err < tol


def _rel_err(analytic: float, numeric: float) -> float:
    # Relative above unit magnitude, absolute below it.
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Parameter | Tensor],
    h: float = 1e-5,
) -> GradCheckReport:
    """Compare reverse-mode gradients of a scalar-valued ``fn`` with central
    differences of step ``h``, reported per input.

    The denominator of each difference quotient is the realized step
    ``(x+h) - (x-h)`` after rounding, which removes the representation error
    of ``h`` itself.
    """
    leaves = [p.value if isinstance(p, Parameter) else p for p in inputs]
    for leaf in leaves:
        leaf.requires_grad = True
        leaf.zero_grad()
    loss = fn(*leaves)
    backward(loss)
    analytic = [leaf.grad.copy() for leaf in leaves]

    report = GradCheckReport()
    for leaf, ana in zip(leaves, analytic):
        flat = leaf.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = flat[i]
            f_hi = fn(*leaves).item()
            flat[i] = orig - h
            lo = flat[i]
            f_lo = fn(*leaves).item()
            flat[i] = orig
            numeric = (f_hi - f_lo) / (hi - lo)
            worst = max(worst, _rel_err(ana.reshape(-1)[i], numeric))
        report.per_input.append(worst)
    report.max_rel_err = max(report.per_input, default=0.0)
    return report
