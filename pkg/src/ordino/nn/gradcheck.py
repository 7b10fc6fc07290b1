"""Finite-difference verification of analytic gradients.

Central differences in float64: each checked parameter entry is nudged by
+/- eps, the loss recomputed, and the slope compared against the analytic
gradient. Relative error uses a small floor so near-zero gradients do not
divide away finite-difference noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .params import Parameter, ParameterStore


@dataclass
class EntryFailure:
    param: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    tolerance: float
    worst_param: str = ""
    failures: list[EntryFailure] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} max_rel_err={self.max_rel_err:.3e} "
            f"(tol {self.tolerance:.1e}, {self.n_checked} entries, "
            f"worst {self.worst_param or '-'}, {len(self.failures)} failures)"
        )


def _rel_err(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    loss_fn: Callable[[], float],
    grad_fn: Callable[[], float],
    parameters: ParameterStore | Iterable[Parameter],
    tolerance: float = 1e-4,
    eps: float = 1e-4,
    max_entries: int = 1000,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``grad_fn`` runs forward + backward and returns the loss, leaving
    gradients in each parameter. ``loss_fn`` runs the forward pass only and
    must be a deterministic function of the parameter values. When the
    total entry count exceeds ``max_entries`` a seeded random subsample is
    checked instead.
    """
    params = list(parameters)
    for p in params:
        p.zero_grad()
    grad_fn()
    analytic = {p.name: p.grad.copy() for p in params}

    entries = [
        (pi, idx)
        for pi, p in enumerate(params)
        for idx in np.ndindex(p.value.shape)
    ]
    if len(entries) > max_entries:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(entries), size=max_entries, replace=False)
        entries = [entries[i] for i in sorted(chosen)]

    max_err = 0.0
    worst = ""
    failures: list[EntryFailure] = []
    for pi, idx in entries:
        p = params[pi]
        original = p.value[idx]
        p.value[idx] = original + eps
        up = loss_fn()
        p.value[idx] = original - eps
        down = loss_fn()
        p.value[idx] = original
        numeric = (up - down) / (2.0 * eps)
        a = float(analytic[p.name][idx])
        err = _rel_err(a, numeric)
        if err > max_err:
            max_err = err
            worst = f"{p.name}{list(idx)}"
        if err > tolerance:
            failures.append(EntryFailure(p.name, idx, a, numeric, err))
    return GradCheckReport(
        max_rel_err=max_err,
        n_checked=len(entries),
        tolerance=tolerance,
        worst_param=worst,
        failures=failures,
    )
