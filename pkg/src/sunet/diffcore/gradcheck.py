"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    checked: int
    worst: tuple[int, int] = (-1, -1)  # (tensor index, flat element index)
    entries: list[tuple[int, int, float, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def grad_check(f, inputs, tol: float = 1e-4, max_entries: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic gradients of ``f(*inputs)`` against central differences.

    ``f`` must return a scalar Tensor. Step size is 1e-5 * max(1, |x|) per
    element; relative error is |a - d| / max(1, |a|, |d|). When a tensor has
    more elements than ``max_entries``, a random subset is probed.
    """
    inputs = list(inputs)
    for t in inputs:
        if not isinstance(t, Tensor) or not t.requires_grad:
            raise ValueError("grad_check inputs must be Tensors with requires_grad")
        t.zero_grad()

    out = f(*inputs)
    if out.values.size != 1:
        raise ValueError("grad_check target must be scalar-valued")
    out.backward()
    analytic = [np.zeros_like(t.values) if t.grad is None else t.grad.copy()
                for t in inputs]

    rng = rng or np.random.default_rng(0)
    report = GradCheckReport(max_rel_error=0.0, tol=tol, checked=0)
    for ti, t in enumerate(inputs):
        flat = t.values.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            idxs = rng.choice(n, size=max_entries, replace=False)
        else:
            idxs = np.arange(n)
        for i in idxs:
            x0 = flat[i]
            h = 1e-5 * max(1.0, abs(x0))
            with no_grad():
                flat[i] = x0 + h
                fp = float(f(*inputs).values)
                flat[i] = x0 - h
                fm = float(f(*inputs).values)
                flat[i] = x0
            diff = (fp - fm) / (2.0 * h)
            a = analytic[ti].reshape(-1)[i]
            rel = abs(a - diff) / max(1.0, abs(a), abs(diff))
            report.checked += 1
            report.entries.append((ti, int(i), float(a), float(diff), float(rel)))
            if rel > report.max_rel_error:
                report.max_rel_error = float(rel)
                report.worst = (ti, int(i))
    return report
