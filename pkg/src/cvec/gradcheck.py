"""Central finite-difference checks of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import numerics as nx
from .numerics import Tensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    worst: tuple[str, int] | None
    redrawn: int = 0

    def ok(self, tol: float = 1e-5) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / (abs(analytic) + 1e-8)


def random_projection_loss(rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    """A fixed random linear functional sum(R * y), drawn once per output shape."""
    cache: dict[tuple, np.ndarray] = {}

    def loss(y: Tensor) -> Tensor:
        if y.shape not in cache:
            cache[y.shape] = rng.standard_normal(y.shape)
        return nx.sum(nx.hadamard(y, cache[y.shape]))

    return loss


def check_gradients(
    f: Callable[[], Tensor],
    tensors: Mapping[str, Tensor],
    n_samples: int = 200,
    h: float = 1e-5,
    rng: np.random.Generator | None = None,
) -> GradCheckResult:
    """Compare analytic gradients of scalar ``f()`` with central differences.

    Entries are drawn uniformly without replacement over all of ``tensors``
    until ``n_samples`` have been compared. A draw whose +-h perturbation flips
    any ReLU mask is redrawn and counted in ``redrawn``.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors.values():
        t.grad = None
    with nx.trace_kinks() as base_masks:
        loss = f()
    nx.backward(loss)
    names = list(tensors)
    sizes = np.array([tensors[n].data.size for n in names])
    total = int(sizes.sum())
    order = rng.permutation(total)
    bounds = np.cumsum(sizes)
    worst, worst_err, checked, redrawn = None, 0.0, 0, 0
    for j in order:
        if checked >= n_samples:
            break
        which = int(np.searchsorted(bounds, j, side="right"))
        name = names[which]
        idx = int(j - (bounds[which - 1] if which else 0))
        t = tensors[name]
        analytic = 0.0 if t.grad is None else float(t.grad.reshape(-1)[idx])
        view = t.data.reshape(-1)
        orig = view[idx]
        try:
            with nx.no_grad(), nx.trace_kinks() as plus:
                view[idx] = orig + h
                fp = f().item()
            with nx.no_grad(), nx.trace_kinks() as minus:
                view[idx] = orig - h
                fm = f().item()
        finally:
            view[idx] = orig
        if _crossed(base_masks, plus) or _crossed(base_masks, minus):
            # the +-h interval straddles a ReLU kink: differences are not a valid reference there
            redrawn += 1
            continue
        checked += 1
        err = relative_error(analytic, (fp - fm) / (2 * h))
        if err >= worst_err:
            worst, worst_err = (name, idx), err
    return GradCheckResult(worst_err, checked, worst, redrawn)


def _crossed(base: list[np.ndarray], other: list[np.ndarray]) -> bool:
    if len(base) != len(other):
        return True
    return any(a.shape != b.shape or not np.array_equal(a, b) for a, b in zip(base, other))
