"""Shared test utilities: central-difference gradient oracle and corpora."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from simpdefiner import autograd as ag
from simpdefiner.autograd import Tensor


def finite_difference(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor],
                      h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of loss_fn w.r.t. each tensor's elements.

    loss_fn must rebuild its graph on every call and return a scalar; the
    perturbed evaluations run with the tape disabled.
    """
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat_data = t.data.reshape(-1)
        flat_grad = g.reshape(-1)
        for i in range(flat_data.size):
            orig = flat_data[i]
            flat_data[i] = orig + h
            with ag.no_grad():
                up = float(loss_fn().data)
            flat_data[i] = orig - h
            with ag.no_grad():
                down = float(loss_fn().data)
            flat_data[i] = orig
            flat_grad[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max over elements of |a-b| / max(floor, |a|, |b|).

    The floor turns the check absolute below it, keeping central-difference
    roundoff (~1e-10 at h=1e-5 in double precision) from dominating where the
    true gradient is tiny.
    """
    denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))
