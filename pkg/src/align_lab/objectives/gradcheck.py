"""Central finite differences for checking analytic gradients."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from align_lab.core.exceptions import DomainError
from align_lab.core.policy import TabularPolicy
from align_lab.objectives.report import LossReport

MIN_STEP = 1e-8
MAX_STEP = 1e-3


def _value(result: LossReport | float) -> float:
    return result.value if isinstance(result, LossReport) else float(result)


def finite_diff_vector(
    fun: Callable[[np.ndarray], LossReport | float],
    x: np.ndarray,
    h: float = 1e-6,
) -> np.ndarray:
    """Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate."""
    if not MIN_STEP <= h <= MAX_STEP:
        raise DomainError(f"Step h={h} outside [{MIN_STEP}, {MAX_STEP}]")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat, out = x.ravel(), grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = _value(fun(x))
        flat[i] = orig - h
        down = _value(fun(x))
        flat[i] = orig
        out[i] = (up - down) / (2 * h)
    return grad


def finite_diff_gradient(
    loss_fn: Callable[[TabularPolicy], LossReport | float],
    policy: TabularPolicy,
    h: float = 1e-6,
) -> np.ndarray:
    """Central-difference gradient of a policy objective.

    Returns:
        A (contexts, actions) array aligned with ``policy.keys``.
    """
    shape = policy.matrix().shape
    grad = finite_diff_vector(lambda v: loss_fn(policy.with_vector(v)), policy.to_vector(), h)
    return grad.reshape(shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """||a - n|| / max(||a||, ||n||, floor)."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(n)), floor)
    return float(np.linalg.norm(a - n)) / scale
