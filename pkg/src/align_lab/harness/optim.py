"""First-order optimizers over flat parameter vectors.

``optimize`` drives a ``x -> (value, gradient)`` function to a gradient-norm
tolerance with plain gradient descent, Adam, or scipy's L-BFGS-B. The
steppers are also used on their own by the adversarial training loop.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import minimize

from align_lab.core.exceptions import ConfigurationError, NumericAbortError
from align_lab.objectives.report import LossReport

logger = logging.getLogger("align_lab.harness.optim")

Objective = Callable[[np.ndarray], "tuple[float, np.ndarray] | LossReport"]


class OptimizerMethod(str, Enum):
    """Optimization algorithm."""

    GD = "gd"
    ADAM = "adam"
    LBFGS = "lbfgs"


class OptimizerConfig(BaseModel):
    """Optimizer settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    method: OptimizerMethod = OptimizerMethod.GD
    step_size: float = Field(default=0.5, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    epsilon: float = Field(default=1e-8, gt=0)
    max_iters: int = Field(default=5000, ge=1)
    grad_tol: float = Field(default=1e-8, gt=0)
    report_every: int = Field(default=500, ge=1)


class Stepper(Protocol):
    def step(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray: ...


class GradientStep:
    """x <- x - eta * g."""

    def __init__(self, step_size: float) -> None:
        self.step_size = step_size

    def step(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return x - self.step_size * grad


class AdamStep:
    """Adam with bias-corrected first and second moments."""

    def __init__(self, config: OptimizerConfig) -> None:
        self.config = config
        self._m: np.ndarray | None = None
        self._v: np.ndarray | None = None
        self._t = 0

    def step(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
        cfg = self.config
        if self._m is None or self._v is None:
            self._m = np.zeros_like(grad)
            self._v = np.zeros_like(grad)
        self._t += 1
        self._m = cfg.beta1 * self._m + (1 - cfg.beta1) * grad
        self._v = cfg.beta2 * self._v + (1 - cfg.beta2) * grad**2
        m_hat = self._m / (1 - cfg.beta1**self._t)
        v_hat = self._v / (1 - cfg.beta2**self._t)
        return x - cfg.step_size * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


def make_stepper(config: OptimizerConfig) -> Stepper:
    """Build a per-step updater.

    Raises:
        ConfigurationError: For L-BFGS, which has no single-step form.
    """
    if config.method is OptimizerMethod.GD:
        return GradientStep(config.step_size)
    if config.method is OptimizerMethod.ADAM:
        return AdamStep(config)
    raise ConfigurationError(f"{config.method.value} cannot be used as a single-step updater")


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    value: float
    grad_norm: float


@dataclass
class OptimizeResult:
    """Final parameters and the per-iteration trace."""

    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    trace: list[TraceEntry] = field(default_factory=list)


def _unpack(result: tuple[float, np.ndarray] | LossReport) -> tuple[float, np.ndarray]:
    if isinstance(result, LossReport):
        return result.value, result.flat()
    value, grad = result
    return float(value), np.asarray(grad, dtype=np.float64).ravel()


def _checked(fun: Objective, x: np.ndarray, iteration: int) -> tuple[float, np.ndarray]:
    value, grad = _unpack(fun(x))
    if not math.isfinite(value) or not np.all(np.isfinite(grad)):
        raise NumericAbortError(
            f"Non-finite objective at iteration {iteration}", iteration=iteration
        )
    return value, grad


def optimize(
    fun: Objective,
    x0: np.ndarray,
    config: OptimizerConfig,
    callback: Callable[[int, np.ndarray, float], None] | None = None,
) -> OptimizeResult:
    """Minimize ``fun`` from ``x0`` until ||grad|| <= grad_tol or max_iters.

    Args:
        fun: Maps a flat parameter vector to (value, gradient) or a LossReport.
        x0: Initial parameters.
        config: Optimizer settings.
        callback: Called as ``callback(iteration, x, value)`` after each evaluation.

    Returns:
        The final parameters with a trace of (iteration, value, grad norm).

    Raises:
        NumericAbortError: If the objective becomes non-finite.
    """
    if config.method is OptimizerMethod.LBFGS:
        return _optimize_lbfgs(fun, x0, config, callback)

    stepper = make_stepper(config)
    x = np.array(x0, dtype=np.float64).ravel()
    trace: list[TraceEntry] = []
    value, grad = _checked(fun, x, 0)
    converged = False
    iteration = 0
    for iteration in range(config.max_iters + 1):
        if iteration > 0:
            value, grad = _checked(fun, x, iteration)
        norm = float(np.linalg.norm(grad))
        trace.append(TraceEntry(iteration, value, norm))
        if callback is not None:
            callback(iteration, x, value)
        if iteration % config.report_every == 0:
            logger.debug(
                "iter %d value=%.6e |g|=%.3e",
                iteration,
                value,
                norm,
                extra={"iteration": iteration},
            )
        if norm <= config.grad_tol:
            converged = True
            break
        if iteration == config.max_iters:
            break
        x = stepper.step(x, grad)

    if not converged:
        logger.warning(
            "Optimizer stopped at max_iters=%d with |g|=%.3e",
            config.max_iters,
            trace[-1].grad_norm,
        )
    return OptimizeResult(x, value, trace[-1].grad_norm, iteration, converged, trace)


def _optimize_lbfgs(
    fun: Objective,
    x0: np.ndarray,
    config: OptimizerConfig,
    callback: Callable[[int, np.ndarray, float], None] | None,
) -> OptimizeResult:
    trace: list[TraceEntry] = []

    def wrapped(x: np.ndarray) -> tuple[float, np.ndarray]:
        value, grad = _checked(fun, x, len(trace))
        trace.append(TraceEntry(len(trace), value, float(np.linalg.norm(grad))))
        if callback is not None:
            callback(len(trace) - 1, x, value)
        return value, grad

    result = minimize(
        wrapped,
        np.array(x0, dtype=np.float64).ravel(),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": config.max_iters, "gtol": config.grad_tol, "ftol": 1e-15},
    )
    value, grad = _checked(fun, result.x, len(trace))
    norm = float(np.linalg.norm(grad))
    converged = norm <= config.grad_tol or bool(result.success)
    if not converged:
        logger.warning("L-BFGS-B did not converge: %s", result.message)
    return OptimizeResult(result.x, value, norm, int(result.nit), converged, trace)
