"""Central finite-difference gradient checking."""

import logging
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel, Field

from utils.errors import ArgumentError

from .tensor import Tensor, backward, no_grad

logger = logging.getLogger(__name__)


class GradCheckReport(BaseModel):
    """Outcome of one finite-difference comparison."""

    max_rel_error: float = Field(description="Largest relative error over the checked coordinates (NaN without a gradient)")
    checked: int = Field(description="Number of coordinates compared", ge=0)
    has_gradient: bool = Field(description="Whether backward produced a gradient for the input")

    def __float__(self) -> float:
        return self.max_rel_error


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    step: float = 1e-5,
    max_coords: int = 64,
    seed: int = 0,
) -> GradCheckReport:
    """
    Compare the analytic gradient of `f` at `x` with central differences.

    Relative error per coordinate is |a - n| / max(1, |a|, |n|). Tensors with
    more than `max_coords` elements are checked on a seeded random sample of
    coordinates.

    Args:
        f: Deterministic function returning a one-element tensor
        x: Point of evaluation; perturbed in place and restored
        step: Difference step h
        max_coords: Coordinate sampling threshold
        seed: Sampling seed

    Returns:
        GradCheckReport; `has_gradient` is False (and the error NaN) when x
        does not require gradients
    """
    if step <= 0:
        raise ArgumentError(f"finite_diff_check: step must be positive, got {step}")
    x.data = np.ascontiguousarray(x.data)

    x.zero_grad()
    out = f(x)
    if out.size != 1:
        raise ArgumentError(f"finite_diff_check: f must return a scalar, got shape {out.shape}")

    analytic: Optional[np.ndarray] = None
    if x.requires_grad:
        backward(out)
        analytic = np.zeros(x.size) if x.grad is None else x.grad.reshape(-1).astype(np.float64)
        x.zero_grad()

    flat = x.data.reshape(-1)
    if flat.size <= max_coords:
        coords = np.arange(flat.size)
    else:
        coords = np.sort(np.random.default_rng(seed).choice(flat.size, size=max_coords, replace=False))

    worst = 0.0
    with no_grad():
        for idx in coords:
            original = flat[idx]
            flat[idx] = original + step
            f_plus = f(x).item()
            flat[idx] = original - step
            f_minus = f(x).item()
            flat[idx] = original
            numeric = (f_plus - f_minus) / (2.0 * step)
            if analytic is None:
                continue
            a = analytic[idx]
            error = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, error)

    if analytic is None:
        logger.debug("finite_diff_check: input is frozen, no analytic gradient to compare")
        return GradCheckReport(max_rel_error=float("nan"), checked=len(coords), has_gradient=False)

    logger.debug(f"finite_diff_check: {len(coords)} coordinates, max relative error {worst:.3e}")
    return GradCheckReport(max_rel_error=float(worst), checked=len(coords), has_gradient=True)
