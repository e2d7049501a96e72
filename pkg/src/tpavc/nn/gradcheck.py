"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from tpavc.errors import NumericError
from tpavc.nn.tensor import ParamTensor, Tape, Tensor


def analytic_gradients(loss_fn: Callable[[], Tensor], params: Mapping[str, ParamTensor]) -> dict[str, np.ndarray]:
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise NumericError("loss is not finite")
    tape.backward(loss)
    return {k: p.grad.copy() for k, p in params.items()}


def finite_difference_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, ParamTensor],
    step: float = 1e-5,
    floor: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst relative error between tape gradients and central differences.

    Each entry is compared as ``|a - n| / max(|a|, |n|, floor)``. With
    ``max_entries`` only a random subset of entries per tensor is probed.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    analytic = analytic_gradients(loss_fn, params)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = rng.choice(flat.size, size=max_entries, replace=False)
        a_flat = analytic[name].reshape(-1)
        for j in entries:
            orig = flat[j]
            flat[j] = orig + step
            f_plus = float(loss_fn().data)
            flat[j] = orig - step
            f_minus = float(loss_fn().data)
            flat[j] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"non-finite loss while perturbing {name}[{j}]")
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = a_flat[j]
            denom = max(abs(a), abs(numeric), floor)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
