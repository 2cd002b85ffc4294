"""Central finite-difference checks of the autodiff engine (float64 only)."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor, backward


def grad_check(
    f: Callable[[], Tensor],
    params: Tensor | Sequence[Tensor],
    eps: float = 1e-5,
    max_elements: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst elementwise relative error between autodiff and central differences.

    ``f`` is a zero-argument closure that rebuilds the scalar loss from the
    current contents of ``params``.  The error for one element is
    ``|a - n| / (max(|a|, |n|) + 1e-8)``.  With ``max_elements`` set, each
    tensor is probed at a random subset of that many positions.
    """
    if isinstance(params, Tensor):
        params = [params]
    for p in params:
        if p.dtype != np.float64:
            raise TypeError("grad_check requires float64 tensors")
        p.grad = None

    loss = f()
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("grad_check: loss is not finite")
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            rng = rng or np.random.default_rng(0)
            idx = rng.choice(flat.size, size=max_elements, replace=False)
        a_flat = a.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = f().item()
            flat[i] = orig - eps
            down = f().item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError("grad_check: perturbed loss is not finite")
            num = (up - down) / (2.0 * eps)
            err = abs(a_flat[i] - num) / (max(abs(a_flat[i]), abs(num)) + 1e-8)
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
