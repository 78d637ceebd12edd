"""Central finite-difference gradient checking.

Checks run in float64: the same primitive code paths are exercised (dtype
follows the input arrays), but without float32 rounding noise, which would
swamp the 1e-4 tolerance at eps=1e-4.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NonFinite
from .tensor import Tape, Tensor, backward


def check_gradient(f: Callable[[Tape, Tensor], Tensor], x, eps: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    `x` may be a Tensor or a raw rank-4 array; the check always runs in
    float64.  `f(tape, x)` must return a scalar Tensor recorded on `tape`.  The error at
    each coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    base = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    xt = Tensor(base.copy(), requires_grad=True)
    tape = Tape()
    loss = f(tape, xt)
    backward(tape, loss)
    analytic = xt.grad.copy()
    if not np.all(np.isfinite(analytic)):
        raise NonFinite("non-finite analytic gradient")

    def eval_at(arr: np.ndarray) -> float:
        t = Tape()
        return f(t, Tensor(arr)).item()

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = eval_at(base)
        flat[i] = orig - eps
        fm = eval_at(base)
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2 * eps)
    if not np.all(np.isfinite(numeric)):
        raise NonFinite("non-finite numeric gradient")

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
