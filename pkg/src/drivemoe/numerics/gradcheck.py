"""Central finite-difference oracle for analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, backprop


def numeric_gradient(f: Callable[[], Tensor], param: Parameter, eps: float,
                     indices: np.ndarray | None = None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. selected flat entries of ``param``."""
    flat = param.data.reshape(-1)
    if indices is None:
        indices = np.arange(flat.size)
    out = np.zeros(len(indices), dtype=np.float64)
    for j, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f().data)
        flat[i] = orig - eps
        fm = float(f().data)
        flat[i] = orig
        out[j] = (fp - fm) / (2.0 * eps)
    return out


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-5,
                      max_entries: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Return the worst relative disagreement between backprop and central differences.

    For each parameter the error is ``|analytic - numeric| / (|numeric| + 1e-8)``
    with ``|.|`` the L2 norm over the checked entries; the maximum over
    parameters is returned. ``max_entries`` subsamples large parameters.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = list(params)
    for p in params:
        p.zero_grad()
    backprop(f(), params, warn_disconnected=False)
    analytic = {id(p): p.grad.reshape(-1).astype(np.float64).copy() for p in params}
    for p in params:
        p.zero_grad()
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for p in params:
        idx = np.arange(p.size)
        if max_entries is not None and p.size > max_entries:
            idx = np.sort(rng.choice(p.size, size=max_entries, replace=False))
        num = numeric_gradient(f, p, eps, idx)
        ana = analytic[id(p)][idx]
        err = np.linalg.norm(ana - num) / (np.linalg.norm(num) + 1e-8)
        worst = max(worst, float(err))
    return worst
