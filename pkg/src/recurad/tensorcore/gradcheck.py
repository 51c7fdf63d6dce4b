"""Central finite-difference oracle for checking the tape's gradients."""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def numerical_grad(loss_fn: Callable[[], Tensor], target: np.ndarray, eps: float = 1e-3,
                   indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """d loss / d target by central differences, perturbing ``target`` in place.

    Only the flat positions in ``indices`` are probed (all by default); the
    rest of the returned array is zero.
    """
    flat = target.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    idx = range(flat.size) if indices is None else indices
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            out[i] = (up - down) / (2.0 * eps)
    return out.reshape(target.shape)


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error, robust to individual near-zero entries."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)


def gradcheck(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float = 1e-3,
              max_probes: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> float:
    """Worst relative error between backward() and central differences over ``tensors``.

    ``tensors`` must be leaves with ``requires_grad``. With ``max_probes`` a
    random subsample of that many scalar entries (pooled across tensors) is
    compared instead of every entry.
    """
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    sizes = [t.size for t in tensors]
    if max_probes is None:
        picks = [None] * len(tensors)
    else:
        rng = rng or np.random.default_rng(0)
        total = int(sum(sizes))
        chosen = np.sort(rng.choice(total, size=min(max_probes, total), replace=False))
        bounds = np.cumsum([0] + sizes)
        picks = [chosen[(chosen >= lo) & (chosen < hi)] - lo for lo, hi in zip(bounds[:-1], bounds[1:])]

    a_all, n_all = [], []
    for t, g, pick in zip(tensors, analytic, picks):
        if pick is not None and len(pick) == 0:
            continue
        num = numerical_grad(loss_fn, t.data, eps, pick)
        if pick is None:
            a_all.append(g.reshape(-1))
            n_all.append(num.reshape(-1))
        else:
            a_all.append(g.reshape(-1)[pick])
            n_all.append(num.reshape(-1)[pick])
    return rel_error(np.concatenate(a_all), np.concatenate(n_all))
