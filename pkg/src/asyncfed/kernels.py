"""Hot numeric kernels: numba-compiled fast paths with pure-numpy fallbacks.

Every kernel exists twice — a vectorized numpy implementation and a
numba ``@njit`` twin.  The active backend is chosen at import time from
the ``ASYNCFED_KERNELS`` environment variable:

* ``auto`` (default) — numba when importable, numpy otherwise
* ``numba``          — require numba, fail loudly if missing
* ``numpy``          — force the pure-numpy path

``benchmarks/benchmark_kernels.py`` compares the two backends.
"""

from __future__ import annotations

import os

import numpy as np

# ---------------------------------------------------------------- numpy ----


def _numpy_merge_directional(global_w, local_j, local_jm1, alpha):
    """Per-weight directional merge of a global model into a local one.

    Where the local movement since the previous batch and the offset
    toward the global model point the same way, the global value wins;
    elsewhere the result is the convex combination
    ``(1-alpha)*global + alpha*local``.
    """
    e_local = local_j - local_jm1
    e_global = global_w - local_j
    blended = (1.0 - alpha) * global_w + alpha * local_j
    return np.where(e_local * e_global > 0.0, global_w, blended)


def _numpy_weighted_combine(stack, coeffs):
    """Weighted sum of row vectors: ``sum_k coeffs[k] * stack[k]``."""
    return coeffs @ stack


def _numpy_softmax_xent(X, y, W, b):
    """Fused softmax cross-entropy loss and gradient for one batch.

    Returns ``(mean_loss, grad_W, grad_b)`` with shapes matching
    ``W (d, c)`` and ``b (c,)``.
    """
    logits = X @ W + b
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    e = np.exp(z)
    s = e.sum(axis=1)
    n = X.shape[0]
    idx = np.arange(n)
    loss = float(np.mean(np.log(s) - z[idx, y]))
    p = e / s[:, None]
    p[idx, y] -= 1.0
    grad_w = X.T @ p / n
    grad_b = p.sum(axis=0) / n
    return loss, grad_w, grad_b


def _numpy_momentum_step(weights, grad, velocity, lr, momentum):
    """One heavy-ball SGD step; returns ``(new_weights, new_velocity)``."""
    new_velocity = momentum * velocity - lr * grad
    return weights + new_velocity, new_velocity


# ---------------------------------------------------------------- numba ----

_REQUESTED = os.environ.get("ASYNCFED_KERNELS", "auto").strip().lower()
if _REQUESTED not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"ASYNCFED_KERNELS must be auto, numba or numpy, got {_REQUESTED!r}"
    )

_NUMBA_IMPLS: dict[str, object] = {}

if _REQUESTED in ("auto", "numba"):
    try:
        from numba import njit
    except ImportError:
        if _REQUESTED == "numba":
            raise
        njit = None

    if njit is not None:

        @njit(cache=True)
        def _nb_merge_directional(global_w, local_j, local_jm1, alpha):
            n = global_w.shape[0]
            out = np.empty(n)
            for i in range(n):
                e_local = local_j[i] - local_jm1[i]
                e_global = global_w[i] - local_j[i]
                if e_local * e_global > 0.0:
                    out[i] = global_w[i]
                else:
                    out[i] = (1.0 - alpha) * global_w[i] + alpha * local_j[i]
            return out

        @njit(cache=True)
        def _nb_weighted_combine(stack, coeffs):
            k, n = stack.shape
            out = np.zeros(n)
            for r in range(k):
                c = coeffs[r]
                for i in range(n):
                    out[i] += c * stack[r, i]
            return out

        @njit(cache=True)
        def _nb_softmax_xent(X, y, W, b):
            n, d = X.shape
            c = W.shape[1]
            grad_w = np.zeros((d, c))
            grad_b = np.zeros(c)
            logits = np.empty(c)
            loss = 0.0
            for i in range(n):
                m = -np.inf
                for k in range(c):
                    z = b[k]
                    for j in range(d):
                        z += X[i, j] * W[j, k]
                    logits[k] = z
                    if z > m:
                        m = z
                s = 0.0
                for k in range(c):
                    logits[k] = np.exp(logits[k] - m)
                    s += logits[k]
                yi = y[i]
                loss += np.log(s) - np.log(logits[yi])
                for k in range(c):
                    diff = logits[k] / s - (1.0 if k == yi else 0.0)
                    grad_b[k] += diff
                    for j in range(d):
                        grad_w[j, k] += X[i, j] * diff
            inv = 1.0 / n
            loss *= inv
            for k in range(c):
                grad_b[k] *= inv
                for j in range(d):
                    grad_w[j, k] *= inv
            return loss, grad_w, grad_b

        @njit(cache=True)
        def _nb_momentum_step(weights, grad, velocity, lr, momentum):
            n = weights.shape[0]
            new_w = np.empty(n)
            new_v = np.empty(n)
            for i in range(n):
                v = momentum * velocity[i] - lr * grad[i]
                new_v[i] = v
                new_w[i] = weights[i] + v
            return new_w, new_v

        _NUMBA_IMPLS = {
            "merge_directional": _nb_merge_directional,
            "weighted_combine": _nb_weighted_combine,
            "softmax_xent": _nb_softmax_xent,
            "momentum_step": _nb_momentum_step,
        }

_NUMPY_IMPLS = {
    "merge_directional": _numpy_merge_directional,
    "weighted_combine": _numpy_weighted_combine,
    "softmax_xent": _numpy_softmax_xent,
    "momentum_step": _numpy_momentum_step,
}

IMPLEMENTATIONS = {"numpy": _NUMPY_IMPLS}
if _NUMBA_IMPLS:
    IMPLEMENTATIONS["numba"] = _NUMBA_IMPLS

_ACTIVE = "numba" if _NUMBA_IMPLS else "numpy"

merge_directional = IMPLEMENTATIONS[_ACTIVE]["merge_directional"]
weighted_combine = IMPLEMENTATIONS[_ACTIVE]["weighted_combine"]
softmax_xent = IMPLEMENTATIONS[_ACTIVE]["softmax_xent"]
momentum_step = IMPLEMENTATIONS[_ACTIVE]["momentum_step"]


def backend() -> str:
    """Name of the backend serving the public kernel functions."""
    return _ACTIVE


def warm_up() -> None:
    """Trigger JIT compilation so later calls run at full speed."""
    x = np.array([0.1, 0.2, 0.3])
    merge_directional(x, x, x, 0.5)
    weighted_combine(np.vstack([x, x]), np.array([0.5, 0.5]))
    softmax_xent(
        np.array([[1.0, 2.0]]), np.array([0], dtype=np.int64),
        np.zeros((2, 2)), np.zeros(2),
    )
    momentum_step(x, x, x, 0.1, 0.9)
