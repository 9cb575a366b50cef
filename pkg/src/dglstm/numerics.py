"""Dense float64 primitives shared by the cells, network and gradient code.

Tensors are plain 2-D ``numpy.ndarray`` objects of dtype float64. Vectors are
column matrices of shape ``(n, 1)``; a minibatch of ``B`` vectors is an
``(n, B)`` matrix. Nothing here broadcasts: operands must agree exactly.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

Tensor = np.ndarray


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


def tensor(values, shape: tuple[int, int] | None = None) -> Tensor:
    """Build a float64 rank-2 tensor, reshaping 1-D input to a column."""
    arr = np.array(values, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    elif arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionError(f"tensors have rank <= 2, got shape {arr.shape}")
    return arr


def zeros(rows: int, cols: int = 1) -> Tensor:
    return np.zeros((rows, cols))


def matvec(W: Tensor, x: Tensor) -> Tensor:
    """Matrix product ``W @ x`` with an explicit shape check.

    ``x`` may hold several columns, in which case each is multiplied.
    """
    if W.ndim != 2 or x.ndim != 2 or W.shape[1] != x.shape[0]:
        raise DimensionError(f"cannot multiply {W.shape} by {x.shape}")
    return W @ x


def sigmoid(x: Tensor) -> Tensor:
    # expit is overflow-free for large |x|
    return expit(x)


def tanh_ew(x: Tensor) -> Tensor:
    return np.tanh(x)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"elementwise product needs equal shapes, got {a.shape} and {b.shape}")
    return a * b


def log_softmax(logits: Tensor) -> Tensor:
    """Column-wise log-softmax, stabilised by subtracting each column's max."""
    shifted = logits - logits.max(axis=0, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))


def softmax(logits: Tensor) -> Tensor:
    shifted = np.exp(logits - logits.max(axis=0, keepdims=True))
    return shifted / shifted.sum(axis=0, keepdims=True)


def softmax_xent(logits: Tensor, target: int) -> tuple[float, Tensor]:
    """Cross-entropy of a single logit column against a target index.

    Returns
    -------
    loss : float
        ``-log p[target]``, non-negative.
    probs : Tensor
        The softmax distribution, shape ``(V, 1)``.
    """
    if logits.ndim != 2 or logits.shape[1] != 1:
        raise DimensionError(f"expected a (V, 1) logit column, got {logits.shape}")
    V = logits.shape[0]
    if not 0 <= target < V:
        raise IndexError(f"target {target} out of range for {V} classes")
    logp = log_softmax(logits)
    loss = max(-float(logp[target, 0]), 0.0)
    return loss, np.exp(logp)
