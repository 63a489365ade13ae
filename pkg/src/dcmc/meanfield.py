"""Unrolled mean-field inference for the fully connected rating CRF.

One layer maps the current label distribution Q (K × p) to

    softmax_rows(−(Φ + γ · S · (Q · Cᵀ)))

where C is the truncated-quadratic label compatibility matrix and S the
node similarity matrix.  All layers share Φ, S and C and add no parameters.

The dense functions accept diffcore Tensors (differentiable) or numpy
arrays.  :func:`meanfield_stack_factored` runs the same recursion on a
whole rating block whose node similarity is the Kronecker product of a user
and an item similarity matrix, without ever forming the K × K matrix.
"""
from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .dataio import LabelSet
from .diffcore import Tensor

PHI_CAP = 50.0


def build_compatibility(labels: LabelSet, tau: float) -> np.ndarray:
    """C[u, v] = min((L_u − L_v)², τ)."""
    if tau <= 0:
        raise ValueError(f"truncation threshold must be positive, got {tau}")
    L = labels.array
    return np.minimum((L[:, None] - L[None, :]) ** 2, tau)


def compatibility_transform(Q, C: np.ndarray):
    """Q′[k, u] = Σ_v Q[k, v] · C[u, v]."""
    if isinstance(Q, Tensor):
        return dc.matmul(Q, Tensor(C.T))
    return Q @ C.T


def message_passing(S, Qp):
    """Q″ = S · Q′ over all nodes."""
    if isinstance(S, Tensor) or isinstance(Qp, Tensor):
        return dc.matmul(S, Qp)
    return S @ Qp


def prepare_similarity(S, exclude_self: bool = False, normalize: bool = False):
    """Optionally drop self-messages and/or row-normalise the similarity matrix.

    With ``normalize`` every node receives a similarity-weighted *average*
    of its neighbours' transformed distributions rather than their sum, so
    the pairwise term keeps the same scale whatever the number of nodes.
    """
    if not (exclude_self or normalize):
        return S
    tensor = isinstance(S, Tensor)
    if exclude_self:
        off = 1.0 - np.eye(S.shape[0])
        S = dc.mul(S, Tensor(off)) if tensor else S * off
    if normalize:
        if tensor:
            S = dc.normalize_rows(S)
        else:
            S = S / S.sum(axis=1, keepdims=True)
    return S


def meanfield_layer(Q, S, Phi, C: np.ndarray, gamma: float):
    """One synchronous mean-field update of every node."""
    if isinstance(Q, Tensor) or isinstance(S, Tensor) or isinstance(Phi, Tensor):
        Qp = compatibility_transform(dc.as_tensor(Q), C)
        Qpp = message_passing(dc.as_tensor(S), Qp)
        energy = dc.add(dc.minimum(dc.as_tensor(Phi), PHI_CAP), dc.mul_scalar(Qpp, gamma))
        return dc.softmax_rows(dc.neg(energy))
    Qpp = message_passing(S, compatibility_transform(Q, C))
    z = -(np.minimum(Phi, PHI_CAP) + gamma * Qpp)
    if not np.all(np.isfinite(z)):
        raise dc.NonFiniteError("non-finite mean-field energy")
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def meanfield_stack(
    Q,
    S,
    Phi,
    C: np.ndarray,
    gamma: float,
    T: int,
    exclude_self: bool = False,
    normalize: bool = False,
):
    """Apply ``T`` mean-field layers starting from ``Q``; ``T = 0`` returns ``Q``."""
    if T < 0:
        raise ValueError("T must be nonnegative")
    S = prepare_similarity(S, exclude_self, normalize)
    out = Q
    for _ in range(T):
        out = meanfield_layer(out, S, Phi, C, gamma)
    return out


def _kron_message(Sr: np.ndarray, Sc: np.ndarray, X: np.ndarray) -> np.ndarray:
    """M[i, j] = Σ_{i2, j2} Sr[i, i2] · Sc[j, j2] · X[i2, j2] for X of shape (n, m, p)."""
    n, m, p = X.shape
    A = (Sr @ X.reshape(n, m * p)).reshape(n, m, p)
    A = np.ascontiguousarray(A.transpose(1, 0, 2)).reshape(m, n * p)
    return (Sc @ A).reshape(m, n, p).transpose(1, 0, 2)


def meanfield_stack_factored(
    Q: np.ndarray,
    Phi: np.ndarray,
    Sr: np.ndarray,
    Sc: np.ndarray,
    C: np.ndarray,
    gamma: float,
    T: int,
    exclude_self: bool = False,
    normalize: bool = False,
) -> np.ndarray:
    """Mean-field over every cell of an n × m block.

    ``Q`` and ``Phi`` have shape (n, m, p).  The node similarity between
    cells (i, j) and (i2, j2) is ``Sr[i, i2] * Sc[j, j2]``; both factors have
    unit diagonal.  Equivalent to :func:`meanfield_stack` on the flattened
    block (row-major node order) with ``S = kron(Sr, Sc)``.
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    if normalize:
        row_r = Sr.sum(axis=1)
        row_c = Sc.sum(axis=1)
        denom = row_r[:, None] * row_c[None, :]
        if exclude_self:
            denom = denom - np.diag(Sr)[:, None] * np.diag(Sc)[None, :]
        denom = denom[:, :, None]
    dr, dcol = np.diag(Sr), np.diag(Sc)
    self_w = (dr[:, None] * dcol[None, :])[:, :, None]
    Phi = np.minimum(Phi, PHI_CAP)
    out = Q
    for _ in range(T):
        Qp = out @ C.T
        msg = _kron_message(Sr, Sc, Qp)
        if exclude_self:
            msg = msg - self_w * Qp
        if normalize:
            msg = msg / denom
        z = -(Phi + gamma * msg)
        if not np.all(np.isfinite(z)):
            raise dc.NonFiniteError("non-finite mean-field energy")
        z -= z.max(axis=2, keepdims=True)
        np.exp(z, out=z)
        z /= z.sum(axis=2, keepdims=True)
        out = z
    return out
