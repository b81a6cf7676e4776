"""Dense vector/matrix helpers shared by the losses, clustering and evaluation.

Everything here works in float64 and is a pure function of its inputs.
"""

import numpy as np

from .errors import DimensionMismatch, NonPositiveTemperature, ZeroNorm

EPS = 1e-12


def as_matrix(x, name="matrix"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {x.shape}")
    return x


def l2_normalize(v):
    """Return ``v / ||v||``; raises ZeroNorm for (near) zero vectors."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.sqrt(np.dot(v, v))
    if not norm > EPS:
        raise ZeroNorm()
    return v / norm


def normalize_rows(F):
    """Row-wise L2 normalisation. Returns ``(normalized, norms)``."""
    F = as_matrix(F)
    norms = np.sqrt(np.einsum("ij,ij->i", F, F))
    if not norms.min(initial=np.inf) > EPS:
        raise ZeroNorm(row=int(np.argmin(norms > EPS)))
    return F / norms[:, None], norms


def project_out_radial(u, norms, grad_u):
    """Chain rule through row normalisation.

    Given unit rows ``u = f / |f|`` and an upstream gradient w.r.t. ``u``,
    return the gradient w.r.t. ``f``: ``(I - u u^T) g / |f|`` per row.
    """
    radial = np.einsum("ij,ij->i", u, grad_u)
    return (grad_u - radial[:, None] * u) / norms[:, None]


def cosine_similarity(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"cannot compare vectors of shape {u.shape} and {v.shape}")
    c = float(np.dot(l2_normalize(u), l2_normalize(v)))
    return min(1.0, max(-1.0, c))


def unit_gram(U):
    """``U U^T`` for unit rows, made exactly symmetric and clipped to [-1, 1]."""
    S = U @ U.T
    # float addition commutes, so averaging with the transpose is exactly symmetric
    S = 0.5 * (S + S.T)
    return np.clip(S, -1.0, 1.0, out=S)


def similarity_matrix(F):
    """Cosine similarity between all rows of ``F`` (B x B)."""
    U, _ = normalize_rows(F)
    return unit_gram(U)


def _drop_diagonal(S):
    B = S.shape[0]
    # drop the first entry, then every (B+1)-th entry is a former diagonal one
    return S.reshape(-1)[1:].reshape(B - 1, B + 1)[:, :-1].reshape(B, B - 1)


def row_softmax(S, temperature=0.1, exclude_diagonal=True):
    """Softmax of each row of ``S / temperature``.

    With ``exclude_diagonal`` the self-similarity is removed first, so row i
    of the (B x B-1) result is a distribution over the other B-1 items.
    """
    if not temperature > 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {temperature}")
    S = as_matrix(S, "similarity matrix")
    if exclude_diagonal:
        if S.shape[0] != S.shape[1]:
            raise DimensionMismatch(f"diagonal exclusion needs a square matrix, got {S.shape}")
        S = _drop_diagonal(S)
    z = S / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_row_softmax(S, temperature=0.1, exclude_diagonal=True):
    """Log of :func:`row_softmax`, computed without taking log of tiny values."""
    if not temperature > 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {temperature}")
    S = as_matrix(S, "similarity matrix")
    if exclude_diagonal:
        S = _drop_diagonal(S)
    z = S / temperature
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def kl_divergence(p, q):
    """``sum p log(p/q)`` with the convention ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionMismatch(f"distributions differ in length: {p.shape} vs {q.shape}")
    nz = p > 0
    return float(max(0.0, np.sum(p[nz] * (np.log(p[nz]) - np.log(q[nz])))))


def logsumexp(x):
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return -np.inf
    m = x.max()
    return float(m + np.log(np.exp(x - m).sum()))
