"""Training objectives with analytic gradients w.r.t. the embeddings.

* :func:`self_instance_consistency` -- mean ``1 - cos`` between the two views
  of every instance.
* :func:`inter_instance_similarity_consistency` -- symmetric KL between the
  batch similarity structure of the two views.
* :func:`cluster_contrastive` -- pairwise positive/negative log-sum-exp loss
  against the memory bank, positives being the rows sharing a pseudo label.
* :func:`instance_recognition_loss` -- the same loss with singleton labels.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import as_matrix, log_row_softmax, normalize_rows, project_out_radial, unit_gram
from .errors import BatchTooSmall, DimensionMismatch, EmptyBank, MissingLabel


@dataclass
class LossOutput:
    """Loss value plus gradients w.r.t. the search-view and instance-view batches.

    Bank losses take a single feature batch; their gradient is stored in
    ``grad_Fa`` and ``grad_Fb`` is None.
    """

    value: float
    grad_Fa: np.ndarray
    grad_Fb: np.ndarray = None
    parts: dict = field(default_factory=dict)


def _check_pair(F_a, F_b):
    F_a = as_matrix(F_a, "F_a")
    F_b = as_matrix(F_b, "F_b")
    if F_a.shape != F_b.shape:
        raise DimensionMismatch(f"view batches differ in shape: {F_a.shape} vs {F_b.shape}")
    return F_a, F_b


def self_instance_consistency(F_a, F_b):
    F_a, F_b = _check_pair(F_a, F_b)
    B = F_a.shape[0]
    U, na = normalize_rows(F_a)
    V, nb = normalize_rows(F_b)
    cos = np.clip(np.einsum("ij,ij->i", U, V), -1.0, 1.0)
    value = float(np.mean(1.0 - cos))
    grad_a = project_out_radial(U, na, -V / B)
    grad_b = project_out_radial(V, nb, -U / B)
    return LossOutput(value, grad_a, grad_b)


def _scatter_off_diagonal(G):
    """Inverse of dropping the diagonal: (B, B-1) -> (B, B) with zero diagonal."""
    B = G.shape[0]
    out = np.zeros((B - 1, B + 1))
    out[:, :-1] = G.reshape(B - 1, B)
    return np.concatenate([[0.0], out.ravel()]).reshape(B, B)


def inter_instance_similarity_consistency(F_a, F_b, temperature=0.1, reduction="sum"):
    """``sum_i KL(P_i || Q_i) + KL(Q_i || P_i)`` over batch rows.

    ``P_i`` / ``Q_i`` are temperature softmaxes of row i of the cosine
    similarity matrix of each view, self-similarity excluded.
    """
    F_a, F_b = _check_pair(F_a, F_b)
    B = F_a.shape[0]
    if B < 2:
        raise BatchTooSmall("similarity consistency needs at least two instances")
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")
    U, na = normalize_rows(F_a)
    V, nb = normalize_rows(F_b)
    S_a = unit_gram(U)
    S_b = unit_gram(V)
    log_p = log_row_softmax(S_a, temperature)
    log_q = log_row_softmax(S_b, temperature)
    p = np.exp(log_p)
    q = np.exp(log_q)
    diff = log_p - log_q
    kl_pq = np.sum(p * diff, axis=1)
    kl_qp = np.sum(q * -diff, axis=1)
    scale = 1.0 if reduction == "sum" else 1.0 / B
    value = float(scale * np.sum(kl_pq + kl_qp))

    # d/dz of sum_j (p_j - q_j)(log p_j - log q_j) through p = softmax(z)
    gz_a = p * (diff - kl_pq[:, None]) + p - q
    gz_b = q * (-diff - kl_qp[:, None]) + q - p
    grads = []
    for gz, X, norms in ((gz_a, U, na), (gz_b, V, nb)):
        dS = _scatter_off_diagonal(gz) * (scale / temperature)
        dX = (dS + dS.T) @ X
        grads.append(project_out_radial(X, norms, dX))
    return LossOutput(value, grads[0], grads[1])


def _labels_array(labels):
    return np.asarray(getattr(labels, "labels", labels))


def cluster_contrastive(f_batch, bank, labels, batch_instance_ids, gamma=16.0):
    """Mean over the batch of ``log(1 + sum_p sum_n exp(gamma (s_n - s_p)))``.

    The double sum factorises into ``exp(LSE(gamma s_n) + LSE(-gamma s_p))``
    so the loss is ``softplus`` of that exponent. Bank rows are constants.
    """
    f_batch = as_matrix(f_batch, "f_batch")
    ids = np.asarray(batch_instance_ids, dtype=np.int64)
    M = bank.M if hasattr(bank, "M") else as_matrix(bank, "bank")
    if M.shape[0] == 0:
        raise EmptyBank("memory bank has no rows")
    labels = _labels_array(labels)
    if f_batch.shape[0] != ids.shape[0]:
        raise DimensionMismatch("one instance id is needed per batch row")
    if f_batch.shape[1] != M.shape[1]:
        raise DimensionMismatch(f"features are {f_batch.shape[1]}-d, bank rows {M.shape[1]}-d")
    if labels.shape[0] != M.shape[0]:
        raise MissingLabel(f"{labels.shape[0]} labels for a bank of {M.shape[0]} rows")
    if ids.size and (ids.min() < 0 or ids.max() >= M.shape[0]):
        raise MissingLabel("batch instance id outside the labelled range")
    if np.any(labels[ids] < 0):
        raise MissingLabel("batch instance without a pseudo label")

    B = f_batch.shape[0]
    U, norms = normalize_rows(f_batch)
    S = U @ M.T
    pos = labels[None, :] == labels[ids][:, None]

    Z = gamma * S
    zn = np.where(pos, -np.inf, Z)
    zp = np.where(pos, -Z, -np.inf)
    with np.errstate(invalid="ignore", divide="ignore"):
        mn = zn.max(axis=1, keepdims=True)
        mp = zp.max(axis=1, keepdims=True)
        en = np.exp(zn - mn)
        ep = np.exp(zp - mp)
        sum_n = en.sum(axis=1)
        sum_p = ep.sum(axis=1)
        x = mn[:, 0] + np.log(sum_n) + mp[:, 0] + np.log(sum_p)
    no_neg = pos.all(axis=1)
    if no_neg.any():
        # nothing to push away: the loss and its gradient vanish
        x[no_neg] = -np.inf
        en[no_neg] = 0.0
        sum_n[no_neg] = 1.0
    per_instance = np.logaddexp(0.0, x)
    value = float(per_instance.mean())

    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    dS = (sig * (gamma / B))[:, None] * (en / sum_n[:, None] - ep / sum_p[:, None])
    grad = project_out_radial(U, norms, dS @ M)
    return LossOutput(value, grad, None, {"per_instance": per_instance})


def instance_recognition_loss(f_batch, bank, batch_instance_ids, gamma=16.0):
    """Every instance is its own class: only its own bank slot is positive."""
    n = bank.M.shape[0] if hasattr(bank, "M") else len(bank)
    return cluster_contrastive(f_batch, bank, np.arange(n), batch_instance_ids, gamma)


def total_loss(
    F_a,
    F_b,
    bank,
    labels,
    ids,
    gamma=16.0,
    temperature=0.1,
    *,
    w_ins=1.0,
    w_int=1.0,
    w_clu=1.0,
    contrastive="cluster",
    contrastive_source="fused",
    int_reduction="mean",
):
    """Weighted sum of the enabled terms with summed gradients.

    ``contrastive`` is "cluster", "instance" (IR baseline) or None.
    ``contrastive_source`` picks the feature fed to it: "fused" uses
    ``(F_a + F_b) / 2``, "search" uses ``F_a`` alone, "instance" ``F_b`` alone.
    A zero weight skips the term entirely.
    """
    F_a, F_b = _check_pair(F_a, F_b)
    grad_a = np.zeros_like(F_a)
    grad_b = np.zeros_like(F_b)
    value = 0.0
    parts = {"ins": 0.0, "int": 0.0, "clu": 0.0}

    if w_ins:
        out = self_instance_consistency(F_a, F_b)
        parts["ins"] = out.value
        value += w_ins * out.value
        grad_a += w_ins * out.grad_Fa
        grad_b += w_ins * out.grad_Fb
    if w_int:
        out = inter_instance_similarity_consistency(F_a, F_b, temperature, int_reduction)
        parts["int"] = out.value
        value += w_int * out.value
        grad_a += w_int * out.grad_Fa
        grad_b += w_int * out.grad_Fb
    if contrastive and w_clu:
        if contrastive_source == "fused":
            f = 0.5 * (F_a + F_b)
        elif contrastive_source == "search":
            f = F_a
        elif contrastive_source == "instance":
            f = F_b
        else:
            raise ValueError(f"unknown contrastive_source {contrastive_source!r}")
        if contrastive == "cluster":
            out = cluster_contrastive(f, bank, labels, ids, gamma)
        elif contrastive == "instance":
            out = instance_recognition_loss(f, bank, ids, gamma)
        else:
            raise ValueError(f"unknown contrastive loss {contrastive!r}")
        parts["clu"] = out.value
        value += w_clu * out.value
        g = w_clu * out.grad_Fa
        if contrastive_source == "fused":
            grad_a += 0.5 * g
            grad_b += 0.5 * g
        elif contrastive_source == "search":
            grad_a += g
        else:
            grad_b += g
    return LossOutput(value, grad_a, grad_b, parts)
