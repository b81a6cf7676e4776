"""Per-instance embedding store with momentum updates."""

import numpy as np

from .core import l2_normalize, normalize_rows
from .errors import DimensionMismatch, IndexOutOfRange


class MemoryBank:
    """N x d matrix of unit rows; row t always belongs to instance t.

    ``lam`` is the momentum factor: an update keeps ``lam`` of the stored row
    and mixes in ``1 - lam`` of the new (normalised) feature.
    """

    def __init__(self, num_instances, dim, lam=0.2):
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"momentum must be in [0, 1], got {lam}")
        self.lam = float(lam)
        # placeholder unit rows until the first refresh
        self.M = np.zeros((num_instances, dim))
        self.M[:, 0] = 1.0

    @classmethod
    def from_features(cls, features, lam=0.2):
        features = np.asarray(features, dtype=np.float64)
        bank = cls(features.shape[0], features.shape[1], lam)
        bank.refresh(features)
        return bank

    def __len__(self):
        return self.M.shape[0]

    @property
    def dim(self):
        return self.M.shape[1]

    def refresh(self, all_features):
        all_features = np.asarray(all_features, dtype=np.float64)
        if all_features.shape != self.M.shape:
            raise DimensionMismatch(f"bank is {self.M.shape}, features are {all_features.shape}")
        self.M = normalize_rows(all_features)[0].copy()

    def momentum_update(self, t, f):
        if not 0 <= t < len(self):
            raise IndexOutOfRange(f"instance {t} outside bank of size {len(self)}")
        f = np.asarray(f, dtype=np.float64)
        if f.shape != (self.dim,):
            raise DimensionMismatch(f"feature has shape {f.shape}, bank rows have {self.dim}")
        u = l2_normalize(f)
        if self.lam == 1.0:
            return
        if self.lam == 0.0:
            self.M[t] = u
            return
        blended = self.lam * self.M[t] + (1.0 - self.lam) * u
        self.M[t] = l2_normalize(blended)

    def update_batch(self, ids, F):
        """Momentum-update several rows in ascending instance order."""
        ids = np.asarray(ids)
        for k in np.argsort(ids, kind="stable"):
            self.momentum_update(int(ids[k]), F[k])

    def similarities(self, f):
        return np.clip(self.M @ l2_normalize(f), -1.0, 1.0)


def similarities_to_bank(f, bank):
    return bank.similarities(f)
