"""First-neighbour clustering with the same-image constraint.

Two samples are linked when one is the other's nearest neighbour or when
they share a nearest neighbour, unless they were detected in the same scene
image. Pseudo labels are the connected components of the resulting graph.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.metrics import normalized_mutual_info_score

from .core import as_matrix, normalize_rows
from .errors import DimensionMismatch, TooFewSamples


@dataclass
class NeighborTable:
    kappa: np.ndarray


@dataclass
class AdjacencyGraph:
    n: int
    edges: set  # {(i, j)} with i < j

    def neighbors(self):
        adj = [[] for _ in range(self.n)]
        for i, j in sorted(self.edges):
            adj[i].append(j)
            adj[j].append(i)
        return adj


@dataclass
class PseudoLabeling:
    labels: np.ndarray
    num_clusters: int

    def __len__(self):
        return len(self.labels)


def first_neighbors(features, image_ids=None, exclude_same_image=False):
    """Index of the most cosine-similar other sample for every row.

    Ties go to the lowest index (``argmax`` returns the first maximum). With
    ``exclude_same_image`` co-occurring samples are not neighbour candidates;
    a sample whose image holds everything falls back to the unrestricted search.
    """
    F = as_matrix(features, "features")
    n = F.shape[0]
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples, got {n}")
    U, _ = normalize_rows(F)
    S = U @ U.T
    np.fill_diagonal(S, -np.inf)
    if exclude_same_image:
        image_ids = np.asarray(image_ids)
        same = image_ids[:, None] == image_ids[None, :]
        restricted = np.where(same, -np.inf, S)
        usable = np.isfinite(restricted).any(axis=1)
        S = np.where(usable[:, None], restricted, S)
    return NeighborTable(np.argmax(S, axis=1))


def build_adjacency(kappa, image_ids, filter_enabled=True):
    kappa = np.asarray(getattr(kappa, "kappa", kappa))
    image_ids = np.asarray(image_ids)
    if kappa.shape != image_ids.shape:
        raise DimensionMismatch("kappa and image_ids must have the same length")
    n = kappa.shape[0]
    candidates = set()
    for i in range(n):
        k = int(kappa[i])
        candidates.add((min(i, k), max(i, k)))
    # samples sharing a first neighbour form a clique
    by_neighbor = {}
    for i in range(n):
        by_neighbor.setdefault(int(kappa[i]), []).append(i)
    for members in by_neighbor.values():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                candidates.add((members[a], members[b]))
    edges = {
        (i, j)
        for i, j in candidates
        if i != j and not (filter_enabled and image_ids[i] == image_ids[j])
    }
    return AdjacencyGraph(n, edges)


class _DisjointSet:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller index stays the root
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def connected_components(graph):
    """Dense component labels, numbered by each component's smallest member."""
    ds = _DisjointSet(graph.n)
    for i, j in graph.edges:
        ds.union(i, j)
    labels = np.empty(graph.n, dtype=np.int64)
    ids = {}
    for i in range(graph.n):
        root = ds.find(i)
        if root not in ids:
            ids[root] = len(ids)
        labels[i] = ids[root]
    return PseudoLabeling(labels, len(ids))


def cluster_epoch(features, image_ids, filter_enabled=True, exclude_same_image_neighbors=False,
                  return_graph=False):
    table = first_neighbors(features, image_ids, exclude_same_image_neighbors)
    graph = build_adjacency(table, image_ids, filter_enabled)
    labeling = connected_components(graph)
    if return_graph:
        return labeling, table, graph
    return labeling


def purity(labels, truth):
    labels = np.asarray(labels)
    truth = np.asarray(truth)
    total = 0
    for c in np.unique(labels):
        _, counts = np.unique(truth[labels == c], return_counts=True)
        total += counts.max()
    return total / len(labels)


def nmi(labels, truth):
    with warnings.catch_warnings():
        # sklearn warns when there are many small clusters; that is expected here
        warnings.simplefilter("ignore", UserWarning)
        return float(normalized_mutual_info_score(truth, labels))
