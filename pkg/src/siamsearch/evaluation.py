"""Person-search retrieval protocol: IoU-gated matches, AP/mAP and CMC."""

from dataclasses import dataclass, field

import numpy as np

from .core import normalize_rows
from .encoder import forward
from .errors import InfeasibleGallery, NoPositives
from .synth import IDENTITY_FREE, jitter_detections, make_rng

IOU_THRESHOLD = 0.5
CMC_RANKS = (1, 5, 10)


def iou(a, b):
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def is_true_match(candidate_box, gt_box, gt_identity, query_identity):
    """Counted only when IoU strictly exceeds 0.5 and the identities agree."""
    if gt_identity == IDENTITY_FREE or gt_identity != query_identity:
        return False
    return iou(candidate_box, gt_box) > IOU_THRESHOLD


def average_precision(flags):
    """Mean of precision@k over the positions k that hold a true match."""
    flags = np.asarray(flags, dtype=bool)
    hits = np.flatnonzero(flags)
    if hits.size == 0:
        raise NoPositives("ranked list contains no true match")
    ranks = hits + 1
    return float(np.mean(np.arange(1, hits.size + 1) / ranks))


def mean_average_precision(query_results):
    return float(np.mean([r.average_precision for r in query_results]))


def cmc(flags, ranks=CMC_RANKS):
    flags = np.asarray(flags, dtype=bool)
    return {k: bool(flags[:k].any()) for k in ranks}


@dataclass
class GalleryCandidate:
    image_id: int
    box: object
    score: float
    embedding: np.ndarray
    source_instance: int


@dataclass
class QueryResult:
    query_id: int
    ranked: list  # (candidate, similarity, is_true_match)
    average_precision: float
    hits: dict


@dataclass
class EvalResult:
    gallery_size: int
    mAP: float
    cmc: dict
    queries: list = field(default_factory=list)

    def summary(self):
        out = {"gallery_size": self.gallery_size, "mAP": self.mAP}
        out.update({f"rank{k}": v for k, v in self.cmc.items()})
        return out


def rank_candidates(query_embedding, candidates):
    """Sort by cosine (descending); ties by score, then image id, then box."""
    sims = [float(np.dot(query_embedding, c.embedding)) for c in candidates]
    order = sorted(
        range(len(candidates)),
        key=lambda i: (-sims[i], -candidates[i].score, candidates[i].image_id,
                       tuple(candidates[i].box.as_list())),
    )
    return [(candidates[i], sims[i]) for i in order]


def evaluate_query(query_id, query_identity, query_embedding, candidates, gt_by_image, ranks=CMC_RANKS):
    ranked = rank_candidates(query_embedding, candidates)
    flags = []
    for cand, _ in ranked:
        flags.append(any(
            is_true_match(cand.box, box, ident, query_identity)
            for box, ident in gt_by_image[cand.image_id]
        ))
    try:
        ap = average_precision(flags)
    except NoPositives:
        # every true box was missed by the detector
        ap = 0.0
    entries = [(c, s, f) for (c, s), f in zip(ranked, flags)]
    return QueryResult(query_id, entries, ap, cmc(flags, ranks))


def _embedder(params):
    if callable(params):
        return params
    return lambda X: forward(params, X)[0]


def build_candidates(embed, world, image_ids, detection_sigma=0.0, seed=0):
    """Detections in the given images, embedded from the scene (search) view only."""
    wanted = set(image_ids)
    records = [r for r in world.instances if r.image_id in wanted]
    if not records:
        return []
    detections = jitter_detections(records, detection_sigma, seed)
    emb, _ = normalize_rows(embed(np.stack([r.view_a_input for r in records])))
    return [
        GalleryCandidate(r.image_id, box, score, emb[k], r.instance_id)
        for k, (r, (box, score)) in enumerate(zip(records, detections))
    ]


def evaluate_search(params, world, split, gallery_size=None, detection_sigma=0.0, seed=0,
                    ranks=CMC_RANKS):
    """mAP and CMC of the queries in ``split`` against a sampled gallery.

    Each query's gallery holds every gallery image showing its identity plus
    randomly drawn distractor images up to ``gallery_size`` images in total
    (all gallery images when None). Queries are embedded from their clean
    view, gallery candidates from the scene view.
    """
    embed = _embedder(params)
    gallery_images = list(split.gallery_image_ids)
    max_size = max_gallery_size(split, world)
    if gallery_size is None:
        gallery_size = max_size
    if not 1 <= gallery_size <= max_size:
        raise InfeasibleGallery(f"gallery size {gallery_size} outside [1, {max_size}]")
    by_id = {r.instance_id: r for r in world.instances}
    gt_by_image = {}
    for r in world.instances:
        gt_by_image.setdefault(r.image_id, []).append((r.box, r.identity_id))

    all_candidates = build_candidates(embed, world, gallery_images, detection_sigma, seed)
    cands_by_image = {}
    for c in all_candidates:
        cands_by_image.setdefault(c.image_id, []).append(c)

    queries = [by_id[q] for q in split.query_ids]
    q_emb, _ = normalize_rows(embed(np.stack([r.view_b_input for r in queries])))

    results = []
    for q, emb in zip(queries, q_emb):
        pool = split.gallery_for(q.image_id)
        positives = sorted(
            img for img in pool
            if any(ident == q.identity_id for _, ident in gt_by_image[img])
        )
        if not positives:
            raise InfeasibleGallery(f"query {q.instance_id} has no gallery match")
        others = [img for img in pool if img not in set(positives)]
        n_fill = max(0, gallery_size - len(positives))
        rng = make_rng(seed, f"gallery:{gallery_size}:{q.instance_id}")
        fill = sorted(int(i) for i in rng.choice(others, size=n_fill, replace=False)) if n_fill else []
        chosen = sorted(positives + fill)
        candidates = [c for img in chosen for c in cands_by_image.get(img, [])]
        results.append(evaluate_query(q.instance_id, q.identity_id, emb, candidates, gt_by_image, ranks))

    mAP = mean_average_precision(results)
    curve = {k: float(np.mean([r.hits[k] for r in results])) for k in ranks}
    return EvalResult(gallery_size, mAP, curve, results)


def max_gallery_size(split, world):
    """Largest gallery every query can be given (its own image excluded)."""
    image_of = {r.instance_id: r.image_id for r in world.instances}
    return min(len(split.gallery_for(image_of[q])) for q in split.query_ids)


def default_gallery_ladder(num_gallery_images, start=2):
    """Doubling ladder of gallery sizes, always ending at the full gallery."""
    sizes = []
    s = start
    while s < num_gallery_images:
        sizes.append(s)
        s *= 2
    sizes.append(num_gallery_images)
    return sizes


def gallery_sweep(params, world, split, sizes=None, detection_sigma=0.0, seed=0):
    if sizes is None:
        sizes = default_gallery_ladder(max_gallery_size(split, world))
    return [evaluate_search(params, world, split, s, detection_sigma, seed) for s in sizes]
