"""Synthetic person-search world.

Each identity gets a prototype vector. Every pedestrian instance has a clean
("cropped") view, prototype plus noise, and a scene view that additionally
carries the context vector of the image it was found in. Co-occurring
pedestrians always have distinct identities.

Randomness comes from numpy's PCG64 bit generator seeded through
:func:`derive_seed`, which is platform independent.
"""

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, InfeasibleConfig, InfeasibleSplit

SCENE_WIDTH = 1333.0
SCENE_HEIGHT = 800.0

# Views are snapped to this dyadic grid so that (clean + context) - clean
# reproduces the context vector bit for bit.
_GRID = 2.0**-32

IDENTITY_FREE = -1


def derive_seed(seed, name):
    """Derive an independent 64-bit sub-seed for a named consumer."""
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed, name=None):
    if name is not None:
        seed = derive_seed(seed, name)
    return np.random.Generator(np.random.PCG64(int(seed) % 2**64))


def _quantize(x):
    return np.round(np.asarray(x, dtype=np.float64) / _GRID) * _GRID


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self):
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self):
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True, eq=False)
class InstanceRecord:
    instance_id: int
    image_id: int
    identity_id: int
    box: BoundingBox
    view_a_input: np.ndarray
    view_b_input: np.ndarray

    def to_json(self):
        return {
            "instance_id": self.instance_id,
            "image_id": self.image_id,
            "identity_id": self.identity_id,
            "box": self.box.as_list(),
            "view_a_input": self.view_a_input.tolist(),
            "view_b_input": self.view_b_input.tolist(),
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            instance_id=int(d["instance_id"]),
            image_id=int(d["image_id"]),
            identity_id=int(d["identity_id"]),
            box=BoundingBox(*d["box"]),
            view_a_input=np.asarray(d["view_a_input"], dtype=np.float64),
            view_b_input=np.asarray(d["view_b_input"], dtype=np.float64),
        )


@dataclass(frozen=True, eq=False)
class SceneImage:
    image_id: int
    instance_ids: list
    context_vector: np.ndarray


@dataclass
class SynthConfig:
    num_identities: int = 10
    instances_per_identity_range: tuple = (7, 9)
    instances_per_image_range: tuple = (2, 4)
    d_in: int = 32
    identity_separation: float = 1.0
    instance_noise_sigma: float = 0.35
    context_sigma: float = 3.5
    # Number of directions the per-image context occupies; None spans all of d_in.
    context_rank: int = None
    box_jitter_sigma: float = 0.0
    distractors_per_image: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        self.instances_per_identity_range = tuple(self.instances_per_identity_range)
        self.instances_per_image_range = tuple(self.instances_per_image_range)
        self.validate()

    def validate(self):
        lo, hi = self.instances_per_identity_range
        ilo, ihi = self.instances_per_image_range
        if self.num_identities < 1 or self.d_in < 1:
            raise ConfigError("num_identities and d_in must be >= 1")
        if not (1 <= lo <= hi):
            raise ConfigError(f"bad instances_per_identity_range {self.instances_per_identity_range}")
        if not (1 <= ilo <= ihi):
            raise ConfigError(f"bad instances_per_image_range {self.instances_per_image_range}")
        for name in ("identity_separation", "instance_noise_sigma", "context_sigma", "box_jitter_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.context_rank is not None and not (1 <= self.context_rank <= self.d_in):
            raise ConfigError("context_rank must lie in [1, d_in]")
        if self.distractors_per_image < 0:
            raise ConfigError("distractors_per_image must be >= 0")
        if ihi > self.num_identities:
            raise InfeasibleConfig(
                f"images may hold {ihi} people but only {self.num_identities} identities exist"
            )

    def to_dict(self):
        d = asdict(self)
        d["instances_per_identity_range"] = list(self.instances_per_identity_range)
        d["instances_per_image_range"] = list(self.instances_per_image_range)
        return d


class World(NamedTuple):
    images: list
    instances: list

    @property
    def num_instances(self):
        return len(self.instances)

    def view_a(self):
        return np.stack([r.view_a_input for r in self.instances])

    def view_b(self):
        return np.stack([r.view_b_input for r in self.instances])

    def image_ids(self):
        return np.array([r.image_id for r in self.instances], dtype=np.int64)

    def identity_ids(self):
        """Ground truth. Evaluation code only."""
        return np.array([r.identity_id for r in self.instances], dtype=np.int64)

    def boxes(self):
        return [r.box for r in self.instances]


def _assign_images(counts, cfg, rng):
    """Pack identity occurrences into images with pairwise-distinct identities.

    Each image takes the identities with the most occurrences left (random
    tie order), which avoids stranding many copies of one identity.
    """
    remaining = np.array(counts, dtype=np.int64)
    ilo, ihi = cfg.instances_per_image_range
    images = []
    while remaining.sum() > 0:
        alive = np.flatnonzero(remaining > 0)
        k = int(rng.integers(ilo, ihi + 1))
        k = min(k, alive.size)
        order = rng.permutation(alive)
        order = order[np.argsort(-remaining[order], kind="stable")]
        chosen = np.sort(order[:k])
        remaining[chosen] -= 1
        images.append([int(c) for c in rng.permutation(chosen)])
    return images


def _slot_boxes(n, rng):
    slot_w = SCENE_WIDTH / n
    boxes = []
    for s in range(n):
        w = min(slot_w * 0.9, rng.uniform(50.0, 110.0))
        h = rng.uniform(150.0, 320.0)
        x1 = s * slot_w + rng.uniform(0.0, slot_w - w)
        y1 = rng.uniform(0.0, SCENE_HEIGHT - h)
        boxes.append(BoundingBox(float(x1), float(y1), float(x1 + w), float(y1 + h)))
    return boxes


def generate_world(cfg):
    """Build a synthetic world; returns ``World(images, instances)``."""
    cfg.validate()
    rng = make_rng(cfg.rng_seed, "world")
    d = cfg.d_in
    prototypes = rng.normal(0.0, cfg.identity_separation, size=(cfg.num_identities, d))
    lo, hi = cfg.instances_per_identity_range
    counts = rng.integers(lo, hi + 1, size=cfg.num_identities)
    layout = _assign_images(counts, cfg, rng)

    if cfg.context_rank is None:
        context_basis = np.eye(d)
    else:
        q, _ = np.linalg.qr(rng.normal(size=(d, cfg.context_rank)))
        context_basis = q.T

    images, instances = [], []
    for image_id, identities in enumerate(layout):
        n_people = len(identities) + cfg.distractors_per_image
        coeffs = rng.normal(0.0, cfg.context_sigma, size=context_basis.shape[0])
        context = _quantize(coeffs @ context_basis)
        boxes = _slot_boxes(n_people, rng)
        ids = []
        for slot in range(n_people):
            if slot < len(identities):
                identity = identities[slot]
                center = prototypes[identity]
            else:
                identity = IDENTITY_FREE
                center = rng.normal(0.0, cfg.identity_separation, size=d)
            clean = _quantize(center + rng.normal(0.0, cfg.instance_noise_sigma, size=d))
            rec = InstanceRecord(
                instance_id=len(instances),
                image_id=image_id,
                identity_id=int(identity),
                box=boxes[slot],
                view_a_input=clean + context,
                view_b_input=clean,
            )
            instances.append(rec)
            ids.append(rec.instance_id)
        images.append(SceneImage(image_id=image_id, instance_ids=ids, context_vector=context))
    return World(images, instances)


def jitter_detections(instances, sigma, seed):
    """One candidate box per ground-truth box, corners perturbed by N(0, sigma).

    Scores decay with the size of the perturbation relative to box height and
    equal 1 exactly when sigma is 0.
    """
    rng = make_rng(seed, "jitter")
    out = []
    for rec in instances:
        b = rec.box
        if sigma == 0:
            out.append((b, 1.0))
            continue
        delta = rng.normal(0.0, sigma, size=4)
        x1, y1, x2, y2 = np.array(b.as_list()) + delta
        x1, x2 = min(x1, x2), max(x1, x2)
        y1, y2 = min(y1, y2), max(y1, y2)
        x2 = max(x2, x1 + 1.0)
        y2 = max(y2, y1 + 1.0)
        score = 1.0 / (1.0 + float(np.abs(delta).mean()) / (b.y2 - b.y1))
        out.append((BoundingBox(float(x1), float(y1), float(x2), float(y2)), score))
    return out


@dataclass
class Split:
    """Query instances plus the pool of gallery images.

    A query is never searched against its own scene image; that image is
    dropped from the query's gallery at evaluation time.
    """

    query_ids: list
    gallery_image_ids: list

    def gallery_for(self, query_image_id):
        return [i for i in self.gallery_image_ids if i != query_image_id]


def split_query_gallery(instances, query_fraction=1.0, seed=0):
    """Pick query instances among those whose identity shows up in another image.

    ``query_fraction`` is the share of eligible instances used as queries
    (at least one). Identity-free instances are never queries. Every image is
    a gallery image, but never for a query taken from it.
    """
    if not 0 < query_fraction <= 1:
        raise InfeasibleSplit(f"query_fraction must be in (0, 1], got {query_fraction}")
    images_of = {}
    for rec in instances:
        if rec.identity_id != IDENTITY_FREE:
            images_of.setdefault(rec.identity_id, set()).add(rec.image_id)
    eligible = [
        rec.instance_id for rec in instances
        if rec.identity_id != IDENTITY_FREE and images_of[rec.identity_id] - {rec.image_id}
    ]
    if not eligible:
        raise InfeasibleSplit("no identity appears in two or more images")
    target = max(1, int(round(query_fraction * len(eligible))))
    rng = make_rng(seed, "split")
    chosen = rng.choice(np.array(eligible), size=target, replace=False)
    gallery = sorted({rec.image_id for rec in instances})
    return Split(sorted(int(i) for i in chosen), gallery)


def save_world(world, path):
    """Write one JSON object per instance, ordered by instance id."""
    with open(path, "w") as fh:
        for rec in world.instances:
            fh.write(json.dumps(rec.to_json()) + "\n")


def load_world(path):
    instances = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                instances.append(InstanceRecord.from_json(json.loads(line)))
    instances.sort(key=lambda r: r.instance_id)
    grouped = {}
    for rec in instances:
        grouped.setdefault(rec.image_id, []).append(rec)
    images = [
        SceneImage(
            image_id=image_id,
            instance_ids=[r.instance_id for r in recs],
            context_vector=recs[0].view_a_input - recs[0].view_b_input,
        )
        for image_id, recs in sorted(grouped.items())
    ]
    return World(images, instances)
