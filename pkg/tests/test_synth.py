import numpy as np
import pytest

from siamsearch.errors import ConfigError, InfeasibleConfig, InfeasibleSplit
from siamsearch.evaluation import iou
from siamsearch.synth import (
    IDENTITY_FREE,
    BoundingBox,
    InstanceRecord,
    SynthConfig,
    generate_world,
    jitter_detections,
    load_world,
    save_world,
    split_query_gallery,
)


@pytest.fixture(scope="module")
def world():
    return generate_world(SynthConfig(rng_seed=3))


def test_default_world_size(world):
    assert 70 <= world.num_instances <= 90
    assert len({r.identity_id for r in world.instances}) == 10
    assert all(2 <= len(img.instance_ids) <= 4 for img in world.images[:-2])


def test_images_hold_distinct_identities(world):
    for img in world.images:
        ids = [world.instances[i].identity_id for i in img.instance_ids]
        assert len(ids) == len(set(ids))


def test_context_difference_is_exact(world):
    for img in world.images:
        for i in img.instance_ids:
            rec = world.instances[i]
            assert np.array_equal(rec.view_a_input - rec.view_b_input, img.context_vector)


def test_zero_context_gives_identical_views():
    w = generate_world(SynthConfig(context_sigma=0.0, rng_seed=1))
    assert all(np.array_equal(r.view_a_input, r.view_b_input) for r in w.instances)


def test_noiseless_instances_collapse_onto_prototypes():
    w = generate_world(SynthConfig(context_sigma=0.0, instance_noise_sigma=0.0, rng_seed=2))
    views = {}
    for r in w.instances:
        views.setdefault(r.identity_id, []).append(r.view_b_input)
    for vs in views.values():
        assert all(np.array_equal(v, vs[0]) for v in vs)


def test_generation_is_deterministic(tmp_path):
    a = generate_world(SynthConfig(rng_seed=11))
    b = generate_world(SynthConfig(rng_seed=11))
    save_world(a, tmp_path / "a.jsonl")
    save_world(b, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    c = generate_world(SynthConfig(rng_seed=12))
    assert not np.array_equal(a.view_b(), c.view_b()[: len(a.instances)]) or len(a.instances) != len(c.instances)


def test_world_round_trip(tmp_path, world):
    path = tmp_path / "world.jsonl"
    save_world(world, path)
    first = path.read_text().splitlines()[0]
    assert list(__import__("json").loads(first)) == [
        "instance_id", "image_id", "identity_id", "box", "view_a_input", "view_b_input",
    ]
    back = load_world(path)
    assert np.array_equal(back.view_a(), world.view_a())
    assert np.array_equal(back.view_b(), world.view_b())
    assert np.array_equal(back.identity_ids(), world.identity_ids())
    for x, y in zip(back.images, world.images):
        assert x.instance_ids == y.instance_ids
        assert np.array_equal(x.context_vector, y.context_vector)


def test_low_rank_context_spans_requested_rank():
    w = generate_world(SynthConfig(context_rank=3, rng_seed=4))
    C = np.stack([img.context_vector for img in w.images])
    assert np.linalg.matrix_rank(C, tol=1e-6) == 3


def test_distractors_are_identity_free():
    w = generate_world(SynthConfig(distractors_per_image=1, rng_seed=5))
    free = [r for r in w.instances if r.identity_id == IDENTITY_FREE]
    assert len(free) == len(w.images)


def test_config_validation():
    with pytest.raises(InfeasibleConfig):
        SynthConfig(num_identities=3, instances_per_image_range=(2, 4))
    with pytest.raises(ConfigError):
        SynthConfig(context_sigma=-1.0)
    with pytest.raises(ConfigError):
        SynthConfig(instances_per_identity_range=(0, 2))


def test_jitter_zero_sigma_copies_boxes(world):
    dets = jitter_detections(world.instances, 0.0, seed=0)
    for rec, (box, score) in zip(world.instances, dets):
        assert box == rec.box and score == 1.0
        assert iou(box, rec.box) == 1.0


def test_jitter_deterministic_and_scored(world):
    a = jitter_detections(world.instances, 20.0, seed=9)
    b = jitter_detections(world.instances, 20.0, seed=9)
    assert a == b
    assert all(0 < s <= 1 for _, s in a)


def test_large_jitter_breaks_some_matches(world):
    dets = jitter_detections(world.instances, 80.0, seed=9)
    overlaps = [iou(box, rec.box) for rec, (box, _) in zip(world.instances, dets)]
    assert min(overlaps) < 0.5
    assert max(overlaps) < 1.0


def _rec(i, image, identity):
    v = np.zeros(2)
    return InstanceRecord(i, image, identity, BoundingBox(0, 0, 1, 1), v, v)


def test_split_two_image_identity():
    recs = [_rec(0, 0, 7), _rec(1, 1, 7), _rec(2, 1, 8)]
    split = split_query_gallery(recs, query_fraction=0.5, seed=0)
    assert len(split.query_ids) == 1
    q = split.query_ids[0]
    assert q in (0, 1)
    own = recs[q].image_id
    assert split.gallery_for(own) == [1 - own]


def test_split_never_queries_singletons():
    recs = [_rec(0, 0, 7), _rec(1, 1, 7), _rec(2, 1, 8), _rec(3, 2, 9)]
    for seed in range(10):
        split = split_query_gallery(recs, 1.0, seed)
        assert set(split.query_ids) <= {0, 1}


def test_split_infeasible_and_deterministic(world):
    with pytest.raises(InfeasibleSplit):
        split_query_gallery([_rec(0, 0, 1), _rec(1, 1, 2)], 1.0, 0)
    assert split_query_gallery(world.instances, 0.5, 4) == split_query_gallery(world.instances, 0.5, 4)
