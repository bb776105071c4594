"""Synthetic street scenes: the red-disk class signal and record writing."""

import hashlib

import numpy as np
import pytest

from roadredesign.imagery import HOTSPOT, NON_HOTSPOT
from roadredesign.synthetic import toy_dataset, toy_scene, write_toy_records


def test_hotspot_scene_carries_saturated_red_disk():
    rng = np.random.default_rng(0)
    scene = toy_scene(HOTSPOT, rng, size=64)
    assert scene.label == HOTSPOT
    assert scene.disk_mask is not None and scene.disk_mask.any()
    inside = scene.image[scene.disk_mask]
    assert inside[:, 0].min() >= 215  # red channel saturated
    assert inside[:, 1].max() <= 30
    assert inside[:, 2].max() <= 30


def test_disk_bbox_bounds_the_disk_mask():
    rng = np.random.default_rng(1)
    scene = toy_scene(HOTSPOT, rng, size=64)
    ys, xs = np.nonzero(scene.disk_mask)
    x0, y0, x1, y1 = scene.disk_bbox
    assert x0 <= xs.min() and xs.max() < x1
    assert y0 <= ys.min() and ys.max() < y1


def test_plain_scene_has_no_disk():
    rng = np.random.default_rng(2)
    scene = toy_scene(NON_HOTSPOT, rng, size=64)
    assert scene.label == NON_HOTSPOT
    assert scene.disk_mask is None
    assert scene.disk_bbox is None
    # nothing close to a saturated red pixel
    red_dominant = (scene.image[:, :, 0] >= 215) & (scene.image[:, :, 1] <= 30)
    assert not red_dominant.any()


def test_unknown_label_rejected():
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError):
        toy_scene("mystery", rng)


def test_dataset_is_deterministic_and_ordered():
    a = toy_dataset(3, 2, seed=9, size=32)
    b = toy_dataset(3, 2, seed=9, size=32)
    assert [s.label for s in a] == [HOTSPOT] * 3 + [NON_HOTSPOT] * 2
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.image, sb.image)
    c = toy_dataset(3, 2, seed=10, size=32)
    assert not np.array_equal(a[0].image, c[0].image)


def test_write_toy_records_persists_hashed_pngs(tmp_path):
    scenes = toy_dataset(2, 2, seed=4, size=32)
    records = write_toy_records(scenes, tmp_path, id_prefix="t")
    assert len(records) == 4
    assert len({r.image_id for r in records}) == 4
    for record, scene in zip(records, scenes):
        path = tmp_path / record.file_path
        assert path.exists()
        assert record.content_hash == hashlib.sha256(path.read_bytes()).hexdigest()
        assert record.label == scene.label
        assert record.source == "fixture"
    # distinct fabricated coordinates per record
    assert len({(r.latitude, r.longitude) for r in records}) == 4
