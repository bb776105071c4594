"""Shared fixtures: a trained toy workspace reused across the heavier tests.

Training a small CNN on the synthetic scenes takes a few seconds, so it runs
once per session; every test that needs a model or a populated workspace
shares the same directory read-only (tests that mutate state copy it first).
"""

import math
import shutil
from pathlib import Path

import numpy as np
import pytest

from roadredesign.classifier import (
    AbmSpec,
    ModelSpec,
    TrainConfig,
    build_model,
    load_checkpoint,
    save_checkpoint,
    train,
)
from roadredesign.imagery import HOTSPOT, NON_HOTSPOT, build_manifest, location_key, save_manifest
from roadredesign.synthetic import toy_dataset, toy_scene, write_toy_records

# ---------------------------------------------------------------------------
# geospatial fixture: two tight blobs plus isolated noise


def make_blob(lat0, lon0, n, width_m, rng):
    """n points uniform in a width_m-wide square around (lat0, lon0)."""
    dlat = width_m / 111_194.9  # ~meters per degree latitude
    dlon = width_m / (111_194.9 * math.cos(math.radians(lat0)))
    return [
        (lat0 + rng.uniform(-0.5, 0.5) * dlat, lon0 + rng.uniform(-0.5, 0.5) * dlon)
        for _ in range(n)
    ]


def twenty_point_fixture():
    """Two 8-point blobs ~5 m wide, 1 km apart, plus 4 isolated points.

    With eps=50 m, min_samples=4 the blobs are clusters and the isolated
    points are noise.
    """
    rng = np.random.default_rng(42)
    pts = make_blob(40.7000, -74.0000, 8, 5.0, rng)
    pts += make_blob(40.7090, -74.0000, 8, 5.0, rng)  # ~1 km north
    pts += [
        (40.7300, -74.0000),
        (40.6800, -74.0300),
        (40.7150, -73.9700),
        (40.6900, -74.0200),
    ]
    return pts


@pytest.fixture(scope="session")
def cluster_points_20():
    return twenty_point_fixture()


# ---------------------------------------------------------------------------
# trained toy workspace


def build_toy_workspace(root: Path, n_per_class: int = 120, epochs: int = 12, seed: int = 0):
    """Synthesize scenes, write a manifest, train, and checkpoint the model."""
    scenes = toy_dataset(n_per_class, n_per_class, seed=seed, size=64)
    records = write_toy_records(scenes, root)
    labels = {location_key(r.latitude, r.longitude): r.label for r in records}
    manifest = build_manifest(records, labels, split_seed=7, test_fraction=0.3)
    save_manifest(manifest, root / "dataset")
    model = build_model(ModelSpec(backbone="tinycnn", attention=AbmSpec()))
    result = train(
        model,
        manifest.train_records(),
        root,
        TrainConfig(epochs=epochs, learning_rate=1e-3, batch_size=16, seed=seed),
    )
    save_checkpoint(model, root / "models" / "model.pt")
    return manifest, model, result


@pytest.fixture(scope="session")
def toy_workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("toyws")
    manifest, model, result = build_toy_workspace(root)
    return {"root": root, "manifest": manifest, "result": result}


@pytest.fixture(scope="session")
def toy_model(toy_workspace):
    return load_checkpoint(toy_workspace["root"] / "models" / "model.pt")


@pytest.fixture()
def workspace_copy(toy_workspace, tmp_path):
    """Private mutable copy of the trained workspace for stateful tests."""
    dst = tmp_path / "ws"
    shutil.copytree(toy_workspace["root"], dst)
    return dst


# ---------------------------------------------------------------------------
# convenience scene makers


@pytest.fixture()
def hotspot_scene():
    rng = np.random.default_rng(123)
    return toy_scene(HOTSPOT, rng, size=64)


@pytest.fixture()
def plain_scene():
    rng = np.random.default_rng(321)
    return toy_scene(NON_HOTSPOT, rng, size=64)
