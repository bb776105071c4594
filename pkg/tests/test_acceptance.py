"""Acceptance suite: one test per shipped guarantee, one PASS/FAIL line each.

Every criterion prints ``PASS [criterion NN] name`` (or FAIL) on the real
stdout even under output capture, so a plain ``pytest -v`` run leaves a
scannable scoreboard. The checks lean on the independent oracles in
tests/oracles.py rather than on the implementation's own helpers.
"""

import base64
import socket
import threading
import time
from io import BytesIO

import numpy as np
import pytest
import torch
from PIL import Image
from scipy import ndimage

from roadredesign.apcam import _prepare_input, compute_cam, gradient_check
from roadredesign.classifier import (
    HOTSPOT_INDEX,
    ModelSpec,
    build_model,
    evaluate,
    metrics_from_confusion,
)
from roadredesign.evalreport import RedesignSession, aggregate, score_session
from roadredesign.events import AccidentEvent
from roadredesign.hotspot import ClusterParams, cluster_centers, dbscan
from roadredesign.imagery import HOTSPOT
from roadredesign.inpaint import (
    DREAMBOOTH_DEFAULTS,
    TEXTUAL_INVERSION_DEFAULTS,
    InpaintRequest,
    MockBackend,
    inpaint,
    prompt_catalog,
    prompt_for,
)
from roadredesign.maskkit import (
    BinaryMask,
    ScribbleSet,
    Stroke,
    mask_complement,
    mask_intersect,
    mask_to_png_bytes,
    mask_union,
    png_bytes_to_mask,
    rasterize_scribbles,
)
from roadredesign.saliency import ChromaParams, ap_saliency_ratio, chrominance_alter
from roadredesign.synthetic import toy_scene

from .conftest import build_toy_workspace, twenty_point_fixture
from .oracles import (
    brute_dbscan,
    brute_rasterize_ordered,
    brute_scorecam_weights,
    naive_metrics,
    partitions_equivalent,
    rgb_to_ycbcr_ref,
)


def run_criterion(capsys, num, name, body):
    """Run one acceptance check and print its verdict on the real stdout."""
    try:
        body()
    except BaseException:
        with capsys.disabled():
            print(f"FAIL [criterion {num:02d}] {name}", flush=True)
        raise
    with capsys.disabled():
        print(f"PASS [criterion {num:02d}] {name}", flush=True)


def events_at(coords):
    return [
        AccidentEvent(event_id=str(i), latitude=lat, longitude=lon)
        for i, (lat, lon) in enumerate(coords)
    ]


# ---------------------------------------------------------------------------
# 1. clustering equivalence with the brute-force reference


def random_cluster_instance(rng):
    """Up to 200 points: uniform scatter, gaussian blobs, or a chain."""
    n = int(rng.integers(1, 201))
    kind = int(rng.integers(0, 3))
    if kind == 0:
        coords = [
            (float(rng.uniform(40.0, 40.03)), float(rng.uniform(-74.03, -74.0)))
            for _ in range(n)
        ]
    elif kind == 1:
        k = int(rng.integers(1, 6))
        centers = [
            (40.0 + float(rng.uniform(0, 0.03)), -74.0 + float(rng.uniform(0, 0.03)))
            for _ in range(k)
        ]
        coords = []
        for _ in range(n):
            cx, cy = centers[int(rng.integers(0, k))]
            coords.append((cx + float(rng.normal(0, 3e-4)), cy + float(rng.normal(0, 3e-4))))
    else:
        step = float(rng.uniform(1e-5, 1e-4))
        coords = [(40.0 + i * step, -74.0) for i in range(n)]
    eps = float(rng.uniform(5.0, 500.0))
    min_samples = int(rng.integers(1, 9))
    return coords, eps, min_samples


def test_criterion_01_dbscan_matches_bruteforce(capsys):
    def body():
        rng = np.random.default_rng(0)
        started = time.perf_counter()
        for i in range(100):
            coords, eps, min_samples = random_cluster_instance(rng)
            labels = dbscan(events_at(coords), ClusterParams(eps, min_samples))
            oracle, _ = brute_dbscan(coords, eps, min_samples)
            assert partitions_equivalent(labels, oracle, coords, eps, min_samples), (
                f"instance {i}: partition mismatch (n={len(coords)}, eps={eps}, "
                f"min_samples={min_samples})"
            )
        elapsed = time.perf_counter() - started
        assert elapsed < 30.0, f"100 instances took {elapsed:.1f}s (budget 30s)"

    run_criterion(capsys, 1, "dbscan partitions match brute-force reference", body)


# ---------------------------------------------------------------------------
# 2. cluster centers are coordinate means


def test_criterion_02_cluster_centers_match_hand_means(capsys):
    def body():
        # Two-point cluster: center is the midpoint.
        pair = [(40.0, -74.0), (40.001, -74.001)]
        labels = dbscan(events_at(pair), ClusterParams(eps_meters=500.0, min_samples=1))
        (cluster,) = cluster_centers(events_at(pair), labels)
        assert abs(cluster.center_latitude - 40.0005) < 1e-9
        assert abs(cluster.center_longitude - (-74.0005)) < 1e-9

        # Five-member cluster: center is the arithmetic mean.
        five = [
            (40.7001, -74.0002),
            (40.7003, -74.0001),
            (40.7002, -74.0004),
            (40.7000, -74.0003),
            (40.7004, -74.0000),
        ]
        labels = dbscan(events_at(five), ClusterParams(eps_meters=200.0, min_samples=2))
        (cluster,) = cluster_centers(events_at(five), labels)
        assert abs(cluster.center_latitude - sum(p[0] for p in five) / 5) < 1e-9
        assert abs(cluster.center_longitude - sum(p[1] for p in five) / 5) < 1e-9
        assert cluster.member_count == 5

        # 20-point fixture: per-cluster means recomputed from the labels.
        coords = twenty_point_fixture()
        labels = dbscan(events_at(coords), ClusterParams(eps_meters=50.0, min_samples=4))
        clusters = cluster_centers(events_at(coords), labels)
        assert len(clusters) == 2
        for cluster in clusters:
            member_coords = [
                coords[i] for i, lbl in enumerate(labels) if lbl == cluster.cluster_id
            ]
            lat = sum(p[0] for p in member_coords) / len(member_coords)
            lon = sum(p[1] for p in member_coords) / len(member_coords)
            assert abs(cluster.center_latitude - lat) < 1e-9
            assert abs(cluster.center_longitude - lon) < 1e-9

    run_criterion(capsys, 2, "cluster centers equal hand-computed means", body)


# ---------------------------------------------------------------------------
# 3. metric identities


def test_criterion_03_metric_identities(capsys):
    def body():
        rng = np.random.default_rng(17)
        cases = [(0, 0, 0, 0), (5, 0, 0, 0), (0, 3, 4, 0), (0, 0, 0, 9)]
        while len(cases) < 50:
            cases.append(tuple(int(v) for v in rng.integers(0, 40, size=4)))
        for tp, fp, fn, tn in cases:
            confusion = np.zeros((2, 2), dtype=np.int64)
            confusion[HOTSPOT_INDEX, HOTSPOT_INDEX] = tp
            confusion[1 - HOTSPOT_INDEX, HOTSPOT_INDEX] = fp
            confusion[HOTSPOT_INDEX, 1 - HOTSPOT_INDEX] = fn
            confusion[1 - HOTSPOT_INDEX, 1 - HOTSPOT_INDEX] = tn
            metrics = metrics_from_confusion(confusion)
            accuracy, precision, recall, f1 = naive_metrics(tp, fp, fn, tn)
            assert metrics.accuracy == accuracy, (tp, fp, fn, tn)
            assert metrics.precision == precision, (tp, fp, fn, tn)
            assert metrics.recall == recall, (tp, fp, fn, tn)
            assert metrics.f1 == f1, (tp, fp, fn, tn)
            # Harmonic-mean identity, recomputed from the returned values.
            if metrics.precision + metrics.recall > 0:
                harmonic = (
                    2 * metrics.precision * metrics.recall
                    / (metrics.precision + metrics.recall)
                )
                assert abs(metrics.f1 - harmonic) <= 1e-12
            else:
                assert metrics.f1 == 0.0

    run_criterion(capsys, 3, "precision/recall/f1/accuracy identities", body)


# ---------------------------------------------------------------------------
# 4. toy classifier reaches 0.95 test accuracy on CPU inside five minutes


def test_criterion_04_toy_classifier_accuracy(capsys, tmp_path):
    def body():
        started = time.perf_counter()
        root = tmp_path / "accept-ws"
        root.mkdir()
        manifest, model, _ = build_toy_workspace(root)
        assert len(manifest.records) >= 200
        metrics = evaluate(model, manifest.test_records(), root)
        elapsed = time.perf_counter() - started
        assert metrics.n == len(manifest.test_records())
        assert metrics.accuracy >= 0.95, f"test accuracy {metrics.accuracy:.3f}"
        assert elapsed < 300.0, f"train+eval took {elapsed:.1f}s (budget 300s)"

    run_criterion(capsys, 4, "toy classifier test accuracy >= 0.95 on CPU", body)


# ---------------------------------------------------------------------------
# 5. autograd vs central finite differences


def test_criterion_05_gradient_check(capsys):
    def body():
        torch.manual_seed(3)
        model = build_model(ModelSpec(backbone="tinycnn", input_size=8))
        rng = np.random.default_rng(3)
        image = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        rel = gradient_check(model, image, n_probes=64)
        assert rel < 1e-3, f"relative error {rel:.2e}"

    run_criterion(capsys, 5, "input gradients match finite differences", body)


# ---------------------------------------------------------------------------
# 6. heatmaps localize the disk


def test_criterion_06_gradcam_localization(capsys, toy_model):
    def body():
        rng = np.random.default_rng(77)
        hits = 0
        for _ in range(20):
            scene = toy_scene(HOTSPOT, rng, size=64)
            hm = compute_cam(toy_model, scene.image, method="gradcam").heatmap
            x0, y0, x1, y1 = scene.disk_bbox
            top = hm >= np.quantile(hm, 0.9)
            box = np.zeros_like(top)
            box[max(y0, 0) : y1, max(x0, 0) : x1] = True
            mass_total = float(hm[top].sum())
            mass_inside = float(hm[top & box].sum())
            if mass_total > 0 and mass_inside / mass_total >= 0.6:
                hits += 1
        assert hits >= 18, f"localized {hits}/20 scenes"

    run_criterion(capsys, 6, "gradcam top-decile mass localizes the disk", body)


# ---------------------------------------------------------------------------
# 7. scorecam weights against the masking oracle


def test_criterion_07_scorecam_weights(capsys, toy_model, hotspot_scene):
    def body():
        result = compute_cam(toy_model, hotspot_scene.image, method="scorecam")
        inputs = _prepare_input(toy_model, hotspot_scene.image)
        oracle = brute_scorecam_weights(
            toy_model, toy_model.cam_layer, inputs, HOTSPOT_INDEX
        )
        gap = float(np.abs(result.channel_weights - oracle).max())
        assert gap < 1e-6, f"max weight gap {gap:.2e}"

    run_criterion(capsys, 7, "scorecam weights match brute-force masking", body)


# ---------------------------------------------------------------------------
# 8. mask algebra, rasterization, PNG round-trip


def random_mask(rng, shape=(64, 64)):
    return BinaryMask(rng.random(shape) < 0.35)


def random_scribbles(rng):
    strokes = []
    for _ in range(int(rng.integers(1, 6))):
        n_points = int(rng.integers(1, 5))
        points = [
            (float(rng.uniform(-5, 69)), float(rng.uniform(-5, 69)))
            for _ in range(n_points)
        ]
        strokes.append(
            Stroke(
                points=tuple(points),
                radius=float(rng.uniform(1.0, 9.0)),
                mode="paint" if rng.random() < 0.7 else "erase",
            )
        )
    return ScribbleSet(strokes=tuple(strokes))


def test_criterion_08_mask_algebra_and_rasterization(capsys):
    def body():
        rng = np.random.default_rng(5)
        for _ in range(10):
            a, b, c = (random_mask(rng) for _ in range(3))
            union = mask_union(a, b, c).bits
            inter = mask_intersect(a, b).bits
            comp = mask_complement(a).bits
            for y in range(64):
                for x in range(64):
                    assert union[y, x] == (a.bits[y, x] or b.bits[y, x] or c.bits[y, x])
                    assert inter[y, x] == (a.bits[y, x] and b.bits[y, x])
                    assert comp[y, x] == (not a.bits[y, x])
            # PNG round-trip is bit-exact and byte-stable.
            png = mask_to_png_bytes(a)
            back = png_bytes_to_mask(png)
            assert np.array_equal(back.bits, a.bits)
            assert mask_to_png_bytes(back) == png

        for _ in range(20):
            scribbles = random_scribbles(rng)
            mask = rasterize_scribbles(scribbles, (64, 64))
            oracle = brute_rasterize_ordered(
                [(s.points, s.radius, s.mode) for s in scribbles.strokes], 64, 64
            )
            assert np.array_equal(mask.bits, oracle)

    run_criterion(capsys, 8, "mask algebra and rasterization match pixel oracles", body)


# ---------------------------------------------------------------------------
# 9. overlap ratio on constructed masks


def test_criterion_09_ap_saliency_ratio(capsys):
    def body():
        shape = (64, 64)
        ap = np.zeros(shape, dtype=bool)
        ap[10:20, 10:30]  = True  # 200 pixels

        superset = np.zeros(shape, dtype=bool)
        superset[5:25, 5:35] = True
        assert abs(ap_saliency_ratio(BinaryMask(superset), BinaryMask(ap)) - 100.0) < 1e-9

        disjoint = np.zeros(shape, dtype=bool)
        disjoint[40:50, 40:50] = True
        assert abs(ap_saliency_ratio(BinaryMask(disjoint), BinaryMask(ap))) < 1e-9

        half = np.zeros(shape, dtype=bool)
        half[10:20, 10:20] = True  # covers 100 of the 200 ap pixels
        assert abs(ap_saliency_ratio(BinaryMask(half), BinaryMask(ap)) - 50.0) < 1e-9

    run_criterion(capsys, 9, "overlap ratio exact on constructed masks", body)


# ---------------------------------------------------------------------------
# 10. end-to-end drop experiment with the mock backend


def test_criterion_10_mock_inpaint_drop_experiment(capsys, toy_model):
    def body():
        started = time.perf_counter()
        rng = np.random.default_rng(99)
        backend = MockBackend()
        sessions = []
        for i in range(20):
            scene = toy_scene(HOTSPOT, rng, size=64)
            # Cover the disk plus the backend's 3-pixel feather margin, the
            # way an operator scribbles over a feature: otherwise the blend
            # ring keeps attenuated disk pixels and the measured drop tracks
            # the blend, not the feature removal.
            mask = ndimage.binary_dilation(scene.disk_mask, iterations=3)
            request = InpaintRequest(
                image_id=f"img-{i}",
                mask=BinaryMask(mask),
                prompt=prompt_for("roundabout"),
                seed=i,
                n_candidates=1,
            )
            result = inpaint(scene.image, request, backend)
            session = RedesignSession(
                session_id=f"s-{i:02d}",
                image_id=f"img-{i}",
                cam={"method": "gradcam", "threshold": 0.5, "min_area": 0},
                mask_id=f"m-{i}",
                inpaint={"design_name": "roundabout", "seed": i},
                chosen_candidate_id=f"c-{i}",
            )
            sessions.append(
                score_session(toy_model, session, scene.image, result.candidates[0])
            )

        report = aggregate(sessions, model_identity="tinycnn-accept")
        assert report.mean_relative_drop_percent >= 20.0, (
            f"mean relative drop {report.mean_relative_drop_percent:.2f}%"
        )

        # Both aggregate definitions must be present and recomputable from
        # the per-session probabilities the report carries.
        befores = [s.p_before for s in report.sessions]
        afters = [s.p_after for s in report.sessions]
        rel = [
            100.0 * (pb - pa) / pb for pb, pa in zip(befores, afters) if pb > 0.0
        ]
        assert len(report.sessions) == 20
        assert abs(report.mean_relative_drop_percent - sum(rel) / len(rel)) < 1e-9
        mean_before = sum(befores) / len(befores)
        mean_after = sum(afters) / len(afters)
        drop_of_means = 100.0 * (mean_before - mean_after) / mean_before
        assert abs(report.drop_of_means_percent - drop_of_means) < 1e-9

        elapsed = time.perf_counter() - started
        assert elapsed < 180.0, f"drop experiment took {elapsed:.1f}s (budget 180s)"

    run_criterion(capsys, 10, "mock-backend drop experiment >= 20% mean drop", body)


# ---------------------------------------------------------------------------
# 11. inpaint contract


def test_criterion_11_inpaint_contract(capsys):
    def body():
        rng = np.random.default_rng(23)
        backend = MockBackend()
        for i in range(5):
            scene = toy_scene(HOTSPOT, rng, size=64)
            mask = BinaryMask(rng.random((64, 64)) < 0.3)
            request = InpaintRequest(
                image_id=f"img-{i}",
                mask=mask,
                prompt=prompt_for("chicane"),
                seed=100 + i,
                n_candidates=3,
            )
            first = inpaint(scene.image, request, backend)
            second = inpaint(scene.image, request, backend)
            outside = ~mask.bits
            for cand_a, cand_b in zip(first.candidates, second.candidates):
                # Unmasked pixels carried over bit-identically, every candidate.
                assert np.array_equal(cand_a[outside], scene.image[outside])
                # Identical seed -> identical bytes.
                assert cand_a.tobytes() == cand_b.tobytes()

        scene = toy_scene(HOTSPOT, np.random.default_rng(1), size=64)
        bad = InpaintRequest(
            image_id="img-bad",
            mask=BinaryMask(np.ones((64, 64), dtype=bool)),
            prompt="photo of road",
            cfg_scale=31.0,
        )
        with pytest.raises(ValueError) as excinfo:
            inpaint(scene.image, bad, backend)
        message = str(excinfo.value)
        assert "cfg_scale" in message and "31" in message
        assert "[0.0, 30.0]" in message, message

    run_criterion(capsys, 11, "inpaint preserves unmasked pixels and rejects cfg 31", body)


# ---------------------------------------------------------------------------
# 12. prompt catalog and fine-tune recipe defaults


EXPECTED_CATALOG = (
    ("chicane", "road-chicane0"),
    ("choker", "road-choker0"),
    ("curb_extension", "road-curb0"),
    ("raised_median", "road-median0"),
    ("roundabout", "road-circle0"),
    ("street_plaza", "road-plaza0"),
    ("big_intersection", "road-intersection0"),
)


def test_criterion_12_prompt_catalog_and_recipe_defaults(capsys):
    def body():
        catalog = prompt_catalog()
        assert len(catalog) == 7
        assert tuple((p.design_name, p.subject_word) for p in catalog) == EXPECTED_CATALOG
        for spec in catalog:
            assert spec.class_prompt.startswith("photo of ")
            assert spec.full_prompt().startswith(f"photo of {spec.subject_word} ")
            # Splicing the subject word is the only change to the class prompt.
            assert spec.full_prompt().replace(f"{spec.subject_word} ", "", 1) == spec.class_prompt

        assert DREAMBOOTH_DEFAULTS == {
            "epochs": 2000,
            "learning_rate": 1e-6,
            "class_images_per_class": 50,
        }
        assert TEXTUAL_INVERSION_DEFAULTS == {
            "epochs": 2000,
            "embedding_learning_rate": 0.005,
            "tokens_per_word": 8,
        }

    run_criterion(capsys, 12, "prompt catalog verbatim and recipe defaults", body)


# ---------------------------------------------------------------------------
# 13. chrominance alteration identities


def test_criterion_13_chrominance_identities(capsys):
    def body():
        rng = np.random.default_rng(31)
        image = rng.integers(0, 256, size=(48, 48, 3), dtype=np.uint8)
        region = np.zeros((48, 48), dtype=bool)
        region[12:30, 10:26] = True

        # Strength 0 and an empty region are both the identity.
        zero = chrominance_alter(image, region, ChromaParams(strength=0.0))
        assert zero is not image and np.array_equal(zero, image)
        empty = chrominance_alter(image, np.zeros((48, 48), dtype=bool))
        assert np.array_equal(empty, image)

        altered = chrominance_alter(image, region, ChromaParams(strength=1.0))
        # Outside the region: untouched, bit for bit.
        assert np.array_equal(altered[~region], image[~region])
        # Inside: visibly different chroma but luminance preserved within 2,
        # with luma recomputed pixel by pixel via the scalar reference.
        assert not np.array_equal(altered[region], image[region])
        max_dy = 0.0
        for py, px in zip(*np.nonzero(region)):
            y_before, _, _ = rgb_to_ycbcr_ref(image[py, px].astype(np.float64))
            y_after, _, _ = rgb_to_ycbcr_ref(altered[py, px].astype(np.float64))
            max_dy = max(max_dy, abs(y_after - y_before))
        assert max_dy <= 2.0, f"max luminance delta {max_dy:.3f}"

    run_criterion(capsys, 13, "chrominance alteration identity and luminance hold", body)


# ---------------------------------------------------------------------------
# 14. live gateway server


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def test_criterion_14_live_gateway_api(capsys, workspace_copy):
    def body():
        import httpx
        import uvicorn

        from roadredesign.gateway.app import create_app
        from roadredesign.gateway.workspace import Workspace

        app = create_app(Workspace(workspace_copy), inpaint_backend=MockBackend())
        port = free_port()
        server = uvicorn.Server(
            uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning")
        )
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        try:
            base = f"http://127.0.0.1:{port}/api/v1"
            with httpx.Client(base_url=base, timeout=30.0) as client:
                deadline = time.time() + 30
                while True:
                    try:
                        if client.get("/health").status_code == 200:
                            break
                    except httpx.HTTPError:
                        pass
                    assert time.time() < deadline, "server did not come up in 30s"
                    time.sleep(0.1)

                # Example 1: the prompt catalog has exactly seven designs.
                prompts = client.get("/prompts").json()
                assert len(prompts["items"]) == 7

                # Example 2: cfg_scale 31 is rejected naming the legal bound.
                listing = client.get(
                    "/images", params={"label": HOTSPOT, "page_size": 1}
                ).json()
                image_id = listing["items"][0]["image_id"]
                scribble = {
                    "strokes": [
                        {"points": [[10, 10], [40, 44]], "radius": 6.0, "mode": "paint"}
                    ]
                }
                mask_id = client.post(f"/images/{image_id}/mask", json=scribble).json()[
                    "mask_id"
                ]
                bad = client.post(
                    "/inpaint",
                    json={
                        "image_id": image_id,
                        "mask_id": mask_id,
                        "design_name": "roundabout",
                        "cfg_scale": 31,
                    },
                )
                assert bad.status_code == 400
                error = bad.json()["error"]
                assert "cfg_scale" in error["message"]
                assert "[0.0, 30.0]" in error["message"]

                # Example 3: selecting the unchanged original reports 0.0 change.
                # An erase-only scribble rasterizes to an empty mask, so every
                # candidate equals the original image bit for bit.
                erase_only = {
                    "strokes": [
                        {"points": [[5, 5], [20, 20]], "radius": 4.0, "mode": "erase"}
                    ]
                }
                empty_mask_id = client.post(
                    f"/images/{image_id}/mask", json=erase_only
                ).json()["mask_id"]
                submitted = client.post(
                    "/inpaint",
                    json={
                        "image_id": image_id,
                        "mask_id": empty_mask_id,
                        "design_name": "roundabout",
                        "seed": 3,
                    },
                ).json()
                deadline = time.time() + 60
                while True:
                    job = client.get(f"/jobs/{submitted['job_id']}").json()
                    if job["state"] in ("done", "failed"):
                        break
                    assert time.time() < deadline, "inpaint job did not finish in 60s"
                    time.sleep(0.1)
                assert job["state"] == "done", job

                candidates = client.get(
                    f"/jobs/{submitted['job_id']}/candidates"
                ).json()
                first = candidates["items"][0]
                original = client.get(f"/images/{image_id}/file").content
                original_array = np.asarray(
                    Image.open(BytesIO(original)).convert("RGB")
                )
                candidate_array = np.asarray(
                    Image.open(BytesIO(base64.b64decode(first["png"]))).convert("RGB")
                )
                assert np.array_equal(candidate_array, original_array)

                scored = client.post(
                    f"/sessions/{submitted['session_id']}/select",
                    json={"candidate_id": first["candidate_id"]},
                ).json()
                assert scored["p_after"] == scored["p_before"]

                report = client.get("/reports/latest").json()
                assert report["mean_relative_drop_percent"] == 0.0
                assert report["drop_of_means_percent"] == 0.0
                row = next(
                    s for s in report["sessions"]
                    if s["session_id"] == submitted["session_id"]
                )
                assert row["p_after"] == row["p_before"]
        finally:
            server.should_exit = True
            thread.join(timeout=10)

    run_criterion(capsys, 14, "live gateway serves the operator flow end to end", body)
