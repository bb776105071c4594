"""Classifier construction, attention block, training, metrics, inference."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from roadredesign.classifier import (
    CLASS_ORDER,
    HOTSPOT_INDEX,
    AbmSpec,
    ModelSpec,
    TrainConfig,
    build_model,
    evaluate,
    image_to_tensor,
    load_checkpoint,
    load_image_rgb,
    metrics_from_confusion,
    predict_proba,
    save_checkpoint,
    train,
)
from roadredesign.errors import (
    EmptyDataset,
    SingleClassDataset,
    UndecodableImage,
    UnknownBackbone,
)
from roadredesign.imagery import HOTSPOT, NON_HOTSPOT

from .oracles import naive_metrics


def random_image(rng, size=64):
    return rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)


# ---------------------------------------------------------------------------
# model construction


def test_probabilities_sum_to_one():
    model = build_model(ModelSpec(backbone="tinycnn"))
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = image_to_tensor(random_image(rng), 64, model.normalization).unsqueeze(0)
        with torch.no_grad():
            probs = model.predict_proba(x)
        assert abs(float(probs.sum()) - 1.0) < 1e-6
        assert probs.shape == (1, 2)


def test_tinycnn_forward_shape():
    model = build_model(ModelSpec(backbone="tinycnn"))
    out = model(torch.zeros(2, 3, 64, 64))
    assert out.shape == (2, 2)


def test_unknown_backbone_rejected():
    with pytest.raises(UnknownBackbone):
        build_model(ModelSpec(backbone="alexnet"))


def test_abm_spec_validation():
    with pytest.raises(ValueError):
        AbmSpec(reduction=0)
    with pytest.raises(ValueError):
        AbmSpec(spatial_kernel=4)


class OnesChannelGate(torch.nn.Module):
    def forward(self, x):
        return torch.ones(x.shape[0], x.shape[1], 1, 1)


class OnesSpatialGate(torch.nn.Module):
    def forward(self, x):
        return torch.ones(x.shape[0], 1, x.shape[2], x.shape[3])


def test_abm_with_unit_gates_matches_plain_model():
    torch.manual_seed(5)
    plain = build_model(ModelSpec(backbone="tinycnn", attention=None))
    gated = build_model(ModelSpec(backbone="tinycnn", attention=AbmSpec()))
    gated.features.load_state_dict(plain.features.state_dict())
    gated.head.load_state_dict(plain.head.state_dict())
    gated.attention.channel_gate = OnesChannelGate()
    gated.attention.spatial_gate = OnesSpatialGate()
    x = torch.randn(3, 3, 64, 64)
    plain.eval()
    gated.eval()
    with torch.no_grad():
        assert torch.allclose(plain(x), gated(x), atol=1e-6)


def test_abm_preserves_shape_and_gates_stay_in_unit_interval():
    from roadredesign.classifier import AttentionBlock

    torch.manual_seed(1)
    block = AttentionBlock(32, AbmSpec())
    block.eval()
    for shape in [(1, 32, 16, 16), (4, 32, 7, 5)]:
        x = torch.randn(*shape)
        with torch.no_grad():
            out = block(x)
            cg = block.channel_gate(x)
            sg = block.spatial_gate(x)
        assert out.shape == x.shape
        assert float(cg.min()) >= 0.0 and float(cg.max()) <= 1.0
        assert float(sg.min()) >= 0.0 and float(sg.max()) <= 1.0


def test_cam_layer_is_attention_when_present():
    plain = build_model(ModelSpec(backbone="tinycnn"))
    gated = build_model(ModelSpec(backbone="tinycnn", attention=AbmSpec()))
    assert plain.cam_layer is plain.features
    assert gated.cam_layer is gated.attention


def test_zero_logits_give_half_probability():
    model = build_model(ModelSpec(backbone="tinycnn"))
    with torch.no_grad():
        model.head.weight.zero_()
        model.head.bias.zero_()
    rng = np.random.default_rng(2)
    p = predict_proba(model, random_image(rng))
    assert p == pytest.approx(0.5, abs=1e-7)


# ---------------------------------------------------------------------------
# metrics


def test_hand_confusion_matrix():
    # rows true class, cols predicted; hotspot is index 1
    confusion = [[0, 0], [0, 0]]
    confusion[HOTSPOT_INDEX][HOTSPOT_INDEX] = 3  # TP
    confusion[1 - HOTSPOT_INDEX][HOTSPOT_INDEX] = 1  # FP
    confusion[HOTSPOT_INDEX][1 - HOTSPOT_INDEX] = 1  # FN
    confusion[1 - HOTSPOT_INDEX][1 - HOTSPOT_INDEX] = 5  # TN
    m = metrics_from_confusion(confusion)
    assert m.precision == pytest.approx(0.75)
    assert m.recall == pytest.approx(0.75)
    assert m.f1 == pytest.approx(0.75)
    assert m.accuracy == pytest.approx(0.8)
    assert m.n == 10


def test_all_correct_predictions():
    confusion = np.array([[4, 0], [0, 6]])
    m = metrics_from_confusion(confusion)
    assert (m.accuracy, m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0, 1.0)


def test_zero_denominators_give_zero():
    # no predicted positives, no true positives
    m = metrics_from_confusion([[5, 0], [0, 0]])
    assert m.precision == 0.0
    assert m.recall == 0.0
    assert m.f1 == 0.0
    assert m.accuracy == 1.0
    empty = metrics_from_confusion([[0, 0], [0, 0]])
    assert (empty.accuracy, empty.precision, empty.recall, empty.f1) == (0.0, 0.0, 0.0, 0.0)


def test_invalid_confusion_rejected():
    with pytest.raises(ValueError):
        metrics_from_confusion([[1, 2, 3], [4, 5, 6]])
    with pytest.raises(ValueError):
        metrics_from_confusion([[-1, 0], [0, 0]])


@given(
    tp=st.integers(min_value=0, max_value=500),
    fp=st.integers(min_value=0, max_value=500),
    fn=st.integers(min_value=0, max_value=500),
    tn=st.integers(min_value=0, max_value=500),
)
@settings(max_examples=150, deadline=None)
def test_metric_identities_on_random_matrices(tp, fp, fn, tn):
    confusion = np.zeros((2, 2), dtype=int)
    confusion[HOTSPOT_INDEX, HOTSPOT_INDEX] = tp
    confusion[1 - HOTSPOT_INDEX, HOTSPOT_INDEX] = fp
    confusion[HOTSPOT_INDEX, 1 - HOTSPOT_INDEX] = fn
    confusion[1 - HOTSPOT_INDEX, 1 - HOTSPOT_INDEX] = tn
    m = metrics_from_confusion(confusion)
    acc, prec, rec, f1 = naive_metrics(tp, fp, fn, tn)
    assert m.accuracy == pytest.approx(acc, abs=1e-12)
    assert m.precision == pytest.approx(prec, abs=1e-12)
    assert m.recall == pytest.approx(rec, abs=1e-12)
    assert m.f1 == pytest.approx(f1, abs=1e-12)
    if m.precision + m.recall > 0:
        harmonic = 2 * m.precision * m.recall / (m.precision + m.recall)
        assert abs(m.f1 - harmonic) < 1e-12
    assert m.n == tp + fp + fn + tn


# ---------------------------------------------------------------------------
# training on the shared toy workspace


def test_toy_training_reaches_high_test_accuracy(toy_workspace, toy_model):
    manifest = toy_workspace["manifest"]
    metrics = evaluate(toy_model, manifest.test_records(), toy_workspace["root"])
    assert metrics.n == len(manifest.test_records())
    assert metrics.accuracy >= 0.95
    assert int(np.sum(metrics.confusion)) == metrics.n


def test_trained_model_scores_red_disk_high(toy_model, hotspot_scene, plain_scene):
    p_hot = predict_proba(toy_model, hotspot_scene.image)
    p_plain = predict_proba(toy_model, plain_scene.image)
    assert p_hot > 0.9
    assert p_plain < 0.5


def test_inference_is_deterministic(toy_model, hotspot_scene):
    a = predict_proba(toy_model, hotspot_scene.image)
    b = predict_proba(toy_model, hotspot_scene.image)
    assert a == b


def test_training_is_deterministic_per_seed(tmp_path):
    from roadredesign.imagery import build_manifest, location_key, save_manifest
    from roadredesign.synthetic import toy_dataset, write_toy_records

    scenes = toy_dataset(8, 8, seed=4, size=64)
    records = write_toy_records(scenes, tmp_path)
    labels = {location_key(r.latitude, r.longitude): r.label for r in records}
    manifest = build_manifest(records, labels, split_seed=1, test_fraction=0.25)

    results = []
    for _ in range(2):
        torch.manual_seed(0)  # identical initial weights
        model = build_model(ModelSpec(backbone="tinycnn"))
        result = train(model, manifest.train_records(), tmp_path,
                       TrainConfig(epochs=2, seed=11))
        results.append((result.epoch_losses, result.final_train_accuracy))
    assert results[0] == results[1]


def test_empty_training_set_rejected(tmp_path):
    model = build_model(ModelSpec(backbone="tinycnn"))
    with pytest.raises(EmptyDataset):
        train(model, [], tmp_path, TrainConfig(epochs=1))


def test_single_class_training_set_rejected(tmp_path):
    from roadredesign.imagery import build_manifest, location_key
    from roadredesign.synthetic import toy_dataset, write_toy_records

    scenes = toy_dataset(4, 0, seed=2, size=64)
    records = write_toy_records(scenes, tmp_path)
    labels = {location_key(r.latitude, r.longitude): HOTSPOT for r in records}
    manifest = build_manifest(records, labels, split_seed=1, test_fraction=0.25)
    model = build_model(ModelSpec(backbone="tinycnn"))
    with pytest.raises(SingleClassDataset):
        train(model, manifest.records, tmp_path, TrainConfig(epochs=1))


def test_evaluate_requires_records(toy_model, tmp_path):
    with pytest.raises(EmptyDataset):
        evaluate(toy_model, [], tmp_path)


# ---------------------------------------------------------------------------
# checkpoints and IO


def test_checkpoint_round_trip(toy_model, tmp_path, hotspot_scene):
    path = tmp_path / "model.pt"
    save_checkpoint(toy_model, path)
    assert path.with_suffix(".pt.json").exists()
    reloaded = load_checkpoint(path)
    assert reloaded.spec.backbone == toy_model.spec.backbone
    assert (reloaded.spec.attention is None) == (toy_model.spec.attention is None)
    p_orig = predict_proba(toy_model, hotspot_scene.image)
    p_new = predict_proba(reloaded, hotspot_scene.image)
    assert p_orig == pytest.approx(p_new, abs=1e-7)


def test_checkpoint_sidecar_names_classes(toy_model, tmp_path):
    import json

    path = tmp_path / "model.pt"
    save_checkpoint(toy_model, path)
    sidecar = json.loads(path.with_suffix(".pt.json").read_text())
    assert sidecar["classes"] == list(CLASS_ORDER)
    assert sidecar["backbone"] == "tinycnn"
    assert sidecar["input_size"] == 64


def test_undecodable_image_error(tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"garbage")
    with pytest.raises(UndecodableImage):
        load_image_rgb(bad)


def test_class_convention():
    assert CLASS_ORDER == (NON_HOTSPOT, HOTSPOT)
    assert HOTSPOT_INDEX == 1


def test_image_to_tensor_resizes_and_normalizes():
    image = np.full((32, 48, 3), 255, dtype=np.uint8)
    tensor = image_to_tensor(image, 64, ((0.5, 0.5, 0.5), (0.5, 0.5, 0.5)))
    assert tensor.shape == (3, 64, 64)
    assert float(tensor.max()) == pytest.approx(1.0)  # (1.0 - 0.5) / 0.5
    with pytest.raises(ValueError):
        image_to_tensor(np.zeros((4, 4), dtype=np.uint8), 64, ((0.5,) * 3, (0.5,) * 3))
