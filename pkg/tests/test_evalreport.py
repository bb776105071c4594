"""Session scoring (p_before / p_after), the two aggregate drop definitions,
and the append-only session store."""

import dataclasses
import json
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from roadredesign.errors import MissingCandidate, NoScoredSessions
from roadredesign.evalreport import (
    EvalReport,
    RedesignSession,
    aggregate,
    append_session,
    load_sessions,
    score_session,
    write_report_csv,
    write_report_json,
)
from roadredesign.classifier import predict_proba
from roadredesign.inpaint import InpaintRequest, MockBackend, inpaint
from roadredesign.maskkit import BinaryMask


def make_session(session_id="s1", p_before=None, p_after=None, **kwargs):
    return RedesignSession(
        session_id=session_id,
        image_id=kwargs.pop("image_id", "img-1"),
        cam=kwargs.pop("cam", {"method": "gradcam", "threshold": 0.5}),
        mask_id=kwargs.pop("mask_id", "m-abc"),
        inpaint=kwargs.pop("inpaint", {"prompt": "roundabout", "seed": 3}),
        p_before=p_before,
        p_after=p_after,
        **kwargs,
    )


def scored(session_id, p_before, p_after):
    return make_session(session_id, p_before=p_before, p_after=p_after)


# ---------------------------------------------------------------------------
# RedesignSession


def test_probabilities_must_be_in_unit_interval():
    with pytest.raises(ValueError):
        make_session(p_before=1.5)
    with pytest.raises(ValueError):
        make_session(p_after=-0.1)
    make_session(p_before=0.0, p_after=1.0)  # bounds included


def test_scored_requires_both_probabilities():
    assert not make_session().scored
    assert not make_session(p_before=0.5).scored
    assert not make_session(p_after=0.5).scored
    assert make_session(p_before=0.5, p_after=0.4).scored


def test_session_dict_round_trip():
    session = scored("s9", 0.7, 0.2)
    session.operator_notes = "narrowed the lane"
    session.operator_seconds = 118.0
    clone = RedesignSession.from_dict(session.to_dict())
    assert clone == session


# ---------------------------------------------------------------------------
# score_session


def test_identical_candidate_scores_equal_probabilities(toy_model, hotspot_scene):
    session = make_session()
    out = score_session(toy_model, session, hotspot_scene.image, hotspot_scene.image)
    assert out.scored
    assert out.p_after == out.p_before
    assert out.revision == session.revision + 1
    assert session.p_before is None  # input session untouched


def test_masking_out_the_disk_lowers_the_probability(toy_model, hotspot_scene):
    request = InpaintRequest(
        image_id="img-1",
        mask=BinaryMask(hotspot_scene.disk_mask),
        prompt="quiet residential street",
        seed=5,
    )
    result = inpaint(hotspot_scene.image, request, MockBackend())
    out = score_session(
        toy_model, make_session(), hotspot_scene.image, result.candidates[0]
    )
    assert out.p_before > 0.9
    assert out.p_after < out.p_before


def test_score_session_accepts_file_paths(toy_model, hotspot_scene, tmp_path):
    before = tmp_path / "before.png"
    after = tmp_path / "after.png"
    Image.fromarray(hotspot_scene.image).save(before)
    Image.fromarray(hotspot_scene.image).save(after)
    out = score_session(toy_model, make_session(), before, after)
    assert out.p_after == out.p_before
    assert abs(out.p_before - float(predict_proba(toy_model, hotspot_scene.image))) <= 1e-9


def test_missing_candidate_file(toy_model, hotspot_scene, tmp_path):
    with pytest.raises(MissingCandidate):
        score_session(
            toy_model, make_session(), hotspot_scene.image, tmp_path / "nope.png"
        )


def test_unreadable_candidate_file(toy_model, hotspot_scene, tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"this is not a png")
    with pytest.raises(MissingCandidate):
        score_session(toy_model, make_session(), hotspot_scene.image, bad)


def test_none_candidate_is_missing(toy_model, hotspot_scene):
    with pytest.raises(MissingCandidate):
        score_session(toy_model, make_session(), hotspot_scene.image, None)


# ---------------------------------------------------------------------------
# aggregate


def test_single_session_drop_from_080_to_060():
    report = aggregate([scored("s1", 0.8, 0.6)])
    assert abs(report.mean_relative_drop_percent - 25.0) <= 1e-9
    assert abs(report.drop_of_means_percent - 25.0) <= 1e-9
    assert abs(report.mean_p_before - 0.8) <= 1e-12
    assert abs(report.mean_p_after - 0.6) <= 1e-12
    assert report.n_excluded_zero_before == 0


def test_unchanged_sessions_aggregate_to_zero():
    sessions = [scored(f"s{i}", p, p) for i, p in enumerate([0.2, 0.5, 0.9])]
    report = aggregate(sessions)
    assert report.mean_relative_drop_percent == 0.0
    assert report.drop_of_means_percent == 0.0


def test_hand_computed_three_session_aggregate():
    sessions = [
        scored("a", 0.9, 0.3),
        scored("b", 0.5, 0.4),
        scored("c", 0.8, 0.8),
    ]
    report = aggregate(sessions, model_identity="tinycnn-test")
    rels = [100.0 * (0.9 - 0.3) / 0.9, 100.0 * (0.5 - 0.4) / 0.5, 0.0]
    expected_rel = sum(rels) / 3
    mean_b, mean_a = (0.9 + 0.5 + 0.8) / 3, (0.3 + 0.4 + 0.8) / 3
    expected_dom = 100.0 * (mean_b - mean_a) / mean_b
    assert abs(report.mean_relative_drop_percent - expected_rel) <= 1e-9
    assert abs(report.drop_of_means_percent - expected_dom) <= 1e-9
    assert report.model_identity == "tinycnn-test"
    assert len(report.sessions) == 3


def test_zero_before_sessions_are_excluded_from_the_relative_mean():
    report = aggregate([scored("z", 0.0, 0.0), scored("s", 0.8, 0.6)])
    assert abs(report.mean_relative_drop_percent - 25.0) <= 1e-9
    assert report.n_excluded_zero_before == 1
    # drop of means still uses all scored sessions: (0.4 - 0.3) / 0.4.
    assert abs(report.drop_of_means_percent - 25.0) <= 1e-9


def test_all_zero_befores_yield_zero_aggregates():
    report = aggregate([scored("z1", 0.0, 0.0), scored("z2", 0.0, 0.0)])
    assert report.mean_relative_drop_percent == 0.0
    assert report.drop_of_means_percent == 0.0
    assert report.n_excluded_zero_before == 2


def test_aggregate_requires_a_scored_session():
    with pytest.raises(NoScoredSessions):
        aggregate([])
    with pytest.raises(NoScoredSessions):
        aggregate([make_session(), make_session("s2", p_before=0.7)])


def test_unscored_sessions_are_ignored():
    mixed = aggregate([make_session("u1"), scored("s1", 0.8, 0.6)])
    only = aggregate([scored("s1", 0.8, 0.6)])
    assert mixed.mean_relative_drop_percent == only.mean_relative_drop_percent
    assert mixed.drop_of_means_percent == only.drop_of_means_percent
    assert [s.session_id for s in mixed.sessions] == ["s1"]


def test_aggregate_is_permutation_invariant():
    rng = random.Random(7)
    sessions = [scored(f"s{i}", 0.1 + 0.08 * i, 0.05 * i) for i in range(10)]
    base = aggregate(sessions)
    for _ in range(5):
        shuffled = sessions[:]
        rng.shuffle(shuffled)
        report = aggregate(shuffled)
        assert abs(report.mean_relative_drop_percent - base.mean_relative_drop_percent) <= 1e-9
        assert abs(report.drop_of_means_percent - base.drop_of_means_percent) <= 1e-9
        assert abs(report.mean_p_before - base.mean_p_before) <= 1e-12
        assert abs(report.mean_p_after - base.mean_p_after) <= 1e-12


@given(
    st.lists(
        st.tuples(
            st.floats(min_value=1e-6, max_value=1.0),
            st.floats(min_value=0.0, max_value=1.0),
        ),
        min_size=1,
        max_size=12,
    )
)
@settings(max_examples=60, deadline=None)
def test_improvements_never_produce_negative_aggregates(pairs):
    sessions = [
        scored(f"s{i}", pb, min(pa, pb)) for i, (pb, pa) in enumerate(pairs)
    ]
    report = aggregate(sessions)
    assert -1e-9 <= report.mean_relative_drop_percent <= 100.0 + 1e-9
    assert -1e-9 <= report.drop_of_means_percent <= 100.0 + 1e-9


# ---------------------------------------------------------------------------
# persistence


def test_session_store_keeps_latest_revision_per_id(tmp_path):
    path = tmp_path / "sessions.jsonl"
    first = scored("s1", 0.8, 0.7)
    second = dataclasses.replace(first, p_after=0.5, revision=first.revision + 1)
    other = scored("s2", 0.6, 0.3)
    for session in (first, second, other):
        append_session(session, path)

    everything = load_sessions(path, latest_only=False)
    assert [s.revision for s in everything if s.session_id == "s1"] == [0, 1]
    assert len(everything) == 3

    latest = load_sessions(path)
    assert [s.session_id for s in latest] == ["s1", "s2"]
    assert latest[0].revision == 1
    assert latest[0].p_after == 0.5


def test_loading_a_missing_store_yields_no_sessions(tmp_path):
    assert load_sessions(tmp_path / "absent.jsonl") == []


def test_recomputing_from_the_persisted_store_reproduces_the_report(tmp_path):
    path = tmp_path / "sessions.jsonl"
    sessions = [scored(f"s{i}", 0.3 + 0.07 * i, 0.1 + 0.05 * i) for i in range(5)]
    for session in sessions:
        append_session(session, path)
    stored = aggregate(sessions, model_identity="m-1")
    recomputed = aggregate(load_sessions(path), model_identity="m-1")
    assert recomputed.mean_p_before == stored.mean_p_before
    assert recomputed.mean_p_after == stored.mean_p_after
    assert recomputed.mean_relative_drop_percent == stored.mean_relative_drop_percent
    assert recomputed.drop_of_means_percent == stored.drop_of_means_percent
    assert recomputed.to_dict() == stored.to_dict()


def test_report_json_carries_both_aggregates(tmp_path):
    report = aggregate([scored("s1", 0.8, 0.6), scored("s2", 0.5, 0.5)], "ident")
    write_report_json(report, tmp_path / "report.json")
    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload["model_identity"] == "ident"
    assert payload["mean_relative_drop_percent"] == report.mean_relative_drop_percent
    assert payload["drop_of_means_percent"] == report.drop_of_means_percent
    assert payload["n_excluded_zero_before"] == 0
    assert [s["session_id"] for s in payload["sessions"]] == ["s1", "s2"]


def test_report_csv_rows_and_summary(tmp_path):
    report = aggregate([scored("s1", 0.8, 0.6), scored("z", 0.0, 0.0)])
    write_report_csv(report, tmp_path / "report.csv")
    lines = (tmp_path / "report.csv").read_text().strip().splitlines()
    assert lines[0] == "session_id,image_id,p_before,p_after,relative_drop_percent"
    assert lines[1] == "s1,img-1,0.800000,0.600000,25.000000"
    assert lines[2] == "z,img-1,0.000000,0.000000,"  # no defined relative drop
    assert "mean_relative_drop_percent,25.000000" in lines
    assert "drop_of_means_percent,25.000000" in lines
