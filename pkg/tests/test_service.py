import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from biopsym.exercises import GradingError
from biopsym.probe import pose_to_device
from biopsym.scenario import (
    build_prostate,
    build_volume,
    default_scenarios,
    twelve_core_script,
)
from biopsym.service import (
    Engine,
    ServiceConfig,
    UnknownExerciseError,
    UnknownScenarioError,
    create_app,
    decode_frame,
    encode_frame,
)
from biopsym.store import SessionStore, UnknownUserError
from biopsym.volume import SliceImage

SCENARIOS = default_scenarios()


@pytest.fixture(scope="module")
def shared_assets(warm_slice_kernel):
    # every built-in scenario shares the same phantom and gland, so build
    # the heavy assets once and hand each engine its own copy of the cache
    sc = SCENARIOS["phantom-standard"]
    pair = (build_volume(sc), build_prostate(sc))
    return {sid: pair for sid in SCENARIOS}


@pytest.fixture()
def engine(tmp_path, shared_assets):
    store = SessionStore(tmp_path / "data")
    eng = Engine(SCENARIOS, store, ServiceConfig())
    eng._assets.update(shared_assets)
    store.create_user("Trainee", user_id="u1")
    return eng


@pytest.fixture()
def client(engine):
    return TestClient(create_app(engine))


def pose_msg(scenario, pose):
    dev = pose_to_device(scenario.probe, pose)
    return {"type": "pose", "position": list(dev.position),
            "orientation": list(dev.orientation)}


def run_script(engine, session_id, scenario):
    """Drive a full scripted 12-core run; returns the final result message."""
    prostate = engine.assets(scenario.id)[1]
    for _, pose in twelve_core_script(scenario, prostate):
        frames = engine.handle_message(session_id, pose_msg(scenario, pose))
        assert isinstance(frames[0], bytes)
        (sample,) = engine.handle_message(session_id, {"type": "fire"})
        assert sample["type"] == "sample"
    (result,) = engine.handle_message(session_id, {"type": "end"})
    return result


# ---------------------------------------------------------------------------
# Frame codec
# ---------------------------------------------------------------------------

def test_frame_codec_round_trip():
    img = SliceImage(px_w=5, px_h=3, mm_per_px_u=0.25, mm_per_px_v=0.25,
                     pixels=np.arange(15, dtype=np.uint8).reshape(3, 5),
                     mask=np.ones((3, 5), dtype=bool))
    w, h, mm, pixels = decode_frame(encode_frame(img))
    assert (w, h) == (5, 3)
    assert mm == pytest.approx(0.25)
    np.testing.assert_array_equal(pixels, img.pixels)


def test_frame_decode_rejects_truncation():
    img = SliceImage(px_w=4, px_h=4, mm_per_px_u=1.0, mm_per_px_v=1.0,
                     pixels=np.zeros((4, 4), dtype=np.uint8),
                     mask=np.ones((4, 4), dtype=bool))
    with pytest.raises(ValueError):
        decode_frame(encode_frame(img)[:-1])


# ---------------------------------------------------------------------------
# Engine message pump
# ---------------------------------------------------------------------------

def test_unknown_session_is_reported(engine):
    (resp,) = engine.handle_message("nope", {"type": "pose"})
    assert resp["type"] == "error" and resp["code"] == "unknown_session"


def test_create_session_validates_refs(engine):
    with pytest.raises(UnknownUserError):
        engine.create_session("ghost", "phantom-standard")
    with pytest.raises(UnknownScenarioError):
        engine.create_session("u1", "mystery")


def test_pose_returns_masked_frame(engine):
    sid = engine.create_session("u1", "phantom-standard")
    sc = SCENARIOS["phantom-standard"]
    script = twelve_core_script(SCENARIOS["phantom-scripted"],
                                engine.assets("phantom-scripted")[1])
    (frame,) = engine.handle_message(sid, pose_msg(sc, script[0][1]))
    w, h, mm, pixels = decode_frame(frame)
    assert (w, h) == (256, 256)
    assert mm == pytest.approx(60.0 / 256.0)
    # the sector mask blanks the image corners
    assert pixels[0, 0] == 0 and pixels[0, -1] == 0
    assert pixels.any()


def test_bad_pose_keeps_session_alive(engine):
    sid = engine.create_session("u1", "phantom-standard")
    (resp,) = engine.handle_message(sid, {"type": "pose", "position": [0, 0]})
    assert resp["code"] == "bad_pose"
    (resp,) = engine.handle_message(sid, {"type": "pose", "position": [0, 0, 0],
                                          "orientation": [2, 0, 0, 0]})
    assert resp["code"] == "bad_pose"
    # still usable afterwards
    sc = SCENARIOS["phantom-standard"]
    script = twelve_core_script(SCENARIOS["phantom-scripted"],
                                engine.assets("phantom-scripted")[1])
    (frame,) = engine.handle_message(sid, pose_msg(sc, script[0][1]))
    assert isinstance(frame, bytes)


def test_fire_requires_pose(engine):
    sid = engine.create_session("u1", "phantom-standard")
    (resp,) = engine.handle_message(sid, {"type": "fire"})
    assert resp["code"] == "no_pose"


def test_malformed_messages_are_rejected(engine):
    sid = engine.create_session("u1", "phantom-standard")
    (resp,) = engine.handle_message(sid, {"no_type": True})
    assert resp["code"] == "bad_message"
    (resp,) = engine.handle_message(sid, "just a string")
    assert resp["code"] == "bad_message"
    (resp,) = engine.handle_message(sid, {"type": "dance"})
    assert resp["code"] == "bad_message"


def test_assist_toggle_adds_coronal_frame(engine):
    sid = engine.create_session("u1", "phantom-scripted")
    sc = SCENARIOS["phantom-scripted"]
    script = twelve_core_script(sc, engine.assets(sc.id)[1])
    msg = pose_msg(sc, script[0][1])

    assert len(engine.handle_message(sid, msg)) == 1
    (ack,) = engine.handle_message(sid, {"type": "assist", "view": "coronal", "on": True})
    assert ack == {"type": "assist_ok", "view": "coronal", "on": True}
    frames = engine.handle_message(sid, msg)
    assert len(frames) == 2
    # the coronal companion frame is unmasked, same wire format
    w, h, _, pixels = decode_frame(frames[1])
    assert (w, h) == (256, 256) and pixels.any()
    engine.handle_message(sid, {"type": "assist", "view": "coronal", "on": False})
    assert len(engine.handle_message(sid, msg)) == 1


def test_assist_3d_does_not_add_frames(engine):
    sid = engine.create_session("u1", "phantom-scripted")
    sc = SCENARIOS["phantom-scripted"]
    script = twelve_core_script(sc, engine.assets(sc.id)[1])
    (ack,) = engine.handle_message(sid, {"type": "assist", "view": "3d", "on": True})
    assert ack["type"] == "assist_ok"
    assert len(engine.handle_message(sid, pose_msg(sc, script[0][1]))) == 1


def test_assist_validation(engine):
    sid = engine.create_session("u1", "phantom-standard")
    (resp,) = engine.handle_message(sid, {"type": "assist", "view": "xray", "on": True})
    assert resp["code"] == "bad_assist"
    (resp,) = engine.handle_message(sid, {"type": "assist", "view": "coronal", "on": "yes"})
    assert resp["code"] == "bad_assist"


def test_full_scripted_run_scores_perfectly(engine):
    sc = SCENARIOS["phantom-scripted"]
    sid = engine.create_session("u1", sc.id)
    result = run_script(engine, sid, sc)
    assert result["type"] == "result"
    assert result["result"]["coverage"] == 1.0
    assert result["result"]["order_score"] == 1.0
    assert result["result"]["out_of_gland_count"] == 0
    assert result["score"] == 1.0
    # sample bookkeeping: order indices count up, timestamps are message seqs
    orders = [s["order_index"] for s in result["result"]["samples"]]
    assert orders == list(range(12))


def test_session_persisted_after_end(engine):
    sc = SCENARIOS["phantom-scripted"]
    sid = engine.create_session("u1", sc.id)
    engine.handle_message(sid, {"type": "assist", "view": "coronal", "on": True})
    engine.handle_message(sid, {"type": "assist", "view": "coronal", "on": False})
    run_script(engine, sid, sc)
    rec = engine.store.replay(sid)
    assert rec.user_id == "u1"
    assert rec.scenario_ref == sc.id
    assert len(rec.samples) == 12
    assert rec.score == 1.0
    # assists count as used even when toggled back off before the end
    assert rec.assistance["coronal"] is True
    assert rec.assistance["3d"] is False


def test_messages_after_end_are_refused(engine):
    sc = SCENARIOS["phantom-scripted"]
    sid = engine.create_session("u1", sc.id)
    run_script(engine, sid, sc)
    (resp,) = engine.handle_message(sid, {"type": "fire"})
    assert resp["code"] == "session_ended"


def test_replaying_message_script_reproduces_result(engine):
    """Same message sequence, same result message, field for field."""
    sc = SCENARIOS["phantom-scripted"]
    first = run_script(engine, engine.create_session("u1", sc.id), sc)
    second = run_script(engine, engine.create_session("u1", sc.id), sc)
    assert first == second


# ---------------------------------------------------------------------------
# Engine-level exercise grading
# ---------------------------------------------------------------------------

def test_grade_attempt_questionnaire(engine):
    aid, attempt = engine.grade_attempt("ex-risk", "u1", {
        "patient": {"age": 66, "psa": 9.0, "prostate_volume_cc": 40.0,
                    "dre_abnormal": False},
        "answer_band": "high",
    }, timestamp_ms=1)
    assert attempt.score == 1.0
    assert attempt.detail["truth_band"] == "high"
    assert engine.store.list_attempts("u1")[0].attempt_id == aid


def test_grade_attempt_volume(engine):
    _, attempt = engine.grade_attempt("ex-volume", "u1", {
        "lengths_mm": {"length": 30.0, "width": 34.0, "height": 26.0},
    }, timestamp_ms=2)
    assert attempt.score == pytest.approx(1.0)


def test_grade_attempt_localization(engine):
    _, attempt = engine.grade_attempt("ex-localize-bladder", "u1", {
        "point": [0.0, 14.0, 56.0],
    }, timestamp_ms=3)
    assert attempt.score == 1.0


def test_grade_attempt_rejects_simulation_kind(engine):
    with pytest.raises(GradingError):
        engine.grade_attempt("ex-sim-standard", "u1", {}, timestamp_ms=4)


def test_grade_attempt_unknown_exercise(engine):
    with pytest.raises(UnknownExerciseError):
        engine.grade_attempt("ex-nope", "u1", {}, timestamp_ms=5)


def test_grade_attempt_bad_inputs_raise_grading_error(engine):
    with pytest.raises(GradingError):
        engine.grade_attempt("ex-risk", "u1", {"answer_band": "high"}, timestamp_ms=6)
    with pytest.raises(GradingError):
        engine.grade_attempt("ex-localize-bladder", "u1", {"point": [1.0]},
                             timestamp_ms=7)


# ---------------------------------------------------------------------------
# Recommendations from session history
# ---------------------------------------------------------------------------

def test_recommendations_for_fresh_user(engine):
    assert engine.recommendations("u1") == list(
        engine.config.recommender.beginner_sequence)


def test_recommendations_after_perfect_run(engine):
    sc = SCENARIOS["phantom-scripted"]
    run_script(engine, engine.create_session("u1", sc.id), sc)
    assert engine.recommendations("u1") == []


def test_recommendations_flag_missed_rows(engine):
    sc = SCENARIOS["phantom-scripted"]
    sid = engine.create_session("u1", sc.id)
    prostate = engine.assets(sc.id)[1]
    # only sample the base row (zones 0-3); mid and apex stay weak
    for zone, pose in twelve_core_script(sc, prostate):
        if zone > 3:
            continue
        engine.handle_message(sid, pose_msg(sc, pose))
        engine.handle_message(sid, {"type": "fire"})
    engine.handle_message(sid, {"type": "end"})
    recs = engine.recommendations("u1")
    assert recs == ["ex-localize-apex", "ex-localize-mid", "ex-sim-apex", "ex-sim-mid"]


# ---------------------------------------------------------------------------
# REST endpoints
# ---------------------------------------------------------------------------

def test_health(client):
    body = client.get("/health").json()
    assert body["status"] == "ok"
    assert body["version"]


def test_create_user_endpoint(client, engine):
    r = client.post("/users", json={"display_name": "Newbie"})
    assert r.status_code == 201
    uid = r.json()["user_id"]
    assert engine.store.get_user(uid).display_name == "Newbie"
    assert client.post("/users", json={}).status_code == 400


def test_scenario_listing(client):
    body = client.get("/scenarios").json()
    ids = {sc["id"] for sc in body["scenarios"]}
    assert ids == set(SCENARIOS)


def test_scenario_mesh_endpoint(client):
    r = client.get("/scenarios/phantom-standard/mesh")
    assert r.status_code == 200
    first_line = r.text.splitlines()[0]
    assert first_line.startswith("v ")
    assert client.get("/scenarios/none/mesh").status_code == 404


def test_exercise_listing(client):
    body = client.get("/exercises").json()
    ids = {e["id"] for e in body["exercises"]}
    assert "ex-risk" in ids and "ex-sim-standard" in ids


def test_session_create_endpoint(client):
    ok = client.post("/sessions", json={"user_id": "u1",
                                        "scenario_id": "phantom-standard"})
    assert ok.status_code == 201 and ok.json()["session_id"]
    assert client.post("/sessions", json={"user_id": "u1"}).status_code == 400
    assert client.post("/sessions", json={"user_id": "u1", "scenario_id": "x"}
                       ).status_code == 404
    assert client.post("/sessions", json={"user_id": "ghost",
                                          "scenario_id": "phantom-standard"}
                       ).status_code == 404


def test_attempt_endpoint_and_series(client):
    r = client.post("/exercises/ex-risk/attempts", json={
        "user_id": "u1", "timestamp_ms": 10,
        "inputs": {"patient": {"age": 66, "psa": 9.0, "prostate_volume_cc": 40.0},
                   "answer_band": "high"},
    })
    assert r.status_code == 201
    assert r.json()["score"] == 1.0

    series = client.get("/users/u1/series", params={"kind": "questionnaire"}).json()
    assert series["series"] == [[10, 1.0]]

    timeline = client.get("/users/u1/timeline").json()["timeline"]
    assert timeline[0]["kind"] == "questionnaire"


def test_attempt_endpoint_error_codes(client):
    assert client.post("/exercises/ex-risk/attempts", json={"user_id": "u1"}
                       ).status_code == 400
    assert client.post("/exercises/ex-nope/attempts",
                       json={"user_id": "u1", "inputs": {}}).status_code == 404
    assert client.post("/exercises/ex-risk/attempts",
                       json={"user_id": "ghost", "inputs": {}}).status_code == 404
    bad = client.post("/exercises/ex-risk/attempts", json={
        "user_id": "u1",
        "inputs": {"patient": {"age": 66, "psa": -1.0, "prostate_volume_cc": 40.0},
                   "answer_band": "high"},
    })
    assert bad.status_code == 422


def test_user_queries_404(client):
    assert client.get("/users/ghost/timeline").status_code == 404
    assert client.get("/users/ghost/series", params={"kind": "x"}).status_code == 404
    assert client.get("/users/ghost/recommendations").status_code == 404
    assert client.get("/sessions/ghost/replay").status_code == 404


def test_recommendations_endpoint(client):
    body = client.get("/users/u1/recommendations").json()
    assert body["recommended"][0] == "ex-risk"


# ---------------------------------------------------------------------------
# WebSocket stream
# ---------------------------------------------------------------------------

def scripted_session(client, engine):
    sid = client.post("/sessions", json={
        "user_id": "u1", "scenario_id": "phantom-scripted"}).json()["session_id"]
    sc = SCENARIOS["phantom-scripted"]
    script = twelve_core_script(sc, engine.assets(sc.id)[1])
    return sid, sc, script


def test_ws_pose_fire_end_loop(client, engine):
    sid, sc, script = scripted_session(client, engine)
    with client.websocket_connect(f"/sessions/{sid}/stream") as ws:
        for _, pose in script:
            ws.send_text(json.dumps(pose_msg(sc, pose)))
            w, h, mm, pixels = decode_frame(ws.receive_bytes())
            assert (w, h) == (256, 256)
            ws.send_text(json.dumps({"type": "fire"}))
            sample = ws.receive_json()
            assert sample["type"] == "sample"
            assert not sample["sample"]["out_of_gland"]
        ws.send_text(json.dumps({"type": "end"}))
        result = ws.receive_json()
        assert result["type"] == "result"
        assert result["score"] == 1.0
        # post-end messages are refused but the socket stays open
        ws.send_text(json.dumps({"type": "fire"}))
        assert ws.receive_json()["code"] == "session_ended"


def test_ws_coronal_frames_follow_main(client, engine):
    sid, sc, script = scripted_session(client, engine)
    with client.websocket_connect(f"/sessions/{sid}/stream") as ws:
        ws.send_text(json.dumps({"type": "assist", "view": "coronal", "on": True}))
        assert ws.receive_json()["type"] == "assist_ok"
        ws.send_text(json.dumps(pose_msg(sc, script[0][1])))
        main = decode_frame(ws.receive_bytes())
        coronal = decode_frame(ws.receive_bytes())
        assert main[:2] == coronal[:2] == (256, 256)
        # main is fan-masked (blank corners), coronal is not
        assert main[3][0, 0] == 0
        assert coronal[3].any()


def test_ws_rejects_invalid_json(client, engine):
    sid, _, _ = scripted_session(client, engine)
    with client.websocket_connect(f"/sessions/{sid}/stream") as ws:
        ws.send_text("{not json")
        assert ws.receive_json()["code"] == "bad_message"
        ws.send_text(json.dumps({"type": "fire"}))
        assert ws.receive_json()["code"] == "no_pose"


def test_ws_unknown_session(client):
    with client.websocket_connect("/sessions/ghost/stream") as ws:
        ws.send_text(json.dumps({"type": "fire"}))
        assert ws.receive_json()["code"] == "unknown_session"


def test_ws_replay_endpoint_round_trip(client, engine):
    sid, sc, script = scripted_session(client, engine)
    with client.websocket_connect(f"/sessions/{sid}/stream") as ws:
        for _, pose in script[:3]:
            ws.send_text(json.dumps(pose_msg(sc, pose)))
            ws.receive_bytes()
            ws.send_text(json.dumps({"type": "fire"}))
            ws.receive_json()
        ws.send_text(json.dumps({"type": "end"}))
        ws.receive_json()
    body = client.get(f"/sessions/{sid}/replay").json()
    assert body["session_id"] == sid
    assert len(body["samples"]) == 3
    assert [s["order_index"] for s in body["samples"]] == [0, 1, 2]
