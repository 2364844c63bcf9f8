"""HTTP/WebSocket service tying the engine together for remote clients.

REST covers catalogs, users, exercise grading, and history; a per-session
WebSocket carries the real-time loop: JSON control messages in, binary
slice frames plus JSON events out.

Wire contract (all little-endian):
  frame  = u32 width | u32 height | f32 mm_per_px | width*height u8 pixels
  After each pose message the main (masked) frame is sent first, then one
  coronal frame if that assist view is on. Every other client message is
  acknowledged by exactly one JSON message with a ``type`` discriminator.

Determinism: samples are stamped with the session's message sequence number,
not wall time, so replaying a recorded message script reproduces the result
message byte for byte.
"""

# no `from __future__ import annotations` here: FastAPI must resolve the
# websocket route's annotations eagerly against create_app's local imports

import json
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .anatomy import ProstateModel, mesh_to_obj
from .biopsy import BiopsySample, evaluate_protocol, fire_biopsy
from .exercises import (
    Attempt,
    GradingError,
    PatientRecord,
    RecommenderConfig,
    SphereRegion,
    grade_localization,
    grade_risk_answer,
    grade_simulation,
    grade_volume_lengths,
    recommend_exercises,
)
from .probe import DevicePose, ProbePose, constrain_pose, image_plane_of
from .probe import guide_line_of
from .scenario import Scenario, build_prostate, build_volume, default_exercises
from .store import (
    SessionRecord,
    SessionStore,
    UnknownSessionError,
    UnknownUserError,
    result_to_dict,
    sample_to_dict,
    session_to_dict,
)
from .volume import SliceImage, SlicePlane, UsVolume, apply_sector_mask, extract_slice


class UnknownScenarioError(KeyError):
    pass


class UnknownExerciseError(KeyError):
    pass


@dataclass(frozen=True)
class ServiceConfig:
    slice_px: tuple[int, int] = (256, 256)
    slice_extent_mm: tuple[float, float] = (60.0, 60.0)
    fov_deg: float = 120.0
    r_min_mm: float = 4.0
    r_max_mm: float = 58.0
    recommender: RecommenderConfig = RecommenderConfig(
        beginner_sequence=("ex-risk", "ex-volume", "ex-localize-bladder",
                           "ex-sim-standard"),
    )


# ---------------------------------------------------------------------------
# Frame codec
# ---------------------------------------------------------------------------

_FRAME_HEADER = struct.Struct("<IIf")


def encode_frame(img: SliceImage) -> bytes:
    return _FRAME_HEADER.pack(img.px_w, img.px_h, img.mm_per_px_u) + img.pixels.tobytes()


def decode_frame(buf: bytes) -> tuple[int, int, float, np.ndarray]:
    """(width, height, mm_per_px, pixels[h, w]) from one binary frame."""
    w, h, mm = _FRAME_HEADER.unpack_from(buf)
    pixels = np.frombuffer(buf, dtype=np.uint8, offset=_FRAME_HEADER.size)
    if pixels.size != w * h:
        raise ValueError(f"frame payload {pixels.size} != {w}x{h}")
    return w, h, mm, pixels.reshape(h, w)


def _err(code: str, text: str) -> dict:
    return {"type": "error", "code": code, "text": text}


# ---------------------------------------------------------------------------
# Session engine (transport-free; the FastAPI layer is a thin adapter)
# ---------------------------------------------------------------------------

@dataclass
class _LiveSession:
    session_id: str
    user_id: str
    scenario: Scenario
    started_at_ms: int
    pose: ProbePose | None = None
    samples: list[BiopsySample] = field(default_factory=list)
    assists_on: dict[str, bool] = field(default_factory=lambda: {"coronal": False, "3d": False})
    assists_used: dict[str, bool] = field(default_factory=lambda: {"coronal": False, "3d": False})
    seq: int = 0
    ended: bool = False


class Engine:
    def __init__(self, scenarios: dict[str, Scenario], store: SessionStore,
                 config: ServiceConfig = ServiceConfig(),
                 exercises: dict | None = None,
                 base_dir=None):
        self.scenarios = scenarios
        self.exercises = exercises if exercises is not None else default_exercises()
        self.store = store
        self.config = config
        self.base_dir = base_dir
        self._assets: dict[str, tuple[UsVolume, ProstateModel]] = {}
        self.sessions: dict[str, _LiveSession] = {}

    # -- assets --------------------------------------------------------

    def scenario(self, scenario_id: str) -> Scenario:
        try:
            return self.scenarios[scenario_id]
        except KeyError:
            raise UnknownScenarioError(scenario_id) from None

    def assets(self, scenario_id: str) -> tuple[UsVolume, ProstateModel]:
        if scenario_id not in self._assets:
            sc = self.scenario(scenario_id)
            self._assets[scenario_id] = (build_volume(sc, self.base_dir),
                                         build_prostate(sc, self.base_dir))
        return self._assets[scenario_id]

    # -- lifecycle -----------------------------------------------------

    def create_session(self, user_id: str, scenario_id: str,
                       session_id: str | None = None) -> str:
        self.store.get_user(user_id)
        sc = self.scenario(scenario_id)
        self.assets(scenario_id)  # fail fast on broken file refs
        from .store import new_id
        sid = session_id if session_id is not None else new_id()
        self.sessions[sid] = _LiveSession(
            session_id=sid, user_id=user_id, scenario=sc,
            started_at_ms=int(time.time() * 1000),
        )
        return sid

    # -- frames --------------------------------------------------------

    def _main_frame(self, sc: Scenario, vol: UsVolume, pose: ProbePose) -> bytes:
        cfg = self.config
        plane = image_plane_of(sc.probe, pose, extent=cfg.slice_extent_mm,
                               resolution=cfg.slice_px)
        img = extract_slice(vol, plane)
        img = apply_sector_mask(img, cfg.fov_deg, cfg.r_min_mm, cfg.r_max_mm,
                                apex_px=(img.px_w / 2.0, float(img.px_h)))
        return encode_frame(img)

    def _coronal_frame(self, sc: Scenario, vol: UsVolume,
                       prostate: ProstateModel) -> bytes:
        cfg = self.config
        lo = np.asarray(prostate.box.min)
        hi = np.asarray(prostate.box.max)
        c = (lo + hi) / 2.0
        plane = SlicePlane(
            center=(float(c[0]), float(c[1]), float(c[2])),
            u_axis=(1.0, 0.0, 0.0), v_axis=(0.0, 0.0, 1.0),
            width_mm=cfg.slice_extent_mm[0], height_mm=cfg.slice_extent_mm[1],
            px_w=cfg.slice_px[0], px_h=cfg.slice_px[1],
        )
        return encode_frame(extract_slice(vol, plane))

    # -- message pump ----------------------------------------------------

    def handle_message(self, session_id: str, msg) -> list[dict | bytes]:
        s = self.sessions.get(session_id)
        if s is None:
            return [_err("unknown_session", f"no session {session_id!r}")]
        if s.ended:
            return [_err("session_ended", "session already finalized")]
        if not isinstance(msg, dict) or "type" not in msg:
            return [_err("bad_message", "expected an object with a 'type' field")]
        s.seq += 1
        kind = msg["type"]
        try:
            if kind == "pose":
                return self._on_pose(s, msg)
            if kind == "fire":
                return self._on_fire(s)
            if kind == "assist":
                return self._on_assist(s, msg)
            if kind == "end":
                return self._on_end(s)
            return [_err("bad_message", f"unknown message type {kind!r}")]
        except Exception as exc:  # keep the connection alive, report instead
            return [_err("internal", f"{type(exc).__name__}: {exc}")]

    def _on_pose(self, s: _LiveSession, msg: dict) -> list[dict | bytes]:
        try:
            pos = tuple(float(v) for v in msg["position"])
            quat = tuple(float(v) for v in msg["orientation"])
            if len(pos) != 3 or len(quat) != 4:
                raise ValueError("position needs 3 values, orientation 4")
            dev = DevicePose(position=pos, orientation=quat)
        except (KeyError, TypeError, ValueError) as exc:
            return [_err("bad_pose", str(exc))]
        s.pose = constrain_pose(s.scenario.probe, dev)
        vol, prostate = self.assets(s.scenario.id)
        out: list[dict | bytes] = [self._main_frame(s.scenario, vol, s.pose)]
        if s.assists_on["coronal"]:
            out.append(self._coronal_frame(s.scenario, vol, prostate))
        return out

    def _on_fire(self, s: _LiveSession) -> list[dict]:
        if s.pose is None:
            return [_err("no_pose", "send a pose before firing")]
        _, prostate = self.assets(s.scenario.id)
        guide = guide_line_of(s.scenario.probe, s.pose)
        sample = fire_biopsy(
            s.scenario.needle, guide, s.scenario.insertion_mm, prostate,
            order_index=len(s.samples), fire_pose=s.pose, timestamp_ms=s.seq,
        )
        s.samples.append(sample)
        return [{"type": "sample", "sample": sample_to_dict(sample)}]

    def _on_assist(self, s: _LiveSession, msg: dict) -> list[dict]:
        view = msg.get("view")
        on = msg.get("on")
        if view not in s.scenario.assistance_views or not isinstance(on, bool):
            return [_err("bad_assist",
                         f"view must be one of {list(s.scenario.assistance_views)} "
                         "with boolean 'on'")]
        s.assists_on[view] = on
        if on:
            s.assists_used[view] = True
        return [{"type": "assist_ok", "view": view, "on": on}]

    def _on_end(self, s: _LiveSession) -> list[dict]:
        result = evaluate_protocol(s.samples, s.scenario.canonical_order,
                                   s.scenario.targets)
        grade = grade_simulation(result)
        s.ended = True
        rec = SessionRecord(
            session_id=s.session_id,
            user_id=s.user_id,
            scenario_ref=s.scenario.id,
            started_at_ms=s.started_at_ms,
            ended_at_ms=max(int(time.time() * 1000), s.started_at_ms),
            samples=tuple(s.samples),
            result=result,
            assistance=dict(s.assists_used),
            score=grade.score,
        )
        self.store.record_session(rec)
        return [{"type": "result", "result": result_to_dict(result),
                 "score": grade.score, "components": grade.components}]

    # -- exercises -------------------------------------------------------

    def grade_attempt(self, exercise_id: str, user_id: str, inputs: dict,
                      timestamp_ms: int | None = None) -> tuple[str, Attempt]:
        try:
            ex = self.exercises[exercise_id]
        except KeyError:
            raise UnknownExerciseError(exercise_id) from None
        self.store.get_user(user_id)
        ts = timestamp_ms if timestamp_ms is not None else int(time.time() * 1000)
        try:
            if ex.kind == "questionnaire":
                patient = PatientRecord(**inputs["patient"])
                score, truth = grade_risk_answer(patient, inputs["answer_band"])
                detail = {"truth_band": truth.risk_band,
                          "psa_density": truth.psa_density,
                          "rationale": truth.rationale}
            elif ex.kind == "volume_estimate":
                g = grade_volume_lengths(tuple(ex.grading["true_dims_mm"]),
                                         dict(inputs["lengths_mm"]),
                                         ex.grading.get("rel_tolerance", 0.25))
                score = g.score
                detail = {"per_axis_rel_err": g.per_axis_rel_err,
                          "estimated_volume_cc": g.estimated_volume_cc}
            elif ex.kind == "structure_localization":
                r = ex.grading["region"]
                region = SphereRegion(label=r["label"], center=tuple(r["center"]),
                                      radius_mm=r["radius_mm"])
                point = [float(v) for v in inputs["point"]]
                if len(point) != 3:
                    raise GradingError("point needs 3 coordinates")
                score = grade_localization(region, point,
                                           ex.grading.get("falloff_mm", 10.0))
                detail = {"region": r}
            else:
                raise GradingError("guided simulations are graded via the "
                                   "session stream, not this endpoint")
        except GradingError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise GradingError(f"invalid inputs: {exc}") from exc
        attempt = Attempt(user_id=user_id, exercise_id=exercise_id,
                          timestamp_ms=ts, kind=ex.kind, inputs=inputs,
                          score=score, detail=detail)
        return self.store.record_attempt(attempt), attempt

    def recommendations(self, user_id: str) -> list[str]:
        self.store.get_user(user_id)
        history = [sa.attempt for sa in self.store.list_attempts(user_id)]
        for rec in self.store.list_sessions(user_id):
            if rec.result is None:
                continue
            history.append(Attempt(
                user_id=user_id, exercise_id=rec.scenario_ref,
                timestamp_ms=rec.started_at_ms, kind="guided_simulation",
                inputs={}, score=rec.score if rec.score is not None else 0.0,
                detail={"zone_hit_map": list(rec.result.zone_hit_map)},
            ))
        return recommend_exercises(history, list(self.exercises.values()),
                                   self.config.recommender)


# ---------------------------------------------------------------------------
# FastAPI adapter
# ---------------------------------------------------------------------------

def create_app(engine: Engine):
    from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
    from fastapi.responses import PlainTextResponse

    app = FastAPI(title="biopsym", version=__version__)
    app.state.engine = engine

    def _need(body: dict, key: str) -> object:
        if not isinstance(body, dict) or key not in body:
            raise HTTPException(status_code=400, detail=f"missing field {key!r}")
        return body[key]

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/users", status_code=201)
    def create_user(body: dict):
        name = _need(body, "display_name")
        profile = engine.store.create_user(str(name),
                                           created_at_ms=int(time.time() * 1000))
        return {"user_id": profile.user_id, "display_name": profile.display_name,
                "created_at_ms": profile.created_at_ms}

    @app.get("/scenarios")
    def list_scenarios():
        from .scenario import scenario_to_dict
        return {"scenarios": [scenario_to_dict(sc) for sc in engine.scenarios.values()]}

    @app.get("/scenarios/{scenario_id}/mesh", response_class=PlainTextResponse)
    def scenario_mesh(scenario_id: str):
        try:
            _, prostate = engine.assets(scenario_id)
        except UnknownScenarioError:
            raise HTTPException(status_code=404, detail="unknown scenario") from None
        return mesh_to_obj(prostate.mesh)

    @app.get("/exercises")
    def list_exercises():
        return {"exercises": [
            {"id": e.id, "kind": e.kind, "title": e.title,
             "scenario_ref": e.scenario_ref, "constraints": e.constraints,
             "grading": e.grading}
            for e in engine.exercises.values()
        ]}

    @app.post("/sessions", status_code=201)
    def create_session(body: dict):
        user_id = str(_need(body, "user_id"))
        scenario_id = str(_need(body, "scenario_id"))
        try:
            sid = engine.create_session(user_id, scenario_id)
        except UnknownScenarioError:
            raise HTTPException(status_code=404, detail="unknown scenario") from None
        except UnknownUserError:
            raise HTTPException(status_code=404, detail="unknown user") from None
        return {"session_id": sid}

    @app.post("/exercises/{exercise_id}/attempts", status_code=201)
    def post_attempt(exercise_id: str, body: dict):
        user_id = str(_need(body, "user_id"))
        inputs = _need(body, "inputs")
        ts = body.get("timestamp_ms")
        try:
            attempt_id, attempt = engine.grade_attempt(
                exercise_id, user_id, inputs,
                int(ts) if ts is not None else None)
        except UnknownExerciseError:
            raise HTTPException(status_code=404, detail="unknown exercise") from None
        except UnknownUserError:
            raise HTTPException(status_code=404, detail="unknown user") from None
        except GradingError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        return {"attempt_id": attempt_id, "exercise_id": exercise_id,
                "user_id": user_id, "timestamp_ms": attempt.timestamp_ms,
                "kind": attempt.kind, "score": attempt.score,
                "detail": attempt.detail}

    @app.get("/users/{user_id}/timeline")
    def timeline(user_id: str):
        try:
            entries = engine.store.timeline(user_id)
        except UnknownUserError:
            raise HTTPException(status_code=404, detail="unknown user") from None
        return {"timeline": [
            {"timestamp_ms": e.timestamp_ms, "kind": e.kind,
             "ref_id": e.ref_id, "score": e.score}
            for e in entries
        ]}

    @app.get("/users/{user_id}/series")
    def series(user_id: str, kind: str):
        try:
            pts = engine.store.score_series(user_id, kind)
        except UnknownUserError:
            raise HTTPException(status_code=404, detail="unknown user") from None
        return {"kind": kind, "series": [[t, s] for t, s in pts]}

    @app.get("/users/{user_id}/recommendations")
    def recommendations(user_id: str):
        try:
            recs = engine.recommendations(user_id)
        except UnknownUserError:
            raise HTTPException(status_code=404, detail="unknown user") from None
        return {"recommended": recs}

    @app.get("/sessions/{session_id}/replay")
    def replay(session_id: str):
        try:
            rec = engine.store.replay(session_id)
        except UnknownSessionError:
            raise HTTPException(status_code=404, detail="unknown session") from None
        return session_to_dict(rec)

    @app.websocket("/sessions/{session_id}/stream")
    async def stream(ws: WebSocket, session_id: str):
        await ws.accept()
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await ws.send_json(_err("bad_message", "not valid JSON"))
                    continue
                for resp in engine.handle_message(session_id, msg):
                    if isinstance(resp, bytes):
                        await ws.send_bytes(resp)
                    else:
                        await ws.send_json(resp)
        except WebSocketDisconnect:
            return

    return app


def build_default_engine(data_dir, scenarios_file=None,
                         config: ServiceConfig = ServiceConfig()) -> Engine:
    from .scenario import default_scenarios, load_scenarios
    scenarios = (load_scenarios(scenarios_file) if scenarios_file
                 else default_scenarios())
    return Engine(scenarios, SessionStore(data_dir), config=config)
