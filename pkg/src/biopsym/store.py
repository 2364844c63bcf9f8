"""Append-only NDJSON persistence for users, exercise attempts, and
simulation sessions, with timeline/score queries and full-session replay.

One file per collection under a data directory (``users.ndjson``,
``attempts.ndjson``, ``sessions.ndjson``). Every line is a self-contained
JSON record carrying a CRC32 of its canonical form, so a half-written tail
line after a crash is detected and dropped instead of being half-parsed.
Corruption anywhere before the tail raises: silent data loss is never OK.
"""

from __future__ import annotations

import json
import os
import uuid
import zlib
from dataclasses import dataclass, field
from pathlib import Path

from .biopsy import BiopsySample, ProtocolResult, TargetHit
from .exercises import Attempt
from .probe import ProbePose


class StoreError(Exception):
    pass


class StoreCorruptionError(StoreError):
    """A non-final record failed to parse or its checksum mismatched."""


class UnknownUserError(StoreError):
    pass


class UnknownSessionError(StoreError):
    pass


def new_id() -> str:
    """Random 128-bit hex id."""
    return uuid.uuid4().hex


# ---------------------------------------------------------------------------
# Record types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UserProfile:
    user_id: str
    display_name: str
    created_at_ms: int


@dataclass(frozen=True)
class SessionRecord:
    """One guided-simulation run: the fired samples plus their evaluation."""

    session_id: str
    user_id: str
    scenario_ref: str
    started_at_ms: int
    ended_at_ms: int | None
    samples: tuple[BiopsySample, ...]
    result: ProtocolResult | None
    assistance: dict = field(default_factory=dict)
    score: float | None = None

    def __post_init__(self):
        if self.ended_at_ms is not None and self.ended_at_ms < self.started_at_ms:
            raise StoreError("ended_at_ms precedes started_at_ms")


@dataclass(frozen=True)
class StoredAttempt:
    attempt_id: str
    attempt: Attempt


@dataclass(frozen=True)
class TimelineEntry:
    timestamp_ms: int
    kind: str
    ref_id: str
    score: float | None


# ---------------------------------------------------------------------------
# JSON codecs for the engine types embedded in records
# ---------------------------------------------------------------------------

def pose_to_dict(p: ProbePose) -> dict:
    return {"depth": p.depth, "pitch": p.pitch, "yaw": p.yaw, "roll": p.roll}


def pose_from_dict(d: dict) -> ProbePose:
    return ProbePose(depth=d["depth"], pitch=d["pitch"], yaw=d["yaw"], roll=d["roll"])


def sample_to_dict(s: BiopsySample) -> dict:
    return {
        "order_index": s.order_index,
        "fire_pose": pose_to_dict(s.fire_pose),
        "insertion_mm": s.insertion_mm,
        "segment": [list(s.segment[0]), list(s.segment[1])],
        "inside_mm": s.inside_mm,
        "zones": sorted(s.zones),
        "out_of_gland": s.out_of_gland,
        "timestamp_ms": s.timestamp_ms,
    }


def sample_from_dict(d: dict) -> BiopsySample:
    return BiopsySample(
        order_index=d["order_index"],
        fire_pose=pose_from_dict(d["fire_pose"]),
        insertion_mm=d["insertion_mm"],
        segment=(tuple(d["segment"][0]), tuple(d["segment"][1])),
        inside_mm=d["inside_mm"],
        zones=frozenset(d["zones"]),
        out_of_gland=d["out_of_gland"],
        timestamp_ms=d["timestamp_ms"],
    )


def result_to_dict(r: ProtocolResult) -> dict:
    return {
        "samples": [sample_to_dict(s) for s in r.samples],
        "coverage": r.coverage,
        "zone_hit_map": list(r.zone_hit_map),
        "out_of_gland_count": r.out_of_gland_count,
        "order_score": r.order_score,
        "target_hits": [
            {"target_id": t.target_id, "hit": t.hit, "min_distance_mm": t.min_distance_mm}
            for t in r.target_hits
        ],
        "total_inside_mm": r.total_inside_mm,
    }


def result_from_dict(d: dict) -> ProtocolResult:
    return ProtocolResult(
        samples=tuple(sample_from_dict(s) for s in d["samples"]),
        coverage=d["coverage"],
        zone_hit_map=tuple(bool(b) for b in d["zone_hit_map"]),
        out_of_gland_count=d["out_of_gland_count"],
        order_score=d["order_score"],
        target_hits=tuple(
            TargetHit(target_id=t["target_id"], hit=t["hit"], min_distance_mm=t["min_distance_mm"])
            for t in d["target_hits"]
        ),
        total_inside_mm=d["total_inside_mm"],
    )


def session_to_dict(rec: SessionRecord) -> dict:
    return {
        "session_id": rec.session_id,
        "user_id": rec.user_id,
        "scenario_ref": rec.scenario_ref,
        "started_at_ms": rec.started_at_ms,
        "ended_at_ms": rec.ended_at_ms,
        "samples": [sample_to_dict(s) for s in rec.samples],
        "result": None if rec.result is None else result_to_dict(rec.result),
        "assistance": rec.assistance,
        "score": rec.score,
    }


def session_from_dict(d: dict) -> SessionRecord:
    return SessionRecord(
        session_id=d["session_id"],
        user_id=d["user_id"],
        scenario_ref=d["scenario_ref"],
        started_at_ms=d["started_at_ms"],
        ended_at_ms=d["ended_at_ms"],
        samples=tuple(sample_from_dict(s) for s in d["samples"]),
        result=None if d["result"] is None else result_from_dict(d["result"]),
        assistance=d["assistance"],
        score=d["score"],
    )


def attempt_to_dict(a: Attempt) -> dict:
    return {
        "user_id": a.user_id,
        "exercise_id": a.exercise_id,
        "timestamp_ms": a.timestamp_ms,
        "kind": a.kind,
        "inputs": a.inputs,
        "score": a.score,
        "detail": a.detail,
    }


def attempt_from_dict(d: dict) -> Attempt:
    return Attempt(
        user_id=d["user_id"],
        exercise_id=d["exercise_id"],
        timestamp_ms=d["timestamp_ms"],
        kind=d["kind"],
        inputs=d["inputs"],
        score=d["score"],
        detail=d["detail"],
    )


# ---------------------------------------------------------------------------
# Line-level framing
# ---------------------------------------------------------------------------

def _canonical(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def encode_line(record: dict) -> str:
    """Canonical JSON with an appended crc field over the crc-less form."""
    crc = zlib.crc32(_canonical(record).encode("utf-8")) & 0xFFFFFFFF
    return _canonical({**record, "crc": f"{crc:08x}"})


def decode_line(line: str) -> dict:
    """Parse and verify one line; raises ValueError on any mismatch."""
    record = json.loads(line)
    if not isinstance(record, dict) or "crc" not in record:
        raise ValueError("record missing checksum")
    stated = record.pop("crc")
    crc = zlib.crc32(_canonical(record).encode("utf-8")) & 0xFFFFFFFF
    if stated != f"{crc:08x}":
        raise ValueError("checksum mismatch")
    return record


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------

class SessionStore:
    """Single-writer append-only store over a data directory.

    Reads re-scan the files, so every query is a pure function of what is
    on disk; nothing is mutated or deleted by any operation.
    """

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._users_path = self.data_dir / "users.ndjson"
        self._attempts_path = self.data_dir / "attempts.ndjson"
        self._sessions_path = self.data_dir / "sessions.ndjson"

    def _append(self, path: Path, record: dict) -> None:
        line = encode_line(record) + "\n"
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())

    def _scan(self, path: Path) -> list[dict]:
        if not path.exists():
            return []
        raw = path.read_text(encoding="utf-8")
        lines = raw.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        records: list[dict] = []
        last = len(lines) - 1
        for i, line in enumerate(lines):
            try:
                records.append(decode_line(line))
            except ValueError as exc:
                if i == last:
                    break  # torn tail write: drop it, everything before is intact
                raise StoreCorruptionError(f"{path.name} line {i + 1}: {exc}") from exc
        return records

    # -- users -------------------------------------------------------------

    def create_user(self, display_name: str, user_id: str | None = None,
                    created_at_ms: int = 0) -> UserProfile:
        uid = user_id if user_id is not None else new_id()
        if any(u.user_id == uid for u in self.list_users()):
            raise StoreError(f"user id {uid!r} already exists")
        profile = UserProfile(user_id=uid, display_name=display_name,
                              created_at_ms=created_at_ms)
        self._append(self._users_path, {
            "user_id": profile.user_id,
            "display_name": profile.display_name,
            "created_at_ms": profile.created_at_ms,
        })
        return profile

    def list_users(self) -> list[UserProfile]:
        return [UserProfile(**r) for r in self._scan(self._users_path)]

    def get_user(self, user_id: str) -> UserProfile:
        for u in self.list_users():
            if u.user_id == user_id:
                return u
        raise UnknownUserError(user_id)

    def _require_user(self, user_id: str) -> None:
        self.get_user(user_id)

    # -- attempts ----------------------------------------------------------

    def record_attempt(self, attempt: Attempt, attempt_id: str | None = None) -> str:
        self._require_user(attempt.user_id)
        aid = attempt_id if attempt_id is not None else new_id()
        self._append(self._attempts_path, {"attempt_id": aid, **attempt_to_dict(attempt)})
        return aid

    def list_attempts(self, user_id: str | None = None) -> list[StoredAttempt]:
        out = []
        for r in self._scan(self._attempts_path):
            aid = r.pop("attempt_id")
            a = attempt_from_dict(r)
            if user_id is None or a.user_id == user_id:
                out.append(StoredAttempt(attempt_id=aid, attempt=a))
        return out

    # -- sessions ----------------------------------------------------------

    def record_session(self, rec: SessionRecord) -> str:
        self._require_user(rec.user_id)
        self._append(self._sessions_path, session_to_dict(rec))
        return rec.session_id

    def list_sessions(self, user_id: str | None = None) -> list[SessionRecord]:
        recs = [session_from_dict(r) for r in self._scan(self._sessions_path)]
        if user_id is not None:
            recs = [r for r in recs if r.user_id == user_id]
        return recs

    def replay(self, session_id: str) -> SessionRecord:
        """The full stored session, samples in fire order, for 3D review."""
        for rec in self.list_sessions():
            if rec.session_id == session_id:
                return rec
        raise UnknownSessionError(session_id)

    # -- queries -----------------------------------------------------------

    def timeline(self, user_id: str) -> list[TimelineEntry]:
        """Everything the user did, sorted by timestamp (stable on ties)."""
        self._require_user(user_id)
        entries = [
            TimelineEntry(timestamp_ms=sa.attempt.timestamp_ms, kind=sa.attempt.kind,
                          ref_id=sa.attempt_id, score=sa.attempt.score)
            for sa in self.list_attempts(user_id)
        ] + [
            TimelineEntry(timestamp_ms=rec.started_at_ms, kind="simulation",
                          ref_id=rec.session_id, score=rec.score)
            for rec in self.list_sessions(user_id)
        ]
        entries.sort(key=lambda e: (e.timestamp_ms, e.ref_id))
        return entries

    def score_series(self, user_id: str, kind: str) -> list[tuple[int, float]]:
        """Chronological (timestamp, score) pairs of one activity kind."""
        return [(e.timestamp_ms, e.score) for e in self.timeline(user_id)
                if e.kind == kind and e.score is not None]
