"""HTTP session service: lifecycle, message turns, feedback, durable journal.

Every state mutation is written to an append-only line-delimited journal
before the response is acknowledged, so a restarted process reconstructs
every session to its last acknowledged turn by replaying the journal's
state snapshots. Request handling is concurrent across sessions; a
per-session lock serializes steps within one session.
"""
from __future__ import annotations

import base64
import binascii
import io
import json
import secrets
import threading
import time
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol

from fastapi import FastAPI, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import dialogue, metrics, prompting, schema
from .backends import BackendUnavailable
from .dialogue import Deps, SessionState, TurnOutput

LANGS = ("en", "hi")
MODALITIES = ("text", "speech")

SPEECH_SAMPLE_RATE = 16_000


class SpeechUnavailable(Exception):
    """Raised by speech adapters that have no model wired in."""


class SpeechAdapter(Protocol):
    def transcribe(self, audio: bytes) -> str: ...
    def synthesize(self, text: str, language: str) -> bytes: ...


class StubSpeechAdapter:
    """Default adapter: rejects audio with a clear error (text-only build)."""

    def transcribe(self, audio: bytes) -> str:
        raise SpeechUnavailable(
            "speech-to-text is not configured on this deployment; send text"
        )

    def synthesize(self, text: str, language: str) -> bytes:
        raise SpeechUnavailable(
            "text-to-speech is not configured on this deployment"
        )


def validate_wav_16k_mono(audio: bytes) -> None:
    """Raise ValueError unless the bytes are a 16 kHz mono WAV file."""
    try:
        with wave.open(io.BytesIO(audio), "rb") as wav:
            channels = wav.getnchannels()
            rate = wav.getframerate()
    except (wave.Error, EOFError) as exc:
        raise ValueError(f"not a readable WAV file: {exc}") from exc
    if channels != 1:
        raise ValueError(f"expected mono audio, got {channels} channels")
    if rate != SPEECH_SAMPLE_RATE:
        raise ValueError(f"expected {SPEECH_SAMPLE_RATE} Hz audio, got {rate}")


# ---------------------------------------------------------------------------
# Journal + store
# ---------------------------------------------------------------------------

@dataclass
class FeedbackRecord:
    session_id: str
    turn_index: int
    rating: int
    helpful: bool
    comment: str
    created_at: float


class SessionStore:
    """Live session map backed by an append-only journal.

    Journal entry types: session, turn, feedback, error. Turn entries embed
    a full state snapshot, so restore is a single pass keeping the last
    snapshot per session.
    """

    def __init__(self, journal_path: str | Path, restore: bool = True):
        self.journal_path = Path(journal_path)
        self._write_lock = threading.Lock()
        self._map_lock = threading.Lock()
        self._sessions: dict[str, SessionState] = {}
        self._session_locks: dict[str, threading.Lock] = {}
        self._feedback: dict[str, list[FeedbackRecord]] = {}
        if restore and self.journal_path.exists():
            self._restore()

    def _restore(self) -> None:
        with self.journal_path.open("r", encoding="utf-8") as handle:
            for line in handle:
                if not line.strip():
                    continue
                try:
                    entry = json.loads(line)
                except ValueError:
                    continue  # a torn final write must not block startup
                kind = entry.get("type")
                if kind == "session":
                    state = dialogue.new_session(
                        entry["session_id"],
                        language=entry.get("language"),
                        modality=entry.get("modality", "text"),
                    )
                    self._sessions[state.session_id] = state
                elif kind == "turn" and "state" in entry:
                    state = SessionState.from_dict(entry["state"])
                    self._sessions[state.session_id] = state
                elif kind == "feedback":
                    rec = FeedbackRecord(
                        session_id=entry["session_id"],
                        turn_index=int(entry["turn_index"]),
                        rating=int(entry["rating"]),
                        helpful=bool(entry.get("helpful", False)),
                        comment=str(entry.get("comment", "")),
                        created_at=float(entry.get("ts", 0.0)),
                    )
                    self._feedback.setdefault(rec.session_id, []).append(rec)
        for session_id in self._sessions:
            self._session_locks[session_id] = threading.Lock()

    def _journal(self, entry: dict) -> None:
        line = json.dumps(entry, ensure_ascii=False)
        with self._write_lock:
            with self.journal_path.open("a", encoding="utf-8") as out:
                out.write(line + "\n")
                out.flush()

    def create(self, language: Optional[str], modality: str) -> SessionState:
        session_id = secrets.token_hex(16)
        state = dialogue.new_session(session_id, language=language, modality=modality)
        with self._map_lock:
            self._sessions[session_id] = state
            self._session_locks[session_id] = threading.Lock()
        self._journal(
            {
                "type": "session",
                "ts": time.time(),
                "session_id": session_id,
                "language": language,
                "modality": modality,
            }
        )
        return state

    def get(self, session_id: str) -> Optional[SessionState]:
        with self._map_lock:
            return self._sessions.get(session_id)

    def lock_for(self, session_id: str) -> threading.Lock:
        with self._map_lock:
            return self._session_locks[session_id]

    def exchange_count(self, session_id: str) -> int:
        state = self.get(session_id)
        if state is None:
            return 0
        return sum(1 for t in state.transcript if t.author == "system")

    def record_turn(
        self,
        state: SessionState,
        user_text: str,
        output: TurnOutput,
        latency_ms: float,
    ) -> int:
        """Persist the post-step state; returns the turn index."""
        turn_index = sum(1 for t in state.transcript if t.author == "system") - 1
        if state.transcript and state.transcript[-1].author == "system":
            state.transcript[-1].annotations["latency_ms"] = latency_ms
        self._journal(
            {
                "type": "turn",
                "ts": time.time(),
                "session_id": state.session_id,
                "turn_index": turn_index,
                "user_text": user_text,
                "reply_text": output.reply_text,
                "phase": output.phase_after,
                "category": output.category,
                "passage_id": output.passage_id,
                "latency_ms": latency_ms,
                "events": [dialogue.event_name(e) for e in output.events],
                "state": state.to_dict(),
            }
        )
        with self._map_lock:
            self._sessions[state.session_id] = state
        return turn_index

    def record_error(self, session_id: str, status: int, message: str) -> None:
        self._journal(
            {
                "type": "error",
                "ts": time.time(),
                "session_id": session_id,
                "status": status,
                "message": message,
            }
        )

    def record_feedback(self, rec: FeedbackRecord) -> None:
        self._journal(
            {
                "type": "feedback",
                "ts": rec.created_at,
                "session_id": rec.session_id,
                "turn_index": rec.turn_index,
                "rating": rec.rating,
                "helpful": rec.helpful,
                "comment": rec.comment,
            }
        )
        with self._map_lock:
            self._feedback.setdefault(rec.session_id, []).append(rec)

    def feedback_for(self, session_id: str) -> list[FeedbackRecord]:
        with self._map_lock:
            return list(self._feedback.get(session_id, []))

    def session_ids(self) -> list[str]:
        with self._map_lock:
            return list(self._sessions)

    def compact(self) -> int:
        """Drop state snapshots from all but each session's newest turn.

        Turn history (latencies, events, texts) survives intact so metrics
        are unchanged; only the embedded per-turn state duplicates go. The
        rewrite is atomic. Returns the number of snapshots removed.
        """
        with self._write_lock:
            if not self.journal_path.exists():
                return 0
            lines = self.journal_path.read_text("utf-8").splitlines()
            entries = []
            last_turn_with_state: dict[str, int] = {}
            for i, line in enumerate(lines):
                if not line.strip():
                    continue
                try:
                    entry = json.loads(line)
                except ValueError:
                    continue
                entries.append(entry)
                if entry.get("type") == "turn" and "state" in entry:
                    last_turn_with_state[entry["session_id"]] = len(entries) - 1
            removed = 0
            keep = set(last_turn_with_state.values())
            for i, entry in enumerate(entries):
                if entry.get("type") == "turn" and "state" in entry and i not in keep:
                    del entry["state"]
                    removed += 1
            tmp = self.journal_path.with_suffix(".compacting")
            with tmp.open("w", encoding="utf-8") as out:
                for entry in entries:
                    out.write(json.dumps(entry, ensure_ascii=False) + "\n")
                out.flush()
            tmp.replace(self.journal_path)
            return removed


# ---------------------------------------------------------------------------
# API models
# ---------------------------------------------------------------------------

class CreateSessionBody(BaseModel):
    language: Optional[str] = None
    modality: str = "text"


class MessageBody(BaseModel):
    text: Optional[str] = None
    audio: Optional[str] = None  # base64 WAV, 16 kHz mono


class FeedbackBody(BaseModel):
    turn_index: int
    rating: int
    helpful: bool = True
    comment: str = Field(default="", max_length=2000)


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def _session_view(state: SessionState, feedback: list[FeedbackRecord], registry) -> dict:
    filled = {k: v for k, v in state.slots.items() if v}
    missing: list[str] = []
    if state.crop_id and state.intent_id:
        try:
            intent_def = schema.lookup_intent(registry, state.crop_id, state.intent_id)
            missing = [s.id for s in intent_def.required_slots() if not state.slots.get(s.id)]
        except schema.NotFoundError:
            missing = []
    return {
        "session_id": state.session_id,
        "language": state.language,
        "modality": state.modality,
        "phase": state.phase,
        "category": state.category,
        "crop_id": state.crop_id,
        "intent_id": state.intent_id,
        "slots": {"filled": filled, "missing": missing},
        "pending_slot": state.pending_slot,
        "clarification_turns": state.clarification_turns,
        "transcript": [
            {
                "author": t.author,
                "text": t.text,
                "timestamp": t.timestamp,
                "annotations": t.annotations,
            }
            for t in state.transcript
        ],
        "feedback": [
            {
                "turn_index": f.turn_index,
                "rating": f.rating,
                "helpful": f.helpful,
                "comment": f.comment,
            }
            for f in feedback
        ],
    }


def create_app(
    deps: Deps,
    store: SessionStore,
    speech: SpeechAdapter | None = None,
    backend_mode: str = "stub",
    cors_origins: str = "*",
    template_path: Optional[str] = None,
) -> FastAPI:
    app = FastAPI(title="agriassist", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[o.strip() for o in cors_origins.split(",")],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    speech = speech or StubSpeechAdapter()

    @app.post("/v1/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        if body.modality not in MODALITIES:
            return _error(400, f"modality must be one of {MODALITIES}")
        if body.language is not None and body.language not in LANGS:
            return _error(400, f"language must be one of {LANGS}")
        state = store.create(body.language, body.modality)
        return {"session_id": state.session_id}

    @app.post("/v1/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageBody):
        state = store.get(session_id)
        if state is None:
            return _error(404, "unknown session")
        if state.phase == dialogue.PHASE_CLOSED:
            return _error(409, "session is closed")

        user_text = body.text
        if body.audio is not None:
            if state.modality != "speech":
                store.record_error(session_id, 422, "audio on a text session")
                return _error(422, "this session is text-only; send {text}")
            try:
                audio = base64.b64decode(body.audio, validate=True)
                validate_wav_16k_mono(audio)
            except (ValueError, binascii.Error) as exc:
                store.record_error(session_id, 422, f"bad audio: {exc}")
                return _error(422, f"audio must be base64 of a 16 kHz mono WAV: {exc}")
            try:
                user_text = speech.transcribe(audio)
            except SpeechUnavailable as exc:
                store.record_error(session_id, 502, str(exc))
                return _error(502, str(exc))
        if user_text is None or not user_text.strip():
            store.record_error(session_id, 422, "empty message")
            return _error(422, "message needs nonempty {text} or {audio}")

        lock = store.lock_for(session_id)
        started = time.perf_counter()
        with lock:
            state = store.get(session_id)
            try:
                new_state, output = dialogue.step(state, user_text, deps)
            except dialogue.SessionClosed:
                return _error(409, "session is closed")
            except BackendUnavailable as exc:
                store.record_error(session_id, 502, str(exc))
                return _error(502, "the answering service is unavailable; try again shortly")
            audio_reply = None
            if state.modality == "speech":
                try:
                    audio_reply = base64.b64encode(
                        speech.synthesize(output.reply_text, new_state.language or "en")
                    ).decode("ascii")
                except SpeechUnavailable:
                    audio_reply = None  # degrade to text delivery
            latency_ms = (time.perf_counter() - started) * 1000.0
            turn_index = store.record_turn(new_state, user_text, output, latency_ms)

        response = {
            "session_id": session_id,
            "turn_index": turn_index,
            "reply_text": output.reply_text,
            "phase": output.phase_after,
            "pending_question": output.phase_after == dialogue.PHASE_CLARIFYING,
            "pending_slot": output.pending_slot,
            "category": output.category,
            "passage_id": output.passage_id,
            "events": [dialogue.event_name(e) for e in output.events],
            "latency_ms": latency_ms,
        }
        if audio_reply is not None:
            response["audio"] = audio_reply
        return response

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str):
        state = store.get(session_id)
        if state is None:
            return _error(404, "unknown session")
        return _session_view(state, store.feedback_for(session_id), deps.registry)

    @app.post("/v1/sessions/{session_id}/feedback", status_code=201)
    def post_feedback(session_id: str, body: FeedbackBody):
        state = store.get(session_id)
        if state is None:
            return _error(404, "unknown session")
        if not 1 <= body.rating <= 5:
            return _error(422, "rating must be between 1 and 5")
        if not 0 <= body.turn_index < store.exchange_count(session_id):
            return _error(422, f"turn_index {body.turn_index} does not reference a system turn")
        rec = FeedbackRecord(
            session_id=session_id,
            turn_index=body.turn_index,
            rating=body.rating,
            helpful=body.helpful,
            comment=body.comment,
            created_at=time.time(),
        )
        store.record_feedback(rec)
        return {
            "session_id": session_id,
            "turn_index": rec.turn_index,
            "rating": rec.rating,
            "helpful": rec.helpful,
            "comment": rec.comment,
        }

    @app.get("/v1/health")
    def health():
        index_loaded = deps.index is not None and len(deps.index) > 0
        return {
            "status": "ok" if index_loaded else "degraded",
            "index_loaded": index_loaded,
            "backend_mode": backend_mode,
        }

    @app.get("/v1/metrics")
    def live_metrics():
        report = metrics.compute_metrics_from_path(store.journal_path)
        return metrics.report_to_dict(report)

    @app.post("/v1/admin/reload-template")
    def reload_template():
        if not template_path:
            return _error(400, "no template path configured")
        try:
            deps.template = prompting.load_template(template_path)
        except prompting.TemplateError as exc:
            return _error(422, str(exc))
        return {"reloaded": True}

    return app
