"""HTTP facade for tutoring sessions.

One SessionState per session id; turns within a session are serialized by a
per-session lock, sessions are independent. All payloads are JSON.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from tutorkit import astseg
from tutorkit.corpus import load_corpus
from tutorkit.embed import embed_text
from tutorkit.tutor import (
    AdversarialBackend,
    CooperativeBackend,
    ModelBackend,
    RemoteBackend,
    SessionState,
    SystemPrompt,
    TutorConfig,
    advance_turn,
    new_session,
)
from tutorkit.vectordb import VectorIndex, add

FULL_SOLUTION_FALLBACK = """def bubble_sort(arr):
    n = len(arr)
    for i in range(n):
        for j in range(0, n - i - 1):
            if arr[j] > arr[j + 1]:
                arr[j], arr[j + 1] = arr[j + 1], arr[j]
    return arr"""


@dataclass
class ServeConfig:
    backend: str = "cooperative"  # cooperative | adversarial | <remote URL>
    knowledge_path: str | None = None
    system_prompt: SystemPrompt = field(default_factory=SystemPrompt)
    tutor_cfg: TutorConfig = field(default_factory=TutorConfig)
    static_dir: str | None = None


class SessionRequest(BaseModel):
    task_source: str
    system_prompt: dict | None = None
    backend: str | None = None


class MessageRequest(BaseModel):
    content: str
    idempotency_key: str | None = None


@dataclass
class _Session:
    state: SessionState
    backend: ModelBackend
    system: SystemPrompt
    lock: threading.Lock = field(default_factory=threading.Lock)
    replays: dict[str, dict] = field(default_factory=dict)


def _build_index(cfg: ServeConfig) -> VectorIndex | None:
    if cfg.knowledge_path is None:
        return None
    dataset = load_corpus(cfg.knowledge_path)
    index = VectorIndex(dim=cfg.tutor_cfg.embed_cfg.dimension)
    for record in dataset:
        text = record.content_text()
        add(index, record.id, embed_text(text, cfg.tutor_cfg.embed_cfg), text)
    return index


def _make_backend(kind: str, plan: astseg.SubtaskPlan) -> ModelBackend:
    if kind == "cooperative":
        return CooperativeBackend(plan)
    if kind == "adversarial":
        return AdversarialBackend(FULL_SOLUTION_FALLBACK)
    if kind.startswith("http://") or kind.startswith("https://"):
        return RemoteBackend(kind)
    raise ValueError(f"unknown backend {kind!r}")


def _state_view(session: _Session) -> dict:
    state = session.state
    return {
        "session_id": state.id,
        "plan": state.plan.to_json(),
        "current_subtask": state.current_subtask,
        "completed": state.completed,
        "visited": sorted(state.visited),
        "consecutive_rejections": state.consecutive_rejections,
        "checkpoint_depth": len(state.checkpoints),
        "transcript": [
            {
                "role": entry.role,
                "content": entry.content,
                "verdict": entry.verdict.value if entry.verdict else None,
                "rejected": entry.rejected,
                "reverted": entry.reverted,
                "error": entry.error,
            }
            for entry in state.transcript
        ],
    }


def create_app(cfg: ServeConfig | None = None) -> FastAPI:
    cfg = cfg or ServeConfig()
    app = FastAPI(title="tutorkit", version="0.1.0")
    sessions: dict[str, _Session] = {}
    index = _build_index(cfg)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/session")
    def start_session(req: SessionRequest):
        try:
            plan = astseg.segment(astseg.parse_source(req.task_source))
        except (astseg.LexError, astseg.ParseSyntaxError) as exc:
            raise HTTPException(status_code=400, detail=f"cannot parse task: {exc}")
        if len(plan) == 0:
            raise HTTPException(status_code=400, detail="task produced an empty plan")
        system = cfg.system_prompt
        if req.system_prompt:
            try:
                system = SystemPrompt(
                    persona=req.system_prompt.get("persona", cfg.system_prompt.persona),
                    guide_constraint=req.system_prompt.get(
                        "guide_constraint", cfg.system_prompt.guide_constraint
                    ),
                )
            except ValueError as exc:
                raise HTTPException(status_code=400, detail=str(exc))
        try:
            backend = _make_backend(req.backend or cfg.backend, plan)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        session_id = uuid.uuid4().hex
        sessions[session_id] = _Session(
            state=new_session(session_id, plan), backend=backend, system=system
        )
        return {"session_id": session_id, "plan": plan.to_json()}

    def _get(session_id: str) -> _Session:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return session

    @app.post("/session/{session_id}/message")
    def post_message(session_id: str, req: MessageRequest):
        session = _get(session_id)
        with session.lock:
            if req.idempotency_key and req.idempotency_key in session.replays:
                return session.replays[req.idempotency_key]
            state, reply = advance_turn(
                session.state,
                req.content,
                session.backend,
                index,
                session.system,
                cfg.tutor_cfg,
            )
            response = {
                "reply": reply,
                "verdict": state.last_turn.verdict.value if state.last_turn.verdict else None,
                "current_subtask": state.current_subtask,
                "reverted": state.last_turn.reverted,
                "completed": state.completed,
                "error": state.last_turn.error,
            }
            if req.idempotency_key:
                session.replays[req.idempotency_key] = response
            return response

    @app.get("/session/{session_id}/state")
    def get_state(session_id: str):
        session = _get(session_id)
        with session.lock:
            return _state_view(session)

    if cfg.static_dir and Path(cfg.static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/app", StaticFiles(directory=cfg.static_dir, html=True), name="console")

    return app
