"""Copa session service: conversation state plus the agentic LC-RAG loop.

Each student message runs diagnose -> recommend -> embed -> retrieve ->
grounded reply, and every agent turn keeps a trace linking the reply to the
retrieved chunk, the diagnosis, and the triggering message. Sessions persist
to an append-only event log; replaying the log reconstructs identical state,
and with the scripted LLM, the hash embedder, and the logical clock the whole
loop is byte-for-byte deterministic.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import embed, kb as kb_mod
from ._data import data_ref
from .errors import (
    AgentUnavailable,
    DegenerateVector,
    EmptyResponse,
    InvalidInput,
    NotFound,
    ParseError,
    ProviderError,
)
from .kb import KnowledgeBase, RetrievalResult
from .seglog import ModelAST, model_from_json, serialize_model
from .summarize import (
    LlmSpec,
    agentic_summarize,
    complete,
    get_llm_provider,
    load_template,
    render_prompt,
)

REPLY_SYSTEM_PROMPT = (
    "You are Copa, a collaborative peer agent working alongside a pair of "
    "students on their computational model. Speak as a peer: offer "
    "suggestions and questions rather than authoritative answers, make your "
    "reasoning visible, and acknowledge that your ideas may be incorrect and "
    "worth checking."
)

DEFAULT_WINDOW = 6
DEFAULT_TOP_K = 1

_LOGICAL_BASE_MS = 1735689600000  # fixed epoch for deterministic runs
_LOGICAL_STEP_MS = 1000


class WallClock:
    def tick(self) -> int:
        return int(time.time() * 1000)


class LogicalClock:
    """Monotonic fake clock: one tick per recorded event."""

    def __init__(self, base: int = _LOGICAL_BASE_MS, step: int = _LOGICAL_STEP_MS):
        self.base = base
        self.step = step
        self.count = 0

    def tick(self) -> int:
        self.count += 1
        return self.base + self.count * self.step


@dataclass
class Turn:
    role: str  # student | agent | system
    speaker: str
    text: str
    ts: int


@dataclass
class AgentTurn:
    reply_text: str
    retrieved: dict  # {chunk_id, score, text}
    diagnosis: dict  # {problem, diagnosis, recommendation, discrepancies}
    trace_id: str


@dataclass
class Session:
    session_id: str
    task_id: str
    expert_model: ModelAST
    model_state: ModelAST
    kb_ref: str
    created_at: int
    history: list[Turn] = field(default_factory=list)
    traces: list[dict] = field(default_factory=list)
    model_revisions: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


def load_expert_model(task_id: str) -> ModelAST:
    ref = data_ref("models", f"{task_id}_expert.json")
    if not ref.is_file():
        raise NotFound(f"no expert model for task {task_id!r}")
    return model_from_json(ref.read_text(encoding="utf-8"))


def _diagnosis_record(diagnosis) -> dict:
    return {
        "problem": diagnosis.problem,
        "diagnosis": diagnosis.diagnosis,
        "recommendation": diagnosis.recommendation,
        "discrepancies": [
            {"kind": d.kind, "path": d.path, "expected": d.expected, "found": d.found}
            for d in diagnosis.discrepancies
        ],
    }


class _TimedProvider:
    """Wraps an LLM provider, accumulating time spent inside the model."""

    def __init__(self, inner):
        self.inner = inner
        self.elapsed = 0.0

    def complete(self, system, messages):
        t0 = time.perf_counter()
        try:
            return self.inner.complete(system, messages)
        finally:
            self.elapsed += time.perf_counter() - t0


class CopaService:
    """Holds all sessions, the condensed KB, and the provider wiring.

    Within one session message handling serializes on the session lock;
    distinct sessions run concurrently. All state changes append to the
    event log before the call returns.
    """

    def __init__(self, kb: KnowledgeBase, llm_spec: LlmSpec,
                 embedder_spec: embed.EmbedderSpec | str,
                 event_log_path: str | Path | None = None,
                 window: int = DEFAULT_WINDOW, top_k: int = DEFAULT_TOP_K,
                 deterministic: bool = False,
                 known_tasks: tuple[str, ...] = ("truck",)):
        self.kb = kb
        self.llm_spec = llm_spec
        self.embedder_spec = (embed.get_spec(embedder_spec)
                              if isinstance(embedder_spec, str) else embedder_spec)
        if self.kb.embedder_id != self.embedder_spec.embedder_id:
            raise InvalidInput(
                f"kb embedder {self.kb.embedder_id} does not match service "
                f"embedder {self.embedder_spec.embedder_id}")
        self.window = window
        self.top_k = top_k
        self.clock = LogicalClock() if deterministic else WallClock()
        self.deterministic = deterministic
        self.known_tasks = known_tasks
        self._provider = get_llm_provider(llm_spec)
        self._embedder = embed.get_embedder(self.embedder_spec)
        self._reply_template = load_template("reply_v1")
        self.sessions: dict[str, Session] = {}
        self._session_count = 0
        self._registry_lock = threading.Lock()
        self._log_lock = threading.Lock()
        self.last_turn_timings: dict | None = None
        self.event_log_path = Path(event_log_path) if event_log_path else None
        if self.event_log_path and self.event_log_path.exists():
            self._replay()

    # -- event log ----------------------------------------------------------

    def _append_event(self, event: dict) -> None:
        if self.event_log_path is None:
            return
        with self._log_lock:
            with open(self.event_log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event, ensure_ascii=False) + "\n")

    def _replay(self) -> None:
        """Rebuild all session state from the event log (no pipeline re-runs)."""
        ticks = 0
        for line in self.event_log_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            event = json.loads(line)
            ticks += 1
            kind = event["event"]
            if kind == "session_created":
                self._session_count += 1
                session = Session(
                    session_id=event["session_id"],
                    task_id=event["task_id"],
                    expert_model=load_expert_model(event["task_id"]),
                    model_state=model_from_json(json.dumps(event["student_model"]))
                    if event.get("student_model") else ModelAST(),
                    kb_ref=self.kb.kb_id,
                    created_at=event["ts"],
                )
                self.sessions[session.session_id] = session
            elif kind == "model_updated":
                session = self.sessions[event["session_id"]]
                session.model_state = model_from_json(json.dumps(event["model"]))
                session.model_revisions += 1
                session.history.append(Turn(
                    role="system", speaker="system",
                    text=f"model updated (revision {session.model_revisions})",
                    ts=event["ts"]))
            elif kind == "student_message":
                session = self.sessions[event["session_id"]]
                session.history.append(Turn(
                    role="student", speaker=event["speaker"],
                    text=event["text"], ts=event["ts"]))
            elif kind == "agent_turn":
                session = self.sessions[event["session_id"]]
                session.history.append(Turn(
                    role="agent", speaker="copa",
                    text=event["reply_text"], ts=event["ts"]))
                session.traces.append(event["trace"])
        if isinstance(self.clock, LogicalClock):
            self.clock.count = ticks

    # -- operations ----------------------------------------------------------

    def create_session(self, task_id: str, student_model: ModelAST | None = None,
                       expert_model_id: str | None = None) -> Session:
        expert_task = expert_model_id or task_id
        if task_id not in self.known_tasks:
            raise NotFound(f"unknown task {task_id!r}")
        expert = load_expert_model(expert_task)
        with self._registry_lock:
            self._session_count += 1
            session = Session(
                session_id=f"s-{self._session_count:04d}",
                task_id=task_id,
                expert_model=expert,
                model_state=student_model or ModelAST(),
                kb_ref=self.kb.kb_id,
                created_at=self.clock.tick(),
            )
            self.sessions[session.session_id] = session
        self._append_event({
            "event": "session_created",
            "session_id": session.session_id,
            "task_id": task_id,
            "ts": session.created_at,
            "student_model": json.loads(serialize_model(student_model))
            if student_model else None,
        })
        return session

    def _get(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise NotFound(f"unknown session {session_id!r}")
        return session

    def update_model(self, session_id: str, model: ModelAST) -> int:
        """Replace the session's model snapshot; returns the revision count."""
        session = self._get(session_id)
        with session.lock:
            serialized = serialize_model(model)  # validates (cycles, finiteness)
            session.model_state = model
            session.model_revisions += 1
            ts = self.clock.tick()
            session.history.append(Turn(
                role="system", speaker="system",
                text=f"model updated (revision {session.model_revisions})", ts=ts))
            self._append_event({
                "event": "model_updated",
                "session_id": session_id,
                "ts": ts,
                "model": json.loads(serialized),
            })
            return session.model_revisions

    def _discourse_window(self, session: Session) -> str:
        turns = [t for t in session.history if t.role in ("student", "agent")]
        return "\n".join(f"{t.speaker}: {t.text}" for t in turns[-self.window:])

    def post_message(self, session_id: str, speaker: str, text: str) -> AgentTurn:
        """Append the student message, run the LC-RAG loop, reply grounded."""
        if not text or not text.strip():
            raise InvalidInput("message text must be non-empty")
        if not speaker or not speaker.strip():
            raise InvalidInput("speaker must be non-empty")
        session = self._get(session_id)
        with session.lock:
            ts = self.clock.tick()
            session.history.append(Turn(role="student", speaker=speaker,
                                        text=text, ts=ts))
            self._append_event({
                "event": "student_message", "session_id": session_id,
                "ts": ts, "speaker": speaker, "text": text,
            })
            t_start = time.perf_counter()
            timed = _TimedProvider(self._provider)
            try:
                turn = self._run_pipeline(session, timed)
            except (ProviderError, EmptyResponse, ParseError, DegenerateVector) as exc:
                # Student message stays; no partial agent turn is recorded.
                raise AgentUnavailable(f"agent pipeline failed: {exc}")
            total = time.perf_counter() - t_start
            self.last_turn_timings = {
                "total_ms": total * 1000.0,
                "llm_ms": timed.elapsed * 1000.0,
                "non_llm_ms": (total - timed.elapsed) * 1000.0,
            }
            return turn

    def _run_pipeline(self, session: Session, provider: _TimedProvider) -> AgentTurn:
        discourse = self._discourse_window(session)
        diagnosis = agentic_summarize(
            discourse, session.model_state, session.expert_model,
            self.llm_spec, provider=provider)

        query = self._embedder.embed(diagnosis.recommendation)
        results = kb_mod.search(self.kb, query, k=self.top_k)
        top: RetrievalResult = results[0]
        chunk_text = self.kb.chunk(top.chunk_id).text
        # all top-k texts go into the prompt; the turn is attributed to top-1
        chunk_block = "\n\n".join(self.kb.chunk(r.chunk_id).text for r in results)

        reply_prompt = render_prompt(
            self._reply_template,
            diagnosis=f"Problem: {diagnosis.problem}\n"
                      f"Cause: {diagnosis.diagnosis}\n"
                      f"Suggested knowledge: {diagnosis.recommendation}",
            chunk=chunk_block,
            conversation=discourse)
        reply_text = complete(self.llm_spec, system=REPLY_SYSTEM_PROMPT,
                              messages=[("user", reply_prompt)], provider=provider)

        ts = self.clock.tick()
        trace_id = f"{session.session_id}:t{len(session.traces) + 1:04d}"
        trace = {
            "trace_id": trace_id,
            "message_text": session.history[-1].text,
            "diagnosis": _diagnosis_record(diagnosis),
            "retrieved": {"chunk_id": top.chunk_id, "score": top.score,
                          "text": chunk_text},
            "reply_prompt": reply_prompt,
            "reply_text": reply_text,
            "ts": ts,
        }
        session.history.append(Turn(role="agent", speaker="copa",
                                    text=reply_text, ts=ts))
        session.traces.append(trace)
        self._append_event({
            "event": "agent_turn", "session_id": session.session_id,
            "ts": ts, "reply_text": reply_text, "trace": trace,
        })
        return AgentTurn(
            reply_text=reply_text,
            retrieved=dict(trace["retrieved"]),
            diagnosis=_diagnosis_record(diagnosis),
            trace_id=trace_id,
        )

    def get_transcript(self, session_id: str) -> dict:
        session = self._get(session_id)
        with session.lock:
            return {
                "session_id": session.session_id,
                "task_id": session.task_id,
                "kb_id": session.kb_ref,
                "model_revisions": session.model_revisions,
                "messages": [
                    {"role": t.role, "speaker": t.speaker, "text": t.text, "ts": t.ts}
                    for t in session.history
                ],
                "traces": [dict(tr) for tr in session.traces],
            }

    def health(self) -> dict:
        return {
            "status": "ok",
            "kb_id": self.kb.kb_id,
            "providers": {
                "llm": self.llm_spec.model_id,
                "embedder": self.embedder_spec.embedder_id,
            },
        }
