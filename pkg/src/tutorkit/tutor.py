"""Guided tutoring sessions: prior assembly, output filtering, and turn control.

A session walks an ordered subtask plan. Every model candidate passes the
disclosure filter; full answers are rejected and regenerated, repeated
rejections revert the session to its previous checkpoint, and partial leaks
are regenerated once and then redacted. The emitted stream therefore never
contains a full-answer turn.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Protocol

import numpy as np

from tutorkit import astseg
from tutorkit.astseg import KnowledgeTag, SubtaskPlan
from tutorkit.embed import EmbedderConfig, embed_text
from tutorkit.vectordb import DEFAULT_RELEVANCE_THRESHOLD, VectorIndex, search_exact


class VerdictLabel(str, Enum):
    GUIDED = "guided"
    PARTIAL_LEAK = "partial_leak"
    FULL_ANSWER = "full_answer"


TERMINAL_ANSWER_PATTERNS = (
    "the final answer is",
    "the answer is",
    "here is the complete solution",
    "here is the full solution",
)

DEFAULT_PERSONA = (
    "You are a patient and careful tutor who helps students work through "
    "coding problems on their own."
)
DEFAULT_CONSTRAINT = (
    "Guide the student one step at a time and never reveal the complete "
    "solution or the final result."
)
TIGHTENED_CONSTRAINT_SUFFIX = (
    " Your previous reply disclosed too much; respond with a hint for the "
    "current step only."
)

REANCHOR_TEMPLATE = (
    "Let's take a step back and refocus on step {index}: {description} "
    "Work through just this part and tell me what you find."
)
CLOSING_MESSAGE = (
    "You have worked through every step yourself. Well done; put the parts "
    "together and run your solution."
)
COMPLETION_SIGNALS = ("done", "finished", "next", "got it", "ok", "solved it")


@dataclass(frozen=True)
class SystemPrompt:
    persona: str = DEFAULT_PERSONA
    guide_constraint: str = DEFAULT_CONSTRAINT

    def __post_init__(self) -> None:
        if not self.persona or not self.guide_constraint:
            raise ValueError("persona and guide_constraint must be non-empty")


@dataclass(frozen=True)
class TutorConfig:
    retrieval_k: int = 4
    retrieval_threshold: float = DEFAULT_RELEVANCE_THRESHOLD
    history_window: int = 8
    partial_threshold: float = 0.3
    full_threshold: float = 0.8
    max_rejections: int = 3
    filter_enabled: bool = True
    prior_enabled: bool = True
    embed_cfg: EmbedderConfig = EmbedderConfig()


@dataclass(frozen=True)
class PromptBundle:
    system: SystemPrompt
    retrieved: tuple[tuple[str, float], ...]
    plan: SubtaskPlan
    current_subtask: int
    history: tuple[tuple[str, str], ...]
    constraint: str
    anchored: bool = True

    def __post_init__(self) -> None:
        if not 1 <= self.current_subtask <= len(self.plan):
            raise ValueError(f"current_subtask {self.current_subtask} outside plan")


def render_bundle(bundle: PromptBundle) -> str:
    """Flatten a bundle for a text-completion backend; system prompt comes first."""
    parts: list[str] = []
    if bundle.anchored:
        parts.append(f"[system] {bundle.system.persona}")
        parts.append(f"[constraint] {bundle.constraint}")
        for payload, score in bundle.retrieved:
            parts.append(f"[knowledge {score:.2f}] {payload}")
        subtask = bundle.plan.subtasks[bundle.current_subtask - 1]
        parts.append(f"[focus] step {subtask.index}: {subtask.description}")
    for role, content in bundle.history:
        parts.append(f"[{role}] {content}")
    return "\n".join(parts)


class ModelBackend(Protocol):
    def generate(self, bundle: PromptBundle) -> str: ...


@dataclass(frozen=True)
class FilterVerdict:
    label: VerdictLabel
    coverage: float
    matched_patterns: tuple[str, ...] = ()


@dataclass
class TranscriptEntry:
    role: str
    content: str
    verdict: VerdictLabel | None = None
    rejected: bool = False
    reverted: bool = False
    error: bool = False


@dataclass
class Checkpoint:
    history: tuple[tuple[str, str], ...]
    current_subtask: int
    visited: frozenset[int]


@dataclass
class TurnInfo:
    reply: str = ""
    verdict: VerdictLabel | None = None
    reverted: bool = False
    rejections: int = 0
    error: bool = False


@dataclass
class SessionState:
    id: str
    plan: SubtaskPlan
    current_subtask: int = 1
    visited: set[int] = field(default_factory=set)
    checkpoints: list[Checkpoint] = field(default_factory=list)
    consecutive_rejections: int = 0
    transcript: list[TranscriptEntry] = field(default_factory=list)
    history: list[tuple[str, str]] = field(default_factory=list)
    completed: bool = False
    last_turn: TurnInfo = field(default_factory=TurnInfo)


def new_session(session_id: str, plan: SubtaskPlan) -> SessionState:
    if len(plan) == 0:
        raise ValueError("cannot start a session with an empty plan")
    return SessionState(id=session_id, plan=plan)


# ---------------------------------------------------------------------------
# Prior assembly
# ---------------------------------------------------------------------------


def assemble_prior(
    query: str,
    index: VectorIndex | None,
    plan: SubtaskPlan,
    sys: SystemPrompt,
    state: SessionState,
    cfg: TutorConfig | None = None,
    constraint: str | None = None,
) -> PromptBundle:
    """Bundle system prompt, relevant knowledge, and the current subtask focus.

    History is truncated to the most recent turns; the system prompt is carried
    separately so rendering always re-anchors it first.
    """
    cfg = cfg or TutorConfig()
    retrieved: tuple[tuple[str, float], ...] = ()
    if cfg.prior_enabled and index is not None and len(index) > 0:
        result = search_exact(index, embed_text(query, cfg.embed_cfg), cfg.retrieval_k)
        retrieved = tuple(
            (hit.payload, hit.score)
            for hit in result.hits
            if hit.score >= cfg.retrieval_threshold
        )
    history = tuple(state.history[-cfg.history_window :])
    return PromptBundle(
        system=sys,
        retrieved=retrieved,
        plan=plan,
        current_subtask=state.current_subtask,
        history=history,
        constraint=constraint if constraint is not None else sys.guide_constraint,
        anchored=cfg.prior_enabled,
    )


# ---------------------------------------------------------------------------
# Output filter
# ---------------------------------------------------------------------------


def _terminal_patterns(candidate: str, plan: SubtaskPlan) -> tuple[str, ...]:
    matched = []
    lowered = candidate.lower()
    for pattern in TERMINAL_ANSWER_PATTERNS:
        if pattern in lowered:
            matched.append(pattern)
    try:
        tree = astseg.parse_source(candidate)
        has_function = any(n.kind is astseg.NodeKind.FUNCTION_DEF for n in tree.walk())
        if has_function and astseg.plan_coverage(plan, candidate) == 1.0:
            matched.append("complete_function")
    except (astseg.LexError, astseg.ParseSyntaxError):
        pass
    return tuple(matched)


def filter_output(
    candidate: str, plan: SubtaskPlan, state: SessionState, cfg: TutorConfig | None = None
) -> FilterVerdict:
    """Classify a candidate as guided, partial leak, or full answer."""
    cfg = cfg or TutorConfig()
    coverage = astseg.plan_coverage(plan, candidate)
    patterns = _terminal_patterns(candidate, plan)
    if coverage >= cfg.full_threshold or patterns:
        label = VerdictLabel.FULL_ANSWER
    elif coverage >= cfg.partial_threshold:
        label = VerdictLabel.PARTIAL_LEAK
    else:
        label = VerdictLabel.GUIDED
    return FilterVerdict(label=label, coverage=coverage, matched_patterns=patterns)


_LINE_TAG_RE = re.compile(r"\b(def|for|while|if|return)\b")
_LINE_TAGS = {
    "def": KnowledgeTag.FUNCTION_DEFINITION,
    "for": KnowledgeTag.LOOP,
    "while": KnowledgeTag.LOOP,
    "if": KnowledgeTag.CONDITIONAL,
    "return": KnowledgeTag.RETURN,
}


def redact_candidate(candidate: str, plan: SubtaskPlan) -> str:
    """Replace disclosing lines with the matching subtask description."""
    plan_tags = {st.tag for st in plan.subtasks}
    by_tag: dict[KnowledgeTag, str] = {}
    for st in plan.subtasks:
        by_tag.setdefault(st.tag, f"(see step {st.index}: {st.description})")
    out_lines = []
    for line in candidate.split("\n"):
        tags = {_LINE_TAGS[w] for w in _LINE_TAG_RE.findall(line)}
        if astseg._SWAP_LINE_RE.search(line):
            tags.add(KnowledgeTag.SWAP)
        leak_tags = tags & plan_tags
        if leak_tags:
            tag = sorted(leak_tags, key=lambda t: t.value)[0]
            out_lines.append(by_tag[tag])
        else:
            out_lines.append(line)
    return "\n".join(out_lines)


# ---------------------------------------------------------------------------
# Turn state machine
# ---------------------------------------------------------------------------


def _is_completion_signal(message: str) -> bool:
    lowered = message.lower()
    return any(signal in lowered for signal in COMPLETION_SIGNALS)


def _reanchor_message(state: SessionState) -> str:
    subtask = state.plan.subtasks[state.current_subtask - 1]
    return REANCHOR_TEMPLATE.format(index=subtask.index, description=subtask.description)


def _emit(state: SessionState, text: str, verdict: VerdictLabel, reverted: bool = False) -> None:
    state.history.append(("assistant", text))
    state.transcript.append(
        TranscriptEntry(role="assistant", content=text, verdict=verdict, reverted=reverted)
    )


def _push_checkpoint(state: SessionState) -> None:
    state.checkpoints.append(
        Checkpoint(
            history=tuple(state.history),
            current_subtask=state.current_subtask,
            visited=frozenset(state.visited),
        )
    )


def revert_checkpoint(state: SessionState) -> SessionState:
    """Restore the previous checkpoint; an empty stack resets to the initial state."""
    if state.checkpoints:
        checkpoint = state.checkpoints.pop()
        state.history = list(checkpoint.history)
        state.current_subtask = checkpoint.current_subtask
        state.visited = set(checkpoint.visited)
    else:
        state.history = []
        state.current_subtask = 1
        state.visited = set()
    state.consecutive_rejections = 0
    state.transcript.append(
        TranscriptEntry(
            role="system",
            content=f"[reverted to step {state.current_subtask}]",
            reverted=True,
        )
    )
    return state


def advance_turn(
    state: SessionState,
    user_msg: str,
    backend: ModelBackend,
    index: VectorIndex | None,
    sys: SystemPrompt,
    cfg: TutorConfig | None = None,
) -> tuple[SessionState, str]:
    """Run one tutoring turn; the emitted text is never a full answer.

    Full-answer candidates are rejected and regenerated with a tightened
    constraint; the third consecutive rejection reverts to the previous
    checkpoint. A partial leak is regenerated once, then redacted.
    """
    cfg = cfg or TutorConfig()
    state.last_turn = TurnInfo()
    snapshot = (
        list(state.history),
        state.current_subtask,
        set(state.visited),
        state.consecutive_rejections,
    )
    state.transcript.append(TranscriptEntry(role="user", content=user_msg))
    state.history.append(("user", user_msg))

    if state.completed:
        notice = CLOSING_MESSAGE
        _emit(state, notice, VerdictLabel.GUIDED)
        state.last_turn = TurnInfo(reply=notice, verdict=VerdictLabel.GUIDED)
        return state, notice

    # The student saying "done" moves the focus to the next subtask.
    if state.current_subtask in state.visited and _is_completion_signal(user_msg):
        if state.current_subtask >= len(state.plan):
            state.completed = True
            _emit(state, CLOSING_MESSAGE, VerdictLabel.GUIDED)
            _push_checkpoint(state)
            state.consecutive_rejections = 0
            state.last_turn = TurnInfo(reply=CLOSING_MESSAGE, verdict=VerdictLabel.GUIDED)
            return state, CLOSING_MESSAGE
        state.current_subtask += 1

    constraint = sys.guide_constraint
    partial_retry_used = False
    while True:
        bundle = assemble_prior(
            user_msg, index, state.plan, sys, state, cfg, constraint=constraint
        )
        try:
            candidate = backend.generate(bundle)
        except Exception as exc:
            # Backend failure: record an error turn, leave core state untouched.
            state.history, state.current_subtask, state.visited, state.consecutive_rejections = (
                snapshot[0],
                snapshot[1],
                snapshot[2],
                snapshot[3],
            )
            message = f"[backend error: {exc}]"
            state.transcript.append(
                TranscriptEntry(role="system", content=message, error=True)
            )
            state.last_turn = TurnInfo(reply=message, error=True)
            return state, message
        verdict = filter_output(candidate, state.plan, state, cfg)

        if not cfg.filter_enabled:
            _emit(state, candidate, verdict.label)
            state.visited.add(state.current_subtask)
            _push_checkpoint(state)
            state.consecutive_rejections = 0
            state.last_turn = TurnInfo(reply=candidate, verdict=verdict.label)
            return state, candidate

        if verdict.label is VerdictLabel.GUIDED:
            _emit(state, candidate, VerdictLabel.GUIDED)
            state.visited.add(state.current_subtask)
            _push_checkpoint(state)
            state.consecutive_rejections = 0
            state.last_turn = TurnInfo(reply=candidate, verdict=VerdictLabel.GUIDED)
            return state, candidate

        if verdict.label is VerdictLabel.PARTIAL_LEAK:
            if not partial_retry_used:
                partial_retry_used = True
                constraint = sys.guide_constraint + TIGHTENED_CONSTRAINT_SUFFIX
                continue
            redacted = redact_candidate(candidate, state.plan)
            if filter_output(redacted, state.plan, state, cfg).label is VerdictLabel.FULL_ANSWER:
                redacted = _reanchor_message(state)  # last-resort safe text
            _emit(state, redacted, VerdictLabel.PARTIAL_LEAK)
            state.visited.add(state.current_subtask)
            _push_checkpoint(state)
            state.consecutive_rejections = 0
            state.last_turn = TurnInfo(reply=redacted, verdict=VerdictLabel.PARTIAL_LEAK)
            return state, redacted

        # Full answer: reject, never emit.
        state.consecutive_rejections += 1
        state.transcript.append(
            TranscriptEntry(
                role="assistant",
                content=candidate,
                verdict=VerdictLabel.FULL_ANSWER,
                rejected=True,
            )
        )
        if state.consecutive_rejections >= cfg.max_rejections:
            rejections = state.consecutive_rejections
            revert_checkpoint(state)
            message = _reanchor_message(state)
            _emit(state, message, VerdictLabel.GUIDED, reverted=True)
            state.last_turn = TurnInfo(
                reply=message,
                verdict=VerdictLabel.GUIDED,
                reverted=True,
                rejections=rejections,
            )
            return state, message
        constraint = sys.guide_constraint + TIGHTENED_CONSTRAINT_SUFFIX


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

COOPERATIVE_HINT_TEMPLATE = (
    "For step {index}, focus on this: {description} "
    "Give it a try and tell me when you are done."
)


class CooperativeBackend:
    """Deterministic hint per subtask index: the well-behaved tutor model."""

    def __init__(self, plan: SubtaskPlan):
        self.table = {
            st.index: COOPERATIVE_HINT_TEMPLATE.format(
                index=st.index, description=st.description
            )
            for st in plan.subtasks
        }

    def generate(self, bundle: PromptBundle) -> str:
        return self.table[bundle.current_subtask]


class AdversarialBackend:
    """Always emits the complete solution: the drifted model the filter must stop."""

    def __init__(self, full_solution: str):
        self.full_solution = full_solution

    def generate(self, bundle: PromptBundle) -> str:
        return self.full_solution


class ScriptedBackend:
    """Plays back a fixed sequence of candidates, repeating the last one."""

    def __init__(self, outputs: list[str]):
        if not outputs:
            raise ValueError("need at least one scripted output")
        self.outputs = list(outputs)
        self.calls = 0

    def generate(self, bundle: PromptBundle) -> str:
        out = self.outputs[min(self.calls, len(self.outputs) - 1)]
        self.calls += 1
        return out


class DriftingBackend:
    """Cooperative while the bundle is anchored by the prior module, leaky otherwise."""

    def __init__(self, plan: SubtaskPlan, full_solution: str):
        self.cooperative = CooperativeBackend(plan)
        self.full_solution = full_solution

    def generate(self, bundle: PromptBundle) -> str:
        if bundle.anchored:
            return self.cooperative.generate(bundle)
        return self.full_solution


class UnguidedBackend:
    """Direct answering with no stepwise training: discloses on every turn."""

    def __init__(self, answer: str):
        self.answer = answer

    def generate(self, bundle: PromptBundle) -> str:
        return f"The final answer is below.\n{self.answer}"


class MixedBackend:
    """Seeded mixture of guided hints and disclosures, for half-trained behavior."""

    def __init__(self, plan: SubtaskPlan, full_solution: str, seed: int, leak_prob: float = 0.5):
        self.cooperative = CooperativeBackend(plan)
        self.full_solution = full_solution
        self.rng = np.random.default_rng(seed)
        self.leak_prob = leak_prob

    def generate(self, bundle: PromptBundle) -> str:
        if self.rng.random() < self.leak_prob:
            return self.full_solution
        return self.cooperative.generate(bundle)


class RandomNoiseBackend:
    """Seeded sampler over a pool of candidate texts, for safety fuzzing."""

    def __init__(self, pool: list[str], seed: int):
        if not pool:
            raise ValueError("need a non-empty candidate pool")
        self.pool = list(pool)
        self.rng = np.random.default_rng(seed)

    def generate(self, bundle: PromptBundle) -> str:
        return self.pool[int(self.rng.integers(len(self.pool)))]


class CallableBackend:
    """Adapts a plain function to the backend contract."""

    def __init__(self, fn: Callable[[PromptBundle], str]):
        self.fn = fn

    def generate(self, bundle: PromptBundle) -> str:
        return self.fn(bundle)


class RemoteBackend:
    """Generic remote completion client: POST {system, context, constraint} -> {text}."""

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def generate(self, bundle: PromptBundle) -> str:
        import requests

        payload = {
            "system": bundle.system.persona,
            "context": render_bundle(bundle),
            "constraint": bundle.constraint,
        }
        response = requests.post(self.url, json=payload, timeout=self.timeout)
        response.raise_for_status()
        return response.json()["text"]


class TinyModelBackend:
    """Drives the toy trained model: renders the last question, decodes greedily."""

    def __init__(self, model, n_chars: int = 40):
        self.model = model
        self.n_chars = n_chars

    def generate(self, bundle: PromptBundle) -> str:
        from tutorkit import train

        question = ""
        for role, content in reversed(bundle.history):
            if role == "user":
                question = content
                break
        prompt = f"Q: {question}\nA: "
        return train.generate(self.model, prompt, n_chars=self.n_chars, stop="\n")
