"""Corpus ingestion: record validation, categorization, and Q&A-to-dialogue splitting.

The on-disk format is UTF-8 JSON lines, one record per line, with fields
id / text / category / lang / turns. Unknown fields are ignored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from typing import TYPE_CHECKING, Iterable

if TYPE_CHECKING:
    from tutorkit.astseg import SubtaskPlan


class Category(str, Enum):
    TEXTBOOK = "textbook"
    CODE = "code"
    EDUCATION = "education"
    GUIDANCE = "guidance"


class Lang(str, Enum):
    EN = "en"
    ZH = "zh"
    MIXED = "mixed"


class Role(str, Enum):
    USER = "user"
    ASSISTANT = "assistant"


# Which fine-tuning phase consumes each category. Overridable per run.
DEFAULT_PHASE_TABLE: dict[Category, int] = {
    Category.TEXTBOOK: 1,
    Category.CODE: 1,
    Category.EDUCATION: 2,
    Category.GUIDANCE: 3,
}


class CorpusError(ValueError):
    """Raised for malformed corpus files or invalid records."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Turn:
    role: Role
    content: str


@dataclass(frozen=True)
class CorpusRecord:
    id: str
    text: str
    category: Category
    lang: Lang = Lang.EN
    turns: tuple[Turn, ...] = ()

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("record id must be non-empty")
        if not self.turns and not self.text:
            raise CorpusError(f"record {self.id!r}: text required when turns is empty")
        if self.category is Category.GUIDANCE:
            if len(self.turns) < 2:
                raise CorpusError(
                    f"record {self.id!r}: guidance records need at least 2 turns"
                )
        if self.turns:
            for i, turn in enumerate(self.turns):
                expected = Role.USER if i % 2 == 0 else Role.ASSISTANT
                if turn.role is not expected:
                    raise CorpusError(
                        f"record {self.id!r}: turn {i} must have role "
                        f"{expected.value!r}, got {turn.role.value!r}"
                    )

    def content_text(self) -> str:
        """Flat text view used for embedding: text, or the joined turns."""
        if self.text:
            return self.text
        return " ".join(turn.content for turn in self.turns)


@dataclass(frozen=True)
class Dataset:
    records: tuple[CorpusRecord, ...] = ()

    @property
    def n(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def filter_categories(self, categories: Iterable[Category]) -> "Dataset":
        wanted = set(categories)
        return Dataset(tuple(r for r in self.records if r.category in wanted))

    def by_id(self) -> dict[str, CorpusRecord]:
        return {r.id: r for r in self.records}


def _parse_record(obj: dict, line: int, category: Category | None) -> CorpusRecord:
    if not isinstance(obj, dict):
        raise CorpusError("record must be a JSON object", line)
    rid = obj.get("id")
    if not isinstance(rid, str) or not rid:
        raise CorpusError("missing or invalid 'id'", line)
    text = obj.get("text", "")
    if not isinstance(text, str):
        raise CorpusError("'text' must be a string", line)
    raw_turns = obj.get("turns", [])
    if not isinstance(raw_turns, list):
        raise CorpusError("'turns' must be an array", line)
    turns = []
    for i, item in enumerate(raw_turns):
        if not isinstance(item, dict) or "role" not in item or "content" not in item:
            raise CorpusError(f"turn {i} must have 'role' and 'content'", line)
        try:
            role = Role(item["role"])
        except ValueError:
            raise CorpusError(f"turn {i} has unknown role {item['role']!r}", line)
        turns.append(Turn(role=role, content=str(item["content"])))
    if category is None:
        raw_cat = obj.get("category")
        if raw_cat is None:
            raise CorpusError("missing 'category' and no override given", line)
        try:
            category = Category(raw_cat)
        except ValueError:
            raise CorpusError(f"unknown category {raw_cat!r}", line)
    raw_lang = obj.get("lang", "en")
    try:
        lang = Lang(raw_lang)
    except ValueError:
        raise CorpusError(f"unknown lang {raw_lang!r}", line)
    try:
        return CorpusRecord(id=rid, text=text, category=category, lang=lang, turns=tuple(turns))
    except CorpusError as exc:
        raise CorpusError(str(exc), line) from exc


def load_corpus(path: str, category: Category | None = None) -> Dataset:
    """Load a JSONL corpus file, assigning `category` to every record if given.

    Raises CorpusError with the offending line number on malformed input and
    names the id on duplicates.
    """
    records: list[CorpusRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"invalid JSON: {exc.msg}", lineno) from exc
            record = _parse_record(obj, lineno, category)
            if record.id in seen:
                raise CorpusError(f"duplicate id {record.id!r}", lineno)
            seen.add(record.id)
            records.append(record)
    return Dataset(tuple(records))


def save_corpus(dataset: Dataset, path: str) -> None:
    """Serialize a dataset back to the JSONL record format."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in dataset:
            obj = {
                "id": record.id,
                "text": record.text,
                "category": record.category.value,
                "lang": record.lang.value,
                "turns": [
                    {"role": t.role.value, "content": t.content} for t in record.turns
                ],
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


STEP_TEMPLATE = "Step {index}: {description} Now try this part yourself."
CONTINUE_TEMPLATE = "I finished step {index}. What comes next?"


def split_to_multiturn(record: CorpusRecord, plan: "SubtaskPlan") -> CorpusRecord:
    """Expand a single Q&A record into a guidance dialogue, one subtask per answer.

    The i-th assistant turn addresses only subtask i; roles alternate starting
    with the original user question.
    """
    if len(plan.subtasks) == 0:
        raise CorpusError("cannot split with an empty subtask plan")
    if len(record.turns) != 2 or record.turns[0].role is not Role.USER:
        raise CorpusError(
            f"record {record.id!r}: expected exactly one user/assistant Q&A pair"
        )
    question = record.turns[0].content
    turns: list[Turn] = [Turn(Role.USER, question)]
    for subtask in plan.subtasks:
        if subtask.index > 1:
            turns.append(
                Turn(Role.USER, CONTINUE_TEMPLATE.format(index=subtask.index - 1))
            )
        turns.append(
            Turn(
                Role.ASSISTANT,
                STEP_TEMPLATE.format(index=subtask.index, description=subtask.description),
            )
        )
    return replace(record, category=Category.GUIDANCE, turns=tuple(turns))
