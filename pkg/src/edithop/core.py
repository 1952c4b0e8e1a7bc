"""Domain types shared by every stage of the editing pipeline."""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Iterator, Mapping, Sequence, Union

SEPARATOR = "; "
UNBOUND_TEXT = "?"

_WS = re.compile(r"\s+")
_RELATION_JUNK = re.compile(r"[\s\-]+")


class ValidationError(ValueError):
    """Raised when a value violates a domain invariant."""


class _Unbound:
    """Marker for an entity slot that has not been resolved yet."""

    _instance: _Unbound | None = None

    def __new__(cls) -> _Unbound:
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "UNBOUND"

    def __bool__(self) -> bool:
        return False

    def __reduce__(self):
        return (_Unbound, ())


UNBOUND = _Unbound()
Slot = Union[str, _Unbound]


def normalize_entity(raw: str) -> str:
    """Trim, collapse internal whitespace and NFC-normalize an entity surface form."""
    if not isinstance(raw, str):
        raise ValidationError(f"entity must be a string, got {type(raw).__name__}")
    text = _WS.sub(" ", unicodedata.normalize("NFC", raw)).strip()
    if not text:
        raise ValidationError("entity is empty after trimming")
    return text


def entity_key(raw: str) -> str:
    """Comparison key: normalized and case-folded."""
    return normalize_entity(raw).casefold()


def normalize_relation(raw: str) -> str:
    if not isinstance(raw, str):
        raise ValidationError(f"relation must be a string, got {type(raw).__name__}")
    text = unicodedata.normalize("NFC", raw).strip().lower()
    text = _RELATION_JUNK.sub("_", text).strip("_")
    if not text:
        raise ValidationError("relation is empty after normalization")
    return text


def _check_separator(value: str, name: str) -> None:
    if SEPARATOR in value:
        raise ValidationError(f"{name} {value!r} contains the separator {SEPARATOR!r}")


@dataclass(frozen=True)
class Triplet:
    subject: str
    relation: str
    object: str

    def __post_init__(self) -> None:
        for name in ("subject", "object"):
            value = normalize_entity(getattr(self, name))
            _check_separator(value, name)
            object.__setattr__(self, name, value)
        relation = normalize_relation(self.relation)
        _check_separator(relation, "relation")
        object.__setattr__(self, "relation", relation)

    def __iter__(self) -> Iterator[str]:
        return iter((self.subject, self.relation, self.object))


def triplet_to_text(t: Triplet) -> str:
    return SEPARATOR.join((t.subject, t.relation, t.object))


def parse_triplet(text: str) -> Triplet:
    parts = text.split(SEPARATOR)
    if len(parts) != 3:
        raise ValidationError(f"expected 'subject; relation; object', got {text!r}")
    return Triplet(*parts)


@dataclass(frozen=True)
class FactEdit:
    """One fact edit ``(subject, relation, old_object -> new_object)``."""

    edit_id: str
    subject: str
    relation: str
    new_object: str
    old_object: str | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.edit_id, str) or not self.edit_id.strip():
            raise ValidationError("edit_id must be a non-empty string")
        t = Triplet(self.subject, self.relation, self.new_object)
        object.__setattr__(self, "subject", t.subject)
        object.__setattr__(self, "relation", t.relation)
        object.__setattr__(self, "new_object", t.object)
        if self.old_object is not None:
            old = normalize_entity(self.old_object)
            _check_separator(old, "old_object")
            if old == t.object:
                raise ValidationError(
                    f"edit {self.edit_id}: old_object equals new_object ({old!r})"
                )
            object.__setattr__(self, "old_object", old)

    @property
    def triplet(self) -> Triplet:
        return Triplet(self.subject, self.relation, self.new_object)

    @property
    def text(self) -> str:
        return triplet_to_text(self.triplet)

    def to_dict(self) -> dict:
        return {
            "edit_id": self.edit_id,
            "subject": self.subject,
            "relation": self.relation,
            "old_object": self.old_object,
            "new_object": self.new_object,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> FactEdit:
        try:
            return cls(
                edit_id=data["edit_id"],
                subject=data["subject"],
                relation=data["relation"],
                new_object=data["new_object"],
                old_object=data.get("old_object"),
            )
        except KeyError as exc:
            raise ValidationError(f"edit is missing field {exc.args[0]!r}") from None


class AliasTable:
    """Canonical entity -> alias names. Matching is case-insensitive and reflexive."""

    def __init__(self, groups: Mapping[str, Iterable[str]] | None = None):
        self._groups: dict[str, frozenset[str]] = {}
        self._display: dict[str, frozenset[str]] = {}
        self._member_of: dict[str, set[str]] = {}
        for canonical, aliases in (groups or {}).items():
            self.add(canonical, aliases)

    def add(self, canonical: str, aliases: Iterable[str]) -> None:
        canonical = normalize_entity(canonical)
        names = {canonical, *(normalize_entity(a) for a in aliases)}
        ckey = canonical.casefold()
        prior = self._display.get(ckey, frozenset())
        self._display[ckey] = prior | frozenset(names)
        self._groups[ckey] = frozenset(n.casefold() for n in self._display[ckey])
        for key in self._groups[ckey]:
            self._member_of.setdefault(key, set()).add(ckey)

    def lookup(self, name: str) -> frozenset[str]:
        """All surface forms equivalent to ``name`` (always contains ``name``)."""
        name = normalize_entity(name)
        out = {name}
        for ckey in self._member_of.get(name.casefold(), ()):
            out |= self._display[ckey]
        return frozenset(out)

    def expand(self, name: str) -> frozenset[str]:
        key = entity_key(name)
        out = {key}
        for ckey in self._member_of.get(key, ()):
            out |= self._groups[ckey]
        return frozenset(out)

    def matches(self, a: str, b: str) -> bool:
        return not self.expand(a).isdisjoint(self.expand(b))

    def canonical_names(self) -> list[str]:
        return sorted(self._groups)

    def to_dict(self) -> dict[str, list[str]]:
        out = {}
        for ckey, names in sorted(self._display.items()):
            canonical = next((n for n in sorted(names) if n.casefold() == ckey), ckey)
            out[canonical] = sorted(names - {canonical})
        return out

    def __len__(self) -> int:
        return len(self._groups)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, AliasTable) and self._groups == other._groups

    def __repr__(self) -> str:
        return f"AliasTable({len(self)} entities)"


EMPTY_ALIASES = AliasTable()


class EditCollection:
    """Ordered edits with at most one edit per (subject, relation).

    A later edit for an already-present (subject, relation) pair replaces the
    earlier one; the survivor takes the later position.
    """

    def __init__(self, edits: Iterable[FactEdit] = (), aliases: AliasTable | None = None):
        self.aliases = aliases or EMPTY_ALIASES
        self._edits: list[FactEdit] = []
        for edit in edits:
            self.add(edit)

    def _same_slot(self, a: FactEdit, b: FactEdit) -> bool:
        return a.relation == b.relation and self.aliases.matches(a.subject, b.subject)

    def add(self, edit: FactEdit) -> None:
        survivors = []
        for old in self._edits:
            if self._same_slot(old, edit):
                continue
            if old.edit_id == edit.edit_id:
                raise ValidationError(f"duplicate edit_id {edit.edit_id!r}")
            survivors.append(old)
        survivors.append(edit)
        self._edits = survivors

    @property
    def edits(self) -> list[FactEdit]:
        return list(self._edits)

    def __iter__(self) -> Iterator[FactEdit]:
        return iter(self._edits)

    def __len__(self) -> int:
        return len(self._edits)


@dataclass(frozen=True)
class SubProblem:
    """One hop of a decomposed question: a triplet whose slots may be unbound."""

    relation: str
    hop_index: int
    subject: Slot = UNBOUND
    object: Slot = UNBOUND

    def __post_init__(self) -> None:
        object.__setattr__(self, "relation", normalize_relation(self.relation))
        if self.hop_index < 1:
            raise ValidationError("hop_index is 1-based")
        for name in ("subject", "object"):
            value = getattr(self, name)
            if value is not UNBOUND:
                object.__setattr__(self, name, normalize_entity(value))

    @property
    def is_bound(self) -> bool:
        return self.subject is not UNBOUND

    def bind_subject(self, entity: str) -> SubProblem:
        return replace(self, subject=normalize_entity(entity))

    def to_text(self) -> str:
        """Serialize as ``subject; relation; object`` with ``?`` for unbound slots."""
        subj = UNBOUND_TEXT if self.subject is UNBOUND else self.subject
        obj = UNBOUND_TEXT if self.object is UNBOUND else self.object
        return SEPARATOR.join((subj, self.relation, obj))


@dataclass(frozen=True)
class ReasoningPath:
    start_entity: str
    steps: tuple[SubProblem, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "start_entity", normalize_entity(self.start_entity))
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise ValidationError("reasoning path has no steps")
        for i, step in enumerate(self.steps, 1):
            if step.hop_index != i:
                raise ValidationError(f"hop indices must be 1..n, got {step.hop_index} at {i}")

    @property
    def relations(self) -> list[str]:
        return [s.relation for s in self.steps]

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class MultiHopInstance:
    instance_id: str
    edits: tuple[FactEdit, ...]
    questions: tuple[str, ...]
    original_answer: str
    edited_answer: str
    original_path: tuple[Triplet, ...]
    edited_path: tuple[Triplet, ...]
    answer_aliases: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "edits", tuple(self.edits))
        object.__setattr__(self, "questions", tuple(self.questions))
        object.__setattr__(self, "original_path", tuple(self.original_path))
        object.__setattr__(self, "edited_path", tuple(self.edited_path))
        object.__setattr__(self, "original_answer", normalize_entity(self.original_answer))
        object.__setattr__(self, "edited_answer", normalize_entity(self.edited_answer))
        if not self.questions:
            raise ValidationError("questions must be non-empty")
        if not self.edited_path or len(self.edited_path) != len(self.original_path):
            raise ValidationError(
                f"original_path ({len(self.original_path)}) and edited_path "
                f"({len(self.edited_path)}) must have equal non-zero length"
            )
        if self.edited_path[-1].object != self.edited_answer:
            raise ValidationError("edited_answer must equal the last object of edited_path")
        aliases = {normalize_entity(a) for a in self.answer_aliases} | {self.edited_answer}
        object.__setattr__(self, "answer_aliases", frozenset(aliases))


class Source(str, Enum):
    MEMORY_IMPLICATION = "memory_implication"
    MEMORY_COMPOSITION = "memory_composition"
    MEMORY_SIMILARITY = "memory_similarity"
    LLM_FALLBACK = "llm_fallback"


@dataclass
class HopRecord:
    hop_index: int
    subject: str
    relation: str
    source: Source
    resolved_object: str | None
    chosen_edit_id: str | None = None
    similarity_score: float | None = None
    subsumed: bool = False
    candidates: list[tuple[str, float]] | None = None

    def to_dict(self) -> dict:
        out = {
            "hop_index": self.hop_index,
            "subject": self.subject,
            "relation": self.relation,
            "source": self.source.value,
            "resolved_object": self.resolved_object,
            "chosen_edit_id": self.chosen_edit_id,
            "similarity_score": self.similarity_score,
            "subsumed": self.subsumed,
        }
        if self.candidates is not None:
            out["candidates"] = [[eid, score] for eid, score in self.candidates]
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> HopRecord:
        cands = data.get("candidates")
        return cls(
            hop_index=data["hop_index"],
            subject=data["subject"],
            relation=data["relation"],
            source=Source(data["source"]),
            resolved_object=data["resolved_object"],
            chosen_edit_id=data.get("chosen_edit_id"),
            similarity_score=data.get("similarity_score"),
            subsumed=data.get("subsumed", False),
            candidates=None if cands is None else [(c[0], c[1]) for c in cands],
        )


@dataclass
class ResolutionTrace:
    question: str
    start_entity: str | None = None
    hops: list[HopRecord] = field(default_factory=list)
    final_answer: str | None = None
    failure: str | None = None
    raw_decomposition: str | None = None

    @property
    def ok(self) -> bool:
        return self.failure is None

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "start_entity": self.start_entity,
            "hops": [h.to_dict() for h in self.hops],
            "final_answer": self.final_answer,
            "failure": self.failure,
            "raw_decomposition": self.raw_decomposition,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> ResolutionTrace:
        return cls(
            question=data["question"],
            start_entity=data.get("start_entity"),
            hops=[HopRecord.from_dict(h) for h in data.get("hops", [])],
            final_answer=data.get("final_answer"),
            failure=data.get("failure"),
            raw_decomposition=data.get("raw_decomposition"),
        )


def triplets_from_lists(rows: Sequence[Sequence[str]]) -> tuple[Triplet, ...]:
    out = []
    for row in rows:
        if len(row) != 3:
            raise ValidationError(f"path triplet must have 3 fields, got {list(row)!r}")
        out.append(Triplet(*row))
    return tuple(out)
