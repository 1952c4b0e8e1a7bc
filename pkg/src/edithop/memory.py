"""Edit memory: embedded fact edits with exact top-k retrieval."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import (
    EMPTY_ALIASES,
    AliasTable,
    EditCollection,
    FactEdit,
    SubProblem,
    ValidationError,
)


class IndexBuildError(RuntimeError):
    def __init__(self, edit_id: str, cause: Exception):
        super().__init__(f"failed to embed edit {edit_id!r}: {cause}")
        self.edit_id = edit_id


class FingerprintMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ScoredCandidate:
    edit: FactEdit
    score: float
    rank: int


class EditIndex:
    """Immutable exhaustive-scan index over embedded edits.

    Each edit is embedded from its post-edit text ``subject; relation; new_object``.
    """

    def __init__(self, edits: list[FactEdit], vectors: np.ndarray, embedder, aliases: AliasTable):
        if len(edits) != len(vectors):
            raise ValueError("edits and vectors differ in length")
        self.edits = tuple(edits)
        self.embedder = embedder
        self.aliases = aliases
        self._matrix = np.array(vectors, dtype=np.float64).reshape(len(edits), embedder.dimension)
        self._matrix.setflags(write=False)
        self._by_id = {e.edit_id: e for e in self.edits}

    def __len__(self) -> int:
        return len(self.edits)

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    def get(self, edit_id: str) -> FactEdit:
        return self._by_id[edit_id]

    def scores(self, query_vector: np.ndarray) -> np.ndarray:
        if query_vector.shape != (self.embedder.dimension,):
            raise ValidationError("query vector dimension does not match the index")
        # row-wise product-sum gives each entry exactly similarity(row, query)
        return (self._matrix * query_vector).sum(axis=1)

    def retrieve_top_k(self, query: SubProblem | str, k: int) -> list[ScoredCandidate]:
        if k < 1:
            raise ValidationError("k must be >= 1")
        if isinstance(query, SubProblem):
            if not query.is_bound:
                raise ValidationError("query subject must be bound before retrieval")
            text = query.to_text()
        else:
            text = query
        if not self.edits:
            return []
        scores = self.scores(self.embedder.embed(text))
        order = _rank(scores, [e.edit_id for e in self.edits])
        return [
            ScoredCandidate(self.edits[i], float(scores[i]), rank)
            for rank, i in enumerate(order[:k], 1)
        ]

    def save(self, path: str | Path) -> None:
        payload = {
            "fingerprint": self.embedder.fingerprint,
            "dimension": self.embedder.dimension,
            "entries": [
                {"edit": e.to_dict(), "vector": v.tolist()}
                for e, v in zip(self.edits, self._matrix)
            ],
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, embedder, aliases: AliasTable | None = None) -> EditIndex:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("fingerprint") != embedder.fingerprint:
            raise FingerprintMismatch(
                f"index built with {payload.get('fingerprint')!r}, "
                f"current embedder is {embedder.fingerprint!r}"
            )
        entries = payload["entries"]
        edits = [FactEdit.from_dict(e["edit"]) for e in entries]
        vectors = np.array([e["vector"] for e in entries], dtype=np.float64)
        return cls(edits, vectors, embedder, aliases or EMPTY_ALIASES)


def build_index(
    edits: EditCollection | Iterable[FactEdit], embedder, aliases: AliasTable | None = None
) -> EditIndex:
    aliases = aliases or EMPTY_ALIASES
    if not isinstance(edits, EditCollection):
        edits = EditCollection(edits, aliases)
    items = edits.edits
    vectors = []
    for edit in items:
        try:
            vectors.append(embedder.embed(edit.text))
        except Exception as exc:  # noqa: BLE001 - surface the failing edit id
            raise IndexBuildError(edit.edit_id, exc) from exc
    matrix = np.array(vectors) if vectors else np.zeros((0, embedder.dimension))
    return EditIndex(items, matrix, embedder, aliases)


# Scores this close are the same value up to summation-order rounding.
TIE_TOLERANCE = 1e-12


def _rank(scores: np.ndarray, ids: list[str]) -> list[int]:
    """Order by descending score, breaking ties by edit id.

    Equal cosines computed from different vectors can differ in the last few
    bits, so scores within ``TIE_TOLERANCE`` of a group's leader tie with it.
    """
    by_score = sorted(range(len(ids)), key=lambda i: -scores[i])
    order: list[int] = []
    group: list[int] = []
    for i in by_score:
        if group and scores[group[0]] - scores[i] > TIE_TOLERANCE:
            order.extend(sorted(group, key=ids.__getitem__))
            group = []
        group.append(i)
    order.extend(sorted(group, key=ids.__getitem__))
    return order


def retrieve_top_k(index: EditIndex, query: SubProblem | str, k: int) -> list[ScoredCandidate]:
    return index.retrieve_top_k(query, k)


def read_edits_jsonl(path: str | Path) -> list[FactEdit]:
    """Parse a JSON Lines edit file; errors name the offending line."""
    edits = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                if not isinstance(data, dict):
                    raise ValidationError("expected a JSON object")
                edits.append(FactEdit.from_dict(data))
            except (json.JSONDecodeError, ValidationError) as exc:
                raise ValidationError(f"line {lineno}: {exc}") from exc
    return edits


def write_edits_jsonl(path: str | Path, edits: Iterable[FactEdit]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in edits:
            fh.write(json.dumps(e.to_dict(), ensure_ascii=False) + "\n")
