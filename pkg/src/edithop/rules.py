"""Implication and horn rules, and the three-stage candidate filter."""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .core import (
    EMPTY_ALIASES,
    AliasTable,
    FactEdit,
    SubProblem,
    Source,
    ValidationError,
    normalize_relation,
)
from .memory import ScoredCandidate


class RuleParseError(ValueError):
    def __init__(self, lineno: int, line: str, reason: str):
        super().__init__(f"line {lineno}: {reason}: {line!r}")
        self.lineno = lineno


class ImplicationDirection(str, Enum):
    # r(query) => r(edit)
    QUERY_IMPLIES_EDIT = "query_implies_edit"
    # r(edit) => r(query)
    EDIT_IMPLIES_QUERY = "edit_implies_query"


@dataclass(frozen=True)
class ImplicationRule:
    antecedent: str
    consequent: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "antecedent", normalize_relation(self.antecedent))
        object.__setattr__(self, "consequent", normalize_relation(self.consequent))
        if self.antecedent == self.consequent:
            raise ValidationError(f"implication {self.antecedent} => itself")


@dataclass(frozen=True)
class HornRule:
    body: tuple[str, ...]
    head: str

    def __post_init__(self) -> None:
        body = tuple(normalize_relation(r) for r in self.body)
        head = normalize_relation(self.head)
        if len(body) < 2:
            raise ValidationError("horn rule body needs at least two relations")
        if head in body:
            raise ValidationError(f"horn rule head {head!r} appears in its body")
        object.__setattr__(self, "body", body)
        object.__setattr__(self, "head", head)


class RuleSet:
    """Immutable rule collection with a precomputed implication closure."""

    def __init__(
        self,
        implications: Iterable[ImplicationRule] = (),
        compositions: Iterable[HornRule] = (),
    ):
        self.implications = frozenset(implications)
        self.compositions = frozenset(compositions)
        self._closure = _transitive_closure(self.implications)
        self._by_head: dict[str, list[HornRule]] = defaultdict(list)
        for rule in sorted(self.compositions, key=lambda r: (-len(r.body), r.body, r.head)):
            self._by_head[rule.head].append(rule)

    def implies(self, r1: str, r2: str) -> bool:
        return r1 == r2 or r2 in self._closure.get(r1, ())

    @property
    def closure(self) -> dict[str, frozenset[str]]:
        return dict(self._closure)

    def rules_with_head(self, head: str) -> list[HornRule]:
        """Horn rules concluding ``head``, longest body first."""
        return list(self._by_head.get(head, ()))

    def __repr__(self) -> str:
        return f"RuleSet({len(self.implications)} implications, {len(self.compositions)} horn rules)"


def _transitive_closure(rules: Iterable[ImplicationRule]) -> dict[str, frozenset[str]]:
    graph: dict[str, set[str]] = defaultdict(set)
    for rule in rules:
        graph[rule.antecedent].add(rule.consequent)
    closure = {}
    for start in list(graph):
        seen = {start}
        queue = deque([start])
        while queue:
            for nxt in graph.get(queue.popleft(), ()):
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        closure[start] = frozenset(seen)
    return closure


def _rule_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def parse_implications(text: str) -> list[ImplicationRule]:
    """Parse lines of the form ``antecedent => consequent``."""
    rules = []
    for lineno, line in _rule_lines(text):
        parts = line.split("=>")
        if len(parts) != 2 or not all(p.strip() for p in parts):
            raise RuleParseError(lineno, line, "expected 'antecedent => consequent'")
        if "&" in line:
            raise RuleParseError(lineno, line, "implication rules take a single antecedent")
        try:
            rules.append(ImplicationRule(parts[0], parts[1]))
        except ValidationError as exc:
            raise RuleParseError(lineno, line, str(exc)) from None
    return rules


def parse_horn_rules(text: str) -> list[HornRule]:
    """Parse lines of the form ``r1 & r2 [& r3 ...] => head``."""
    rules = []
    for lineno, line in _rule_lines(text):
        parts = line.split("=>")
        if len(parts) != 2 or not parts[1].strip():
            raise RuleParseError(lineno, line, "expected 'r1 & r2 => head'")
        body = [b.strip() for b in parts[0].split("&")]
        if any(not b for b in body):
            raise RuleParseError(lineno, line, "empty relation in rule body")
        try:
            rules.append(HornRule(tuple(body), parts[1]))
        except ValidationError as exc:
            raise RuleParseError(lineno, line, str(exc)) from None
    return rules


def _read(source: str | Path | None) -> str:
    if source is None:
        return ""
    return Path(source).read_text(encoding="utf-8")


def load_rules(
    implication_source: str | Path | None = None,
    composition_source: str | Path | None = None,
) -> RuleSet:
    """Load rule files (either may be None for an empty set)."""
    return RuleSet(
        parse_implications(_read(implication_source)),
        parse_horn_rules(_read(composition_source)),
    )


def implies(rules: RuleSet, r1: str, r2: str) -> bool:
    return rules.implies(normalize_relation(r1), normalize_relation(r2))


def match_implication(
    p: SubProblem,
    e: FactEdit,
    aliases: AliasTable,
    rules: RuleSet,
    direction: ImplicationDirection = ImplicationDirection.QUERY_IMPLIES_EDIT,
) -> str | None:
    if not p.is_bound:
        raise ValidationError("sub-problem subject must be bound")
    if not aliases.matches(p.subject, e.subject):
        return None
    if direction is ImplicationDirection.QUERY_IMPLIES_EDIT:
        ok = rules.implies(p.relation, e.relation)
    else:
        ok = rules.implies(e.relation, p.relation)
    return e.new_object if ok else None


def match_composition(
    path_relations: Sequence[str],
    p: SubProblem,
    e: FactEdit,
    hop_subjects: Sequence[str],
    aliases: AliasTable,
    rules: RuleSet,
) -> tuple[str, int] | None:
    """Match ``e`` as the head of a horn rule whose body ends at the current hop.

    ``path_relations`` and ``hop_subjects`` cover hops 1..j; ``hop_subjects[0]``
    is the start entity. The longest matching body wins.
    """
    if not p.is_bound:
        raise ValidationError("sub-problem subject must be bound")
    j = len(path_relations)
    if len(hop_subjects) != j:
        raise ValueError("need one bound subject per hop in the prefix")
    for rule in rules.rules_with_head(e.relation):
        m = len(rule.body)
        if m > j or tuple(path_relations[j - m :]) != rule.body:
            continue
        if aliases.matches(hop_subjects[j - m], e.subject):
            return e.new_object, m
    return None


@dataclass(frozen=True)
class FilterContext:
    path_relations: Sequence[str]
    hop_subjects: Sequence[str]
    rules: RuleSet
    aliases: AliasTable = EMPTY_ALIASES
    disable_implication: bool = False
    disable_composition: bool = False
    direction: ImplicationDirection = ImplicationDirection.QUERY_IMPLIES_EDIT
    multi_hop_composition: bool = True

    @property
    def start_entity(self) -> str:
        return self.hop_subjects[0]


@dataclass(frozen=True)
class FilterOutcome:
    object: str
    source: Source
    chosen_edit_id: str
    score: float
    hops_consumed: int = 1


_IDENTITY_ONLY = RuleSet()


def candidate_filter(
    eta: float,
    candidates: Sequence[ScoredCandidate],
    p: SubProblem,
    context: FilterContext,
) -> FilterOutcome | None:
    """Pick an answer for ``p`` from ranked candidates, or None to defer to the model.

    Candidates are visited in rank order; each runs implication, then
    composition, then the similarity threshold before the next is tried.
    Disabling implication drops the implication rules but keeps the identity
    match (r => r), so -IC behaves exactly like empty rule files.
    """
    if not p.is_bound:
        raise ValidationError("sub-problem subject must be bound")
    implication_rules = _IDENTITY_ONLY if context.disable_implication else context.rules
    for cand in candidates:
        e = cand.edit
        obj = match_implication(p, e, context.aliases, implication_rules, context.direction)
        if obj is not None:
            return FilterOutcome(obj, Source.MEMORY_IMPLICATION, e.edit_id, cand.score)
        if not context.disable_composition:
            hit = match_composition(
                context.path_relations, p, e, context.hop_subjects, context.aliases, context.rules
            )
            if hit is not None:
                obj, m = hit
                return FilterOutcome(
                    obj,
                    Source.MEMORY_COMPOSITION,
                    e.edit_id,
                    cand.score,
                    hops_consumed=m if context.multi_hop_composition else 1,
                )
        if cand.score >= eta:
            return FilterOutcome(e.new_object, Source.MEMORY_SIMILARITY, e.edit_id, cand.score)
    return None
