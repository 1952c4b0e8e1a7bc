"""Hop-by-hop resolution of a decomposed question.

Each hop first asks the edit memory (top-k retrieval followed by the candidate
filter). Only when no candidate survives does the target model answer the hop.
The resolved object becomes the subject of the next hop.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import HopRecord, ResolutionTrace, Source, ValidationError
from .gateway import DecompositionParseError, Gateway
from .memory import EditIndex
from .rules import FilterContext, ImplicationDirection, RuleSet, candidate_filter

PARSE_FAILURE = "decomposition_parse_error"
MAX_HOPS_FAILURE = "max_hops_exceeded"


@dataclass(frozen=True)
class TraversalConfig:
    eta: float = 0.6
    top_k: int = 10
    disable_implication: bool = False
    disable_composition: bool = False
    max_hops: int = 8
    direction: ImplicationDirection = ImplicationDirection.QUERY_IMPLIES_EDIT
    multi_hop_composition: bool = True
    # keep (edit_id, score) of every retrieved candidate in the trace
    record_candidates: bool = False

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ValidationError("top_k must be >= 1")
        if self.max_hops < 1:
            raise ValidationError("max_hops must be >= 1")
        if not -1.0 <= self.eta <= 1.0:
            raise ValidationError("eta must lie in [-1, 1]")
        object.__setattr__(self, "direction", ImplicationDirection(self.direction))


def solve(
    question: str,
    index: EditIndex,
    rules: RuleSet,
    gateway: Gateway,
    config: TraversalConfig | None = None,
) -> ResolutionTrace:
    config = config or TraversalConfig()
    trace = ResolutionTrace(question=question)
    try:
        decomposition = gateway.decompose(question)
    except DecompositionParseError as exc:
        trace.failure = f"{PARSE_FAILURE}: {exc}"
        trace.raw_decomposition = exc.raw_output
        return trace

    path = decomposition.path
    trace.start_entity = path.start_entity
    trace.raw_decomposition = decomposition.raw_model_output
    if len(path) > config.max_hops:
        trace.failure = f"{MAX_HOPS_FAILURE}: path has {len(path)} hops, cap is {config.max_hops}"
        return trace

    relations = path.relations
    subjects: list[str] = []
    subject = path.start_entity
    for j, step in enumerate(path.steps, 1):
        p = step.bind_subject(subject)
        subjects.append(p.subject)
        candidates = index.retrieve_top_k(p, config.top_k)
        context = FilterContext(
            path_relations=relations[:j],
            hop_subjects=tuple(subjects),
            rules=rules,
            aliases=index.aliases,
            disable_implication=config.disable_implication,
            disable_composition=config.disable_composition,
            direction=config.direction,
            multi_hop_composition=config.multi_hop_composition,
        )
        outcome = candidate_filter(config.eta, candidates, p, context)
        if outcome is not None:
            record = HopRecord(
                hop_index=j,
                subject=p.subject,
                relation=p.relation,
                source=outcome.source,
                resolved_object=outcome.object,
                chosen_edit_id=outcome.chosen_edit_id,
                similarity_score=outcome.score,
            )
            for earlier in trace.hops[j - outcome.hops_consumed : j - 1]:
                earlier.source = Source.MEMORY_COMPOSITION
                earlier.resolved_object = None
                earlier.chosen_edit_id = outcome.chosen_edit_id
                earlier.similarity_score = None
                earlier.subsumed = True
        else:
            record = HopRecord(
                hop_index=j,
                subject=p.subject,
                relation=p.relation,
                source=Source.LLM_FALLBACK,
                resolved_object=gateway.answer_subproblem(p),
            )
        if config.record_candidates:
            record.candidates = [(c.edit.edit_id, c.score) for c in candidates]
        trace.hops.append(record)
        subject = record.resolved_object

    trace.final_answer = trace.hops[-1].resolved_object
    return trace
