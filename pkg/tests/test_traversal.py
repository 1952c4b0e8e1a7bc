import pytest

from edithop.core import EditCollection, FactEdit, Source
from edithop.embedding import TrigramEmbedder
from edithop.gateway import MODEL_UNKNOWN, Gateway, MockBackend, MockKnowledgeBase
from edithop.memory import build_index
from edithop.rules import HornRule, ImplicationRule, RuleSet
from edithop.traversal import TraversalConfig, solve

from synthetic import chain_world

LOLITA = "Who is the head of the hometown of the author of Reading Lolita in Tehran?"
EMB = TrigramEmbedder(512)


def lolita_kb():
    kb = MockKnowledgeBase(
        facts=[
            ("Reading Lolita in Tehran", "author_is", "Azar Nafisi"),
            ("Azar Nafisi", "hometown_is", "Tehran"),
            ("Tehran", "head_is", "Alireza Zakani"),
        ]
    )
    kb.add_decomposition(LOLITA, "Reading Lolita in Tehran", ["author_is", "hometown_is", "head_is"])
    return kb


def _run(kb, edits, rules=RuleSet(), **cfg):
    backend = MockBackend(kb)
    trace = solve(LOLITA, build_index(edits, EMB), rules, Gateway(backend), TraversalConfig(**cfg))
    return trace, backend


def test_all_hops_from_implication_edits():
    rules = RuleSet([
        ImplicationRule("author_is", "written_by"),
        ImplicationRule("hometown_is", "born_in_city"),
        ImplicationRule("head_is", "mayor_is"),
    ])
    edits = [
        FactEdit("e1", "Reading Lolita in Tehran", "written_by", "Lale Arvan"),
        FactEdit("e2", "Lale Arvan", "born_in_city", "Yazd"),
        FactEdit("e3", "Yazd", "mayor_is", "Kaveh Doran"),
    ]
    trace, backend = _run(lolita_kb(), edits, rules)
    assert trace.final_answer == "Kaveh Doran"
    assert [h.source for h in trace.hops] == [Source.MEMORY_IMPLICATION] * 3
    assert [h.chosen_edit_id for h in trace.hops] == ["e1", "e2", "e3"]
    # one call for the decomposition, none for hops
    assert backend.calls == 1


def test_empty_index_uses_model_only():
    trace, backend = _run(lolita_kb(), EditCollection())
    assert trace.final_answer == "Alireza Zakani"
    assert [h.source for h in trace.hops] == [Source.LLM_FALLBACK] * 3
    assert backend.calls == 4
    assert [h.subject for h in trace.hops] == ["Reading Lolita in Tehran", "Azar Nafisi", "Tehran"]


def test_ripple_through_mid_chain_edit():
    kb, _, target, edit = chain_world(0)
    trace = solve(target, build_index([edit], EMB), RuleSet(), Gateway(MockBackend(kb)))
    assert [h.source for h in trace.hops] == [
        Source.LLM_FALLBACK, Source.MEMORY_IMPLICATION, Source.LLM_FALLBACK,
    ]
    assert trace.hops[2].subject == "Shiraz"
    assert trace.final_answer == "Mohammad Hassan Asafari"


def test_memory_hit_skips_model():
    edit = FactEdit("e1", "Reading Lolita in Tehran", "author_is", "Lale Arvan")
    trace, backend = _run(lolita_kb(), [edit])
    # same relation and subject: reflexive implication, not a bare similarity hit
    assert trace.hops[0].source is Source.MEMORY_IMPLICATION
    assert trace.hops[0].similarity_score == pytest.approx(
        float(EMB.embed("Reading Lolita in Tehran; author_is; ?") @ EMB.embed(edit.text))
    )
    # hops 2 and 3 reach the model with the edited subject; the model knows nothing about it
    assert backend.calls == 3
    assert trace.hops[1].subject == "Lale Arvan"
    assert trace.final_answer == MODEL_UNKNOWN


def test_unknown_is_carried_forward():
    kb = lolita_kb()
    kb.add_fact("Lale Arvan", "hometown_is", "Yazd")
    edit = FactEdit("e1", "Reading Lolita in Tehran", "author_is", "Lale Arvan")
    trace, _ = _run(kb, [edit])
    assert [h.resolved_object for h in trace.hops] == ["Lale Arvan", "Yazd", MODEL_UNKNOWN]
    assert trace.ok


def test_deterministic():
    edit = FactEdit("e1", "Azar Nafisi", "hometown_is", "Shiraz")
    a, _ = _run(lolita_kb(), [edit])
    b, _ = _run(lolita_kb(), [edit])
    assert a.to_dict() == b.to_dict()


def test_parse_failure_recorded():
    kb = MockKnowledgeBase()
    trace = solve("unparseable?", build_index([], EMB), RuleSet(), Gateway(MockBackend(kb)))
    assert not trace.ok
    assert trace.failure.startswith("decomposition_parse_error")
    assert trace.raw_decomposition == "UNKNOWN"
    assert trace.hops == [] and trace.final_answer is None


def test_max_hops_abort():
    trace, backend = _run(lolita_kb(), [], max_hops=2)
    assert trace.failure.startswith("max_hops_exceeded")
    assert trace.hops == []
    assert backend.calls == 1


def test_eta_threshold_routes_to_model():
    edit = FactEdit("e1", "Azar Nafisi", "hometown_was", "Shiraz")
    loose, _ = _run(lolita_kb(), [edit])
    assert loose.hops[1].source is Source.MEMORY_SIMILARITY
    assert loose.final_answer == MODEL_UNKNOWN
    strict, _ = _run(lolita_kb(), [edit], eta=0.9)
    assert all(h.source is Source.LLM_FALLBACK for h in strict.hops)
    assert strict.final_answer == "Alireza Zakani"


def test_composition_subsumes_earlier_hop():
    kb = MockKnowledgeBase(facts=[
        ("Tamsin Greaves", "resides_in", "Kestrel Bay"),
        ("Kestrel Bay", "located_in_continent", "Europe"),
    ])
    q = "On which continent does Tamsin Greaves live?"
    kb.add_decomposition(q, "Tamsin Greaves", ["resides_in", "located_in_continent"])
    rules = RuleSet(compositions=[HornRule(("resides_in", "located_in_continent"), "home_continent_is")])
    edit = FactEdit("c1", "Tamsin Greaves", "home_continent_is", "Asia", "Europe")
    index = build_index([edit], EMB)
    trace = solve(q, index, rules, Gateway(MockBackend(kb)))
    assert trace.final_answer == "Asia"
    first, second = trace.hops
    assert first.subsumed and first.resolved_object is None
    assert first.source is second.source is Source.MEMORY_COMPOSITION
    assert first.chosen_edit_id == second.chosen_edit_id == "c1"
    assert not second.subsumed

    off = solve(q, index, rules, Gateway(MockBackend(kb)), TraversalConfig(disable_composition=True))
    assert off.final_answer == "Europe"


def test_record_candidates():
    edits = [FactEdit(f"e{i}", f"Entity {i}", "head_is", f"X{i}") for i in range(4)]
    trace, _ = _run(lolita_kb(), edits, top_k=3, record_candidates=True)
    assert all(len(h.candidates) == 3 for h in trace.hops)
    plain, _ = _run(lolita_kb(), edits, top_k=3)
    assert all(h.candidates is None for h in plain.hops)
