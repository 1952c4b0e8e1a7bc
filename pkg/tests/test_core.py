import pickle

import pytest
from hypothesis import given, strategies as st

from edithop.core import (
    UNBOUND,
    AliasTable,
    EditCollection,
    FactEdit,
    MultiHopInstance,
    ReasoningPath,
    SubProblem,
    Triplet,
    ValidationError,
    normalize_entity,
    normalize_relation,
    parse_triplet,
    triplet_to_text,
)


def test_normalize_entity_whitespace():
    assert normalize_entity("  Masoud  Pezeshkian ") == "Masoud Pezeshkian"
    assert normalize_entity("Tehran") == "Tehran"


def test_normalize_entity_empty():
    with pytest.raises(ValidationError):
        normalize_entity("")
    with pytest.raises(ValidationError):
        normalize_entity(" \t\n ")


def test_normalize_entity_nfc():
    decomposed = "Cafe\u0301"
    assert normalize_entity(decomposed) == "Caf\u00e9"


def test_normalize_relation():
    assert normalize_relation("President Is") == "president_is"
    assert normalize_relation("lives-in  city") == "lives_in_city"
    with pytest.raises(ValidationError):
        normalize_relation("  ")


@pytest.mark.parametrize(
    "triplet, text",
    [
        (Triplet("Iran", "president_is", "Masoud Pezeshkian"), "Iran; president_is; Masoud Pezeshkian"),
        (Triplet("Ahmed", "homeland_is", "Shiraz"), "Ahmed; homeland_is; Shiraz"),
        (Triplet("a", "r", "b"), "a; r; b"),
    ],
)
def test_triplet_to_text(triplet, text):
    assert triplet_to_text(triplet) == text
    assert parse_triplet(text) == triplet


def test_triplet_rejects_separator():
    with pytest.raises(ValidationError):
        Triplet("a; b", "r", "c")


def test_triplet_rejects_empty_fields():
    with pytest.raises(ValidationError):
        Triplet("a", "r", "  ")


_field = st.text(
    alphabet=st.characters(blacklist_categories=("Cs", "Cc", "Zl", "Zp")), min_size=1, max_size=15
)


@given(_field, st.from_regex(r"[a-z][a-z_;]{0,10}", fullmatch=True), _field)
def test_triplet_round_trip(s, r, o):
    try:
        t = Triplet(s, r, o)
    except ValidationError:
        return
    assert parse_triplet(triplet_to_text(t)) == t


def test_fact_edit_invariants():
    with pytest.raises(ValidationError):
        FactEdit("e1", "Iran", "president_is", "X", old_object="X")
    with pytest.raises(ValidationError):
        FactEdit("", "Iran", "president_is", "X")
    e = FactEdit("e1", " Iran ", "President is", "Masoud  Pezeshkian")
    assert e.text == "Iran; president_is; Masoud Pezeshkian"
    assert FactEdit.from_dict(e.to_dict()) == e


def test_alias_table_reflexive_and_case_insensitive():
    table = AliasTable({"United States": ["USA", "U.S."]})
    assert "United States" in table.lookup("United States")
    assert table.lookup("usa") >= {"United States", "USA"}
    assert table.matches("u.s.", "UNITED  states")
    assert table.matches("Nowhere", "nowhere")
    assert not table.matches("USA", "Canada")


@given(st.dictionaries(_field, st.lists(_field, max_size=3), max_size=5))
def test_alias_reflexivity_property(groups):
    try:
        table = AliasTable(groups)
    except ValidationError:
        return
    for canonical in groups:
        name = normalize_entity(canonical)
        assert name in table.lookup(name)
        assert table.matches(name, name)


def test_alias_table_round_trip():
    table = AliasTable({"United States": ["USA"], "Iran": []})
    assert AliasTable(table.to_dict()) == table


def test_edit_collection_dedup_keeps_later():
    edits = [
        FactEdit("e1", "Iran", "president_is", "A"),
        FactEdit("e2", "Iraq", "president_is", "B"),
        FactEdit("e3", "iran", "president_is", "C"),
    ]
    coll = EditCollection(edits)
    assert len(coll) == len(edits) - 1
    assert [e.edit_id for e in coll] == ["e2", "e3"]


def test_edit_collection_dedup_through_aliases():
    aliases = AliasTable({"Iran": ["Persia"]})
    coll = EditCollection(
        [FactEdit("e1", "Persia", "capital_is", "A"), FactEdit("e2", "Iran", "capital_is", "B")],
        aliases,
    )
    assert [e.edit_id for e in coll] == ["e2"]


def test_edit_collection_duplicate_id():
    with pytest.raises(ValidationError):
        EditCollection([FactEdit("e1", "a", "r", "x"), FactEdit("e1", "b", "r", "y")])


def test_subproblem_slots():
    p = SubProblem("hometown_is", 2)
    assert p.subject is UNBOUND and not p.is_bound
    assert p.to_text() == "?; hometown_is; ?"
    bound = p.bind_subject("Azar  Nafisi")
    assert bound.to_text() == "Azar Nafisi; hometown_is; ?"
    assert p.subject is UNBOUND  # immutable


def test_unbound_is_singleton():
    assert pickle.loads(pickle.dumps(UNBOUND)) is UNBOUND
    assert UNBOUND != ""


def test_reasoning_path_invariants():
    steps = (SubProblem("author_is", 1, "Book"), SubProblem("hometown_is", 2))
    path = ReasoningPath("Book", steps)
    assert path.relations == ["author_is", "hometown_is"]
    with pytest.raises(ValidationError):
        ReasoningPath("Book", ())
    with pytest.raises(ValidationError):
        ReasoningPath("Book", (SubProblem("a", 1), SubProblem("b", 3)))


def _instance(**over):
    base = dict(
        instance_id="i1",
        edits=(FactEdit("e1", "X", "r2", "Z"),),
        questions=("q?",),
        original_answer="Y",
        edited_answer="Z",
        original_path=(Triplet("A", "r1", "X"), Triplet("X", "r2", "Y")),
        edited_path=(Triplet("A", "r1", "X"), Triplet("X", "r2", "Z")),
        answer_aliases=frozenset({"Zed"}),
    )
    base.update(over)
    return MultiHopInstance(**base)


def test_instance_invariants():
    inst = _instance()
    assert inst.answer_aliases == {"Z", "Zed"}
    with pytest.raises(ValidationError):
        _instance(original_path=(Triplet("A", "r1", "X"),))
    with pytest.raises(ValidationError):
        _instance(edited_answer="Y")
    with pytest.raises(ValidationError):
        _instance(questions=())
