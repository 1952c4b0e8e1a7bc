import random

import numpy as np
import pytest

from edithop.core import AliasTable, EditCollection, FactEdit, SubProblem, ValidationError
from edithop.embedding import TrigramEmbedder, similarity
from edithop.memory import (
    EditIndex,
    FingerprintMismatch,
    IndexBuildError,
    build_index,
    read_edits_jsonl,
    retrieve_top_k,
    write_edits_jsonl,
)

WORDS = ["alpha", "beta", "gamma", "delta", "omega", "sigma", "kappa", "theta", "zeta", "rho"]
RELS = ["capital_is", "head_is", "author_is", "hometown_is", "ceo_is", "spouse_is"]


def random_edits(rng, n):
    edits, seen = [], set()
    while len(edits) < n:
        s = " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 3)))
        r = rng.choice(RELS)
        if (s, r) in seen:
            continue
        seen.add((s, r))
        o = " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 2))) + f" {len(edits)}"
        edits.append(FactEdit(f"e{len(edits):05d}", s, r, o))
    return edits


def brute_force_top_k(edits, embedder, query_text, k):
    """Exhaustive scan: score every edit, sort by (-score, edit_id)."""
    q = embedder.embed(query_text)
    scored = [(similarity(embedder.embed(e.text), q), e.edit_id) for e in edits]
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [eid for _, eid in scored[:k]]


@pytest.fixture(scope="module")
def emb():
    return TrigramEmbedder(512)


def test_build_three(emb):
    idx = build_index(random_edits(random.Random(1), 3), emb)
    assert len(idx) == 3
    assert np.allclose(np.linalg.norm(idx.matrix, axis=1), 1.0, atol=1e-9)


def test_empty_index(emb):
    idx = build_index(EditCollection(), emb)
    assert len(idx) == 0
    assert idx.retrieve_top_k(SubProblem("r", 1, "x"), 5) == []


def test_k10_over_ten_edits(emb):
    edits = random_edits(random.Random(2), 10)
    idx = build_index(edits, emb)
    out = idx.retrieve_top_k(SubProblem("capital_is", 1, "alpha"), 10)
    assert sorted(c.edit.edit_id for c in out) == sorted(e.edit_id for e in edits)
    scores = [c.score for c in out]
    assert scores == sorted(scores, reverse=True)
    assert [c.rank for c in out] == list(range(1, 11))


def test_exact_match_rank_one(emb):
    edits = random_edits(random.Random(3), 20)
    target = edits[7]
    idx = build_index(edits, emb)
    out = retrieve_top_k(idx, target.text, 1)
    assert out[0].edit.edit_id == target.edit_id
    assert out[0].score == pytest.approx(1.0, abs=1e-9)


def test_matches_brute_force(emb):
    rng = random.Random(4)
    edits = random_edits(rng, 50)
    idx = build_index(edits, emb)
    for _ in range(20):
        p = SubProblem(rng.choice(RELS), 1, rng.choice(WORDS))
        k = rng.randint(1, 15)
        got = [c.edit.edit_id for c in idx.retrieve_top_k(p, k)]
        assert got == brute_force_top_k(edits, emb, p.to_text(), k)


def test_scores_equal_pairwise_similarity(emb):
    edits = random_edits(random.Random(5), 30)
    idx = build_index(edits, emb)
    q = emb.embed("beta; head_is; ?")
    row_scores = idx.scores(q)
    for e, s in zip(edits, row_scores):
        assert s == similarity(emb.embed(e.text), q)


def test_ties_broken_by_edit_id(emb):
    edits = [FactEdit("b", "zzz", "r", "q1"), FactEdit("a", "yyy", "r2", "q2")]
    idx = build_index(edits, emb)
    out = idx.retrieve_top_k("xxxxxxxx", 2)
    assert [c.score for c in out] == [0.0, 0.0]
    assert [c.edit.edit_id for c in out] == ["a", "b"]


def test_insertion_order_independent(emb):
    rng = random.Random(6)
    edits = random_edits(rng, 40)
    shuffled = edits[:]
    rng.shuffle(shuffled)
    a, b = build_index(edits, emb), build_index(shuffled, emb)
    for rel in RELS:
        p = SubProblem(rel, 1, "gamma delta")
        ra = [(c.edit.edit_id, c.score) for c in a.retrieve_top_k(p, 10)]
        rb = [(c.edit.edit_id, c.score) for c in b.retrieve_top_k(p, 10)]
        assert ra == rb


def test_unbound_query_rejected(emb):
    idx = build_index(random_edits(random.Random(7), 2), emb)
    with pytest.raises(ValidationError):
        idx.retrieve_top_k(SubProblem("r", 2), 1)
    with pytest.raises(ValidationError):
        idx.retrieve_top_k(SubProblem("r", 1, "x"), 0)


def test_build_dedups_through_aliases(emb):
    aliases = AliasTable({"Iran": ["Persia"]})
    edits = [FactEdit("e1", "Persia", "capital_is", "A"), FactEdit("e2", "Iran", "capital_is", "B")]
    idx = build_index(edits, emb, aliases)
    assert [e.edit_id for e in idx.edits] == ["e2"]


def test_build_failure_names_edit():
    class Broken(TrigramEmbedder):
        def embed(self, text):
            if "boom" in text:
                raise RuntimeError("transport down")
            return super().embed(text)

    edits = [FactEdit("ok", "a", "r", "b"), FactEdit("bad", "boom", "r", "b")]
    with pytest.raises(IndexBuildError) as err:
        build_index(edits, Broken(16))
    assert err.value.edit_id == "bad"


def test_save_load_round_trip(tmp_path, emb):
    edits = random_edits(random.Random(8), 12)
    idx = build_index(edits, emb)
    path = tmp_path / "index.json"
    idx.save(path)
    loaded = EditIndex.load(path, emb)
    assert loaded.edits == idx.edits
    assert np.array_equal(loaded.matrix, idx.matrix)
    with pytest.raises(FingerprintMismatch):
        EditIndex.load(path, TrigramEmbedder(256))


def test_jsonl_round_trip_and_errors(tmp_path):
    edits = random_edits(random.Random(9), 4)
    path = tmp_path / "edits.jsonl"
    write_edits_jsonl(path, edits)
    assert read_edits_jsonl(path) == edits
    bad = tmp_path / "bad.jsonl"
    bad.write_text(path.read_text().splitlines()[0] + "\n{not json\n")
    with pytest.raises(ValidationError, match="line 2"):
        read_edits_jsonl(bad)


def test_large_index_fixture(emb):
    rng = random.Random(10)
    edits = random_edits(rng, 1868)
    idx = build_index(edits, emb)
    assert len(idx) == 1868
    vectors = {e.edit_id: emb.embed(e.text) for e in edits}
    for _ in range(5):
        p = SubProblem(rng.choice(RELS), 1, rng.choice(WORDS))
        q = emb.embed(p.to_text())
        scored = sorted(((-similarity(vectors[e.edit_id], q), e.edit_id) for e in edits))
        assert [c.edit.edit_id for c in idx.retrieve_top_k(p, 10)] == [eid for _, eid in scored[:10]]


def test_exact_cosine_tie_ordered_by_id(emb):
    # both edits score 9/sqrt(37) against the query, but the float sums differ in the last bit
    edits = [
        FactEdit("x0042", "Marnor", "head_is", "Sillund Valelund"),
        FactEdit("x0003", "Brunamber", "capital_is", "Quaynor Marqad"),
    ]
    out = build_index(edits, emb).retrieve_top_k("Normar Normar; author_is; ?", 2)
    assert out[0].score != out[1].score
    assert abs(out[0].score - out[1].score) < 1e-15
    assert [c.edit.edit_id for c in out] == ["x0003", "x0042"]

