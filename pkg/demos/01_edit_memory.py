# %% [markdown]
# # Storing fact edits and searching them
#
# Every edit is a triplet whose object changes. The memory embeds the
# serialized triplet "subject; relation; new object" and answers a hop query
# "subject; relation; ?" with an exhaustive top-k cosine search.

# %%
import numpy as np

from edithop import EditCollection, FactEdit, SubProblem, TrigramEmbedder, build_index
from edithop.embedding import similarity

emb = TrigramEmbedder(dimension=512)
v = emb.embed("Iran; president_is; Masoud Pezeshkian")
print(v.shape, round(float(np.linalg.norm(v)), 6), np.count_nonzero(v))

# %% [markdown]
# The local embedder hashes character trigrams into 512 buckets, so the same
# text always lands on the same unit vector, in any process.

# %%
q = emb.embed("Iran; president_is; ?")
print(round(similarity(q, v), 4))
print(round(similarity(q, emb.embed("France; capital_is; Paris")), 4))

# %% [markdown]
# A later edit on the same (subject, relation) replaces an earlier one.

# %%
edits = EditCollection([
    FactEdit("e1", "Iran", "president_is", "Ebrahim Raisi"),
    FactEdit("e2", "France", "capital_is", "Paris"),
    FactEdit("e3", "Azar Nafisi", "hometown_is", "Shiraz", old_object="Tehran"),
    FactEdit("e4", "Iran", "president_is", "Masoud Pezeshkian"),
])
print([e.edit_id for e in edits])

index = build_index(edits, emb)
for c in index.retrieve_top_k(SubProblem("president_is", 1, "Iran"), k=3):
    print(c.rank, c.edit.edit_id, f"{c.score:.3f}", c.edit.text)
