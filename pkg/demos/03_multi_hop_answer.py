# %% [markdown]
# # Answering a multi-hop question after an edit
#
# The question is split into hops. Each hop checks the edit memory first and
# only falls back to the target model when no candidate survives the filter.
# Here the mock model knows the pre-edit world; one edit moves the author's
# hometown, and the final answer follows it.

# %%
from edithop import FactEdit, Gateway, MockBackend, MockKnowledgeBase, RuleSet, TrigramEmbedder, build_index, solve

question = "Who is the head of the hometown of the author of Reading Lolita in Tehran?"
kb = MockKnowledgeBase(facts=[
    ("Reading Lolita in Tehran", "author_is", "Azar Nafisi"),
    ("Azar Nafisi", "hometown_is", "Tehran"),
    ("Tehran", "head_is", "Alireza Zakani"),
    ("Shiraz", "head_is", "Mohammad Hassan Asafari"),
])
kb.add_decomposition(question, "Reading Lolita in Tehran", ["author_is", "hometown_is", "head_is"])
gateway = Gateway(MockBackend(kb))
emb = TrigramEmbedder()

# %%
before = solve(question, build_index([], emb), RuleSet(), gateway)
print("before:", before.final_answer)

edit = FactEdit("ripple-1", "Azar Nafisi", "hometown_is", "Shiraz", old_object="Tehran")
after = solve(question, build_index([edit], emb), RuleSet(), gateway)
print("after: ", after.final_answer)

# %% [markdown]
# The trace records where every hop's answer came from.

# %%
for hop in after.hops:
    print(hop.hop_index, f"{hop.subject}; {hop.relation}; ?", "->", hop.resolved_object, f"[{hop.source.value}]")
