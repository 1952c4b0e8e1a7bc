# %% [markdown]
# # Batch evaluation and rule ablations
#
# A small dataset of two-hop instances: some edits are reachable by text
# similarity, one needs an implication rule and one needs a horn rule.
# M-Acc asks whether any phrasing of the question gets the edited answer;
# H-Acc asks whether every hop of the edited chain was resolved correctly.

# %%
from edithop import (
    Dataset, FactEdit, Gateway, MockBackend, MockKnowledgeBase, MultiHopInstance, Triplet, TrigramEmbedder,
)
from edithop.evaluation import ExperimentConfig, ablate, format_table
from edithop.rules import RuleSet, parse_horn_rules, parse_implications

kb = MockKnowledgeBase()
instances = []


def add(iid, person, rels, mid, old, new, edit):
    q = f"Question about {person} ({iid})"
    kb.add_decomposition(q, person, rels)
    kb.add_fact(person, rels[0], mid)
    kb.add_fact(mid, rels[1], old)
    instances.append(MultiHopInstance(
        instance_id=iid, edits=(edit,), questions=(q,), original_answer=old, edited_answer=new,
        original_path=(Triplet(person, rels[0], mid), Triplet(mid, rels[1], old)),
        edited_path=(Triplet(person, rels[0], mid), Triplet(mid, rels[1], new)),
    ))


add("sim", "Mira Tolsen", ["citizen_of", "head_of_state_is"], "Valdoria", "Ilsa Varn", "Aurelio Banks",
    FactEdit("a", "Valdoria", "head_of_state_is", "Aurelio Banks"))
add("imp", "Pell Vantrop", ["citizen_of", "capital_is"], "Ostrelund", "Lunevale", "Elmsby",
    FactEdit("b", "Ostrelund", "seat_of_government_is", "Elmsby"))
add("comp", "Tamsin Greaves", ["resides_in", "located_in_continent"], "Kestrel Bay", "Europe", "Asia",
    FactEdit("c", "Tamsin Greaves", "home_continent_is", "Asia"))

rules = RuleSet(
    parse_implications("capital_is => seat_of_government_is"),
    parse_horn_rules("resides_in & located_in_continent => home_continent_is"),
)
dataset = Dataset("demo", instances)

# %% [markdown]
# Each batch of k instances shares one freshly built memory. Dropping a rule
# family turns the instances that depend on it back into model fallbacks.

# %%
reports = ablate(dataset, ExperimentConfig(batch_size="all"), rules, Gateway(MockBackend(kb)), TrigramEmbedder())
print(format_table(reports))
print(reports["full"].source_histogram())
