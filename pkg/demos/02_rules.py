# %% [markdown]
# # Relation rules and the candidate filter
#
# Implication rules say one relation entails another; horn rules say a chain
# of relations entails a single shortcut relation. The filter walks retrieved
# candidates in rank order and, for each, tries implication, composition and
# finally the plain similarity threshold.

# %%
from edithop import FactEdit, SubProblem
from edithop.memory import ScoredCandidate
from edithop.rules import FilterContext, RuleSet, candidate_filter, parse_horn_rules, parse_implications

rules = RuleSet(
    parse_implications("""
        # family relations
        father_of => parent_of
        parent_of => relative_of
    """),
    parse_horn_rules("lives_in_city & city_in_continent => lives_in_continent"),
)
print(rules.implies("father_of", "relative_of"), rules.implies("relative_of", "father_of"))

# %% [markdown]
# Stage 1. The query asks father_of, the edit stores parent_of. The rule
# lets the edit answer even though its text scores below the threshold.

# %%
p = SubProblem("father_of", 1, "Tom")
edit = FactEdit("e1", "Tom", "parent_of", "John")
ctx = FilterContext(path_relations=["father_of"], hop_subjects=["Tom"], rules=rules)
print(candidate_filter(0.6, [ScoredCandidate(edit, 0.41, 1)], p, ctx))

# %% [markdown]
# Stage 2. At hop 2 of "lives_in_city, city_in_continent", an edit on the
# start entity with the head relation answers the whole run at once.

# %%
p2 = SubProblem("city_in_continent", 2, "Shiraz")
edit2 = FactEdit("e2", "Ahmed", "lives_in_continent", "Asia")
ctx2 = FilterContext(
    path_relations=["lives_in_city", "city_in_continent"], hop_subjects=["Ahmed", "Shiraz"], rules=rules
)
print(candidate_filter(0.6, [ScoredCandidate(edit2, 0.22, 1)], p2, ctx2))

# %% [markdown]
# Nothing matches and nothing clears the threshold: the caller asks the model.

# %%
print(candidate_filter(0.6, [ScoredCandidate(edit2, 0.22, 1)], p, ctx))
