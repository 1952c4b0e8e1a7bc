# %% [markdown]
# # Recording model calls and replaying them offline
#
# A cassette maps a hash of the canonical request (model, messages,
# temperature) to the response. Record once against a live or mock backend,
# then replay with no network; a request that was never recorded is an error.

# %%
import tempfile
from pathlib import Path

from edithop import Gateway, MockBackend, MockKnowledgeBase, SubProblem
from edithop.gateway import CassetteMiss, record_replay

kb = MockKnowledgeBase(facts=[("Iran", "president_is", "Masoud Pezeshkian")])
kb.add_decomposition("Who is the president of Iran?", "Iran", ["president_is"])
tape = Path(tempfile.mkdtemp()) / "cassette.json"

recorder = Gateway(record_replay("record", tape, MockBackend(kb)))
print(recorder.decompose("Who is the president of Iran?").path.relations)
print(recorder.answer_subproblem(SubProblem("president_is", 1, "Iran")))

# %%
player = Gateway(record_replay("replay", tape))
print(player.answer_subproblem(SubProblem("president_is", 1, "Iran")))
try:
    player.answer_subproblem(SubProblem("president_is", 1, "France"))
except CassetteMiss as exc:
    print("miss:", exc)
