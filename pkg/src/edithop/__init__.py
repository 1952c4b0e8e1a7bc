"""Memory-based knowledge editing for multi-hop question answering.

Fact edits live in a vector-searchable memory of relational triplets. A
question is decomposed into a chain of single-relation hops; each hop is
answered from memory when a retrieved edit passes the implication,
composition or similarity checks, and by the target model otherwise.
"""

from .core import (
    UNBOUND,
    AliasTable,
    EditCollection,
    FactEdit,
    HopRecord,
    MultiHopInstance,
    ReasoningPath,
    ResolutionTrace,
    Source,
    SubProblem,
    Triplet,
    ValidationError,
    normalize_entity,
    parse_triplet,
    triplet_to_text,
)
from .embedding import EmbedderConfig, RemoteEmbedder, TrigramEmbedder, make_embedder, similarity
from .evaluation import (
    Dataset,
    ExperimentConfig,
    Report,
    ablate,
    h_acc,
    load_dataset,
    m_acc,
    run_experiment,
    save_dataset,
)
from .gateway import (
    MODEL_UNKNOWN,
    CassetteBackend,
    DecompositionParseError,
    Gateway,
    GatewayError,
    HttpChatBackend,
    MockBackend,
    MockKnowledgeBase,
    TargetModelConfig,
    record_replay,
)
from .memory import EditIndex, ScoredCandidate, build_index, retrieve_top_k
from .rules import (
    FilterContext,
    FilterOutcome,
    HornRule,
    ImplicationDirection,
    ImplicationRule,
    RuleSet,
    candidate_filter,
    implies,
    load_rules,
    match_composition,
    match_implication,
)
from .traversal import TraversalConfig, solve

__version__ = "0.1.0"
