"""Cross-domain dialogue state tracking with self-retrieved in-context examples."""

from .corpus import (
    BeliefState,
    Corpus,
    Dialogue,
    SlotName,
    SlotValue,
    TestInstance,
    Turn,
    accumulate_states,
    build_test_instances,
    exclude_domain,
    load_corpus,
    normalize_value,
)
from .dst import Prediction, build_dst_prompt, parse_dst_response, predict_turn
from .evaluate import (
    ErrorKind,
    EvalReport,
    TurnJudgement,
    accumulate_predictions,
    domain_influence,
    domain_jga,
    export_report,
    judge_turn,
)
from .llmclient import (
    CachingBackend,
    CompletionRequest,
    CompletionResponse,
    GoldOracleBackend,
    LiveBackend,
    LlmClient,
    MockBackend,
)
from .retriever import (
    RetrievalRequest,
    RetrievedSet,
    build_retrieval_prompt,
    parse_retrieval_response,
    random_baseline,
    retrieve_examples,
)
from .similarity import Bm25Index, Candidate, build_index, score, tokenize, top_k

__version__ = "0.1.0"

__all__ = [
    "BeliefState", "Corpus", "Dialogue", "SlotName", "SlotValue", "TestInstance", "Turn",
    "accumulate_states", "build_test_instances", "exclude_domain", "load_corpus",
    "normalize_value",
    "Prediction", "build_dst_prompt", "parse_dst_response", "predict_turn",
    "ErrorKind", "EvalReport", "TurnJudgement", "accumulate_predictions",
    "domain_influence", "domain_jga", "export_report", "judge_turn",
    "CachingBackend", "CompletionRequest", "CompletionResponse", "GoldOracleBackend",
    "LiveBackend", "LlmClient", "MockBackend",
    "RetrievalRequest", "RetrievedSet", "build_retrieval_prompt",
    "parse_retrieval_response", "random_baseline", "retrieve_examples",
    "Bm25Index", "Candidate", "build_index", "score", "tokenize", "top_k",
    "__version__",
]
