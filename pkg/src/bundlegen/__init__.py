"""Bundle generation and intent inference from user sessions, guided by
dynamically generated demonstrations on retrieved neighbor sessions."""

from .dataset import (
    GroundTruth,
    GTBundle,
    Item,
    Session,
    SplitDataset,
    chronological_split,
    fixture_path,
    load_dataset,
    save_dataset,
)
from .demo import (
    BundleSignal,
    Demonstration,
    DemonstrationBuilder,
    IntentSignal,
    LoopConfig,
    RaterPanel,
    bundle_signals,
    classify_bundle_signal,
    match_bundles,
    rate_intent,
)
from .errors import (
    AnswerFormatError,
    BundlegenError,
    DatasetError,
    MockScriptMiss,
    ProviderError,
    RatingError,
    RetrievalError,
    StageError,
)
from .evaluate import (
    EvalReport,
    HumanEvalCandidate,
    bundle_coverage,
    evaluate,
    export_human_eval,
    is_hit,
    jaccard,
    session_metrics,
)
from .infer import InferenceMode, SessionResult, assemble_context, build_ideal_transcript, infer_target
from .llm import (
    Conversation,
    LlmClient,
    Message,
    MockProvider,
    MockRule,
    MockScript,
    ProviderConfig,
    RateLimiter,
    RemoteChatProvider,
    ReplayProvider,
    ResponseCache,
    RunLog,
)
from .parsing import (
    BundleMap,
    IntentMap,
    RatingTriple,
    format_bundle_answer,
    format_intent_answer,
    format_rating_answer,
    parse_bundle_answer,
    parse_intent_answer,
    parse_rating_answer,
)
from .retrieval import (
    EmbeddingCache,
    HashEmbedder,
    RemoteEmbedder,
    RetrievalConfig,
    SessionEmbedding,
    cosine,
    embed_sessions,
    load_stopwords,
    preprocess_title,
    session_description,
    top_k_neighbors,
)

__version__ = "0.1.0"
