"""Reverse-image-retrieval augmented generation and evaluation for
knowledge-intensive visual question answering.

The pipeline retrieves web reverse-image-search results for a query image,
composes them into a single capture image with a layout explanation, sends
the augmented context to a pluggable chat backend, and evaluates the
outcomes with containment/exact-match metrics, an external judge, and a
statistics layer (bootstrap intervals, KS tests, and an accounting model
for agents that choose when to retrieve).
"""

from .analysis import (
    AgentModel,
    AgentOutcome,
    CaseSets,
    Dominance,
    Interval,
    KsResult,
    agent_analysis,
    agent_sweep,
    bootstrap_ci,
    classify_cases,
    correctness_map,
    ks_two_sample,
    net_gain_table,
    presence_compare,
)
from .backends import (
    Backend,
    BackendDescriptor,
    HttpChatBackend,
    JudgeVerdict,
    ModelAnswer,
    RetryPolicy,
    ScriptedBackend,
    build_backend,
    chat,
    entity_probe,
    judge,
    parse_verdict,
)
from .capture import (
    LayoutSpec,
    MaskMode,
    Rect,
    SearchCapture,
    SearchResultEntry,
    apply_mask,
    compose_capture,
    load_sidecar,
    save_capture,
)
from .config import ProviderConfig, RunConfig, load_config
from .datasets import (
    DatasetManifest,
    EntityCache,
    EntityRecord,
    FixtureEntityClient,
    SamplePlan,
    VisualQuestion,
    WikidataClient,
    load_and_sample,
    load_manifest,
    load_search_counts,
    resolve_entities,
    sample_manifest,
)
from .messages import (
    CAPTURE_LAYOUT_NOTE,
    ENTITY_PROBE_PROMPT,
    ENTITY_STATEMENT_TEMPLATE,
    SYSTEM_PROMPT,
    Condition,
    MessagePart,
    PromptBundle,
    compose_messages,
    oracle_rephrase,
)
from .metrics import (
    MetricsReport,
    SnakeVerdict,
    aggregate_report,
    answer_in_prediction,
    normalize_text,
    relative_change,
    snake_metrics,
)
from .providers import (
    CaptureCache,
    FixtureSearchProvider,
    LiveProviderSettings,
    LiveSearchProvider,
    search,
)
from .runner import BatchSummary, Runner
from .store import PromptStore, RunRecord, RunStore

__version__ = "0.1.0"
