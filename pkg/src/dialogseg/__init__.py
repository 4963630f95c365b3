"""Dialogue topic segmentation with LLM prompting, plus an evaluation harness.

The public surface re-exported here covers the usual workflow: load a
corpus, build an exemplar store, run the segmentation pipeline against
an LLM backend (live, scripted, or replayed from fixtures), and score
the predictions with Pk and WindowDiff.
"""

from .core import (
    Corpus,
    CorpusEntry,
    Dialogue,
    Segmentation,
    Utterance,
    parse_corpus,
)
from .errors import (
    ConfigError,
    DataError,
    DialogsegError,
    EvaluationError,
    PipelineError,
    ResponseParseError,
    ResponseValidationError,
    SampleRejectedError,
    UpstreamError,
)
from .handshake import (
    HandshakeSpan,
    enforce_pairing,
    span_weights,
    spans_to_boundary_hints,
    tag_handshakes,
)
from .llm import (
    HttpBackend,
    LlmClient,
    RecordingBackend,
    ReplayBackend,
    ScriptedBackend,
)
from .metrics import (
    EvalReport,
    default_k,
    evaluate_corpus,
    pk,
    window_diff,
)
from .samplegen import (
    SamplePair,
    extract_windows,
    filter_by_confidence,
    synthesize_samples,
)
from .segmenter import (
    PipelineConfig,
    SegmentPrediction,
    run_ablation,
    segment,
    segment_corpus,
)
from .similarity import (
    ExemplarStore,
    HashedTfidfProvider,
    HttpEmbeddingProvider,
    select_exemplars,
)
from .texttiling import TilingParams, texttile

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Corpus",
    "CorpusEntry",
    "DataError",
    "Dialogue",
    "DialogsegError",
    "EvalReport",
    "EvaluationError",
    "ExemplarStore",
    "HandshakeSpan",
    "HashedTfidfProvider",
    "HttpBackend",
    "HttpEmbeddingProvider",
    "LlmClient",
    "PipelineConfig",
    "PipelineError",
    "RecordingBackend",
    "ReplayBackend",
    "ResponseParseError",
    "ResponseValidationError",
    "SamplePair",
    "SampleRejectedError",
    "ScriptedBackend",
    "SegmentPrediction",
    "Segmentation",
    "TilingParams",
    "UpstreamError",
    "Utterance",
    "default_k",
    "enforce_pairing",
    "evaluate_corpus",
    "extract_windows",
    "filter_by_confidence",
    "parse_corpus",
    "pk",
    "run_ablation",
    "segment",
    "segment_corpus",
    "select_exemplars",
    "span_weights",
    "spans_to_boundary_hints",
    "synthesize_samples",
    "tag_handshakes",
    "texttile",
    "window_diff",
]
