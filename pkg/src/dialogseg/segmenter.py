"""Prompt-driven dialogue topic segmentation pipeline.

One run assembles a prompt from up to three optional ingredients
(ranked gold exemplars, handshake cue hints, contrastive yes/no
sample demonstrations), asks the model for a full segmentation with
per-segment explanations and confidences, and repairs the reply into
a total partition of the dialogue. Each toggle can be disabled
independently, which is also how the ablation grid is produced.
"""

import dataclasses
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .core import Corpus, Dialogue, Segmentation
from .errors import (
    ConfigError,
    DialogsegError,
    PipelineError,
    ResponseValidationError,
)
from .handshake import DEFAULT_FEW_SHOT, span_weights, tag_handshakes
from .jsontools import extract_first_json
from .llm import LlmClient, complete_json
from .metrics import EvalReport, evaluate_corpus, render_score
from .samplegen import (
    SamplePair,
    analyze_context,
    extract_windows,
    filter_by_confidence,
    synthesize_samples,
)
from .similarity import Exemplar, ExemplarStore, select_exemplars

logger = logging.getLogger(__name__)

SEGMENT_SCHEMA = (
    '{"segments":[{"start":int,"end":int,"explanation":str,"confidence":float}]}'
)

MISSING_EXPLANATION = "no explanation provided"


@dataclass(frozen=True)
class PipelineConfig:
    """Component toggles plus the shared model parameters."""

    enable_handshake: bool = True
    enable_similarity: bool = True
    enable_samplegen: bool = True
    m: int = 3
    confidence_threshold: float = 0.5
    model: str = "default"
    temperature: float = 0.0
    handshake_boost: float = 2.0
    max_sample_pairs: int = 4
    llm_max_attempts: int = 3
    seed: int | None = None

    def __post_init__(self):
        if self.m < 0:
            raise ValueError(f"exemplar count m must be >= 0, got {self.m}")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError(
                f"confidence threshold {self.confidence_threshold} outside [0, 1]"
            )
        if not self.model:
            raise ValueError("model name must be nonempty")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.handshake_boost <= 0:
            raise ValueError(
                f"handshake boost must be > 0, got {self.handshake_boost}"
            )
        if self.max_sample_pairs < 0:
            raise ValueError(
                f"max sample pairs must be >= 0, got {self.max_sample_pairs}"
            )
        if self.llm_max_attempts < 1:
            raise ValueError(
                f"llm max attempts must be >= 1, got {self.llm_max_attempts}"
            )


@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    explanation: str
    confidence: float

    def __post_init__(self):
        if self.start < 0 or self.end < self.start:
            raise ValueError(
                f"segment range [{self.start}, {self.end}] is not ascending"
            )
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if not self.explanation:
            raise ValueError("explanation must be nonempty")


@dataclass(frozen=True)
class SegmentPrediction:
    """A total, ordered partition of one dialogue into topic segments."""

    dialogue_id: str
    segments: tuple[Segment, ...]
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.segments:
            raise ValueError("prediction needs at least one segment")
        if self.segments[0].start != 0:
            raise ValueError("first segment must start at utterance 0")
        for prev, cur in zip(self.segments, self.segments[1:]):
            if cur.start != prev.end + 1:
                raise ValueError(
                    f"segments [{prev.start}, {prev.end}] and "
                    f"[{cur.start}, {cur.end}] do not tile the dialogue"
                )

    @property
    def n(self) -> int:
        return self.segments[-1].end + 1

    @property
    def segmentation(self) -> Segmentation:
        return Segmentation(
            n=self.n, boundaries=tuple(s.start for s in self.segments[1:])
        )

    def to_json_obj(self) -> dict:
        return {
            "id": self.dialogue_id,
            "segments": [
                {
                    "start": s.start,
                    "end": s.end,
                    "explanation": s.explanation,
                    "confidence": s.confidence,
                }
                for s in self.segments
            ],
            "boundaries": list(self.segmentation.boundaries),
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), indent=2, sort_keys=True) + "\n"


def _render_numbered(dialogue: Dialogue) -> list[str]:
    lines = []
    for utt in dialogue.utterances:
        who = f"[{utt.speaker}] " if utt.speaker else ""
        lines.append(f"{utt.index}: {who}{utt.text}")
    return lines


def _render_exemplar(exemplar: Exemplar) -> list[str]:
    lines = [f"EXEMPLAR (dialogue {exemplar.dialogue.id}):"]
    lines.extend(_render_numbered(exemplar.dialogue))
    ranges = ", ".join(f"[{s}, {e}]" for s, e in exemplar.gold.segment_ranges())
    lines.append(f"Gold segments: {ranges}")
    return lines


def _render_span_hint(span, dialogue: Dialogue) -> str:
    tokens = dialogue.utterances[span.utterance].tokens
    phrase = " ".join(tokens[span.start : span.end + 1])
    return (
        f"utterance {span.utterance}: \"{phrase}\" (trust {span.trust:.2f})"
    )


def _render_sample_pair(pair: SamplePair) -> list[str]:
    lines = ["POSITIVE (the topic changes at line 4):"]
    lines += [f"{i}: {text}" for i, text in enumerate(pair.positive.utterances, 1)]
    lines.append(f"Why: {pair.positive.reasoning}")
    lines.append("NEGATIVE (one topic throughout):")
    lines += [f"{i}: {text}" for i, text in enumerate(pair.negative.utterances, 1)]
    lines.append(f"Why: {pair.negative.reasoning}")
    return lines


def build_segmentation_prompt(
    query: Dialogue,
    exemplars=(),
    spans=(),
    samples=(),
    config: PipelineConfig | None = None,
) -> str:
    """Assemble the segmentation prompt; disabled parts contribute nothing."""
    if len(query) == 0:
        raise ValueError("query dialogue is empty")
    lines = [
        "You segment a dialogue into contiguous topical segments. A segment",
        "is a run of consecutive utterances working on one conversational",
        "task; a new segment starts where the topic shifts.",
        "",
        "For each predicted topic segment, provide:",
        "(1) A brief explanation of the topical focus or transition, and",
        "    whether it constitutes a complete dialogue task.",
        "(2) A confidence score between 0 and 1 indicating your certainty.",
    ]
    for exemplar in exemplars:
        lines.append("")
        lines.extend(_render_exemplar(exemplar))
    if spans:
        lines.append("")
        lines.append(
            "HANDSHAKE CUES: call-up phrases were detected in the query at the"
        )
        lines.append(
            "utterances below. They often open a new topic; treat them as"
        )
        lines.append("hints, not hard constraints.")
        for span in spans:
            lines.append(_render_span_hint(span, query))
    if samples:
        lines.append("")
        lines.append(
            "BOUNDARY DEMONSTRATIONS: contrastive examples of what a topic"
        )
        lines.append("change does and does not look like.")
        for pair in samples:
            lines.append("")
            lines.extend(_render_sample_pair(pair))
    lines.append("")
    lines.append(f"QUERY (dialogue {query.id}):")
    lines.extend(_render_numbered(query))
    lines.append("")
    lines.append("Respond with JSON only, matching:")
    lines.append(SEGMENT_SCHEMA)
    lines.append(
        "Segments must be in order, non-overlapping, and cover every "
        f"utterance from 0 to {len(query) - 1}."
    )
    return "\n".join(lines)


def _coerce_confidence(raw, index: int, warnings: list[str]) -> float:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        warnings.append(
            f"segment {index}: missing or non-numeric confidence, using 0.5"
        )
        return 0.5
    value = float(raw)
    if value < 0.0 or value > 1.0:
        clamped = min(1.0, max(0.0, value))
        warnings.append(
            f"segment {index}: confidence {value} clamped to {clamped}"
        )
        return clamped
    return value


def _coerce_index(raw, index: int, key: str) -> int:
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise ResponseValidationError(
            f'segment {index}: "{key}" must be an integer, got {raw!r}'
        )
    return raw


def parse_segmentation_response(
    text: str, n: int, dialogue_id: str = ""
) -> SegmentPrediction:
    """Parse and repair the model's segment list into a total partition.

    Every repair appends a warning: index clamping, reordering, overlap
    trimming, gap filling, confidence clamping, placeholder explanations.
    A reply with no JSON or no segments is an error, not a repair.
    """
    if n < 1:
        raise ValueError(f"dialogue length must be >= 1, got {n}")
    obj = extract_first_json(text)
    if isinstance(obj, dict):
        raw_segments = obj.get("segments")
    elif isinstance(obj, list):
        raw_segments = obj
    else:
        raise ResponseValidationError("reply JSON is not an object or list")
    if not isinstance(raw_segments, list) or not raw_segments:
        raise ResponseValidationError('reply contains no "segments" entries')

    warnings: list[str] = []
    drafts = []
    for i, item in enumerate(raw_segments):
        if not isinstance(item, dict):
            raise ResponseValidationError(f"segment {i} is not a JSON object")
        start = _coerce_index(item.get("start"), i, "start")
        end = _coerce_index(item.get("end"), i, "end")
        clamped_start = min(n - 1, max(0, start))
        clamped_end = min(n - 1, max(0, end))
        if (clamped_start, clamped_end) != (start, end):
            warnings.append(
                f"segment {i}: range [{start}, {end}] clamped to "
                f"[{clamped_start}, {clamped_end}]"
            )
        start, end = clamped_start, clamped_end
        if start > end:
            warnings.append(
                f"segment {i}: start {start} after end {end}, swapped"
            )
            start, end = end, start
        explanation = item.get("explanation")
        if not isinstance(explanation, str) or not explanation.strip():
            warnings.append(f"segment {i}: empty explanation, using placeholder")
            explanation = MISSING_EXPLANATION
        confidence = _coerce_confidence(item.get("confidence"), i, warnings)
        drafts.append([start, end, explanation, confidence])

    if drafts != sorted(drafts, key=lambda d: (d[0], d[1])):
        warnings.append("segments were out of order, sorted by start")
        drafts.sort(key=lambda d: (d[0], d[1]))

    repaired = [drafts[0]]
    for draft in drafts[1:]:
        prev = repaired[-1]
        start, end, explanation, confidence = draft
        if start <= prev[1]:
            start = prev[1] + 1
            if start > end:
                warnings.append(
                    f"segment [{draft[0]}, {end}] lies inside the previous "
                    "segment, dropped"
                )
                continue
            warnings.append(
                f"segment [{draft[0]}, {end}] overlapped the previous one, "
                f"trimmed to [{start}, {end}]"
            )
        elif start > prev[1] + 1:
            warnings.append(
                f"gap before utterance {start}: extended previous segment "
                f"end from {prev[1]} to {start - 1}"
            )
            prev[1] = start - 1
        repaired.append([start, end, explanation, confidence])

    if repaired[0][0] != 0:
        warnings.append(
            f"first segment started at {repaired[0][0]}, extended to cover "
            "utterance 0"
        )
        repaired[0][0] = 0
    if repaired[-1][1] != n - 1:
        warnings.append(
            f"last segment ended at {repaired[-1][1]}, extended to cover "
            f"utterance {n - 1}"
        )
        repaired[-1][1] = n - 1

    segments = tuple(
        Segment(start=s, end=e, explanation=x, confidence=c)
        for s, e, x, c in repaired
    )
    return SegmentPrediction(
        dialogue_id=dialogue_id, segments=segments, warnings=tuple(warnings)
    )


def _stage(name: str, fn):
    try:
        return fn()
    except PipelineError:
        raise
    except DialogsegError as exc:
        raise PipelineError(name, str(exc)) from exc


def _generate_samples(
    exemplars, config: PipelineConfig, client: LlmClient
) -> list[SamplePair]:
    pairs: list[SamplePair] = []
    for exemplar in exemplars:
        if len(pairs) >= config.max_sample_pairs:
            break
        windows = extract_windows(exemplar.dialogue, exemplar.gold)
        for window in windows:
            if len(pairs) >= config.max_sample_pairs:
                break
            analysis = analyze_context(window, client)
            pairs.append(synthesize_samples(window, analysis, client))
    return filter_by_confidence(pairs, config.confidence_threshold)


def segment(
    query: Dialogue,
    config: PipelineConfig,
    client: LlmClient,
    provider=None,
    store: ExemplarStore | None = None,
    few_shot=DEFAULT_FEW_SHOT,
) -> SegmentPrediction:
    """Run the full pipeline on one dialogue.

    Disabled components are never invoked: no tagging call without the
    handshake toggle, no embedding call without the similarity toggle,
    no generation calls without the sample toggle. A failing stage
    aborts with that stage's name.
    """
    spans = []
    weights = None
    if config.enable_handshake:
        spans = _stage(
            "handshake", lambda: tag_handshakes(query, client, few_shot)
        )
        if spans:
            weights = span_weights(query, spans, config.handshake_boost)

    exemplars: list[Exemplar] = []
    if store is not None and len(store) > 0 and config.m > 0:
        if config.enable_similarity:
            if provider is None:
                raise ConfigError(
                    "similarity-guided selection needs an embedding provider"
                )
            ranked = _stage(
                "exemplars",
                lambda: select_exemplars(
                    query, store, config.m, provider, weights=weights
                ),
            )
            exemplars = [r.exemplar for r in ranked]
        else:
            # Fixed fallback: the store's first m, in store order.
            exemplars = store.exemplars[: config.m]

    samples: list[SamplePair] = []
    if config.enable_samplegen and exemplars and config.max_sample_pairs > 0:
        samples = _stage(
            "samplegen", lambda: _generate_samples(exemplars, config, client)
        )

    prompt = build_segmentation_prompt(query, exemplars, spans, samples, config)
    return _stage(
        "segmentation",
        lambda: complete_json(
            client,
            prompt,
            lambda text: parse_segmentation_response(
                text, len(query), dialogue_id=query.id
            ),
        ),
    )


def segment_corpus(
    corpus: Corpus,
    config: PipelineConfig,
    client: LlmClient,
    provider=None,
    store: ExemplarStore | None = None,
    workers: int = 1,
) -> list[SegmentPrediction]:
    """Segment every corpus dialogue, preserving corpus order."""
    if workers < 1:
        raise ValueError(f"worker count must be >= 1, got {workers}")
    dialogues = [entry.dialogue for entry in corpus.entries]
    if workers == 1:
        return [segment(d, config, client, provider, store) for d in dialogues]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(segment, d, config, client, provider, store)
            for d in dialogues
        ]
        return [f.result() for f in futures]


ABLATION_ROWS: tuple[tuple[str, dict], ...] = (
    ("1", {"enable_samplegen": False}),
    ("2", {"enable_handshake": False}),
    ("3", {"enable_similarity": False}),
    ("Ours", {}),
)


@dataclass(frozen=True)
class AblationRow:
    label: str
    config: PipelineConfig
    report: EvalReport


def run_ablation(
    corpus: Corpus,
    store: ExemplarStore,
    client: LlmClient,
    provider,
    base_config: PipelineConfig | None = None,
    k: int | None = None,
    workers: int = 1,
) -> list[AblationRow]:
    """Evaluate the three leave-one-out rows plus the full pipeline."""
    if not corpus.labeled() or len(corpus.labeled()) != len(corpus):
        raise ConfigError("ablation needs a fully labeled corpus")
    base_config = base_config or PipelineConfig()
    rows = []
    for label, overrides in ABLATION_ROWS:
        config = dataclasses.replace(base_config, **overrides)
        predictions = segment_corpus(
            corpus, config, client, provider, store, workers=workers
        )
        report = evaluate_corpus(
            {p.dialogue_id: p.segmentation for p in predictions},
            corpus,
            k=k,
            model=label,
        )
        logger.info(
            "ablation row %s: Pk %s, Wd %s",
            label,
            render_score(report.mean_pk),
            render_score(report.mean_window_diff),
        )
        rows.append(AblationRow(label=label, config=config, report=report))
    return rows


def render_ablation_table(rows) -> str:
    """Four-row component-toggle table with Pk and Wd columns."""
    header = ("No.", "Handshake", "Dialogue Similarity", "Topic Generation",
              "Pk", "Wd")
    body = []
    for row in rows:
        body.append(
            (
                row.label,
                "x" if row.config.enable_handshake else "",
                "x" if row.config.enable_similarity else "",
                "x" if row.config.enable_samplegen else "",
                render_score(row.report.mean_pk),
                render_score(row.report.mean_window_diff),
            )
        )
    table = [header] + body
    widths = [max(len(r[c]) for r in table) for c in range(len(header))]
    lines = [
        "  ".join(cell.ljust(widths[c]) for c, cell in enumerate(r)).rstrip()
        for r in table
    ]
    return "\n".join(lines) + "\n"
