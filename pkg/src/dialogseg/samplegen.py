"""Contrastive sample synthesis around candidate topic boundaries.

A context window frames one gap with m utterances before and n after.
An analysis pass grounds the window (themes, markers, roles, domain
terms); a synthesis pass then writes a positive sample (7 utterances
with a topic pivot at position 4, one-based) and a negative sample
(7 utterances of one continuous topic), each with a confidence and a
reasoning chain.
"""

import json
from dataclasses import dataclass

from .core import Dialogue, Segmentation, Utterance
from .errors import (
    ResponseParseError,
    ResponseValidationError,
    SampleRejectedError,
)
from .jsontools import extract_first_json_with_source
from .llm import LlmClient

SAMPLE_SIZE = 7
PIVOT_POSITION = 4  # one-based slot of the topic shift in a positive sample

ANALYSIS_SCHEMA = (
    '{"themes":[str per numbered utterance],"markers":[str],'
    '"speaker_roles":{str:str},"domain_terms":[str]}'
)

SYNTHESIS_SCHEMA = (
    '{"positive":{"utterances":[7 str],"pivot_index":4,"confidence":float,'
    '"reasoning":str},"negative":{"utterances":[7 str],"confidence":float,'
    '"reasoning":str}}'
)


@dataclass(frozen=True)
class ContextWindow:
    """m utterances before a gap and n after it."""

    prev: tuple[Utterance, ...]
    next: tuple[Utterance, ...]
    dialogue_id: str
    gap: int
    at_boundary: bool | None = None

    def __post_init__(self):
        if not self.prev or not self.next:
            raise ValueError("context window needs utterances on both sides")
        if self.gap < 1:
            raise ValueError(f"gap index must be >= 1, got {self.gap}")

    @property
    def utterances(self) -> tuple[Utterance, ...]:
        return self.prev + self.next


@dataclass(frozen=True)
class AnalysisDoc:
    """Structured grounding for one window."""

    themes: tuple[str, ...]
    markers: tuple[str, ...]
    speaker_roles: tuple[tuple[str, str], ...]
    domain_terms: tuple[str, ...]
    raw: str


@dataclass(frozen=True)
class SampleSide:
    utterances: tuple[str, ...]
    label: int
    confidence: float
    reasoning: str

    def __post_init__(self):
        if len(self.utterances) != SAMPLE_SIZE:
            raise ValueError(
                f"sample needs exactly {SAMPLE_SIZE} utterances, "
                f"got {len(self.utterances)}"
            )
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if not self.reasoning:
            raise ValueError("reasoning must be nonempty")


@dataclass(frozen=True)
class Provenance:
    dialogue_id: str
    gap: int


@dataclass(frozen=True)
class SamplePair:
    positive: SampleSide
    negative: SampleSide
    provenance: Provenance

    def __post_init__(self):
        if self.positive.label != 1 or self.negative.label != 0:
            raise ValueError("pair sides carry wrong labels")

    def to_json_obj(self) -> dict:
        def side(s: SampleSide) -> dict:
            return {
                "utterances": list(s.utterances),
                "label": s.label,
                "confidence": s.confidence,
                "reasoning": s.reasoning,
            }

        return {
            "positive": side(self.positive),
            "negative": side(self.negative),
            "provenance": {
                "dialogue_id": self.provenance.dialogue_id,
                "gap": self.provenance.gap,
            },
        }


def _eligible_gaps(n_utts: int, m: int, n: int) -> list[int]:
    # Gap g has g utterances before and n_utts - g after it.
    return [g for g in range(1, n_utts) if g >= m and n_utts - g >= n]


def _window_at(dialogue: Dialogue, gap: int, m: int, n: int, at_boundary):
    return ContextWindow(
        prev=dialogue.utterances[gap - m : gap],
        next=dialogue.utterances[gap : gap + n],
        dialogue_id=dialogue.id,
        gap=gap,
        at_boundary=at_boundary,
    )


def extract_windows(
    dialogue: Dialogue,
    gold: Segmentation | None = None,
    m: int = 3,
    n: int = 3,
) -> list[ContextWindow]:
    """Windows around eligible gaps (full m/n context on both sides).

    Unlabeled dialogues yield one window per eligible gap. With gold
    labels, windows are drawn at eligible gold boundaries plus one
    mid-segment gap per segment (the lower median of that segment's
    eligible interior gaps), grounding positives and negatives
    respectively. A dialogue shorter than m+n yields no windows.
    """
    if m < 1 or n < 1:
        raise ValueError("window sides m and n must be >= 1")
    eligible = _eligible_gaps(len(dialogue), m, n)
    if not eligible:
        return []
    if gold is None:
        return [_window_at(dialogue, g, m, n, None) for g in eligible]

    eligible_set = set(eligible)
    boundary_gaps = [g for g in gold.boundaries if g in eligible_set]
    mid_gaps = []
    for start, end in gold.segment_ranges():
        interior = [g for g in range(start + 1, end + 1) if g in eligible_set]
        if interior:
            mid_gaps.append(interior[(len(interior) - 1) // 2])
    chosen = sorted(set(boundary_gaps) | set(mid_gaps))
    return [
        _window_at(dialogue, g, m, n, g in gold.boundaries) for g in chosen
    ]


def _render_window(window: ContextWindow) -> list[str]:
    lines = [f"WINDOW (dialogue {window.dialogue_id}, gap {window.gap}):"]
    for slot, utt in enumerate(window.utterances, start=1):
        who = f"[{utt.speaker}] " if utt.speaker else ""
        marker = " <- candidate break after this line" if slot == len(window.prev) else ""
        lines.append(f"{slot}: {who}{utt.text}{marker}")
    return lines


def build_analysis_prompt(window: ContextWindow) -> str:
    lines = [
        "You analyze a short stretch of dialogue around a candidate topic",
        "break. Report, as JSON only:",
        '- "themes": one short topical phrase per numbered utterance, in order.',
        '- "markers": lexical and pragmatic markers present (discourse cues,',
        "  transitions, acknowledgements).",
        '- "speaker_roles": a map from each speaker to their conversational role.',
        '- "domain_terms": domain-specific terminologies that appear.',
        "",
        "Schema:",
        ANALYSIS_SCHEMA,
        "",
    ]
    lines.extend(_render_window(window))
    lines.append("")
    lines.append("JSON only.")
    return "\n".join(lines)


def parse_analysis_response(text: str, window: ContextWindow) -> AnalysisDoc:
    obj, source = extract_first_json_with_source(text)
    if not isinstance(obj, dict):
        raise ResponseParseError("analysis reply is not a JSON object")
    themes = obj.get("themes")
    expected = len(window.utterances)
    if (
        not isinstance(themes, list)
        or len(themes) != expected
        or not all(isinstance(t, str) for t in themes)
    ):
        raise ResponseValidationError(
            f'"themes" must list one string per window utterance ({expected})'
        )

    def str_list(key):
        value = obj.get(key, [])
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ResponseValidationError(f'"{key}" must be a list of strings')
        return tuple(value)

    roles = obj.get("speaker_roles", {})
    if not isinstance(roles, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in roles.items()
    ):
        raise ResponseValidationError('"speaker_roles" must map strings to strings')
    return AnalysisDoc(
        themes=tuple(themes),
        markers=str_list("markers"),
        speaker_roles=tuple(roles.items()),
        domain_terms=str_list("domain_terms"),
        raw=source,
    )


def analyze_context(window: ContextWindow, client: LlmClient) -> AnalysisDoc:
    """Ground a window; a malformed reply gets one schema-repair retry."""
    from .llm import complete_json

    prompt = build_analysis_prompt(window)
    return complete_json(
        client, prompt, lambda text: parse_analysis_response(text, window)
    )


def build_synthesis_prompt(window: ContextWindow, analysis: AnalysisDoc) -> str:
    lines = [
        "Using the dialogue window and its analysis below, write two new",
        f"{SAMPLE_SIZE}-utterance dialogues in the same register, preserving the",
        "speaker patterns described in the analysis.",
        "",
        "First dialogue (a clear topic change):",
        "- Utterances 1-3 maintain thematic continuity with one topic.",
        f"- Utterance {PIVOT_POSITION} is the pivot: the topic visibly changes,",
        '  opened by a shift marker (a transitional phrase such as "By the',
        '  way" or "Speaking of").',
        "- Utterances 5-7 cohere on the new topic.",
        "",
        "Second dialogue (no topic change):",
        "- All 7 utterances keep strong thematic and pragmatic continuity on",
        "  a single topic; utterance 4 elaborates rather than shifts.",
        "",
        "For each dialogue give a confidence in [0, 1] that it is a clean,",
        "unambiguous example of its kind, and the reasoning behind the",
        "construction.",
        "",
        "Respond with JSON only:",
        SYNTHESIS_SCHEMA,
        "",
    ]
    lines.extend(_render_window(window))
    lines.append("")
    lines.append("Analysis:")
    lines.append(analysis.raw)
    lines.append("")
    lines.append("JSON only.")
    return "\n".join(lines)


def validate_sample(candidate, expected_label: int) -> list[str]:
    """Schema checks for one drafted sample side; empty list means ok."""
    violations = []
    if not isinstance(candidate, dict):
        return ["draft is not a JSON object"]
    utts = candidate.get("utterances")
    if (
        not isinstance(utts, list)
        or len(utts) != SAMPLE_SIZE
        or not all(isinstance(u, str) for u in utts)
    ):
        violations.append(f"utterance count: need exactly {SAMPLE_SIZE} strings")
    elif not all(u.strip() for u in utts):
        violations.append("utterances must be nonempty")
    confidence = candidate.get("confidence")
    if (
        not isinstance(confidence, (int, float))
        or isinstance(confidence, bool)
        or not 0.0 <= float(confidence) <= 1.0
    ):
        violations.append("confidence range: need a number in [0, 1]")
    reasoning = candidate.get("reasoning")
    if not isinstance(reasoning, str) or not reasoning.strip():
        violations.append("reasoning must be a nonempty string")
    if expected_label == 1 and candidate.get("pivot_index") != PIVOT_POSITION:
        violations.append(
            f"pivot index: positive sample must declare pivot_index {PIVOT_POSITION}"
        )
    return violations


def _parse_pair(text: str, window: ContextWindow) -> SamplePair:
    obj, _ = extract_first_json_with_source(text)
    if not isinstance(obj, dict):
        raise ResponseParseError("synthesis reply is not a JSON object")
    violations = []
    for key, label in (("positive", 1), ("negative", 0)):
        branch = obj.get(key)
        if branch is None:
            violations.append(f'missing "{key}" branch')
            continue
        violations.extend(f"{key}: {v}" for v in validate_sample(branch, label))
    if violations:
        raise SampleRejectedError(
            "sample draft rejected: " + "; ".join(violations),
            violations=violations,
            draft=obj,
        )

    def side(key, label):
        branch = obj[key]
        return SampleSide(
            utterances=tuple(branch["utterances"]),
            label=label,
            confidence=float(branch["confidence"]),
            reasoning=branch["reasoning"],
        )

    return SamplePair(
        positive=side("positive", 1),
        negative=side("negative", 0),
        provenance=Provenance(dialogue_id=window.dialogue_id, gap=window.gap),
    )


def synthesize_samples(
    window: ContextWindow, analysis: AnalysisDoc, client: LlmClient
) -> SamplePair:
    """Dual-mode generation with one regeneration retry.

    The retry prompt lists the first draft's violations; a second bad
    draft raises SampleRejectedError carrying that draft for audit.
    """
    prompt = build_synthesis_prompt(window, analysis)
    text = client.complete_text(prompt)
    try:
        return _parse_pair(text, window)
    except (ResponseParseError, SampleRejectedError) as first:
        feedback = (
            getattr(first, "violations", None) or [str(first)]
        )
        retry_prompt = (
            prompt
            + "\n\nYour previous draft was rejected: "
            + "; ".join(feedback)
            + "\nRegenerate both dialogues, fixing every violation. JSON only."
        )
        text = client.complete_text(retry_prompt)
        try:
            return _parse_pair(text, window)
        except ResponseParseError as second:
            raise SampleRejectedError(
                f"sample draft rejected twice: {second}",
                violations=[str(second)],
                draft=text,
            ) from second


def filter_by_confidence(pairs, threshold: float = 0.5) -> list[SamplePair]:
    """Keep a pair only when both sides meet the confidence threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    return [
        p
        for p in pairs
        if p.positive.confidence >= threshold and p.negative.confidence >= threshold
    ]


def write_sample_jsonl(pairs, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair.to_json_obj(), sort_keys=True, ensure_ascii=False))
            fh.write("\n")


def read_sample_jsonl(path: str) -> list[SamplePair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            pairs.append(
                SamplePair(
                    positive=SampleSide(
                        utterances=tuple(obj["positive"]["utterances"]),
                        label=1,
                        confidence=obj["positive"]["confidence"],
                        reasoning=obj["positive"]["reasoning"],
                    ),
                    negative=SampleSide(
                        utterances=tuple(obj["negative"]["utterances"]),
                        label=0,
                        confidence=obj["negative"]["confidence"],
                        reasoning=obj["negative"]["reasoning"],
                    ),
                    provenance=Provenance(
                        dialogue_id=obj["provenance"]["dialogue_id"],
                        gap=obj["provenance"]["gap"],
                    ),
                )
            )
    return pairs
