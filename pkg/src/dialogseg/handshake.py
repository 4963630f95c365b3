"""Token-level handshake tagging with pairing repair.

A handshake is the call-up exchange that opens radio contact ("Star
Alpha calling port control"). The tagger asks an LLM for token labels
HS-BEG / HS-END / O with a trust score and reasoning per tagged token,
then repairs the labels into well-formed, within-utterance spans.
"""

import json
from dataclasses import dataclass

from .core import Dialogue
from .errors import ResponseParseError, ResponseValidationError
from .jsontools import extract_first_json
from .llm import LlmClient, complete_json

HS_BEG = "HS-BEG"
HS_END = "HS-END"
OUTSIDE = "O"
LABELS = (HS_BEG, HS_END, OUTSIDE)

RESPONSE_SCHEMA = (
    '{"tags":[{"u":int,"t":int,"label":"HS-BEG"|"HS-END"|"O",'
    '"trust":float,"reasoning":str}]}'
)


@dataclass(frozen=True)
class TokenPrediction:
    """Label, trust, and reasoning for one token of one utterance."""

    utterance: int
    token: int
    label: str
    trust: float
    reasoning: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        if not 0.0 <= self.trust <= 1.0:
            raise ValueError(f"trust must be in [0, 1], got {self.trust}")
        if self.label != OUTSIDE and not self.reasoning:
            raise ValueError(f"label {self.label} requires nonempty reasoning")


@dataclass(frozen=True)
class HandshakeSpan:
    """An inclusive token range within a single utterance."""

    utterance: int
    start: int
    end: int
    trust: float
    reasoning: str

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"span start {self.start} after end {self.end}")


@dataclass(frozen=True)
class HsExample:
    """A worked few-shot example: a small dialogue plus its correct tags."""

    dialogue: Dialogue
    tags: tuple[dict, ...]


def _default_examples() -> tuple[HsExample, ...]:
    first = Dialogue.from_texts(
        "hs-demo-1",
        ["Star Alpha calling port control, over.", "Star Alpha, port control, go ahead."],
        speakers=["Star Alpha", "Port Control"],
    )
    second = Dialogue.from_texts(
        "hs-demo-2",
        ["Delta Echo, this is Bravo Hotel.", "The berth is clear for arrival."],
        speakers=["Bravo Hotel", "Delta Echo"],
    )
    return (
        HsExample(
            dialogue=first,
            tags=(
                {
                    "u": 0,
                    "t": 0,
                    "label": HS_BEG,
                    "trust": 0.95,
                    "reasoning": "opens the call-up naming the calling station",
                },
                {
                    "u": 0,
                    "t": 4,
                    "label": HS_END,
                    "trust": 0.9,
                    "reasoning": "completes the called-station address",
                },
                {
                    "u": 1,
                    "t": 0,
                    "label": HS_BEG,
                    "trust": 0.85,
                    "reasoning": "acknowledgement echoes the caller's name",
                },
                {
                    "u": 1,
                    "t": 3,
                    "label": HS_END,
                    "trust": 0.85,
                    "reasoning": "station identification ends here",
                },
            ),
        ),
        HsExample(
            dialogue=second,
            tags=(
                {
                    "u": 0,
                    "t": 0,
                    "label": HS_BEG,
                    "trust": 0.9,
                    "reasoning": "addresses the called station by name",
                },
                {
                    "u": 0,
                    "t": 5,
                    "label": HS_END,
                    "trust": 0.9,
                    "reasoning": "self-identification closes the call-up",
                },
            ),
        ),
    )


DEFAULT_FEW_SHOT = _default_examples()


def _render_utterances(dialogue: Dialogue) -> list[str]:
    lines = []
    for utt in dialogue.utterances:
        who = f" ({utt.speaker})" if utt.speaker else ""
        lines.append(f"Utterance {utt.index}{who}: {utt.text}")
        numbered = " ".join(f"{i}={tok}" for i, tok in enumerate(utt.tokens))
        lines.append(f"  tokens: {numbered}")
    return lines


def build_hs_prompt(dialogue: Dialogue, few_shot=DEFAULT_FEW_SHOT) -> str:
    """Prompt with label definitions, worked examples, and the target."""
    lines = [
        "You tag handshake statements in radio dialogue transcripts at the",
        "token level. A handshake is the call-up that opens contact between",
        "two stations, such as one vessel calling another or calling shore",
        "control.",
        "",
        "Labels:",
        f"- {HS_BEG}: first token of a handshake statement.",
        f"- {HS_END}: last token of the same handshake statement.",
        f"- {OUTSIDE}: any other token (untagged tokens count as {OUTSIDE}).",
        f"Every {HS_BEG} must be paired with an {HS_END} later in the same",
        "utterance; handshake statements never span utterances.",
        "",
        "For every tagged token report:",
        '- "label": the label above.',
        '- "trust": your confidence in the label, between 0 and 1.',
        '- "reasoning": the evidence for the label, in a short phrase.',
        "",
        "Respond with JSON only, exactly in this shape:",
        RESPONSE_SCHEMA,
        "",
    ]
    for i, example in enumerate(few_shot, start=1):
        lines.append(f"EXAMPLE {i}:")
        lines.extend(_render_utterances(example.dialogue))
        lines.append("Correct answer:")
        lines.append(json.dumps({"tags": list(example.tags)}, ensure_ascii=False))
        lines.append("")
    lines.append("TARGET:")
    lines.extend(_render_utterances(dialogue))
    lines.append("")
    lines.append("Tag the dialogue above. JSON only.")
    return "\n".join(lines)


def parse_hs_response(text: str, dialogue: Dialogue) -> list[TokenPrediction]:
    """Parse model tags into one prediction per token of the dialogue.

    Untagged tokens default to O with trust 1.0 and empty reasoning.
    Duplicate (u, t) entries keep the last one. All invalid entries are
    reported together in one validation error.
    """
    obj = extract_first_json(text)
    if not isinstance(obj, dict) or not isinstance(obj.get("tags"), list):
        raise ResponseParseError('reply JSON has no "tags" list')

    shape = {utt.index: len(utt.tokens) for utt in dialogue.utterances}
    tagged: dict[tuple[int, int], TokenPrediction] = {}
    problems = []
    for pos, entry in enumerate(obj["tags"]):
        if not isinstance(entry, dict):
            problems.append(f"tags[{pos}]: not an object")
            continue
        u, t = entry.get("u"), entry.get("t")
        label = entry.get("label")
        trust = entry.get("trust")
        reasoning = entry.get("reasoning", "")
        if not isinstance(u, int) or u not in shape:
            problems.append(f"tags[{pos}]: utterance index {u!r} out of range")
            continue
        if not isinstance(t, int) or not 0 <= t < shape[u]:
            problems.append(
                f"tags[{pos}]: token index {t!r} out of range for utterance {u}"
            )
            continue
        if label not in LABELS:
            problems.append(f"tags[{pos}]: unknown label {label!r}")
            continue
        if not isinstance(trust, (int, float)) or isinstance(trust, bool) or not (
            0.0 <= float(trust) <= 1.0
        ):
            problems.append(f"tags[{pos}]: trust {trust!r} outside [0, 1]")
            continue
        if not isinstance(reasoning, str):
            problems.append(f"tags[{pos}]: reasoning must be a string")
            continue
        if label != OUTSIDE and not reasoning:
            problems.append(f"tags[{pos}]: label {label} without reasoning")
            continue
        tagged[(u, t)] = TokenPrediction(
            utterance=u, token=t, label=label, trust=float(trust), reasoning=reasoning
        )
    if problems:
        raise ResponseValidationError(
            f"{len(problems)} invalid tag entries: " + "; ".join(problems)
        )

    out = []
    for utt in dialogue.utterances:
        for t in range(len(utt.tokens)):
            pred = tagged.get((utt.index, t))
            if pred is None:
                pred = TokenPrediction(
                    utterance=utt.index, token=t, label=OUTSIDE, trust=1.0, reasoning=""
                )
            out.append(pred)
    return out


_REPAIR_REASONING = "span closed at utterance end (pairing repair)"


def enforce_pairing(
    predictions: list[TokenPrediction],
) -> tuple[list[TokenPrediction], list[HandshakeSpan]]:
    """Repair labels into well-formed spans; total and idempotent.

    Per utterance, scanning left to right: HS-BEG opens a span unless one
    is already open (then it demotes to O); HS-END closes the open span
    (a dangling END demotes to O); a span still open at the end of the
    utterance closes at its last token. A single-token span keeps only
    the HS-BEG label.
    """
    by_utt: dict[int, list[TokenPrediction]] = {}
    for pred in predictions:
        by_utt.setdefault(pred.utterance, []).append(pred)

    repaired: list[TokenPrediction] = []
    spans: list[HandshakeSpan] = []
    for u in sorted(by_utt):
        preds = sorted(by_utt[u], key=lambda p: p.token)
        utt_spans: list[tuple[int, int]] = []
        open_at = None
        for pred in preds:
            if pred.label == HS_BEG and open_at is None:
                open_at = pred.token
            elif pred.label == HS_END and open_at is not None:
                utt_spans.append((open_at, pred.token))
                open_at = None
        if open_at is not None:
            utt_spans.append((open_at, preds[-1].token))

        starts = {s for s, _ in utt_spans}
        ends = {e for s, e in utt_spans if e > s}
        fixed: dict[int, TokenPrediction] = {}
        for pred in preds:
            if pred.token in starts:
                label = HS_BEG
            elif pred.token in ends:
                label = HS_END
            else:
                label = OUTSIDE
            reasoning = pred.reasoning
            if label != OUTSIDE and not reasoning:
                reasoning = _REPAIR_REASONING
            if label == pred.label and reasoning == pred.reasoning:
                fixed[pred.token] = pred
            else:
                fixed[pred.token] = TokenPrediction(
                    utterance=pred.utterance,
                    token=pred.token,
                    label=label,
                    trust=pred.trust,
                    reasoning=reasoning,
                )
        repaired.extend(fixed[p.token] for p in preds)
        # Span trust and reasoning come from the repaired tokens so that
        # repairing repaired output reproduces identical spans.
        for s, e in utt_spans:
            members = [fixed[t] for t in range(s, e + 1) if t in fixed]
            reasons = [p.reasoning for p in members if p.reasoning]
            spans.append(
                HandshakeSpan(
                    utterance=u,
                    start=s,
                    end=e,
                    trust=min(p.trust for p in members),
                    reasoning="; ".join(reasons),
                )
            )
    return repaired, spans


def tag_handshakes(
    dialogue: Dialogue, client: LlmClient, few_shot=DEFAULT_FEW_SHOT
) -> list[HandshakeSpan]:
    """Full tagging pass: prompt, parse (with one repair retry), pair."""
    prompt = build_hs_prompt(dialogue, few_shot)
    predictions = complete_json(
        client, prompt, lambda text: parse_hs_response(text, dialogue)
    )
    _, spans = enforce_pairing(predictions)
    return spans


def spans_to_boundary_hints(spans, dialogue: Dialogue) -> set[int]:
    """Gap indices of utterances that open a handshake (utterance 0 excluded)."""
    n = len(dialogue)
    return {s.utterance for s in spans if 1 <= s.utterance <= n - 1}


def span_weights(dialogue: Dialogue, spans, boost: float = 2.0) -> list[float]:
    """Per-utterance similarity weights; handshake utterances get ``boost``."""
    flagged = {s.utterance for s in spans}
    return [boost if u.index in flagged else 1.0 for u in dialogue.utterances]
