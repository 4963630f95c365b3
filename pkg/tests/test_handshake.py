import itertools
import json
import random

import pytest

from dialogseg.core import Dialogue, tokenize
from dialogseg.errors import ResponseParseError, ResponseValidationError
from dialogseg.handshake import (
    DEFAULT_FEW_SHOT,
    HS_BEG,
    HS_END,
    OUTSIDE,
    HandshakeSpan,
    TokenPrediction,
    build_hs_prompt,
    enforce_pairing,
    parse_hs_response,
    span_weights,
    spans_to_boundary_hints,
    tag_handshakes,
)
from dialogseg.llm import LlmClient, ScriptedBackend
from oracles import pair_labels_oracle


def dlg(*texts):
    return Dialogue.from_texts("d", list(texts))


def grid(labels_per_utt):
    """Build a full prediction grid from label lists, one per utterance."""
    preds = []
    for u, labels in enumerate(labels_per_utt):
        for t, label in enumerate(labels):
            preds.append(
                TokenPrediction(
                    utterance=u,
                    token=t,
                    label=label,
                    trust=0.8 if label != OUTSIDE else 1.0,
                    reasoning="tagged" if label != OUTSIDE else "",
                )
            )
    return preds


def test_token_prediction_invariants():
    with pytest.raises(ValueError):
        TokenPrediction(0, 0, "HS-MID", 0.5, "x")
    with pytest.raises(ValueError):
        TokenPrediction(0, 0, HS_BEG, 1.3, "x")
    with pytest.raises(ValueError):
        TokenPrediction(0, 0, HS_BEG, 0.5, "")
    TokenPrediction(0, 0, OUTSIDE, 0.5, "")


def test_span_invariants():
    with pytest.raises(ValueError):
        HandshakeSpan(0, 3, 1, 0.5, "r")


def test_prompt_structure():
    prompt = build_hs_prompt(dlg("Star Alpha calling port control."), DEFAULT_FEW_SHOT[:1])
    assert prompt.count("TARGET") == 1
    assert "calling port control" in prompt
    assert '"label"' in prompt and '"trust"' in prompt and '"reasoning"' in prompt
    assert HS_BEG in prompt and HS_END in prompt


def test_prompt_token_numbering_matches_tokenizer():
    text = "Motor vessel Skagen, this is pilot station!"
    prompt = build_hs_prompt(dlg(text))
    for i, tok in enumerate(tokenize(text)):
        assert f"{i}={tok}" in prompt


def test_parse_empty_tags_is_all_outside():
    d = dlg("alpha bravo charlie", "delta echo")
    preds = parse_hs_response('{"tags": []}', d)
    assert len(preds) == 5
    assert all(p.label == OUTSIDE and p.trust == 1.0 for p in preds)


def test_parse_applies_entries_and_defaults():
    d = dlg("star alpha calling port control")
    reply = json.dumps(
        {
            "tags": [
                {"u": 0, "t": 0, "label": HS_BEG, "trust": 0.9, "reasoning": "opens"},
                {"u": 0, "t": 4, "label": HS_END, "trust": 0.7, "reasoning": "ends"},
            ]
        }
    )
    preds = parse_hs_response(reply, d)
    non_o = [p for p in preds if p.label != OUTSIDE]
    assert [(p.token, p.label) for p in non_o] == [(0, HS_BEG), (4, HS_END)]
    assert len(preds) == 5


def test_parse_extracts_json_from_prose():
    d = dlg("alpha bravo")
    reply = 'Sure! Here are the tags:\n```json\n{"tags": []}\n```\nDone.'
    assert len(parse_hs_response(reply, d)) == 2


def test_parse_errors():
    d = dlg("alpha bravo")
    with pytest.raises(ResponseParseError):
        parse_hs_response("no json here", d)
    with pytest.raises(ResponseValidationError) as exc:
        parse_hs_response(
            json.dumps(
                {
                    "tags": [
                        {"u": 0, "t": 0, "label": HS_BEG, "trust": 1.3, "reasoning": "r"},
                        {"u": 5, "t": 0, "label": HS_END, "trust": 0.5, "reasoning": "r"},
                    ]
                }
            ),
            d,
        )
    message = str(exc.value)
    assert "tags[0]" in message and "tags[1]" in message


def test_enforce_pairing_examples():
    _, spans = enforce_pairing(grid([[OUTSIDE, OUTSIDE, OUTSIDE]]))
    assert spans == []

    repaired, spans = enforce_pairing(grid([[HS_BEG, OUTSIDE, HS_END]]))
    assert [(s.start, s.end) for s in spans] == [(0, 2)]
    assert [p.label for p in repaired] == [HS_BEG, OUTSIDE, HS_END]

    repaired, spans = enforce_pairing(grid([[HS_END, OUTSIDE, HS_BEG]]))
    assert [(s.start, s.end) for s in spans] == [(2, 2)]
    assert [p.label for p in repaired] == [OUTSIDE, OUTSIDE, HS_BEG]


def test_enforce_pairing_matches_oracle_exhaustively():
    for labels in itertools.product([HS_BEG, HS_END, OUTSIDE], repeat=3):
        repaired, spans = enforce_pairing(grid([list(labels)]))
        oracle_labels, oracle_spans = pair_labels_oracle(list(labels))
        assert [p.label for p in repaired] == oracle_labels
        assert [(s.start, s.end) for s in spans] == oracle_spans


def test_enforce_pairing_span_trust_is_min_and_reasoning_concatenated():
    preds = [
        TokenPrediction(0, 0, HS_BEG, 0.9, "starts"),
        TokenPrediction(0, 1, OUTSIDE, 0.4, ""),
        TokenPrediction(0, 2, HS_END, 0.8, "ends"),
    ]
    _, spans = enforce_pairing(preds)
    assert spans[0].trust == pytest.approx(0.4)
    assert "starts" in spans[0].reasoning and "ends" in spans[0].reasoning


def test_enforce_pairing_fuzzed_totality_and_idempotence():
    rng = random.Random(1234)
    for _ in range(2000):
        n_utts = rng.randint(1, 3)
        labels_per_utt = [
            [rng.choice([HS_BEG, HS_END, OUTSIDE]) for _ in range(rng.randint(1, 8))]
            for _ in range(n_utts)
        ]
        preds = grid(labels_per_utt)
        repaired, spans = enforce_pairing(preds)

        # Spans well-formed, within range, non-overlapping, ordered.
        by_utt = {}
        for s in spans:
            assert 0 <= s.start <= s.end < len(labels_per_utt[s.utterance])
            by_utt.setdefault(s.utterance, []).append(s)
        for utt_spans in by_utt.values():
            for a, b in zip(utt_spans, utt_spans[1:]):
                assert a.end < b.start

        # Re-encoded label counts match the span events per utterance.
        for u, labels in enumerate(labels_per_utt):
            out = [p.label for p in repaired if p.utterance == u]
            utt_spans = by_utt.get(u, [])
            assert out.count(HS_BEG) == len(utt_spans)
            assert out.count(HS_END) == sum(1 for s in utt_spans if s.end > s.start)

        # Idempotence: repairing the repaired grid changes nothing.
        repaired2, spans2 = enforce_pairing(repaired)
        assert repaired2 == repaired
        assert spans2 == spans


def test_boundary_hints_mapping():
    d = Dialogue.from_texts("d", [f"utt {i} tokens here" for i in range(10)])
    assert spans_to_boundary_hints([], d) == set()
    span0 = HandshakeSpan(0, 0, 1, 0.9, "r")
    assert spans_to_boundary_hints([span0], d) == set()
    spans = [HandshakeSpan(3, 0, 1, 0.9, "r"), HandshakeSpan(7, 1, 2, 0.8, "r")]
    assert spans_to_boundary_hints(spans, d) == {3, 7}


def test_span_weights_boost():
    d = dlg("a b", "c d", "e f")
    spans = [HandshakeSpan(1, 0, 1, 0.9, "r")]
    assert span_weights(d, spans) == [1.0, 2.0, 1.0]
    assert span_weights(d, spans, boost=3.5) == [1.0, 3.5, 1.0]


def test_tag_handshakes_retries_once_then_succeeds():
    d = dlg("star alpha calling port control")
    replies = iter(
        [
            "sorry, I cannot do JSON",
            json.dumps(
                {
                    "tags": [
                        {"u": 0, "t": 0, "label": HS_BEG, "trust": 0.9, "reasoning": "r"},
                        {"u": 0, "t": 4, "label": HS_END, "trust": 0.9, "reasoning": "r"},
                    ]
                }
            ),
        ]
    )
    backend = ScriptedBackend(lambda request: next(replies))
    client = LlmClient(backend=backend, model="test-model")
    spans = tag_handshakes(d, client)
    assert [(s.utterance, s.start, s.end) for s in spans] == [(0, 0, 4)]
    assert len(backend.requests) == 2
    assert "JSON" in backend.requests[1].messages[-1].content


def test_tag_handshakes_fails_after_second_bad_reply():
    d = dlg("alpha bravo")
    backend = ScriptedBackend(lambda request: "still not json")
    client = LlmClient(backend=backend, model="test-model")
    with pytest.raises(ResponseParseError):
        tag_handshakes(d, client)
    assert len(backend.requests) == 2
