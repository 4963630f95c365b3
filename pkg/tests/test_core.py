import json
import random

import pytest

from dialogseg.core import (
    Corpus,
    Dialogue,
    Segmentation,
    Utterance,
    labels_from_segmentation,
    parse_corpus,
    segmentation_from_labels,
    to_masses,
    tokenize,
)
from dialogseg.errors import CorpusParseError, CorpusSchemaError


def test_tokenize_strips_edge_punctuation():
    assert tokenize("Star Alpha calling Port Control.") == (
        "star",
        "alpha",
        "calling",
        "port",
        "control",
    )
    assert tokenize("OK, over.") == ("ok", "over")


def test_tokenize_drops_empty_tokens():
    assert tokenize("-- ...  !!") == ()
    assert tokenize("don't stop") == ("don't", "stop")


def test_utterance_tokens_are_derived():
    utt = Utterance(index=0, text="Roger THAT, over.")
    assert utt.tokens == ("roger", "that", "over")


def test_dialogue_requires_contiguous_indices():
    with pytest.raises(ValueError):
        Dialogue(id="bad", utterances=(Utterance(index=1, text="hi"),))
    with pytest.raises(ValueError):
        Dialogue(id="empty", utterances=())


def test_segmentation_validates_gap_range():
    assert Segmentation(n=6, boundaries=(4, 1)).boundaries == (1, 4)
    with pytest.raises(ValueError):
        Segmentation(n=6, boundaries=(0,))
    with pytest.raises(ValueError):
        Segmentation(n=6, boundaries=(6,))
    with pytest.raises(ValueError):
        Segmentation(n=6, boundaries=(2, 2))


def test_segmentation_from_labels_example():
    assert segmentation_from_labels([0, 0, 1, 1, 1, 2]).boundaries == (2, 5)
    assert segmentation_from_labels([7, 7, 7]).boundaries == ()
    with pytest.raises(ValueError):
        segmentation_from_labels([])


def test_labels_roundtrip_with_random_segmentations():
    rng = random.Random(40)
    for _ in range(300):
        n = rng.randint(1, 30)
        bounds = tuple(b for b in range(1, n) if rng.random() < 0.35)
        seg = Segmentation(n=n, boundaries=bounds)
        labels = labels_from_segmentation(seg)
        assert len(labels) == n
        assert segmentation_from_labels(labels) == seg


def test_to_masses_example():
    assert to_masses(Segmentation(n=6, boundaries=(1, 4))) == [1, 3, 2]
    assert to_masses(Segmentation(n=5)) == [5]


NATIVE = {
    "name": "mini",
    "dialogues": [
        {
            "id": "d1",
            "utterances": [
                {"speaker": "A", "text": "Hello there."},
                {"speaker": None, "text": "Hi."},
                {"speaker": "A", "text": "New topic now."},
            ],
            "boundaries": [2],
        },
        {
            "id": "d2",
            "utterances": [{"text": "Only one."}],
        },
    ],
}


def test_parse_native_json():
    corpus = parse_corpus(json.dumps(NATIVE).encode(), "native-json")
    assert corpus.name == "mini"
    assert len(corpus) == 2
    d1, d2 = corpus.entries
    assert d1.gold.boundaries == (2,)
    assert d1.dialogue.utterances[0].speaker == "A"
    assert d2.gold is None


def test_parse_native_json_topics_variant():
    payload = {
        "name": "t",
        "dialogues": [
            {
                "id": "x",
                "utterances": [{"text": "a"}, {"text": "b"}, {"text": "c"}],
                "topics": [0, 0, 1],
            }
        ],
    }
    corpus = parse_corpus(json.dumps(payload).encode(), "native-json")
    assert corpus.entries[0].gold.boundaries == (2,)


def test_parse_native_rejects_both_gold_fields():
    payload = {
        "name": "t",
        "dialogues": [
            {
                "id": "dual",
                "utterances": [{"text": "a"}, {"text": "b"}],
                "topics": [0, 1],
                "boundaries": [1],
            }
        ],
    }
    with pytest.raises(CorpusSchemaError) as exc:
        parse_corpus(json.dumps(payload).encode(), "native-json")
    assert "dual" in str(exc.value)


def test_parse_native_topic_length_mismatch_names_dialogue():
    payload = {
        "name": "t",
        "dialogues": [
            {"id": "short", "utterances": [{"text": "a"}, {"text": "b"}], "topics": [0]}
        ],
    }
    with pytest.raises(CorpusSchemaError) as exc:
        parse_corpus(json.dumps(payload).encode(), "native-json")
    assert "short" in str(exc.value)


def test_parse_malformed_json_reports_byte_offset():
    with pytest.raises(CorpusParseError) as exc:
        parse_corpus(b'{"name": "x", "dialogues": [', "native-json")
    assert exc.value.offset is not None
    assert "offset" in str(exc.value)


def test_parse_dialseg_text_blocks_become_boundaries():
    data = b"hello there\nhow are you\nfine thanks\n\nnew topic\nmore of it\nlast line\n"
    corpus = parse_corpus(data, "dialseg-text")
    assert len(corpus) == 1
    entry = corpus.entries[0]
    assert len(entry.dialogue) == 6
    assert entry.gold.boundaries == (3,)


def test_parse_dialseg_text_empty_input():
    assert len(parse_corpus(b"\n\n", "dialseg-text")) == 0


def test_parse_vhf_json_tolerates_unknown_fields():
    payload = [
        {
            "dialogue_id": 42,
            "channel": 16,
            "turns": [
                {"station": "Star Alpha", "content": "calling port control", "rssi": -70},
                "go ahead",
            ],
            "topics": [0, 0],
            "weather": "fog",
        }
    ]
    corpus = parse_corpus(json.dumps(payload).encode(), "vhf-json")
    entry = corpus.entries[0]
    assert entry.dialogue.id == "42"
    assert entry.dialogue.utterances[0].speaker == "Star Alpha"
    assert entry.dialogue.utterances[1].text == "go ahead"
    assert entry.gold.boundaries == ()


def test_parse_vhf_json_schema_error_names_dialogue():
    payload = {"dialogues": [{"id": "broken", "turns": [{"freq": 156.8}]}]}
    with pytest.raises(CorpusSchemaError) as exc:
        parse_corpus(json.dumps(payload).encode(), "vhf-json")
    assert "broken" in str(exc.value)


def test_parse_corpus_is_deterministic():
    data = json.dumps(NATIVE).encode()
    assert parse_corpus(data, "native-json") == parse_corpus(data, "native-json")


def test_unknown_format_rejected():
    with pytest.raises(CorpusSchemaError):
        parse_corpus(b"{}", "csv")


def test_corpus_helpers():
    corpus = parse_corpus(json.dumps(NATIVE).encode(), "native-json")
    assert [e.dialogue.id for e in corpus.labeled()] == ["d1"]
    assert set(corpus.by_id()) == {"d1", "d2"}
