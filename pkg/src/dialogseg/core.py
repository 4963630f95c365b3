"""Core dialogue types and corpus I/O.

A dialogue is an ordered list of utterances. A segmentation is a set of
boundary gap indices: boundary ``b`` marks a topic break between utterance
``b - 1`` and utterance ``b``, so valid boundaries live in ``[1, n - 1]``
and the empty set means the whole dialogue is a single segment.
"""

import json
import string
from dataclasses import dataclass, field

from .errors import CorpusParseError, CorpusSchemaError

CORPUS_FORMATS = ("native-json", "dialseg-text", "vhf-json")

_STRIP_CHARS = string.punctuation


def tokenize(text: str) -> tuple[str, ...]:
    """Lowercase, split on whitespace, strip edge punctuation per token.

    Tokens that are empty after stripping are dropped.

    >>> tokenize("Star Alpha calling Port Control.")
    ('star', 'alpha', 'calling', 'port', 'control')
    >>> tokenize("OK, over.")
    ('ok', 'over')
    """
    out = []
    for raw in text.lower().split():
        tok = raw.strip(_STRIP_CHARS)
        if tok:
            out.append(tok)
    return tuple(out)


@dataclass(frozen=True)
class Utterance:
    """One turn of a dialogue; ``tokens`` are always derived from ``text``."""

    index: int
    text: str
    speaker: str | None = None
    tokens: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"utterance index must be >= 0, got {self.index}")
        object.__setattr__(self, "tokens", tokenize(self.text))


@dataclass(frozen=True)
class Dialogue:
    """An ordered, immutable sequence of utterances."""

    id: str
    utterances: tuple[Utterance, ...]
    meta: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.utterances:
            raise ValueError(f"dialogue {self.id!r} has no utterances")
        for pos, utt in enumerate(self.utterances):
            if utt.index != pos:
                raise ValueError(
                    f"dialogue {self.id!r}: utterance index {utt.index} at "
                    f"position {pos}; indices must be contiguous from 0"
                )

    def __len__(self) -> int:
        return len(self.utterances)

    @classmethod
    def from_texts(cls, id: str, texts, speakers=None) -> "Dialogue":
        """Build a dialogue from plain utterance strings."""
        if speakers is None:
            speakers = [None] * len(texts)
        utts = tuple(
            Utterance(index=i, text=t, speaker=s)
            for i, (t, s) in enumerate(zip(texts, speakers))
        )
        return cls(id=id, utterances=utts)


@dataclass(frozen=True)
class Segmentation:
    """Topic boundaries for a dialogue of ``n`` utterances.

    ``boundaries`` is a strictly increasing tuple of gap indices in
    ``[1, n - 1]``. Any iterable of unique valid indices is accepted and
    normalized to sorted order.
    """

    n: int
    boundaries: tuple[int, ...] = ()

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"segmentation needs n >= 1, got {self.n}")
        bounds = tuple(sorted(self.boundaries))
        if len(set(bounds)) != len(bounds):
            raise ValueError(f"duplicate boundaries in {bounds}")
        for b in bounds:
            if not isinstance(b, int) or isinstance(b, bool):
                raise ValueError(f"boundary {b!r} is not an int")
            if not 1 <= b <= self.n - 1:
                raise ValueError(
                    f"boundary {b} outside valid gap range [1, {self.n - 1}]"
                )
        object.__setattr__(self, "boundaries", bounds)

    def segment_ranges(self) -> list[tuple[int, int]]:
        """Inclusive (start, end) utterance ranges, one per segment."""
        edges = [0, *self.boundaries, self.n]
        return [(edges[i], edges[i + 1] - 1) for i in range(len(edges) - 1)]


def segmentation_from_labels(labels) -> Segmentation:
    """Build a segmentation from per-utterance topic labels.

    A boundary is placed wherever a label differs from its predecessor.

    >>> segmentation_from_labels([0, 0, 1, 1, 1, 2]).boundaries
    (2, 5)
    """
    labels = list(labels)
    if not labels:
        raise ValueError("label sequence is empty")
    bounds = [i for i in range(1, len(labels)) if labels[i] != labels[i - 1]]
    return Segmentation(n=len(labels), boundaries=tuple(bounds))


def labels_from_segmentation(seg: Segmentation) -> list[int]:
    """Per-utterance segment ordinals; inverse of segmentation_from_labels."""
    labels = []
    for ordinal, (start, end) in enumerate(seg.segment_ranges()):
        labels.extend([ordinal] * (end - start + 1))
    return labels


def to_masses(seg: Segmentation) -> list[int]:
    """Segment lengths in order.

    >>> to_masses(Segmentation(n=6, boundaries=(1, 4)))
    [1, 3, 2]
    """
    return [end - start + 1 for start, end in seg.segment_ranges()]


@dataclass(frozen=True)
class CorpusEntry:
    """A dialogue plus its gold segmentation when the corpus is labeled."""

    dialogue: Dialogue
    gold: Segmentation | None = None

    def __post_init__(self):
        if self.gold is not None and self.gold.n != len(self.dialogue):
            raise ValueError(
                f"dialogue {self.dialogue.id!r}: gold covers {self.gold.n} "
                f"utterances but dialogue has {len(self.dialogue)}"
            )


@dataclass(frozen=True)
class Corpus:
    name: str
    entries: tuple[CorpusEntry, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def labeled(self) -> list[CorpusEntry]:
        return [e for e in self.entries if e.gold is not None]

    def by_id(self) -> dict[str, CorpusEntry]:
        return {e.dialogue.id: e for e in self.entries}


def parse_corpus(data: bytes, fmt: str) -> Corpus:
    """Parse corpus bytes in one of the supported formats.

    Formats:
      * ``native-json``: this package's strict schema.
      * ``dialseg-text``: one dialogue; blank-line-separated blocks of
        utterance lines, with a boundary at each block join.
      * ``vhf-json``: tolerant reader for transcript dumps; unknown
        fields are ignored.
    """
    if fmt == "native-json":
        return _parse_native_json(data)
    if fmt == "dialseg-text":
        return _parse_dialseg_text(data)
    if fmt == "vhf-json":
        return _parse_vhf_json(data)
    raise CorpusSchemaError(
        f"unknown corpus format {fmt!r}; expected one of {CORPUS_FORMATS}"
    )


def _decode_utf8(data: bytes) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusParseError(
            f"corpus is not valid UTF-8 at byte offset {exc.start}",
            offset=exc.start,
        ) from exc


def _load_json(data: bytes):
    text = _decode_utf8(data)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusParseError(
            f"invalid JSON at byte offset {exc.pos}: {exc.msg}", offset=exc.pos
        ) from exc


def _gold_from_fields(did: str, n: int, topics, boundaries) -> Segmentation | None:
    if topics is not None and boundaries is not None:
        raise CorpusSchemaError(
            f"dialogue {did!r}: give either 'topics' or 'boundaries', not both"
        )
    if topics is not None:
        if not isinstance(topics, list) or len(topics) != n:
            raise CorpusSchemaError(
                f"dialogue {did!r}: 'topics' must list one id per utterance "
                f"({n}), got {len(topics) if isinstance(topics, list) else topics!r}"
            )
        return segmentation_from_labels(topics)
    if boundaries is not None:
        try:
            return Segmentation(n=n, boundaries=tuple(boundaries))
        except (TypeError, ValueError) as exc:
            raise CorpusSchemaError(f"dialogue {did!r}: {exc}") from exc
    return None


def _parse_native_json(data: bytes) -> Corpus:
    obj = _load_json(data)
    if not isinstance(obj, dict):
        raise CorpusSchemaError("native-json corpus must be a JSON object")
    name = obj.get("name")
    if not isinstance(name, str):
        raise CorpusSchemaError("corpus 'name' must be a string")
    raw_dialogues = obj.get("dialogues")
    if not isinstance(raw_dialogues, list):
        raise CorpusSchemaError("corpus 'dialogues' must be a list")

    entries = []
    for i, raw in enumerate(raw_dialogues):
        if not isinstance(raw, dict):
            raise CorpusSchemaError(f"dialogue at position {i} is not an object")
        did = raw.get("id")
        if not isinstance(did, str) or not did:
            raise CorpusSchemaError(
                f"dialogue at position {i} needs a nonempty string 'id'"
            )
        raw_utts = raw.get("utterances")
        if not isinstance(raw_utts, list) or not raw_utts:
            raise CorpusSchemaError(f"dialogue {did!r}: 'utterances' must be a nonempty list")
        utts = []
        for j, u in enumerate(raw_utts):
            if not isinstance(u, dict) or not isinstance(u.get("text"), str):
                raise CorpusSchemaError(
                    f"dialogue {did!r}: utterance {j} needs a string 'text'"
                )
            speaker = u.get("speaker")
            if speaker is not None and not isinstance(speaker, str):
                raise CorpusSchemaError(
                    f"dialogue {did!r}: utterance {j} 'speaker' must be string or null"
                )
            utts.append(Utterance(index=j, text=u["text"], speaker=speaker))
        dialogue = Dialogue(id=did, utterances=tuple(utts))
        gold = _gold_from_fields(
            did, len(dialogue), raw.get("topics"), raw.get("boundaries")
        )
        entries.append(CorpusEntry(dialogue=dialogue, gold=gold))
    return Corpus(name=name, entries=tuple(entries))


def _parse_dialseg_text(data: bytes) -> Corpus:
    text = _decode_utf8(data)
    blocks: list[list[str]] = []
    current: list[str] = []
    for line in text.splitlines():
        if line.strip():
            current.append(line.strip())
        elif current:
            blocks.append(current)
            current = []
    if current:
        blocks.append(current)
    if not blocks:
        return Corpus(name="dialseg", entries=())

    texts = [line for block in blocks for line in block]
    bounds = []
    pos = 0
    for block in blocks[:-1]:
        pos += len(block)
        bounds.append(pos)
    dialogue = Dialogue.from_texts("d0000", texts)
    gold = Segmentation(n=len(dialogue), boundaries=tuple(bounds))
    return Corpus(name="dialseg", entries=(CorpusEntry(dialogue, gold),))


_VHF_TEXT_KEYS = ("text", "utterance", "content", "transcript")
_VHF_SPEAKER_KEYS = ("speaker", "role", "station", "from")


def _parse_vhf_json(data: bytes) -> Corpus:
    obj = _load_json(data)
    if isinstance(obj, dict):
        raw_dialogues = obj.get("dialogues", obj.get("data"))
        name = obj.get("name", "vhf")
    else:
        raw_dialogues, name = obj, "vhf"
    if not isinstance(raw_dialogues, list):
        raise CorpusSchemaError(
            "vhf-json corpus must be a list of dialogues or an object "
            "with a 'dialogues' or 'data' list"
        )

    entries = []
    for i, raw in enumerate(raw_dialogues):
        if not isinstance(raw, dict):
            raise CorpusSchemaError(f"vhf dialogue at position {i} is not an object")
        did = None
        for key in ("id", "dialogue_id", "name"):
            if isinstance(raw.get(key), (str, int)):
                did = str(raw[key])
                break
        if did is None:
            did = f"vhf-{i:04d}"
        raw_utts = None
        for key in ("utterances", "turns", "lines"):
            if isinstance(raw.get(key), list):
                raw_utts = raw[key]
                break
        if not raw_utts:
            raise CorpusSchemaError(f"dialogue {did!r}: no utterance list found")
        utts = []
        for j, u in enumerate(raw_utts):
            if isinstance(u, str):
                text, speaker = u, None
            elif isinstance(u, dict):
                text = next(
                    (u[k] for k in _VHF_TEXT_KEYS if isinstance(u.get(k), str)), None
                )
                if text is None:
                    raise CorpusSchemaError(
                        f"dialogue {did!r}: utterance {j} has no text field"
                    )
                speaker = next(
                    (u[k] for k in _VHF_SPEAKER_KEYS if isinstance(u.get(k), str)),
                    None,
                )
            else:
                raise CorpusSchemaError(
                    f"dialogue {did!r}: utterance {j} is neither string nor object"
                )
            utts.append(Utterance(index=j, text=text, speaker=speaker))
        dialogue = Dialogue(id=did, utterances=tuple(utts))
        topics = next(
            (raw[k] for k in ("topics", "topic_ids") if isinstance(raw.get(k), list)),
            None,
        )
        boundaries = next(
            (raw[k] for k in ("boundaries", "segments") if isinstance(raw.get(k), list)),
            None,
        )
        gold = _gold_from_fields(did, len(dialogue), topics, boundaries)
        entries.append(CorpusEntry(dialogue=dialogue, gold=gold))
    return Corpus(name=str(name), entries=tuple(entries))
