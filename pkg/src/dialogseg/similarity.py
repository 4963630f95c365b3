"""Utterance embeddings, dialogue similarity, and exemplar selection.

Dialogue-to-exemplar similarity is the mean pairwise cosine over all
utterance pairs; the weighted variant lets callers boost individual
query utterances (for example those inside a handshake span). Exemplar
selection ranks a store by similarity, descending, with store order as
the stable tie-break.
"""

import hashlib
import json
import logging
import math
import os
import tempfile
import threading
from collections import Counter
from dataclasses import dataclass, field

from .core import Corpus, Dialogue, Segmentation, tokenize
from .errors import ConfigError, ProviderError

logger = logging.getLogger(__name__)

DEFAULT_DIM = 256
MIN_DIM = 16


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise ValueError("embedding vector must not be empty")
        for v in self.values:
            if not math.isfinite(v):
                raise ValueError(f"embedding contains non-finite value {v!r}")

    @property
    def dim(self) -> int:
        return len(self.values)

    def norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.values))


def cosine(u: EmbeddingVector, v: EmbeddingVector) -> float:
    """Cosine similarity; zero vectors score 0.0 with a warning."""
    if u.dim != v.dim:
        raise ValueError(f"dimension mismatch: {u.dim} vs {v.dim}")
    nu, nv = u.norm(), v.norm()
    if nu == 0.0 or nv == 0.0:
        logger.warning("cosine against a zero vector; returning 0.0")
        return 0.0
    dot = sum(a * b for a, b in zip(u.values, v.values))
    return max(-1.0, min(1.0, dot / (nu * nv)))


def _token_bucket(token: str, dim: int) -> int:
    # hashlib, not hash(): bucket must be stable across runs and platforms.
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dim


def hashed_tfidf_embed(
    tokens,
    idf: dict[str, float],
    dim: int = DEFAULT_DIM,
    default_idf: float = 1.0,
) -> EmbeddingVector:
    """Deterministic offline embedding: tf·idf accumulated into hash buckets.

    The result is L2-normalized; an empty token list yields a zero vector.
    """
    if dim < MIN_DIM:
        raise ValueError(f"dim must be >= {MIN_DIM}, got {dim}")
    values = [0.0] * dim
    for token, tf in Counter(tokens).items():
        values[_token_bucket(token, dim)] += tf * idf.get(token, default_idf)
    norm = math.sqrt(sum(v * v for v in values))
    if norm > 0.0:
        values = [v / norm for v in values]
    return EmbeddingVector(values=tuple(values))


class HashedTfidfProvider:
    """Offline deterministic provider; idf comes from a fitted document set."""

    def __init__(self, idf: dict[str, float], dim: int = DEFAULT_DIM):
        if dim < MIN_DIM:
            raise ValueError(f"dim must be >= {MIN_DIM}, got {dim}")
        self.idf = dict(idf)
        self.dim = dim
        self.name = f"hashed-tfidf-{dim}"

    @classmethod
    def fit(cls, documents, dim: int = DEFAULT_DIM) -> "HashedTfidfProvider":
        """Fit idf over an iterable of token sequences (one per document)."""
        df: Counter = Counter()
        n_docs = 0
        for doc in documents:
            n_docs += 1
            df.update(set(doc))
        idf = {
            tok: math.log((1 + n_docs) / (1 + count)) + 1.0
            for tok, count in df.items()
        }
        return cls(idf=idf, dim=dim)

    @classmethod
    def fit_corpus(cls, *corpora: Corpus, dim: int = DEFAULT_DIM) -> "HashedTfidfProvider":
        docs = [
            utt.tokens
            for corpus in corpora
            for entry in corpus.entries
            for utt in entry.dialogue.utterances
        ]
        return cls.fit(docs, dim=dim)

    def embed(self, text: str) -> EmbeddingVector:
        return hashed_tfidf_embed(tokenize(text), self.idf, self.dim)


class HttpEmbeddingProvider:
    """OpenAI-compatible embeddings endpoint client."""

    def __init__(
        self,
        base_url: str,
        model: str,
        dim: int,
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 60.0,
        session=None,
    ):
        if session is None:
            import requests

            session = requests.Session()
        self.base_url = base_url
        self.model = model
        self.dim = dim
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.session = session
        self.name = f"http-{model}"

    def _url(self) -> str:
        base = self.base_url.rstrip("/")
        if base.endswith("/embeddings"):
            return base
        if base.endswith("/v1"):
            return base + "/embeddings"
        return base + "/v1/embeddings"

    def embed(self, text: str) -> EmbeddingVector:
        headers = {"Content-Type": "application/json"}
        key = os.getenv(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self.session.post(
                self._url(),
                json={"model": self.model, "input": [text]},
                headers=headers,
                timeout=self.timeout,
            )
        except Exception as exc:
            raise ProviderError(f"embedding request failed: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderError(
                f"embedding endpoint returned HTTP {resp.status_code}"
            )
        try:
            values = resp.json()["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ProviderError(f"malformed embedding response: {exc}") from exc
        vec = EmbeddingVector(values=tuple(values))
        if vec.dim != self.dim:
            raise ProviderError(
                f"provider returned dim {vec.dim}, configured dim {self.dim}"
            )
        return vec


class CachedProvider:
    """Memoizes a provider keyed by (provider name, text digest).

    When ``cache_dir`` is set, vectors persist as one JSON file per text;
    writes go through a temp file plus rename so concurrent readers never
    see a partial file (single writer, many readers).
    """

    def __init__(self, provider, cache_dir: str | None = None):
        self.provider = provider
        self.cache_dir = cache_dir
        self.name = provider.name
        self.dim = provider.dim
        self._memory: dict[str, EmbeddingVector] = {}
        self._lock = threading.Lock()

    def _key(self, text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def _path(self, key: str) -> str:
        safe_name = "".join(c if c.isalnum() or c in "-_." else "_" for c in self.name)
        return os.path.join(self.cache_dir, safe_name, key + ".json")

    def embed(self, text: str) -> EmbeddingVector:
        key = self._key(text)
        with self._lock:
            if key in self._memory:
                return self._memory[key]
        if self.cache_dir is not None:
            path = self._path(key)
            if os.path.exists(path):
                with open(path, encoding="utf-8") as fh:
                    vec = EmbeddingVector(values=tuple(json.load(fh)["values"]))
                with self._lock:
                    self._memory[key] = vec
                return vec
        vec = self.provider.embed(text)
        with self._lock:
            self._memory[key] = vec
        if self.cache_dir is not None:
            path = self._path(key)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump({"values": list(vec.values)}, fh)
            os.replace(tmp, path)
        return vec


@dataclass(frozen=True)
class Exemplar:
    """A gold-segmented dialogue with cached per-utterance embeddings."""

    dialogue: Dialogue
    gold: Segmentation
    vectors: tuple[EmbeddingVector, ...]

    def __post_init__(self):
        if len(self.vectors) != len(self.dialogue):
            raise ValueError(
                f"exemplar {self.dialogue.id!r}: {len(self.vectors)} vectors "
                f"for {len(self.dialogue)} utterances"
            )


@dataclass
class ExemplarStore:
    """Ordered exemplar collection; order is the ranking tie-break."""

    exemplars: list[Exemplar] = field(default_factory=list)
    provider_name: str = ""
    dim: int = 0

    def __len__(self) -> int:
        return len(self.exemplars)

    @classmethod
    def from_corpus(cls, corpus: Corpus, provider) -> "ExemplarStore":
        """Embed every utterance of a gold-labeled corpus."""
        exemplars = []
        for entry in corpus.entries:
            if entry.gold is None:
                raise ConfigError(
                    f"store dialogue {entry.dialogue.id!r} has no gold "
                    "segmentation; exemplars must be labeled"
                )
            vectors = tuple(
                provider.embed(utt.text) for utt in entry.dialogue.utterances
            )
            for vec in vectors:
                if vec.dim != provider.dim:
                    raise ProviderError(
                        f"provider {provider.name!r} returned dim {vec.dim}, "
                        f"declared {provider.dim}"
                    )
            exemplars.append(
                Exemplar(dialogue=entry.dialogue, gold=entry.gold, vectors=vectors)
            )
        return cls(exemplars=exemplars, provider_name=provider.name, dim=provider.dim)


def _mean_cosines_per_query(query_vecs, exemplar_vecs) -> list[float]:
    """Row means: for each query vector, mean cosine over exemplar vectors."""
    return [
        sum(cosine(q, e) for e in exemplar_vecs) / len(exemplar_vecs)
        for q in query_vecs
    ]


def dialogue_similarity_mean(query: Dialogue, exemplar: Dialogue, provider) -> float:
    """Mean cosine over all query/exemplar utterance pairs."""
    qvecs = [provider.embed(u.text) for u in query.utterances]
    evecs = [provider.embed(u.text) for u in exemplar.utterances]
    rows = _mean_cosines_per_query(qvecs, evecs)
    return sum(rows) / len(rows)


def _check_weights(weights, n: int) -> list[float]:
    weights = [float(w) for w in weights]
    if len(weights) != n:
        raise ValueError(f"got {len(weights)} weights for {n} query utterances")
    if any(w < 0 for w in weights):
        raise ValueError("weights must be nonnegative")
    if not any(w > 0 for w in weights):
        raise ValueError("at least one weight must be positive")
    return weights


def dialogue_similarity_weighted(
    query: Dialogue, exemplar: Dialogue, provider, weights
) -> float:
    """Per-query-utterance weighted mean of row cosine means."""
    weights = _check_weights(weights, len(query))
    qvecs = [provider.embed(u.text) for u in query.utterances]
    evecs = [provider.embed(u.text) for u in exemplar.utterances]
    rows = _mean_cosines_per_query(qvecs, evecs)
    return sum(w * r for w, r in zip(weights, rows)) / sum(weights)


@dataclass(frozen=True)
class RankedExemplar:
    exemplar: Exemplar
    store_index: int
    score: float | None


def select_exemplars(
    query: Dialogue,
    store: ExemplarStore,
    m: int,
    provider,
    weights=None,
) -> list[RankedExemplar]:
    """Top-m store exemplars by similarity to the query, descending.

    Ties keep store order. An empty store yields an empty list.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if not store.exemplars:
        return []
    if weights is not None:
        weights = _check_weights(weights, len(query))

    qvecs = [provider.embed(u.text) for u in query.utterances]
    scored = []
    for idx, exemplar in enumerate(store.exemplars):
        rows = _mean_cosines_per_query(qvecs, exemplar.vectors)
        if weights is None:
            score = sum(rows) / len(rows)
        else:
            score = sum(w * r for w, r in zip(weights, rows)) / sum(weights)
        scored.append(RankedExemplar(exemplar=exemplar, store_index=idx, score=score))
    scored.sort(key=lambda r: (-r.score, r.store_index))
    return scored[:m]
