"""Command-line entry point.

Wires corpora, embedding providers, and chat backends into the
segmentation pipeline, the evaluation harness, the lexical baseline,
and the sample generator. A YAML config file can carry any option;
explicit flags win over the file. Exit codes: 0 success, 1 usage or
configuration error, 2 data error, 3 upstream (model or provider)
error.
"""

import dataclasses
import hashlib
import importlib
import json
import logging
import os
import re
from dataclasses import dataclass

import click
import yaml

from .core import Corpus, Segmentation, parse_corpus
from .errors import (
    ConfigError,
    DataError,
    EvaluationError,
    SampleRejectedError,
    UpstreamError,
)
from .handshake import tag_handshakes
from .llm import (
    HttpBackend,
    LlmClient,
    RecordingBackend,
    ReplayBackend,
    ScriptedBackend,
)
from .metrics import evaluate_corpus
from .samplegen import (
    analyze_context,
    extract_windows,
    filter_by_confidence,
    synthesize_samples,
    write_sample_jsonl,
)
from .segmenter import (
    PipelineConfig,
    render_ablation_table,
    run_ablation,
    segment_corpus,
)
from .similarity import (
    CachedProvider,
    ExemplarStore,
    HashedTfidfProvider,
    HttpEmbeddingProvider,
)
from .texttiling import TilingParams, texttile

logger = logging.getLogger(__name__)

FORMATS = ("native-json", "dialseg-text", "vhf-json")
BACKENDS = ("http", "replay", "scripted")
PROVIDERS = ("hashed-tfidf", "http")

CONFIG_KEYS = frozenset(
    {
        "corpus", "format", "store", "out", "workers", "seed",
        "backend", "strict", "fixtures", "script", "base_url", "api_key_env",
        "model", "temperature", "max_tokens", "m",
        "enable_handshake", "enable_similarity", "enable_samplegen",
        "confidence_threshold", "handshake_boost", "max_sample_pairs",
        "llm_max_attempts", "provider", "embed_url", "embed_model", "dim",
        "cache_dir", "k", "limit",
    }
)


@dataclass(frozen=True)
class RunConfig:
    """Effective settings for one command run (file values + flag wins)."""

    corpus_path: str | None
    corpus_format: str
    store_path: str | None
    out_dir: str
    workers: int
    k: int | None
    backend: str
    strict: bool
    fixtures_dir: str | None
    script: str | None
    base_url: str | None
    api_key_env: str
    provider_kind: str
    embed_url: str | None
    embed_model: str | None
    dim: int
    cache_dir: str | None
    max_tokens: int | None
    limit: int
    pipeline: PipelineConfig

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError(f"worker count must be >= 1, got {self.workers}")
        if self.corpus_format not in FORMATS:
            raise ConfigError(f"unknown corpus format {self.corpus_format!r}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.provider_kind not in PROVIDERS:
            raise ConfigError(f"unknown provider {self.provider_kind!r}")
        if self.limit < 0:
            raise ConfigError(f"limit must be >= 0, got {self.limit}")

    def digest(self) -> str:
        """Hash of everything that shapes results (output dir excluded)."""
        obj = dataclasses.asdict(self)
        obj.pop("out_dir")
        payload = json.dumps(obj, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _read_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"config file does not exist: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML: {exc}")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a key-value mapping")
    unknown = sorted(set(data) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return data


def build_run_config(kwargs: dict) -> RunConfig:
    """Merge the YAML file (if any) with CLI flags; flags win."""
    cfg = _read_config_file(kwargs.get("config_path"))

    def pick(flag_key: str, cfg_key: str, default):
        value = kwargs.get(flag_key)
        if value is not None:
            return value
        file_value = cfg.get(cfg_key)
        if file_value is not None:
            return file_value
        return default

    try:
        pipeline = PipelineConfig(
            enable_handshake=pick("enable_handshake", "enable_handshake", True),
            enable_similarity=pick("enable_similarity", "enable_similarity", True),
            enable_samplegen=pick("enable_samplegen", "enable_samplegen", True),
            m=pick("m", "m", 3),
            confidence_threshold=pick("threshold", "confidence_threshold", 0.5),
            model=pick("model", "model", "default"),
            temperature=pick("temperature", "temperature", 0.0),
            handshake_boost=pick("handshake_boost", "handshake_boost", 2.0),
            max_sample_pairs=pick("max_sample_pairs", "max_sample_pairs", 4),
            llm_max_attempts=pick("llm_max_attempts", "llm_max_attempts", 3),
            seed=pick("seed", "seed", None),
        )
    except ValueError as exc:
        raise ConfigError(str(exc))
    return RunConfig(
        corpus_path=pick("corpus_path", "corpus", None),
        corpus_format=pick("corpus_format", "format", "native-json"),
        store_path=pick("store_path", "store", None),
        out_dir=pick("out_dir", "out", "out"),
        workers=pick("workers", "workers", 1),
        k=pick("k", "k", None),
        backend=pick("backend", "backend", "replay"),
        strict=pick("strict", "strict", True),
        fixtures_dir=pick("fixtures_dir", "fixtures", None),
        script=pick("script", "script", None),
        base_url=pick("base_url", "base_url", None),
        api_key_env=pick("api_key_env", "api_key_env", "OPENAI_API_KEY"),
        provider_kind=pick("provider_kind", "provider", "hashed-tfidf"),
        embed_url=pick("embed_url", "embed_url", None),
        embed_model=pick("embed_model", "embed_model", None),
        dim=pick("dim", "dim", 256),
        cache_dir=pick("cache_dir", "cache_dir", None),
        max_tokens=pick("max_tokens", "max_tokens", None),
        limit=pick("limit", "limit", 0),
        pipeline=pipeline,
    )


def _load_corpus(rc: RunConfig, path: str | None = None, what="corpus") -> Corpus:
    path = path if path is not None else rc.corpus_path
    if not path:
        raise ConfigError(f"--{what} is required")
    if not os.path.exists(path):
        raise ConfigError(f"{what} path does not exist: {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_corpus(data, rc.corpus_format)


def _resolve_script(spec: str):
    module_name, sep, attr = spec.partition(":")
    if not sep or not module_name or not attr:
        raise ConfigError(f"--script must look like module:attribute, got {spec!r}")
    try:
        module = importlib.import_module(module_name)
    except ImportError as exc:
        raise ConfigError(f"cannot import script module {module_name!r}: {exc}")
    try:
        responder = getattr(module, attr)
    except AttributeError:
        raise ConfigError(f"module {module_name!r} has no attribute {attr!r}")
    if not callable(responder):
        raise ConfigError(f"script {spec!r} is not callable")
    return responder


def _build_backend(rc: RunConfig):
    """Returns (backend, replay_backend_or_None for manifest counters)."""
    if rc.backend == "scripted":
        if not rc.script:
            raise ConfigError("scripted backend needs --script module:attribute")
        backend = ScriptedBackend(_resolve_script(rc.script))
        if rc.fixtures_dir:
            return RecordingBackend(backend, rc.fixtures_dir), None
        return backend, None
    if rc.backend == "replay":
        if not rc.fixtures_dir:
            raise ConfigError("replay backend needs --fixtures <dir>")
        fallback = None
        if not rc.strict:
            if not rc.base_url:
                raise ConfigError(
                    "non-strict replay needs --base-url for the fallback"
                )
            fallback = HttpBackend(
                rc.base_url,
                api_key_env=rc.api_key_env,
                max_attempts=rc.pipeline.llm_max_attempts,
            )
        replay = ReplayBackend(rc.fixtures_dir, strict=rc.strict, fallback=fallback)
        return replay, replay
    if not rc.base_url:
        raise ConfigError("http backend needs --base-url")
    backend = HttpBackend(
        rc.base_url,
        api_key_env=rc.api_key_env,
        max_attempts=rc.pipeline.llm_max_attempts,
    )
    if rc.fixtures_dir:
        return RecordingBackend(backend, rc.fixtures_dir), None
    return backend, None


def _build_client(rc: RunConfig, backend) -> LlmClient:
    return LlmClient(
        backend=backend,
        model=rc.pipeline.model,
        temperature=rc.pipeline.temperature,
        max_tokens=rc.max_tokens,
        seed=rc.pipeline.seed,
    )


def _build_provider(rc: RunConfig, *corpora: Corpus):
    if rc.provider_kind == "http":
        if not rc.embed_url or not rc.embed_model:
            raise ConfigError(
                "http provider needs --embed-url and --embed-model"
            )
        provider = HttpEmbeddingProvider(
            rc.embed_url, rc.embed_model, dim=rc.dim, api_key_env=rc.api_key_env
        )
    else:
        provider = HashedTfidfProvider.fit_corpus(*corpora, dim=rc.dim)
    if rc.cache_dir:
        provider = CachedProvider(provider, cache_dir=rc.cache_dir)
    return provider


def _safe_filename(dialogue_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", dialogue_id)


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _write_json(path: str, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_manifest(rc: RunConfig, replay, predictions) -> None:
    manifest = {
        "config_digest": rc.digest(),
        "dialogues": len(predictions),
        "fixture_hits": replay.hits if replay else 0,
        "fixture_misses": replay.misses if replay else 0,
        "warnings": sum(len(p.warnings) for p in predictions),
    }
    _write_json(os.path.join(rc.out_dir, "manifest.json"), manifest)


def _option_stack(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn

    return wrap


io_options = _option_stack(
    [
        click.option("--corpus", "corpus_path", default=None,
                     help="Corpus file path."),
        click.option("--format", "corpus_format", default=None,
                     type=click.Choice(FORMATS), help="Corpus file format."),
        click.option("--config", "config_path", default=None,
                     help="YAML config file; explicit flags override it."),
        click.option("--out", "out_dir", default=None,
                     help="Output directory (default: out)."),
        click.option("--workers", type=int, default=None,
                     help="Parallel dialogues (default: 1)."),
        click.option("--seed", type=int, default=None,
                     help="Seed forwarded to the model request."),
    ]
)

llm_options = _option_stack(
    [
        click.option("--backend", default=None, type=click.Choice(BACKENDS),
                     help="Chat backend (default: replay)."),
        click.option("--strict/--no-strict", "strict", default=None,
                     help="Replay: fail on fixture misses (default: strict)."),
        click.option("--fixtures", "fixtures_dir", default=None,
                     help="Fixture directory for replay or recording."),
        click.option("--script", default=None,
                     help="module:attribute responder for the scripted backend."),
        click.option("--base-url", default=None,
                     help="Chat completions base URL for the http backend."),
        click.option("--api-key-env", default=None,
                     help="Environment variable holding the API key."),
        click.option("--model", default=None, help="Model name."),
        click.option("--temperature", type=float, default=None),
        click.option("--max-tokens", "max_tokens", type=int, default=None),
    ]
)

pipeline_options = _option_stack(
    [
        click.option("--m", type=int, default=None,
                     help="Exemplars per prompt (default: 3)."),
        click.option("--enable-handshake/--disable-handshake",
                     "enable_handshake", default=None),
        click.option("--enable-similarity/--disable-similarity",
                     "enable_similarity", default=None),
        click.option("--enable-samplegen/--disable-samplegen",
                     "enable_samplegen", default=None),
        click.option("--threshold", type=float, default=None,
                     help="Sample confidence threshold (default: 0.5)."),
        click.option("--max-sample-pairs", "max_sample_pairs", type=int,
                     default=None),
        click.option("--store", "store_path", default=None,
                     help="Labeled corpus file used as the exemplar store."),
        click.option("--provider", "provider_kind", default=None,
                     type=click.Choice(PROVIDERS),
                     help="Embedding provider (default: hashed-tfidf)."),
        click.option("--embed-url", default=None),
        click.option("--embed-model", default=None),
        click.option("--dim", type=int, default=None,
                     help="Embedding dimension (default: 256)."),
        click.option("--cache-dir", default=None,
                     help="Embedding cache directory."),
    ]
)


@click.group()
def cli():
    """Dialogue topic segmentation and evaluation tools."""


@cli.command("segment")
@io_options
@llm_options
@pipeline_options
def cmd_segment(**kwargs):
    """Segment every corpus dialogue and write prediction files."""
    rc = build_run_config(kwargs)
    corpus = _load_corpus(rc)
    store = None
    provider = None
    if rc.store_path:
        store_corpus = _load_corpus(rc, rc.store_path, what="store")
        provider = _build_provider(rc, corpus, store_corpus)
        store = ExemplarStore.from_corpus(store_corpus, provider)
    backend, replay = _build_backend(rc)
    client = _build_client(rc, backend)
    predictions = segment_corpus(
        corpus, rc.pipeline, client, provider, store, workers=rc.workers
    )
    os.makedirs(rc.out_dir, exist_ok=True)
    for pred in predictions:
        path = os.path.join(rc.out_dir, f"{_safe_filename(pred.dialogue_id)}.json")
        _write_text(path, pred.to_json())
    _write_manifest(rc, replay, predictions)
    n_warn = sum(len(p.warnings) for p in predictions)
    click.echo(
        f"segmented {len(predictions)} dialogues into {rc.out_dir} "
        f"({n_warn} warnings)"
    )


@cli.command("evaluate")
@io_options
@click.option("--predictions", "predictions_dir", required=True,
              help="Directory of per-dialogue prediction JSON files.")
@click.option("--model", default=None, help="Model label for the report.")
@click.option("--k", type=int, default=None,
              help="Fixed metric window size (default: per-reference).")
def cmd_evaluate(predictions_dir, **kwargs):
    """Score predictions against a labeled corpus."""
    rc = build_run_config(kwargs)
    corpus = _load_corpus(rc)
    unlabeled = [e.dialogue.id for e in corpus.entries if e.gold is None]
    if unlabeled:
        raise EvaluationError(
            f"corpus dialogues without gold labels: {', '.join(sorted(unlabeled))}"
        )
    if not os.path.isdir(predictions_dir):
        raise ConfigError(f"predictions path does not exist: {predictions_dir}")
    predictions = {}
    for entry in corpus.entries:
        dialogue_id = entry.dialogue.id
        path = os.path.join(predictions_dir, f"{_safe_filename(dialogue_id)}.json")
        if not os.path.exists(path):
            raise EvaluationError(f"no prediction file for dialogue {dialogue_id!r}")
        with open(path, encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise EvaluationError(f"prediction file {path} is not JSON: {exc}")
        try:
            predictions[dialogue_id] = Segmentation(
                n=len(entry.dialogue), boundaries=tuple(obj["boundaries"])
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise EvaluationError(
                f"prediction for dialogue {dialogue_id!r} is invalid: {exc}"
            )
    report = evaluate_corpus(
        predictions, corpus, k=rc.k, model=rc.pipeline.model
    )
    os.makedirs(rc.out_dir, exist_ok=True)
    _write_text(os.path.join(rc.out_dir, "report.json"), report.to_json())
    _write_text(os.path.join(rc.out_dir, "report.txt"), report.render_table())
    click.echo(report.render_table(), nl=False)


@cli.command("ablation")
@io_options
@llm_options
@pipeline_options
@click.option("--k", type=int, default=None,
              help="Fixed metric window size (default: per-reference).")
def cmd_ablation(**kwargs):
    """Run the four component-toggle configurations and compare them."""
    rc = build_run_config(kwargs)
    corpus = _load_corpus(rc)
    if not rc.store_path:
        raise ConfigError("--store is required for the ablation grid")
    store_corpus = _load_corpus(rc, rc.store_path, what="store")
    provider = _build_provider(rc, corpus, store_corpus)
    store = ExemplarStore.from_corpus(store_corpus, provider)
    backend, replay = _build_backend(rc)
    client = _build_client(rc, backend)
    rows = run_ablation(
        corpus, store, client, provider,
        base_config=rc.pipeline, k=rc.k, workers=rc.workers,
    )
    table = render_ablation_table(rows)
    os.makedirs(rc.out_dir, exist_ok=True)
    _write_text(os.path.join(rc.out_dir, "ablation.txt"), table)
    _write_json(
        os.path.join(rc.out_dir, "ablation.json"),
        {
            "rows": [
                {
                    "label": row.label,
                    "handshake": row.config.enable_handshake,
                    "similarity": row.config.enable_similarity,
                    "samplegen": row.config.enable_samplegen,
                    "pk": row.report.mean_pk,
                    "window_diff": row.report.mean_window_diff,
                }
                for row in rows
            ]
        },
    )
    click.echo(table, nl=False)


@cli.group()
def baseline():
    """Non-LLM reference segmenters."""


@baseline.command("texttiling")
@io_options
@click.option("--block-size", type=int, default=2, show_default=True)
@click.option("--smoothing-width", type=int, default=3, show_default=True)
@click.option("--alpha", type=float, default=0.5, show_default=True)
@click.option("--k", type=int, default=None,
              help="Fixed metric window size (default: per-reference).")
def cmd_baseline_texttiling(block_size, smoothing_width, alpha, **kwargs):
    """Tile every dialogue by lexical cohesion, then evaluate."""
    rc = build_run_config(kwargs)
    corpus = _load_corpus(rc)
    try:
        params = TilingParams(
            block_size=block_size, smoothing_width=smoothing_width, alpha=alpha
        )
    except ValueError as exc:
        raise ConfigError(str(exc))
    os.makedirs(rc.out_dir, exist_ok=True)
    predictions = {}
    for entry in corpus.entries:
        seg = texttile(entry.dialogue, params)
        predictions[entry.dialogue.id] = seg
        path = os.path.join(
            rc.out_dir, f"{_safe_filename(entry.dialogue.id)}.json"
        )
        _write_json(
            path, {"id": entry.dialogue.id, "boundaries": list(seg.boundaries)}
        )
    report = evaluate_corpus(predictions, corpus, k=rc.k, model="texttiling")
    _write_text(os.path.join(rc.out_dir, "report.json"), report.to_json())
    _write_text(os.path.join(rc.out_dir, "report.txt"), report.render_table())
    click.echo(report.render_table(), nl=False)


@cli.command("tag-hs")
@io_options
@llm_options
def cmd_tag_hs(**kwargs):
    """Tag handshake spans in every corpus dialogue."""
    rc = build_run_config(kwargs)
    corpus = _load_corpus(rc)
    backend, _ = _build_backend(rc)
    client = _build_client(rc, backend)
    os.makedirs(rc.out_dir, exist_ok=True)
    total = 0
    for entry in corpus.entries:
        spans = tag_handshakes(entry.dialogue, client)
        total += len(spans)
        path = os.path.join(
            rc.out_dir, f"{_safe_filename(entry.dialogue.id)}.spans.json"
        )
        _write_json(
            path,
            {
                "id": entry.dialogue.id,
                "spans": [
                    {
                        "utterance": s.utterance,
                        "start": s.start,
                        "end": s.end,
                        "trust": s.trust,
                        "reasoning": s.reasoning,
                    }
                    for s in spans
                ],
            },
        )
    click.echo(
        f"tagged {total} handshake spans across {len(corpus)} dialogues "
        f"into {rc.out_dir}"
    )


@cli.command("gen-samples")
@io_options
@llm_options
@click.option("--threshold", type=float, default=None,
              help="Sample confidence threshold (default: 0.5).")
@click.option("--limit", type=int, default=None,
              help="Stop after this many pairs (0 = no limit).")
def cmd_gen_samples(**kwargs):
    """Synthesize contrastive sample pairs from gold-labeled dialogues."""
    rc = build_run_config(kwargs)
    corpus = _load_corpus(rc)
    backend, _ = _build_backend(rc)
    client = _build_client(rc, backend)
    os.makedirs(rc.out_dir, exist_ok=True)
    pairs = []
    rejections = []
    done = False
    for entry in corpus.entries:
        if done:
            break
        if entry.gold is None:
            logger.warning(
                "dialogue %s has no gold labels; skipped", entry.dialogue.id
            )
            continue
        for window in extract_windows(entry.dialogue, entry.gold):
            if rc.limit and len(pairs) >= rc.limit:
                done = True
                break
            try:
                analysis = analyze_context(window, client)
                pairs.append(synthesize_samples(window, analysis, client))
            except SampleRejectedError as exc:
                rejections.append(
                    {
                        "dialogue_id": window.dialogue_id,
                        "gap": window.gap,
                        "violations": list(exc.violations),
                        "draft": exc.draft,
                    }
                )
    kept = filter_by_confidence(pairs, rc.pipeline.confidence_threshold)
    write_sample_jsonl(kept, os.path.join(rc.out_dir, "samples.jsonl"))
    with open(
        os.path.join(rc.out_dir, "rejections.jsonl"), "w", encoding="utf-8"
    ) as fh:
        for record in rejections:
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False))
            fh.write("\n")
    click.echo(
        f"kept {len(kept)} of {len(pairs)} sample pairs "
        f"({len(rejections)} rejected) in {rc.out_dir}"
    )


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cli.main(args=argv, prog_name="dialogseg", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        return 1
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except DataError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except UpstreamError as exc:
        click.echo(f"error: {exc}", err=True)
        return 3
    return 0
