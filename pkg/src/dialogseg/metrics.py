"""Segmentation quality metrics: Pk and WindowDiff.

Both slide a window of ``k`` gap positions over the dialogue and compare
reference and hypothesis inside it. With utterances indexed from 0, the
window anchored at ``i`` covers boundary indices ``(i, i + k]`` for
``i`` in ``[0, N - k - 1]``, so every valid gap index in ``[1, N - 1]``
falls inside at least one window whatever ``k`` is.

Pk asks whether the two sides *disagree about the presence* of any
boundary in the window; WindowDiff asks whether the *count* of
boundaries differs. Both return fractions in [0, 1]; reports render
them scaled by 100 with one decimal.
"""

import csv
import io
import json
from dataclasses import dataclass

from .core import Corpus, Segmentation
from .errors import EvaluationError


def default_k(ref: Segmentation) -> int:
    """Half the mean reference segment length, at least 1.

    Rounding is half-up: a dialogue of 10 utterances with one boundary
    has mean segment length 5, so k = round(2.5) = 3.
    """
    denom = 2 * (len(ref.boundaries) + 1)
    return max(1, (2 * ref.n + denom) // (2 * denom))


def _prefix_counts(seg: Segmentation) -> list[int]:
    """counts[x] = number of boundaries <= x, for x in 0..n."""
    counts = [0] * (seg.n + 1)
    for b in seg.boundaries:
        counts[b] += 1
    for x in range(1, seg.n + 1):
        counts[x] += counts[x - 1]
    return counts


def _check_pair(ref: Segmentation, hyp: Segmentation, k: int | None) -> int:
    if ref.n != hyp.n:
        raise ValueError(
            f"reference covers {ref.n} utterances but hypothesis covers {hyp.n}"
        )
    if ref.n < 2:
        raise ValueError(f"metrics need at least 2 utterances, got {ref.n}")
    if k is None:
        k = default_k(ref)
    if not 1 <= k <= ref.n - 1:
        raise ValueError(f"window size k={k} outside [1, {ref.n - 1}]")
    return k


def pk(ref: Segmentation, hyp: Segmentation, k: int | None = None) -> float:
    """Probability that a random width-k window sees a presence disagreement."""
    k = _check_pair(ref, hyp, k)
    n = ref.n
    rc, hc = _prefix_counts(ref), _prefix_counts(hyp)
    errors = 0
    for i in range(n - k):
        in_ref = rc[i + k] - rc[i] > 0
        in_hyp = hc[i + k] - hc[i] > 0
        errors += in_ref != in_hyp
    return errors / (n - k)


def window_diff(ref: Segmentation, hyp: Segmentation, k: int | None = None) -> float:
    """Fraction of width-k windows whose boundary counts differ."""
    k = _check_pair(ref, hyp, k)
    n = ref.n
    rc, hc = _prefix_counts(ref), _prefix_counts(hyp)
    errors = 0
    for i in range(n - k):
        errors += (rc[i + k] - rc[i]) != (hc[i + k] - hc[i])
    return errors / (n - k)


def render_score(value: float) -> str:
    """Render a [0, 1] metric as percentage text with one decimal."""
    return f"{100.0 * value:.1f}"


@dataclass(frozen=True)
class DialogueScore:
    id: str
    k: int
    pk: float
    window_diff: float


@dataclass(frozen=True)
class EvalReport:
    """Per-dialogue scores plus macro averages for one corpus run."""

    corpus_name: str
    model: str
    scores: tuple[DialogueScore, ...]

    @property
    def mean_pk(self) -> float:
        return sum(s.pk for s in self.scores) / len(self.scores)

    @property
    def mean_window_diff(self) -> float:
        return sum(s.window_diff for s in self.scores) / len(self.scores)

    def to_json_obj(self) -> dict:
        return {
            "corpus": self.corpus_name,
            "model": self.model,
            "n_dialogues": len(self.scores),
            "mean_pk": self.mean_pk,
            "mean_window_diff": self.mean_window_diff,
            "rendered": {
                "pk": render_score(self.mean_pk),
                "window_diff": render_score(self.mean_window_diff),
            },
            "dialogues": [
                {"id": s.id, "k": s.k, "pk": s.pk, "window_diff": s.window_diff}
                for s in self.scores
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), indent=2, sort_keys=True) + "\n"

    def render_table(self) -> str:
        """Aligned text table: one model row, Pk and WD columns, x100."""
        headers = ("Model", "Pk", "WD")
        row = (
            self.model,
            render_score(self.mean_pk),
            render_score(self.mean_window_diff),
        )
        widths = [max(len(h), len(v)) for h, v in zip(headers, row)]
        lines = [
            f"Corpus: {self.corpus_name} ({len(self.scores)} dialogues)",
            "  ".join(h.ljust(w) for h, w in zip(headers, widths)),
            "  ".join(v.ljust(w) for v, w in zip(row, widths)),
        ]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["id", "k", "pk", "window_diff"])
        for s in self.scores:
            writer.writerow([s.id, s.k, f"{s.pk:.6f}", f"{s.window_diff:.6f}"])
        writer.writerow(
            ["MEAN", "", f"{self.mean_pk:.6f}", f"{self.mean_window_diff:.6f}"]
        )
        return buf.getvalue()


def evaluate_corpus(
    predictions: dict[str, Segmentation],
    corpus: Corpus,
    k: int | None = None,
    model: str = "model",
) -> EvalReport:
    """Score one prediction per gold-labeled dialogue, macro-averaged.

    ``k`` overrides the per-dialogue default window size when given.
    Missing or unknown prediction ids and length mismatches raise
    EvaluationError listing the offending dialogue ids.
    """
    labeled = corpus.labeled()
    if not labeled:
        raise EvaluationError(f"corpus {corpus.name!r} has no gold-labeled dialogues")
    gold_ids = {e.dialogue.id for e in labeled}
    missing = sorted(gold_ids - set(predictions))
    unknown = sorted(set(predictions) - {e.dialogue.id for e in corpus.entries})
    if missing or unknown:
        parts = []
        if missing:
            parts.append(f"missing predictions for {missing}")
        if unknown:
            parts.append(f"predictions for unknown dialogues {unknown}")
        raise EvaluationError("; ".join(parts))

    mismatched = [
        e.dialogue.id
        for e in labeled
        if predictions[e.dialogue.id].n != e.gold.n
    ]
    if mismatched:
        raise EvaluationError(f"utterance count mismatch for {mismatched}")

    scores = []
    for entry in labeled:
        ref = entry.gold
        hyp = predictions[entry.dialogue.id]
        k_used = k if k is not None else default_k(ref)
        scores.append(
            DialogueScore(
                id=entry.dialogue.id,
                k=k_used,
                pk=pk(ref, hyp, k_used),
                window_diff=window_diff(ref, hyp, k_used),
            )
        )
    return EvalReport(corpus_name=corpus.name, model=model, scores=tuple(scores))
