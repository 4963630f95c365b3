"""Lexical-cohesion baseline: valley detection over utterance blocks.

Each gap between utterances gets a cohesion score, the cosine of the
term-frequency vectors of the blocks just before and after it. After
smoothing, gaps sitting in deep valleys relative to their neighboring
peaks are emitted as topic boundaries.
"""

import logging
import math
import statistics
from collections import Counter
from dataclasses import dataclass

from .core import Dialogue, Segmentation

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TilingParams:
    block_size: int = 2
    smoothing_width: int = 3
    alpha: float = 0.5

    def __post_init__(self):
        if self.block_size < 1:
            raise ValueError(f"block size must be >= 1, got {self.block_size}")
        if self.smoothing_width < 1 or self.smoothing_width % 2 == 0:
            raise ValueError(
                f"smoothing width must be odd and >= 1, got {self.smoothing_width}"
            )
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")


def _counter_cosine(a: Counter, b: Counter) -> float:
    dot = sum(count * b[token] for token, count in a.items())
    norm_a = math.sqrt(sum(c * c for c in a.values()))
    norm_b = math.sqrt(sum(c * c for c in b.values()))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    # Counts are nonnegative, so the exact value lies in [0, 1]; floating
    # error can push the quotient a hair above 1.
    return min(1.0, dot / (norm_a * norm_b))


def _block_counts(dialogue: Dialogue, start: int, stop: int) -> Counter:
    counts: Counter = Counter()
    for utt in dialogue.utterances[start:stop]:
        counts.update(utt.tokens)
    return counts


def gap_scores(dialogue: Dialogue, block_size: int) -> tuple[list[int], list[float]]:
    """Cohesion score per eligible gap; gaps need a full block each side."""
    n = len(dialogue)
    gaps = list(range(block_size, n - block_size + 1))
    scores = [
        _counter_cosine(
            _block_counts(dialogue, g - block_size, g),
            _block_counts(dialogue, g, g + block_size),
        )
        for g in gaps
    ]
    return gaps, scores


def _smooth(scores: list[float], width: int) -> list[float]:
    half = width // 2
    return [
        statistics.fmean(scores[max(0, i - half) : i + half + 1])
        for i in range(len(scores))
    ]


def _depth(scores: list[float], i: int) -> float:
    left = i
    while left > 0 and scores[left - 1] >= scores[left]:
        left -= 1
    right = i
    while right < len(scores) - 1 and scores[right + 1] >= scores[right]:
        right += 1
    return (scores[left] - scores[i]) + (scores[right] - scores[i])


def _is_local_min(scores: list[float], i: int) -> bool:
    left_ok = i == 0 or scores[i] <= scores[i - 1]
    right_ok = i == len(scores) - 1 or scores[i] <= scores[i + 1]
    return left_ok and right_ok


def texttile(dialogue: Dialogue, params: TilingParams | None = None) -> Segmentation:
    """Segment by lexical valleys.

    Boundary candidates are the local minima of the smoothed cohesion
    curve with positive valley depth; thresholding every gap instead
    fires on flat stretches whenever one deep valley drags the cutoff
    below zero. A candidate is emitted when its depth reaches the
    adaptive cutoff mean(depth) - alpha * stdev(depth), taken over the
    candidate depths. Dialogues shorter than two blocks cannot score
    any gap and come back unsegmented.
    """
    params = params or TilingParams()
    n = len(dialogue)
    if n < 2 * params.block_size:
        logger.warning(
            "dialogue %s has %d utterances, shorter than two blocks of %d; "
            "returning no boundaries",
            dialogue.id,
            n,
            params.block_size,
        )
        return Segmentation(n=n, boundaries=())
    gaps, scores = gap_scores(dialogue, params.block_size)
    smoothed = _smooth(scores, params.smoothing_width)
    candidates = [
        i
        for i in range(len(smoothed))
        if _is_local_min(smoothed, i) and _depth(smoothed, i) > 0.0
    ]
    if not candidates:
        return Segmentation(n=n, boundaries=())
    depths = {i: _depth(smoothed, i) for i in candidates}
    values = list(depths.values())
    cutoff = statistics.fmean(values) - params.alpha * statistics.pstdev(values)
    boundaries = [gaps[i] for i in candidates if depths[i] >= cutoff]
    return Segmentation(n=n, boundaries=tuple(boundaries))
