"""Metric tests cross-checked against the segment-id-array oracle."""

import random

import pytest

from dialogseg.core import Corpus, CorpusEntry, Dialogue, Segmentation
from dialogseg.errors import EvaluationError
from dialogseg.metrics import (
    EvalReport,
    default_k,
    evaluate_corpus,
    pk,
    render_score,
    window_diff,
)
from oracles import default_k_oracle, pk_oracle, window_diff_oracle


def seg(n, bounds=()):
    return Segmentation(n=n, boundaries=tuple(bounds))


def random_segmentation(rng, n):
    gaps = [b for b in range(1, n) if rng.random() < 0.3]
    return seg(n, gaps)


# Frozen via the oracle: pk = 2/7, wd = 1/4 (see oracles.py).
def test_pk_frozen_example():
    assert default_k(seg(10, [5])) == 3
    assert pk(seg(10, [5]), seg(10, [6])) == pytest.approx(
        0.2857142857142857, abs=1e-12
    )


def test_window_diff_frozen_example():
    assert default_k(seg(10, [3, 7])) == 2
    assert window_diff(seg(10, [3, 7]), seg(10, [3])) == pytest.approx(0.25, abs=1e-12)


def test_exact_match_is_zero():
    rng = random.Random(11)
    for _ in range(200):
        n = rng.randint(2, 30)
        s = random_segmentation(rng, n)
        for k in range(1, n):
            assert pk(s, s, k) == 0.0
            assert window_diff(s, s, k) == 0.0


def test_all_gaps_vs_empty_is_one_for_any_k():
    for n in range(2, 16):
        empty = seg(n)
        full = seg(n, range(1, n))
        for k in range(1, n):
            assert window_diff(empty, full, k) == 1.0
            assert pk(empty, full, k) == 1.0


def test_matches_oracle_on_random_cases():
    rng = random.Random(202)
    for _ in range(500):
        n = rng.randint(2, 40)
        ref = random_segmentation(rng, n)
        hyp = random_segmentation(rng, n)
        k = rng.randint(1, n - 1)
        assert pk(ref, hyp, k) == pytest.approx(
            pk_oracle(n, ref.boundaries, hyp.boundaries, k), abs=1e-12
        )
        assert window_diff(ref, hyp, k) == pytest.approx(
            window_diff_oracle(n, ref.boundaries, hyp.boundaries, k), abs=1e-12
        )


def test_outputs_stay_in_unit_interval():
    rng = random.Random(7)
    for _ in range(300):
        n = rng.randint(2, 25)
        ref = random_segmentation(rng, n)
        hyp = random_segmentation(rng, n)
        k = rng.randint(1, n - 1)
        assert 0.0 <= pk(ref, hyp, k) <= 1.0
        assert 0.0 <= window_diff(ref, hyp, k) <= 1.0


def test_default_k_matches_decimal_oracle():
    for n in range(2, 60):
        for n_bounds in range(0, n):
            assert default_k(seg(n, range(1, n_bounds + 1))) == default_k_oracle(
                n, n_bounds
            )


def test_default_k_floors_at_one():
    assert default_k(seg(4, [1, 2, 3])) == 1


def test_moving_hyp_boundary_away_never_decreases_window_diff():
    # Exhaustive for N <= 12: single ref boundary, single hyp boundary
    # drifting farther away while staying within one window span.
    for n in range(2, 13):
        for k in range(1, n):
            for r in range(1, n):
                for direction in (-1, 1):
                    last = None
                    for d in range(0, k + 1):
                        h = r + direction * d
                        if not 1 <= h <= n - 1:
                            break
                        value = window_diff(seg(n, [r]), seg(n, [h]), k)
                        if last is not None:
                            assert value >= last - 1e-12
                        last = value


def test_invalid_inputs_raise():
    with pytest.raises(ValueError):
        pk(seg(4, [1]), seg(5, [1]))
    with pytest.raises(ValueError):
        pk(seg(1), seg(1))
    with pytest.raises(ValueError):
        pk(seg(6, [2]), seg(6, [3]), k=0)
    with pytest.raises(ValueError):
        window_diff(seg(6, [2]), seg(6, [3]), k=6)


def make_corpus(golds):
    entries = []
    for i, bounds in enumerate(golds):
        n = 10
        dialogue = Dialogue.from_texts(f"d{i}", [f"utt {j}" for j in range(n)])
        entries.append(CorpusEntry(dialogue, seg(n, bounds)))
    return Corpus(name="toy", entries=tuple(entries))


def test_evaluate_corpus_macro_average_and_rendering():
    corpus = make_corpus([[5], [3, 7]])
    predictions = {"d0": seg(10, [6]), "d1": seg(10, [3])}
    report = evaluate_corpus(predictions, corpus, model="unit")
    assert report.scores[0].k == 3
    assert report.scores[1].k == 2
    expected = (0.2857142857142857 + 0.25) / 2
    assert report.mean_pk == pytest.approx(expected, abs=1e-12)
    assert report.to_json_obj()["rendered"]["pk"] == render_score(expected)


def test_render_score_is_percent_with_one_decimal():
    assert render_score(0.3) == "30.0"
    assert render_score(0.2190) == "21.9"


def test_evaluate_corpus_lists_offending_ids():
    corpus = make_corpus([[5], [3, 7]])
    with pytest.raises(EvaluationError) as exc:
        evaluate_corpus({"d0": seg(10, [5])}, corpus)
    assert "d1" in str(exc.value)

    with pytest.raises(EvaluationError) as exc:
        evaluate_corpus(
            {"d0": seg(10), "d1": seg(10), "ghost": seg(10)}, corpus
        )
    assert "ghost" in str(exc.value)

    with pytest.raises(EvaluationError) as exc:
        evaluate_corpus({"d0": seg(9), "d1": seg(10)}, corpus)
    assert "d0" in str(exc.value)


def test_report_table_and_csv_shape():
    corpus = make_corpus([[5]])
    report = evaluate_corpus({"d0": seg(10, [5])}, corpus, model="exact")
    table = report.render_table()
    assert "Model" in table and "Pk" in table and "WD" in table
    assert "exact" in table and "0.0" in table
    csv_text = report.to_csv()
    assert csv_text.splitlines()[0] == "id,k,pk,window_diff"
    assert csv_text.splitlines()[-1].startswith("MEAN")


def test_report_k_override():
    corpus = make_corpus([[5]])
    report = evaluate_corpus({"d0": seg(10, [6])}, corpus, k=1)
    assert report.scores[0].k == 1
    assert report.scores[0].pk == pytest.approx(
        pk_oracle(10, [5], [6], 1), abs=1e-12
    )
