import csv
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dimnet_toy.errors import ShapeError
from dimnet_toy.metrics import (accent_accuracy, align, attribute_errors, corpus_error_rate,
                                edit_error_rate, per_phoneme_report, write_accent_csv,
                                write_phoneme_csv)
from dimnet_toy.synthgen import CorpusSpec, generate_corpus

from oracles import levenshtein


def test_error_rate_examples():
    c = edit_error_rate("abc", "abc")
    assert (c.rate, c.substitutions, c.deletions, c.insertions) == (0.0, 0, 0, 0)
    c = edit_error_rate("abc", "axc")
    assert c.rate == pytest.approx(1 / 3) and (c.substitutions, c.deletions, c.insertions) == (1, 0, 0)
    c = edit_error_rate("ab", "")
    assert c.rate == 1.0 and (c.substitutions, c.deletions, c.insertions) == (0, 2, 0)
    c = edit_error_rate("", "xy")
    assert c.degenerate and c.rate == 2.0
    assert not edit_error_rate("", "").degenerate


seqs = st.lists(st.integers(0, 4), max_size=12)


@settings(max_examples=1000)
@given(seqs, seqs)
def test_error_count_is_edit_distance(ref, hyp):
    c = edit_error_rate(ref, hyp)
    assert c.errors == levenshtein(ref, hyp)
    assert c.substitutions + c.deletions == len(ref) - sum(op == 0 for op, *_ in align(ref, hyp)) \
        if ref or hyp else True
    assert edit_error_rate(ref, ref).rate == 0.0


@settings(max_examples=500)
@given(st.integers(0, 10).flatmap(lambda n: st.tuples(st.lists(st.integers(0, 3), min_size=n,
                                                               max_size=n),
                                                      st.lists(st.integers(0, 3), min_size=n,
                                                               max_size=n))))
def test_swap_symmetry(pair):
    ref, hyp = pair
    a, b = edit_error_rate(ref, hyp), edit_error_rate(hyp, ref)
    assert a.errors == b.errors
    assert a.substitutions == b.substitutions
    assert (a.deletions, a.insertions) == (b.insertions, b.deletions)


@settings(max_examples=500)
@given(seqs, seqs)
def test_attribution_conserves_errors(ref, hyp):
    charge = attribute_errors(ref, hyp)
    assert len(charge) == len(ref)
    if ref:
        assert sum(charge) == edit_error_rate(ref, hyp).errors


def test_insertion_charges_following_token():
    assert attribute_errors("ab", "axb") == [0, 1]
    assert attribute_errors("ab", "abx") == [0, 1]
    assert attribute_errors("ab", "xab") == [1, 0]


def test_corpus_error_rate():
    assert corpus_error_rate(["abc", "de"], ["abc", "dx"]) == pytest.approx(1 / 5)
    with pytest.raises(ShapeError):
        corpus_error_rate(["a"], [])


def test_accent_accuracy_examples(tmp_path):
    assert accent_accuracy([0, 1, 2], [0, 1, 2]).accuracy == 1.0
    assert accent_accuracy([0, 1, 0, 1], [0, 0, 1, 1]).accuracy == 0.5
    with pytest.raises(ShapeError):
        accent_accuracy([0], [0, 1])


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=50))
def test_recall_matches_independent_tally(pairs):
    preds, labels = zip(*pairs)
    res = accent_accuracy(preds, labels)
    hits, totals = Counter(), Counter()
    for p, l in pairs:
        totals[l] += 1
        hits[l] += p == l
    assert res.support == dict(totals)
    assert sum(res.support.values()) == len(pairs)
    for a in totals:
        assert res.recall[a] == pytest.approx(hits[a] / totals[a])


def test_accent_csv(tmp_path):
    write_accent_csv(tmp_path / "a.csv", accent_accuracy([0, 1, 1], [0, 1, 0]))
    rows = list(csv.reader(open(tmp_path / "a.csv")))
    assert rows[0] == ["accent", "support", "recall"]
    assert rows[-1] == ["all", "3", "0.666667"]


def test_planted_units_rank_first():
    # simulated recognizer: accented units are misrecognized far more often
    corpus = generate_corpus(CorpusSpec(n_train=0, n_dev=400, n_test=0, seed=2))
    rng = np.random.default_rng(0)
    accented = corpus.tables.accented
    refs, hyps, accents = [], [], []
    for u in corpus["dev"]:
        hyp = []
        for f in u.y_f:
            p = 0.4 if f in accented[u.accent] else 0.03
            if rng.random() < p:
                hyp.append(int(rng.integers(2, 14)) if rng.random() < 0.5 else None)
            else:
                hyp.append(f)
        refs.append(list(u.y_f))
        hyps.append([h for h in hyp if h is not None])
        accents.append(u.accent)
    k = len(accented[0])
    report = per_phoneme_report(refs, hyps, accents, top_k=k)
    for a, units in enumerate(accented):
        assert set(report.top[a]) == set(units)


def test_zero_error_report():
    refs = [[2, 3, 4], [3, 5]]
    report = per_phoneme_report(refs, refs, [0, 1])
    assert all(r.per == 0 for r in report.rows)
    assert report.top == {0: [], 1: []}


def test_single_token_report(tmp_path):
    report = per_phoneme_report([[2, 2, 2]], [[2, 2]], [0])
    assert len(report.rows) == 1
    assert report.rows[0].errors == 1 and report.top[0] == [2]
    write_phoneme_csv(tmp_path / "p.csv", report, ["<blank>", "<sil>", "p0"])
    rows = list(csv.reader(open(tmp_path / "p.csv")))
    assert rows == [["accent", "token", "occurrences", "errors", "per", "rank"],
                    ["0", "p0", "3", "1", "0.333333", "1"]]


def test_word_rates():
    refs_f, hyps_f = [[2, 3], [4]], [[2, 9], [4]]
    report = per_phoneme_report(refs_f, hyps_f, [0, 0], top_k=1, refs_c=[[10], [11]],
                                hyps_c=[[12], [11]], expansions={10: [2, 3], 11: [4]})
    assert report.top[0] == [3]
    assert report.word_rates[0] == (1.0, 0.5)
