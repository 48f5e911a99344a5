import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from dimnet_toy import kernels
from dimnet_toy.ctc import (AlignmentStats, aligned_text, batch_ctc_loss, collapse, ctc_loss,
                            ctc_score, greedy_frames, min_frames, regularize)
from dimnet_toy.errors import AllBlank
from dimnet_toy.nnet import grad_check

from oracles import ctc_path_sums, regularize_rule

BLANK = 0


def random_log_probs(rng, T, V):
    x = rng.normal(size=(T, V)) * 2
    return x - np.logaddexp.reduce(x, axis=1, keepdims=True)


def test_single_frame_single_label():
    lp = np.log(np.full((1, 2), 0.5))
    assert ctc_loss(lp, [1]).loss == pytest.approx(-math.log(0.5), abs=1e-12)


def test_two_frames_three_paths():
    lp = np.log(np.full((2, 2), 0.5))
    assert ctc_loss(lp, [1]).loss == pytest.approx(-math.log(0.75), abs=1e-12)


def test_infeasible_is_infinite_with_zero_gradient():
    lp = np.log(np.full((1, 3), 1 / 3))
    res = ctc_loss(lp, [1, 2])
    assert res.loss == math.inf and not res.feasible
    assert not res.grad.any()
    assert ctc_score(lp, [1, 2]) == -math.inf
    # a repeat needs a separating blank
    assert ctc_score(np.log(np.full((2, 3), 1 / 3)), [1, 1]) == -math.inf
    assert min_frames([1, 1]) == 3


def test_empty_label_is_all_blank_path():
    lp = random_log_probs(np.random.default_rng(0), 5, 4)
    assert ctc_score(lp, []) == pytest.approx(lp[:, BLANK].sum(), abs=1e-12)


@pytest.mark.parametrize("T", range(1, 7))
def test_matches_path_enumeration(T):
    rng = np.random.default_rng(T)
    V = 4
    lp = random_log_probs(rng, T, V)
    sums = ctc_path_sums(lp, BLANK)
    for n in range(4):
        for y in itertools.product(range(1, V), repeat=n):
            p = math.exp(ctc_score(lp, list(y)))
            assert abs(p - sums.get(y, 0.0)) <= 1e-9


@pytest.mark.parametrize("T,V", [(t, v) for t in range(1, 5) for v in (2, 3)])
def test_scores_are_a_subprobability(T, V):
    lp = random_log_probs(np.random.default_rng(10 * T + V), T, V)
    total = 0.0
    for n in range(T + 1):
        for y in itertools.product(range(1, V), repeat=n):
            s = ctc_score(lp, list(y))
            assert s <= 1e-12
            total += math.exp(s)
    assert total == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=200)
@given(st.integers(1, 12), st.integers(2, 6), st.integers(0, 10 ** 6), st.data())
def test_score_is_negative_loss(T, V, seed, data):
    lp = random_log_probs(np.random.default_rng(seed), T, V)
    y = data.draw(st.lists(st.integers(1, V - 1), max_size=T))
    res = ctc_loss(lp, y)
    s = ctc_score(lp, y)
    if res.feasible:
        assert s == pytest.approx(-res.loss, rel=1e-12, abs=1e-12)
    else:
        assert s == -math.inf


@settings(max_examples=200)
@given(st.integers(1, 15), st.integers(2, 6), st.integers(0, 10 ** 6), st.data())
def test_backends_agree(T, V, seed, data):
    backends = kernels.backends()
    lp = random_log_probs(np.random.default_rng(seed), T, V)
    y = np.asarray(data.draw(st.lists(st.integers(1, V - 1), max_size=T)), dtype=np.int64)
    ref = backends["python"]
    for name, be in backends.items():
        assert be.ctc_logprob(lp, y, 0) == pytest.approx(ref.ctc_logprob(lp, y, 0),
                                                         rel=1e-12, abs=1e-12)
        a, ga = be.ctc_forward_backward(lp, y, 0)
        b, gb = ref.ctc_forward_backward(lp, y, 0)
        assert a == pytest.approx(b, rel=1e-12, abs=1e-12)
        np.testing.assert_allclose(ga, gb, atol=1e-12)
    r = np.asarray(data.draw(st.lists(st.integers(0, 4), max_size=10)), dtype=np.int64)
    h = np.asarray(data.draw(st.lists(st.integers(0, 4), max_size=10)), dtype=np.int64)
    for be in backends.values():
        np.testing.assert_array_equal(be.edit_align(r, h), ref.edit_align(r, h))


def test_loss_gradient_matches_finite_differences():
    torch.manual_seed(0)
    logits = torch.randn(3, 9, 5, dtype=torch.float64, requires_grad=True)
    lens = torch.tensor([9, 7, 4])
    targets = [[1, 2, 2, 3], [4], [1, 3]]
    err = grad_check(lambda: batch_ctc_loss(torch.log_softmax(logits, -1), lens, targets).sum(),
                     [logits], eps=1e-6)
    assert err <= 1e-4


def test_batch_loss_pads_are_ignored():
    rng = np.random.default_rng(4)
    lp = torch.tensor(random_log_probs(rng, 6, 4))
    padded = torch.cat([lp, torch.zeros(3, 4, dtype=lp.dtype)])[None]
    loss = batch_ctc_loss(padded, torch.tensor([6]), [[1, 2]])
    assert float(loss) == pytest.approx(ctc_loss(lp.numpy(), [1, 2]).loss, abs=1e-12)


def test_greedy_examples():
    rows = [0, 1, 1, 0, 2]
    lp = np.full((5, 3), -5.0)
    lp[np.arange(5), rows] = -0.1
    assert greedy_frames(lp).tolist() == rows
    assert greedy_frames(np.zeros((3, 3))).tolist() == [0, 0, 0]
    tie = np.log(np.array([[0.5, 0.5, 0.0]]) + 1e-300)
    assert greedy_frames(tie).tolist() == [0]


def test_regularize_examples():
    assert regularize([0, 3, 0, 7, 0]).tolist() == [3, 3, 7, 7, 7]
    assert regularize([5, 5, 5]).tolist() == [5, 5, 5]
    with pytest.raises(AllBlank):
        regularize([0, 0, 0])


frame_seqs = st.lists(st.integers(0, 5), min_size=1, max_size=30)


@settings(max_examples=1000)
@given(frame_seqs)
def test_regularize_matches_rule(frames):
    expected = regularize_rule(frames)
    if expected is None:
        with pytest.raises(AllBlank):
            regularize(frames)
        return
    out = regularize(frames)
    assert out.tolist() == expected
    assert 0 not in out and len(out) == len(frames)
    assert regularize(out).tolist() == out.tolist()


def test_aligned_text_fills_all_blank_with_silence():
    lp = torch.full((2, 4, 3), -5.0)
    lp[0, :, 0] = 0.0                # all blank
    lp[1, :, 0] = 0.0
    lp[1, 1, 2] = 1.0
    stats = AlignmentStats()
    out = aligned_text(lp, torch.tensor([4, 3]), blank=0, silence=1, stats=stats)
    assert out[0].tolist() == [1, 1, 1, 1]
    assert out[1].tolist() == [2, 2, 2, 1]
    assert (stats.all_blank, stats.total) == (1, 2)


def test_collapse():
    assert collapse([0, 1, 1, 0, 1, 2, 2, 0]) == [1, 1, 2]
    assert collapse([0, 0]) == []
