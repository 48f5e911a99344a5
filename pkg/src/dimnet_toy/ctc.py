"""CTC branch: loss and forward scoring over fine units, greedy frame labels,
and the regularization that turns them into a blank-free aligned text."""
from __future__ import annotations

from typing import List, NamedTuple, Optional, Sequence

import numpy as np
import torch

from . import kernels
from .errors import AllBlank, ShapeError


class CTCResult(NamedTuple):
    loss: float
    grad: np.ndarray        # d loss / d log_probs, shape (T, V)
    feasible: bool


def min_frames(labels: Sequence[int]) -> int:
    """Shortest input that can emit ``labels``: one frame each plus a blank between repeats."""
    labels = list(labels)
    return len(labels) + sum(a == b for a, b in zip(labels, labels[1:]))


def _as_array(log_probs) -> np.ndarray:
    if isinstance(log_probs, torch.Tensor):
        log_probs = log_probs.detach().cpu().double().numpy()
    arr = np.asarray(log_probs, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"log_probs must be (T, V), got {arr.shape}")
    return arr


def ctc_loss(log_probs, labels: Sequence[int], blank: int = 0) -> CTCResult:
    """-log P(labels | x); +inf with a zero gradient when ``labels`` cannot be emitted."""
    lp = _as_array(log_probs)
    logp, grad = kernels.ctc_forward_backward(lp, labels, blank)
    if logp == -np.inf:
        return CTCResult(np.inf, np.zeros_like(lp), False)
    return CTCResult(-logp, grad, True)


def ctc_score(log_probs, labels: Sequence[int], blank: int = 0) -> float:
    """log P_ctc(labels | x); -inf when infeasible."""
    return kernels.ctc_logprob(_as_array(log_probs), labels, blank)


class _BatchCTC(torch.autograd.Function):
    @staticmethod
    def forward(ctx, log_probs, lengths, targets, blank):
        lp = log_probs.detach().cpu().double().numpy()
        B = lp.shape[0]
        losses = np.zeros(B)
        grad = np.zeros_like(lp)
        for b in range(B):
            T = int(lengths[b])
            res = ctc_loss(lp[b, :T], targets[b], blank)
            losses[b] = res.loss
            grad[b, :T] = res.grad
        ctx.save_for_backward(torch.from_numpy(grad).to(log_probs.dtype))
        return torch.from_numpy(losses).to(log_probs.dtype)

    @staticmethod
    def backward(ctx, grad_out):
        (grad,) = ctx.saved_tensors
        return grad * grad_out[:, None, None], None, None, None


def batch_ctc_loss(log_probs: torch.Tensor, lengths: torch.Tensor,
                   targets: Sequence[Sequence[int]], blank: int = 0) -> torch.Tensor:
    """Per-utterance CTC losses (B,), differentiable w.r.t. ``log_probs`` (B, T, V)."""
    return _BatchCTC.apply(log_probs, lengths, [list(t) for t in targets], blank)


def greedy_frames(log_probs) -> np.ndarray:
    """Per-frame argmax; ties go to the lowest index; blanks and repeats kept."""
    return np.argmax(_as_array(log_probs), axis=1).astype(np.int64)


def regularize(frame_ids: Sequence[int], blank: int = 0) -> np.ndarray:
    """Replace each blank by the next non-blank id; trailing blanks take the last one.

    Raises ``AllBlank`` when no frame is non-blank.
    """
    ids = np.asarray(frame_ids, dtype=np.int64)
    if ids.size == 0:
        raise ShapeError("regularize needs at least one frame")
    pos = np.flatnonzero(ids != blank)
    if pos.size == 0:
        raise AllBlank(f"all {ids.size} frames are blank")
    nxt = np.searchsorted(pos, np.arange(ids.size))
    nxt = np.minimum(nxt, pos.size - 1)
    return ids[pos[nxt]]


class AlignmentStats:
    """Counts utterances whose greedy path was entirely blank."""

    def __init__(self):
        self.all_blank = 0
        self.total = 0


def aligned_text(log_probs: torch.Tensor, lengths: torch.Tensor, blank: int, silence: int,
                 stats: Optional[AlignmentStats] = None) -> torch.Tensor:
    """Regularized greedy labels for a batch, (B, T) long, padding filled with ``silence``."""
    lp = log_probs.detach()
    frames = lp.argmax(dim=-1).cpu().numpy()
    B, T = frames.shape
    out = np.full((B, T), silence, dtype=np.int64)
    for b in range(B):
        n = int(lengths[b])
        if stats is not None:
            stats.total += 1
        try:
            out[b, :n] = regularize(frames[b, :n], blank)
        except AllBlank:
            if stats is not None:
                stats.all_blank += 1
    return torch.from_numpy(out)


def collapse(frame_ids: Sequence[int], blank: int = 0) -> List[int]:
    """Standard CTC collapse: merge repeats, then drop blanks."""
    out, prev = [], None
    for x in frame_ids:
        x = int(x)
        if x != prev and x != blank:
            out.append(x)
        prev = x
    return out
