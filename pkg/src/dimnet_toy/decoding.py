"""Two-pass decoding.

The first pass is an autoregressive beam search over coarse units. The
second pass expands each hypothesis to fine units through the lexicon, scores
the expansion with the CTC forward algorithm and re-ranks the N-best list by
``w1 * att + w2 * ctc + w3 * lm``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import torch

from .ctc import ctc_score
from .errors import ConfigError, LexiconMiss
from .vocab import Lexicon

NEG_INF = float("-inf")


@dataclass(frozen=True)
class Hypothesis:
    y_c: Tuple[int, ...]           # coarse ids without BOS/EOS
    att_logp: float
    ctc_logp: float = 0.0
    lm_logp: float = 0.0
    total: float = 0.0
    lexicon_miss: bool = False

    def to_json(self) -> dict:
        def num(x):
            return None if math.isinf(x) else x
        return {"y_c": list(self.y_c), "att_logp": self.att_logp,
                "ctc_logp": num(self.ctc_logp), "lm_logp": self.lm_logp,
                "total": num(self.total)}


class LmScorer(Protocol):
    def score(self, y_c: Sequence[int]) -> float: ...


class UniformLm:
    """Every coarse unit and the end token equally likely at every step."""

    def __init__(self, n_outcomes: int):
        if n_outcomes < 1:
            raise ConfigError("a language model needs at least one outcome")
        self.step = -math.log(n_outcomes)

    def score(self, y_c: Sequence[int]) -> float:
        return (len(y_c) + 1) * self.step


@dataclass
class SearchContext:
    """Per-utterance decoder inputs: memory (1, T, d), its mask and the decoder embedding."""

    x_ae: torch.Tensor
    mask: torch.Tensor
    emb: Optional[torch.Tensor]


def search_contexts(model, out) -> List[SearchContext]:
    """Split an encoded batch into per-utterance contexts trimmed to their own length."""
    emb = model.decoder_emb(out)
    ctxs = []
    for b, n in enumerate(out.enc.lengths.tolist()):
        e = None
        if emb is not None:
            e = emb[b:b + 1] if emb.shape[1] == 1 else emb[b:b + 1, :n]
        ctxs.append(SearchContext(out.x_ae[b:b + 1, :n], out.enc.mask[b:b + 1, :n], e))
    return ctxs


def _step_log_probs(model, ctx: SearchContext, prefixes: List[Tuple[int, ...]]) -> np.ndarray:
    n = len(prefixes)
    ys = torch.as_tensor([list(p) for p in prefixes], dtype=torch.long)
    emb = None if ctx.emb is None else ctx.emb.expand(n, -1, -1)
    logp = model.decoder(ctx.x_ae.expand(n, -1, -1), ctx.mask.expand(n, -1), ys, None, emb)
    return logp[:, -1].double().numpy()


def _forbidden(model) -> List[int]:
    # BOS and UNK are never emitted
    cfg = model.cfg
    return sorted({cfg.bos_id, cfg.unk_id} - {cfg.eos_id})


def max_length(n_frames: int) -> int:
    return 2 * n_frames + 5


@torch.no_grad()
def beam_search(model, ctx: SearchContext, beam: int = 4,
                max_len: Optional[int] = None) -> List[Hypothesis]:
    """N-best coarse hypotheses sorted by attention score, ties by token ids.

    At ``max_len`` emitted units only the end token may follow.
    """
    if beam < 1:
        raise ConfigError("beam must be >= 1")
    cfg = model.cfg
    bos, eos = cfg.bos_id, cfg.eos_id
    if max_len is None:
        max_len = max_length(int(ctx.mask.sum()))
    banned = _forbidden(model)
    alive: List[Tuple[float, Tuple[int, ...]]] = [(0.0, (bos,))]
    done: List[Tuple[float, Tuple[int, ...]]] = []
    while alive:
        logp = _step_log_probs(model, ctx, [p for _, p in alive])
        logp[:, banned] = NEG_INF
        cands = []
        for (score, prefix), row in zip(alive, logp):
            if len(prefix) - 1 >= max_len:
                cands.append((score + row[eos], prefix + (eos,)))
                continue
            for tok in np.flatnonzero(np.isfinite(row)):
                cands.append((score + float(row[tok]), prefix + (int(tok),)))
        cands.sort(key=lambda c: (-c[0], c[1]))
        alive = []
        for score, seq in cands[:beam]:
            (done if seq[-1] == eos else alive).append((score, seq))
        done.sort(key=lambda c: (-c[0], c[1]))
        done = done[:beam]
        # scores only decrease, so nothing alive can overtake a full N-best list
        if len(done) >= beam and (not alive or alive[0][0] < done[-1][0]):
            break
    return [Hypothesis(y_c=seq[1:-1], att_logp=score, total=score) for score, seq in done]


@torch.no_grad()
def greedy_batch(model, out, max_len: Optional[int] = None) -> List[Tuple[Tuple[int, ...], float]]:
    """Batched greedy decoding over a whole encoded batch; same result as beam 1."""
    cfg = model.cfg
    B = out.x_ae.shape[0]
    lengths = out.enc.lengths
    limit = [max_length(int(n)) if max_len is None else max_len for n in lengths]
    emb = model.decoder_emb(out)
    banned = _forbidden(model)
    ys = torch.full((B, 1), cfg.bos_id, dtype=torch.long)
    scores = torch.zeros(B, dtype=torch.float64)
    finished = torch.zeros(B, dtype=torch.bool)
    step = 0
    while not finished.all():
        logp = model.decoder(out.x_ae, out.enc.mask, ys, None, emb)[:, -1].double()
        logp[:, banned] = NEG_INF
        forced = torch.as_tensor([step >= m for m in limit])
        logp[forced] = torch.where(
            torch.arange(logp.shape[1]) == cfg.eos_id, logp[forced], torch.tensor(NEG_INF))
        tok = logp.argmax(-1)
        tok = torch.where(finished, torch.full_like(tok, cfg.eos_id), tok)
        scores += torch.where(finished, torch.zeros_like(scores),
                              logp.gather(1, tok[:, None]).squeeze(1))
        ys = torch.cat([ys, tok[:, None]], dim=1)
        finished |= tok == cfg.eos_id
        step += 1
    result = []
    for b in range(B):
        seq = ys[b, 1:].tolist()
        result.append((tuple(seq[:seq.index(cfg.eos_id)]), float(scores[b])))
    return result


def score_hypothesis(hyp: Hypothesis, ctc_log_probs: np.ndarray, lexicon: Lexicon,
                     w1: float, w2: float, w3: float, lm: Optional[LmScorer] = None,
                     length_penalty: float = 0.0, blank: int = 0) -> Hypothesis:
    miss = False
    try:
        ctc = ctc_score(ctc_log_probs, lexicon.expand_ids(hyp.y_c), blank)
    except LexiconMiss:
        ctc, miss = NEG_INF, True
    lm_logp = lm.score(hyp.y_c) if lm is not None else 0.0
    # a zero weight drops its term outright, so 0 * -inf never arises
    total = w1 * hyp.att_logp
    if w2:
        total += w2 * ctc
    if w3:
        total += w3 * lm_logp
    total += length_penalty * len(hyp.y_c)
    return replace(hyp, ctc_logp=ctc, lm_logp=lm_logp, total=total, lexicon_miss=miss)


def two_granularity_rescore(hyps: Sequence[Hypothesis], ctc_log_probs, lexicon: Lexicon,
                            w1: float = 1.0, w2: float = 0.3, w3: float = 0.0,
                            lm: Optional[LmScorer] = None, length_penalty: float = 0.0,
                            blank: int = 0) -> Tuple[Hypothesis, List[Hypothesis]]:
    """Best hypothesis plus the rescored list in first-pass order.

    Ties keep the first-pass order. When every total is -inf the attention
    ranking decides.
    """
    if min(w1, w2, w3) < 0:
        raise ConfigError("rescoring weights must be nonnegative")
    if not hyps:
        raise ConfigError("nothing to rescore")
    if isinstance(ctc_log_probs, torch.Tensor):
        ctc_log_probs = ctc_log_probs.detach().double().numpy()
    scored = [score_hypothesis(h, ctc_log_probs, lexicon, w1, w2, w3, lm, length_penalty, blank)
              for h in hyps]
    totals = [h.total for h in scored]
    if all(t == NEG_INF for t in totals):
        warnings.warn("every hypothesis is infeasible under CTC; keeping the attention ranking")
        return scored[0], scored
    best = max(range(len(scored)), key=lambda k: (totals[k], -k))
    return scored[best], scored


def write_decode_jsonl(path, records: Iterable[dict]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def decode_record(utt_id: str, best: Hypothesis, nbest: Sequence[Hypothesis]) -> dict:
    return {"utt_id": utt_id, "best": list(best.y_c), "nbest": [h.to_json() for h in nbest]}


def accent_record(utt_id: str, posteriors: Sequence[float]) -> dict:
    post = [float(p) for p in posteriors]
    return {"utt_id": utt_id, "posteriors": post, "argmax": int(np.argmax(post))}


@dataclass
class DecodedUtterance:
    utt_id: str
    best: Hypothesis
    nbest: List[Hypothesis]        # rescored, in first-pass order
    posteriors: List[float]


def make_lm(name: str, lexicon: Lexicon) -> Optional[LmScorer]:
    if name == "none":
        return None
    if name == "uniform":
        inv = lexicon.inventory
        return UniformLm(len(inv.coarse) - len(inv.coarse_special_ids) + 1)
    raise ConfigError(f"lm must be 'none' or 'uniform', got {name!r}")


@torch.no_grad()
def decode_utterances(model, utts, ctc_lexicon: Lexicon, beam: int = 4, w1: float = 1.0,
                      w2: float = 0.3, w3: float = 0.0, lm: Optional[LmScorer] = None,
                      length_penalty: float = 0.0, batch_size: int = 50,
                      first_pass_only: bool = False) -> List[DecodedUtterance]:
    """Beam search every utterance, then rescore unless ``first_pass_only``."""
    from .model import make_batch

    model.eval()
    cfg = model.cfg
    dtype = next(model.parameters()).dtype
    results = []
    for start in range(0, len(utts), batch_size):
        chunk = utts[start:start + batch_size]
        b = make_batch(chunk, ctc_lexicon, cfg.bos_id, cfg.eos_id, dtype=dtype)
        out = model.encode(b.x, b.lengths)
        post = out.accent.utterance_posteriors().double().tolist()
        lp = out.ctc_log_probs.double().numpy()
        for k, (u, ctx) in enumerate(zip(chunk, search_contexts(model, out))):
            hyps = beam_search(model, ctx, beam)
            if first_pass_only:
                best, scored = hyps[0], hyps
            else:
                n = int(out.enc.lengths[k])
                best, scored = two_granularity_rescore(hyps, lp[k, :n], ctc_lexicon, w1, w2, w3,
                                                       lm, length_penalty, cfg.blank_id)
            results.append(DecodedUtterance(u.utt_id, best, list(scored), post[k]))
    return results
