"""Finite-difference checks over every block kind, both branches' losses and
the full combined objective, all in float64."""
from __future__ import annotations

from typing import Dict

import numpy as np
import torch

from .accent import LasasBranch, LasasConfig, accent_loss, build_inputs
from .attention import AttentionDecoder, attention_loss
from .ctc import batch_ctc_loss
from .model import make_batch
from .nnet import DecoderLayer, grad_check, lengths_to_mask, make_encoder_block
from .synthgen import CorpusSpec, generate_corpus
from .training import TrainConfig, build_model, combine_losses, ctc_lexicon

DTYPE = torch.float64


def _params(module):
    return [p for p in module.parameters() if p.requires_grad]


def block_checks(seed: int = 0, eps: float = 1e-6) -> Dict[str, float]:
    torch.manual_seed(seed)
    B, T, d = 2, 7, 16
    x = torch.randn(B, T, d, dtype=DTYPE, requires_grad=True)
    mask = lengths_to_mask(torch.tensor([7, 5]), T)
    w = torch.randn(B, T, d, dtype=DTYPE)
    out = {}
    for kind in ("feedforward", "self-attention", "conv-augmented"):
        blk = make_encoder_block(kind, d, 32, 2, 3).to(DTYPE)
        out[kind] = grad_check(lambda: (blk(x, mask) * w).sum(), [x] + _params(blk), eps)
    dec = DecoderLayer(d, 32, 2, d + 4).to(DTYPE)
    mem = torch.randn(B, 9, d + 4, dtype=DTYPE, requires_grad=True)
    causal = torch.ones(T, T, dtype=torch.bool).tril()[None].expand(B, -1, -1)
    mmask = lengths_to_mask(torch.tensor([9, 6]), 9)[:, None, :]
    out["cross-attention"] = grad_check(lambda: (dec(x, mem, causal, mmask) * w).sum(),
                                        [x, mem] + _params(dec), eps)
    return out


def loss_checks(seed: int = 0, eps: float = 1e-6) -> Dict[str, float]:
    torch.manual_seed(seed)
    out = {}
    B, T, V = 2, 8, 5
    cfg = LasasConfig(acoustic_dim=12, text_dim=V, n_accents=3, n_spaces=2, width=10, d_k=3,
                      n_heads=2, d_ff=16)
    lasas = LasasBranch(cfg).to(DTYPE)
    taps = [torch.randn(B, T, 4, dtype=DTYPE) for _ in range(3)]
    aligned = torch.randint(1, V, (B, T))
    mask = lengths_to_mask(torch.tensor([8, 6]), T)
    y = torch.tensor([0, 2])
    weights = torch.tensor([1.0, 2.0, 0.5], dtype=DTYPE)

    def lasas_loss():
        x_a, x_t = build_inputs(taps, aligned, V, detach=True)
        return accent_loss(lasas(x_a, x_t, mask), y, weights)

    out["lasas path + accent loss"] = grad_check(lasas_loss, _params(lasas), eps)

    dec = AttentionDecoder(7, 8, 16, 2, 1).to(DTYPE)
    mem = torch.randn(B, 6, 8, dtype=DTYPE)
    mmask = lengths_to_mask(torch.tensor([6, 4]), 6)
    ys_in = torch.tensor([[1, 3, 4, 5], [1, 6, 2, 2]])
    ys_out = torch.tensor([[3, 4, 5, 2], [6, 2, 2, 2]])
    ylen = torch.tensor([4, 2])
    out["attention loss"] = grad_check(
        lambda: attention_loss(dec(mem, mmask, ys_in, ylen), ys_out, ylen, 0.1), _params(dec), eps)

    logits = torch.randn(B, T, V, dtype=DTYPE, requires_grad=True)
    lens = torch.tensor([8, 6])
    targets = [[1, 2, 2], [3, 4]]
    out["ctc loss"] = grad_check(
        lambda: batch_ctc_loss(torch.log_softmax(logits, -1), lens, targets, 0).sum(), [logits], eps)
    return out


def full_model_check(seed: int = 0, eps: float = 1e-5, **overrides) -> float:
    """Combined objective of a small DIMNet on a 2-utterance synthetic batch.

    Runs with gradient isolation off by default: with it on, the backward
    pass deliberately ignores forward dependencies, so finite differences
    would not match by construction.
    """
    overrides.setdefault("detach", False)
    spec = CorpusSpec(n_train=2, n_dev=0, n_test=0, utt_len=(2, 3), seed=seed)
    corpus = generate_corpus(spec)
    cfg = TrainConfig(d_model=16, d_ff=32, n_shared=3, n_ctc=1, n_att=1, n_dec=1,
                      bimodal_width=16, n_spaces=4, d_k=4, ar_blocks=1, seed=seed)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    torch.manual_seed(seed)
    model = build_model(cfg, corpus.lexicon, spec.feat_dim, spec.n_accents).to(DTYPE)
    batch = make_batch(corpus["train"], ctc_lexicon(corpus.lexicon, cfg.units),
                       model.cfg.bos_id, model.cfg.eos_id, dtype=DTYPE)
    weights = torch.tensor(np.linspace(1.0, 2.0, spec.n_accents), dtype=DTYPE)

    def loss():
        out = model(batch, weights, cfg.smoothing)
        return combine_losses(out.losses["att"], out.losses["ctc"], out.losses["ar"],
                              cfg.w_att, cfg.w_ctc, cfg.w_ar)

    return grad_check(loss, _params(model), eps)


def run_all(seed: int = 0) -> Dict[str, float]:
    results = {}
    results.update(block_checks(seed))
    results.update(loss_checks(seed))
    results["full DIMNet loss"] = full_model_check(seed)
    return results
