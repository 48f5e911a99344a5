"""DIMNet: triple encoder, fine-unit CTC branch, accent branch and fused
coarse-unit attention branch in one module."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .accent import (EMBEDDING_KINDS, AccentOutput, EmbeddingAdapter, LasasBranch,
                     LasasConfig, accent_loss, build_inputs, make_embedding,
                     raw_embedding_width)
from .attention import ROUTING, AttentionDecoder, apply_scheme, attention_loss
from .ctc import AlignmentStats, aligned_text, batch_ctc_loss
from .encoder import SharedEncoderOutput, TripleEncoder
from .errors import ConfigError
from .synthgen import Utterance
from .vocab import Lexicon

UNITS_MODES = ("two-granularity", "coarse-only")


@dataclass
class ModelConfig:
    feat_dim: int
    ctc_vocab: int             # fine inventory incl. blank and silence
    coarse_vocab: int
    n_accents: int
    d_model: int = 64
    d_ff: int = 128
    n_heads: int = 2
    n_shared: int = 3
    n_ctc: int = 2
    n_att: int = 2
    n_dec: int = 2
    kernel_size: int = 7
    subsample: int = 1
    dropout: float = 0.0
    block_kind: str = "conv-augmented"
    triple_encoder: bool = True
    units: str = "two-granularity"
    n_spaces: int = 8
    bimodal_width: int = 64
    d_k: int = 16
    ar_level: str = "frame"
    ar_blocks: int = 2
    emb_kind: str = "dnn"
    scheme: str = "AF_ied"
    detach: bool = True
    blank_id: int = 0
    sil_id: int = 1
    unk_id: int = 0
    bos_id: int = 1
    eos_id: int = 2

    def validate(self):
        if self.scheme not in ROUTING:
            raise ConfigError(f"scheme must be one of {tuple(ROUTING)}")
        if self.emb_kind not in EMBEDDING_KINDS:
            raise ConfigError(f"emb_kind must be one of {EMBEDDING_KINDS}")
        if self.units not in UNITS_MODES:
            raise ConfigError(f"units must be one of {UNITS_MODES}")
        if self.subsample < 1:
            raise ConfigError("subsample must be >= 1")
        if self.n_shared < 1:
            raise ConfigError("n_shared must be >= 1")

    def lasas(self) -> LasasConfig:
        return LasasConfig(acoustic_dim=3 * self.d_model, text_dim=self.ctc_vocab,
                           n_accents=self.n_accents, n_spaces=self.n_spaces,
                           width=self.bimodal_width, d_k=self.d_k, level=self.ar_level,
                           n_blocks=self.ar_blocks, n_heads=self.n_heads, d_ff=self.d_ff)


@dataclass
class Batch:
    utt_ids: List[str]
    x: torch.Tensor            # (B, T0, F)
    lengths: torch.Tensor      # (B,)
    ctc_targets: List[List[int]]
    ys_in: torch.Tensor        # (B, U) BOS + y_c, padded with EOS
    ys_out: torch.Tensor       # (B, U) y_c + EOS
    ys_lengths: torch.Tensor
    accent: torch.Tensor       # (B,)
    ar_mask: torch.Tensor      # (B,) bool, False drops the utterance from the accent loss

    def __len__(self):
        return len(self.utt_ids)


def make_batch(utts: Sequence[Utterance], ctc_lexicon: Lexicon, bos_id: int, eos_id: int,
               ar_mask: Optional[Sequence[bool]] = None, dtype=torch.float32) -> Batch:
    B = len(utts)
    T0 = max(u.num_frames for u in utts)
    F_ = utts[0].frames.shape[1]
    x = np.zeros((B, T0, F_), dtype=np.float32)
    for b, u in enumerate(utts):
        x[b, :u.num_frames] = u.frames
    U = max(len(u.y_c) for u in utts) + 1
    ys_in = torch.full((B, U), eos_id, dtype=torch.long)
    ys_out = torch.full((B, U), eos_id, dtype=torch.long)
    for b, u in enumerate(utts):
        n = len(u.y_c)
        ys_in[b, 0] = bos_id
        ys_in[b, 1:n + 1] = torch.as_tensor(u.y_c, dtype=torch.long)
        ys_out[b, :n] = torch.as_tensor(u.y_c, dtype=torch.long)
    mask = torch.ones(B, dtype=torch.bool) if ar_mask is None else torch.as_tensor(ar_mask)
    return Batch(
        utt_ids=[u.utt_id for u in utts],
        x=torch.from_numpy(x).to(dtype),
        lengths=torch.as_tensor([u.num_frames for u in utts], dtype=torch.long),
        ctc_targets=[ctc_lexicon.expand_ids(u.y_c) for u in utts],
        ys_in=ys_in, ys_out=ys_out,
        ys_lengths=torch.as_tensor([len(u.y_c) + 1 for u in utts], dtype=torch.long),
        accent=torch.as_tensor([u.accent for u in utts], dtype=torch.long),
        ar_mask=mask.bool(),
    )


@dataclass
class ForwardOutput:
    enc: SharedEncoderOutput
    ctc_log_probs: torch.Tensor    # (B, T, V_fine)
    aligned: torch.Tensor          # (B, T)
    accent: AccentOutput
    emb: Optional[torch.Tensor]
    x_ae: torch.Tensor
    att_log_probs: Optional[torch.Tensor] = None
    losses: Dict[str, torch.Tensor] = field(default_factory=dict)


class DIMNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        n_shared, n_ctc, n_att = cfg.n_shared, cfg.n_ctc, cfg.n_att
        if not cfg.triple_encoder:
            # one deep shared stack serves both decoders directly
            n_shared, n_ctc, n_att = cfg.n_shared + max(cfg.n_ctc, cfg.n_att), 0, 0
        to_enc, to_dec = ROUTING[cfg.scheme]
        emb_width = cfg.bimodal_width
        self.encoder = TripleEncoder(cfg.feat_dim, cfg.d_model, cfg.d_ff, cfg.n_heads,
                                     n_shared, n_ctc, n_att, emb_width if to_enc else 0,
                                     cfg.kernel_size, cfg.subsample, cfg.dropout, cfg.block_kind)
        self.ctc_head = nn.Linear(cfg.d_model, cfg.ctc_vocab)
        lcfg = cfg.lasas()
        self.lasas = LasasBranch(lcfg)
        self.adapter = EmbeddingAdapter(cfg.emb_kind, raw_embedding_width(lcfg, cfg.emb_kind),
                                        emb_width)
        self.decoder = AttentionDecoder(cfg.coarse_vocab, cfg.d_model, cfg.d_ff, cfg.n_heads,
                                        cfg.n_dec, emb_width if to_dec else 0, cfg.dropout)
        self.align_stats = AlignmentStats()

    # parameter groups, used by the gradient-isolation checks
    def accent_parameters(self):
        return list(self.lasas.parameters())

    def asr_parameters(self):
        acc = {id(p) for p in self.accent_parameters()}
        return [p for p in self.parameters() if id(p) not in acc]

    def encode(self, x: torch.Tensor, lengths: torch.Tensor) -> ForwardOutput:
        cfg = self.cfg
        enc = self.encoder.shared_forward(x, lengths)
        ctc_lp = F.log_softmax(self.ctc_head(self.encoder.ctc_encode(enc.x_se, enc.mask)), -1)
        aligned = aligned_text(ctc_lp, enc.lengths, cfg.blank_id, cfg.sil_id, self.align_stats)
        x_a, x_t = build_inputs(enc.taps, aligned, cfg.ctc_vocab, detach=cfg.detach)
        acc = self.lasas(x_a, x_t, enc.mask)
        emb = None
        if cfg.scheme != "AF_i":
            emb = make_embedding(acc, cfg.emb_kind, self.adapter, detach=cfg.detach)
        enc_emb, _ = apply_scheme(cfg.scheme, emb)
        x_ae = self.encoder.att_encode(enc.x_se, enc.mask, enc_emb)
        return ForwardOutput(enc, ctc_lp, aligned, acc, emb, x_ae)

    def decoder_emb(self, out: ForwardOutput) -> Optional[torch.Tensor]:
        return apply_scheme(self.cfg.scheme, out.emb)[1]

    def decode_step(self, out: ForwardOutput, ys_in: torch.Tensor, ys_lengths=None):
        return self.decoder(out.x_ae, out.enc.mask, ys_in, ys_lengths, self.decoder_emb(out))

    def forward(self, batch: Batch, class_weights: Optional[torch.Tensor] = None,
                smoothing: float = 0.1) -> ForwardOutput:
        out = self.encode(batch.x, batch.lengths)
        out.att_log_probs = self.decode_step(out, batch.ys_in, batch.ys_lengths)
        l_att = attention_loss(out.att_log_probs, batch.ys_out, batch.ys_lengths, smoothing)
        per_utt = batch_ctc_loss(out.ctc_log_probs, out.enc.lengths, batch.ctc_targets,
                                 self.cfg.blank_id)
        feasible = torch.isfinite(per_utt)
        # infeasible utterances contribute nothing rather than poisoning the batch
        l_ctc = torch.where(feasible, per_utt, torch.zeros_like(per_utt)).sum() \
            / feasible.sum().clamp_min(1)
        l_ar = accent_loss(out.accent, batch.accent, class_weights, batch.ar_mask)
        out.losses = {"att": l_att, "ctc": l_ctc, "ar": l_ar}
        return out
