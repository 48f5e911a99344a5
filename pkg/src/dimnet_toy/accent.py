"""Accent branch built on linguistic-acoustic similarity.

Aligned fine-unit text is mapped into ``N`` anchor spaces; the concatenated
shared-encoder taps are mapped into the same spaces; per frame, the scaled dot
product in each space gives one column of the accent shift ``s``. The shift
plus a dimension-reduced copy of the text form the bimodal representation
consumed by a small Transformer classifier.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError
from .nnet import SelfAttentionBlock

EMBEDDING_KINDS = ("dnn", "pp", "sim")
LEVELS = ("frame", "utterance")


@dataclass
class LasasConfig:
    acoustic_dim: int          # three concatenated encoder taps
    text_dim: int              # size of the aligned-text alphabet
    n_accents: int
    n_spaces: int = 8          # N
    width: int = 64            # C
    d_k: int = 16
    level: str = "frame"
    n_blocks: int = 2
    n_heads: int = 2
    d_ff: int = 128
    use_text: bool = True

    def validate(self):
        if self.n_spaces < 1:
            raise ConfigError("need at least one mapping space")
        if self.width <= self.n_spaces:
            raise ConfigError("bimodal width C must exceed the number of spaces N")
        if self.d_k < 1:
            raise ConfigError("d_k must be positive")
        if self.level not in LEVELS:
            raise ConfigError(f"level must be one of {LEVELS}")


@dataclass
class AccentShift:
    s: torch.Tensor            # (B, T, N)


@dataclass
class BimodalRep:
    x_bm: torch.Tensor         # (B, T, C) = [s | v_td]
    v_td: torch.Tensor         # (B, T, C - N)


@dataclass
class AccentOutput:
    log_posteriors: torch.Tensor   # (B, T, K) frame level or (B, 1, K) utterance level
    hidden: torch.Tensor           # activations feeding the last linear layer
    shift: torch.Tensor            # (B, T, N)
    mask: torch.Tensor             # (B, T) bool
    level: str

    @property
    def posteriors(self) -> torch.Tensor:
        return self.log_posteriors.exp()

    def utterance_posteriors(self) -> torch.Tensor:
        """(B, K); frame-level rows are averaged over valid frames."""
        p = self.posteriors
        if self.level == "utterance":
            return p[:, 0]
        m = self.mask[..., None].to(p.dtype)
        return (p * m).sum(1) / m.sum(1).clamp_min(1.0)

    def predict(self) -> torch.Tensor:
        return self.utterance_posteriors().argmax(dim=-1)


def build_inputs(taps: Sequence[torch.Tensor], aligned: torch.Tensor, text_dim: int,
                 detach: bool = True) -> Tuple[torch.Tensor, torch.Tensor]:
    """x_a = concat of the three taps; x_t = one-hot of the aligned ids."""
    T = taps[0].shape[1]
    if any(t.shape[:2] != taps[0].shape[:2] for t in taps) or aligned.shape[1] != T:
        raise ShapeError("taps and aligned text must share batch and time axes")
    x_a = torch.cat(list(taps), dim=-1)
    if detach:
        x_a = x_a.detach()
    x_t = F.one_hot(aligned.long(), text_dim).to(x_a.dtype)
    return x_a, x_t


class LasasBranch(nn.Module):
    def __init__(self, cfg: LasasConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        N, C, dk = cfg.n_spaces, cfg.width, cfg.d_k
        self.text_map = nn.Linear(cfg.text_dim, N * dk, bias=False)        # W_t^1..N
        self.acoustic_map = nn.Linear(cfg.acoustic_dim, N * dk, bias=False)  # W_a^1..N
        self.text_reduce = nn.Linear(cfg.text_dim, C - N, bias=False)      # W_td
        self.blocks = nn.ModuleList(SelfAttentionBlock(C, cfg.d_ff, cfg.n_heads)
                                    for _ in range(cfg.n_blocks))
        self.hidden = nn.Linear(C, C)
        self.out = nn.Linear(C, cfg.n_accents)

    def accent_shift(self, x_a: torch.Tensor, x_t: torch.Tensor) -> AccentShift:
        cfg = self.cfg
        if x_a.shape[-1] != cfg.acoustic_dim or x_t.shape[-1] != cfg.text_dim:
            raise ShapeError(f"expected widths ({cfg.acoustic_dim}, {cfg.text_dim}), "
                             f"got ({x_a.shape[-1]}, {x_t.shape[-1]})")
        B, T, _ = x_a.shape
        v_a = self.acoustic_map(x_a).view(B, T, cfg.n_spaces, cfg.d_k)
        v_t = self.text_map(x_t).view(B, T, cfg.n_spaces, cfg.d_k)
        return AccentShift((v_a * v_t).sum(-1) / math.sqrt(cfg.d_k))

    def bimodal(self, x_t: torch.Tensor, shift: AccentShift) -> BimodalRep:
        if x_t.shape[:2] != shift.s.shape[:2]:
            raise ShapeError("text and shift disagree on (B, T)")
        v_td = self.text_reduce(x_t)
        return BimodalRep(torch.cat([shift.s, v_td], dim=-1), v_td)

    def classify(self, x_bm: torch.Tensor, mask: torch.Tensor, shift: torch.Tensor,
                 level: Optional[str] = None) -> AccentOutput:
        level = level or self.cfg.level
        h = x_bm
        for block in self.blocks:
            h = block(h, mask)
        if level == "utterance":
            m = mask[..., None].to(h.dtype)
            h = (h * m).sum(1, keepdim=True) / m.sum(1, keepdim=True).clamp_min(1.0)
        hidden = F.silu(self.hidden(h))
        logp = F.log_softmax(self.out(hidden), dim=-1)
        return AccentOutput(logp, hidden, shift, mask, level)

    def forward(self, x_a, x_t, mask, level: Optional[str] = None) -> AccentOutput:
        shift = self.accent_shift(x_a, x_t)
        if not self.cfg.use_text:
            # text-free ablation: anchors and reference both come from the acoustics
            x_t = torch.zeros_like(x_t)
        rep = self.bimodal(x_t, shift)
        return self.classify(rep.x_bm, mask, shift.s, level)


def accent_loss(out: AccentOutput, y_ar: torch.Tensor,
                class_weights: Optional[torch.Tensor] = None,
                utt_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Weighted CE averaged over (unmasked) utterances.

    Frame level: per-utterance loss is the mean CE over its valid frames.
    """
    K = out.log_posteriors.shape[-1]
    if y_ar.min() < 0 or y_ar.max() >= K:
        raise ConfigError(f"accent labels must lie in [0, {K})")
    picked = out.log_posteriors.gather(
        -1, y_ar[:, None, None].expand(-1, out.log_posteriors.shape[1], 1)).squeeze(-1)
    if out.level == "frame":
        m = out.mask.to(picked.dtype)
        per_utt = -(picked * m).sum(1) / m.sum(1).clamp_min(1.0)
    else:
        per_utt = -picked[:, 0]
    if class_weights is not None:
        per_utt = per_utt * class_weights.to(per_utt.dtype)[y_ar]
    if utt_mask is not None:
        keep = utt_mask.to(per_utt.dtype)
        return (per_utt * keep).sum() / keep.sum().clamp_min(1.0)
    return per_utt.mean()


def inverse_frequency_weights(counts: Sequence[int]) -> torch.Tensor:
    """w_a = n_max / n_a: each class weighted by its size relative to the largest class."""
    c = torch.as_tensor(counts, dtype=torch.float64).clamp_min(1.0)
    return c.max() / c


def raw_embedding(out: AccentOutput, kind: str) -> torch.Tensor:
    if kind == "dnn":
        return out.hidden
    if kind == "pp":
        return out.posteriors
    if kind == "sim":
        return out.shift
    raise ConfigError(f"embedding kind must be one of {EMBEDDING_KINDS}")


def raw_embedding_width(cfg: LasasConfig, kind: str) -> int:
    return {"dnn": cfg.width, "pp": cfg.n_accents, "sim": cfg.n_spaces}[kind]


class EmbeddingAdapter(nn.Module):
    """Up-projection applied on the ASR side of the detach boundary.

    ``dnn`` embeddings pass through unchanged; ``pp`` and ``sim`` go through a
    linear layer to ``target_width``.
    """

    def __init__(self, kind: str, in_width: int, target_width: int):
        super().__init__()
        if kind not in EMBEDDING_KINDS:
            raise ConfigError(f"embedding kind must be one of {EMBEDDING_KINDS}")
        self.kind, self.in_width, self.target_width = kind, in_width, target_width
        self.proj = None if kind == "dnn" else nn.Linear(in_width, target_width)

    def forward(self, raw: torch.Tensor) -> torch.Tensor:
        emb = raw if self.proj is None else self.proj(raw)
        if emb.shape[-1] != self.target_width:
            raise ShapeError(f"embedding width {emb.shape[-1]} != {self.target_width}")
        return emb


def make_embedding(out: AccentOutput, kind: str, adapter: EmbeddingAdapter,
                   detach: bool = True) -> torch.Tensor:
    raw = raw_embedding(out, kind)
    if detach:
        raw = raw.detach()
    return adapter(raw)
