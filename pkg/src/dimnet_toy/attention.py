"""Coarse-unit attention decoder and the four accent-fusion routes."""
from __future__ import annotations

from typing import Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import broadcast_embedding
from .errors import ConfigError, ShapeError
from .nnet import DecoderLayer, sinusoid

SCHEMES = ("AF_i", "AF_ie", "AF_id", "AF_ied")

# scheme -> (embedding enters the attention encoder, embedding enters the decoder memory)
ROUTING = {
    "AF_i": (False, False),
    "AF_ie": (True, False),
    "AF_id": (False, True),
    "AF_ied": (True, True),
}


def apply_scheme(scheme: str, emb: Optional[torch.Tensor]
                 ) -> Tuple[Optional[torch.Tensor], Optional[torch.Tensor]]:
    """Route ``emb`` to the (encoder, decoder) slots."""
    if scheme not in ROUTING:
        raise ConfigError(f"fusion scheme must be one of {SCHEMES}, got {scheme!r}")
    to_enc, to_dec = ROUTING[scheme]
    if (to_enc or to_dec) and emb is None:
        raise ConfigError(f"scheme {scheme} needs an accent embedding")
    return (emb if to_enc else None), (emb if to_dec else None)


def causal_mask(lengths: torch.Tensor, U: int) -> torch.Tensor:
    """(B, U, U) bool: position t sees positions <= t that are not padding."""
    tri = torch.ones(U, U, dtype=torch.bool).tril()
    keys = torch.arange(U)[None, :] < lengths[:, None]
    return tri[None] & keys[:, None, :]


class AttentionDecoder(nn.Module):
    def __init__(self, vocab_size: int, d_model: int = 64, d_ff: int = 128, n_heads: int = 2,
                 n_layers: int = 2, emb_width: int = 0, dropout: float = 0.0):
        super().__init__()
        self.vocab_size, self.d_model, self.emb_width = vocab_size, d_model, emb_width
        self.embed = nn.Embedding(vocab_size, d_model)
        self.layers = nn.ModuleList(
            DecoderLayer(d_model, d_ff, n_heads, d_model + emb_width, dropout)
            for _ in range(n_layers))
        self.norm = nn.LayerNorm(d_model)
        self.out = nn.Linear(d_model, vocab_size)

    def memory(self, x_ae: torch.Tensor, emb: Optional[torch.Tensor]) -> torch.Tensor:
        if emb is None:
            if self.emb_width:
                raise ShapeError("decoder was built for a fused memory but got no embedding")
            return x_ae
        if emb.shape[-1] != self.emb_width:
            raise ShapeError(f"decoder expects embedding width {self.emb_width}, "
                             f"got {emb.shape[-1]}")
        return torch.cat([x_ae, broadcast_embedding(emb, x_ae.shape[1])], dim=-1)

    def forward(self, x_ae: torch.Tensor, memory_mask: torch.Tensor, ys_in: torch.Tensor,
                ys_lengths: Optional[torch.Tensor] = None,
                emb: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Teacher-forced log-posteriors (B, U, V) for inputs ``ys_in`` starting with BOS."""
        B, U = ys_in.shape
        if ys_lengths is None:
            ys_lengths = torch.full((B,), U, dtype=torch.long)
        mem = self.memory(x_ae, emb)
        h = self.embed(ys_in) + sinusoid(U, self.d_model, x_ae.dtype)
        self_mask = causal_mask(ys_lengths, U)
        mem_mask = memory_mask[:, None, :]
        for layer in self.layers:
            h = layer(h, mem, self_mask, mem_mask)
        return F.log_softmax(self.out(self.norm(h)), dim=-1)


def attention_loss(log_probs: torch.Tensor, targets: torch.Tensor,
                   lengths: Optional[torch.Tensor] = None, smoothing: float = 0.1) -> torch.Tensor:
    """Label-smoothed CE averaged over non-padding positions.

    The smoothed target puts ``1 - smoothing`` on the reference token and
    spreads ``smoothing`` uniformly over the whole vocabulary.
    """
    B, U, V = log_probs.shape
    if targets.shape != (B, U):
        raise ShapeError(f"targets {tuple(targets.shape)} do not match {(B, U)}")
    nll = -log_probs.gather(-1, targets[..., None]).squeeze(-1)
    per_pos = (1.0 - smoothing) * nll - smoothing * log_probs.mean(-1) if smoothing else nll
    if lengths is None:
        return per_pos.mean()
    keep = (torch.arange(U)[None, :] < lengths[:, None]).to(per_pos.dtype)
    return (per_pos * keep).sum() / keep.sum().clamp_min(1.0)
