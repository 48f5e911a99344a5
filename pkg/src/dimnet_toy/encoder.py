"""Shared encoder feeding separate CTC and attention encoders.

The shared stack exposes its outputs at 1/3, 2/3 and 3/3 depth for the
accent branch. The attention encoder optionally takes an accent embedding,
concatenated on the feature axis and projected back to ``d_model``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn as nn

from .errors import ShapeError
from .nnet import Subsampling, lengths_to_mask, make_encoder_block, sinusoid


def tap_layers(n_layers: int) -> Tuple[int, int, int]:
    """1-based layer indices of the three taps."""
    if n_layers < 1:
        raise ShapeError("shared encoder needs at least one layer")
    return (math.ceil(n_layers / 3), math.ceil(2 * n_layers / 3), n_layers)


@dataclass
class SharedEncoderOutput:
    x_se: torch.Tensor                      # (B, T, d)
    taps: Tuple[torch.Tensor, torch.Tensor, torch.Tensor]
    lengths: torch.Tensor                   # (B,)
    mask: torch.Tensor                      # (B, T) bool


def broadcast_embedding(emb: torch.Tensor, T: int) -> torch.Tensor:
    """(B, 1 or T, e) -> (B, T, e)."""
    if emb.dim() != 3:
        raise ShapeError(f"embedding must be (B, 1|T, e), got {tuple(emb.shape)}")
    if emb.shape[1] == T:
        return emb
    if emb.shape[1] == 1:
        return emb.expand(-1, T, -1)
    raise ShapeError(f"embedding time length {emb.shape[1]} is neither 1 nor {T}")


class TripleEncoder(nn.Module):
    def __init__(self, feat_dim: int, d_model: int = 64, d_ff: int = 128, n_heads: int = 2,
                 n_shared: int = 3, n_ctc: int = 2, n_att: int = 2, emb_width: int = 0,
                 kernel_size: int = 7, subsample: int = 1, dropout: float = 0.0,
                 block_kind: str = "conv-augmented"):
        super().__init__()
        self.d_model = d_model
        self.emb_width = emb_width
        self.front = Subsampling(feat_dim, d_model, subsample)

        def stack(n):
            return nn.ModuleList(make_encoder_block(block_kind, d_model, d_ff, n_heads,
                                                    kernel_size, dropout) for _ in range(n))

        self.shared = stack(n_shared)
        self.ctc_blocks = stack(n_ctc)
        self.att_blocks = stack(n_att)
        self.taps_at = tap_layers(n_shared)
        self.emb_proj = nn.Linear(d_model + emb_width, d_model) if emb_width else None

    def shared_forward(self, x: torch.Tensor, lengths: torch.Tensor) -> SharedEncoderOutput:
        if x.dim() != 3 or x.shape[1] == 0:
            raise ShapeError(f"expected non-empty (B, T0, F) input, got {tuple(x.shape)}")
        h, lengths = self.front(x, lengths)
        h = h + sinusoid(h.shape[1], self.d_model, h.dtype)
        mask = lengths_to_mask(lengths, h.shape[1])
        taps = {}
        for i, block in enumerate(self.shared, 1):
            h = block(h, mask)
            taps[i] = h
        i, j, k = self.taps_at
        return SharedEncoderOutput(x_se=h, taps=(taps[i], taps[j], taps[k]),
                                   lengths=lengths, mask=mask)

    def ctc_encode(self, x_se: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        h = x_se
        for block in self.ctc_blocks:
            h = block(h, mask)
        return h

    def att_encode(self, x_se: torch.Tensor, mask: Optional[torch.Tensor] = None,
                   emb: Optional[torch.Tensor] = None) -> torch.Tensor:
        h = x_se
        if emb is not None:
            if self.emb_proj is None or emb.shape[-1] != self.emb_width:
                raise ShapeError(f"encoder expects embedding width {self.emb_width}, "
                                 f"got {emb.shape[-1]}")
            h = self.emb_proj(torch.cat([h, broadcast_embedding(emb, h.shape[1])], dim=-1))
        for block in self.att_blocks:
            h = block(h, mask)
        return h
