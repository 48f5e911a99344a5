"""Small differentiable building blocks, the finite-difference checker and
the checkpoint container.

Encoder blocks are pre-norm and length preserving. Masks are boolean with
``True`` marking real (non-padding) positions.
"""
from __future__ import annotations

import math
import os
from typing import Callable, Dict, Iterable, Optional, Sequence, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CheckpointError, ConfigError, NumericsError, ShapeError

CHECKPOINT_VERSION = 1


def configure_threads() -> int:
    """Apply ``DIMNET_TOY_THREADS`` (default 1, which keeps runs bitwise reproducible)."""
    n = int(os.environ.get("DIMNET_TOY_THREADS", "1"))
    torch.set_num_threads(max(1, n))
    return n


def _check_width(x: torch.Tensor, d: int, who: str):
    if x.dim() != 3 or x.shape[-1] != d:
        raise ShapeError(f"{who}: expected (B, T, {d}), got {tuple(x.shape)}")


def lengths_to_mask(lengths: torch.Tensor, max_len: Optional[int] = None) -> torch.Tensor:
    max_len = int(lengths.max()) if max_len is None else max_len
    return torch.arange(max_len, device=lengths.device)[None, :] < lengths[:, None]


def sinusoid(T: int, d: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(T, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, d, 2, dtype=torch.float64) * (-math.log(10000.0) / d))
    pe = torch.zeros(T, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : d // 2]
    return pe.to(dtype)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, d_memory: Optional[int] = None):
        super().__init__()
        if d_model % n_heads:
            raise ShapeError("d_model must be divisible by n_heads")
        self.h, self.d_k = n_heads, d_model // n_heads
        d_memory = d_model if d_memory is None else d_memory
        self.d_model, self.d_memory = d_model, d_memory
        self.q = nn.Linear(d_model, d_model)
        # a key bias only adds a per-query constant to the scores, which softmax ignores
        self.k = nn.Linear(d_memory, d_model, bias=False)
        self.v = nn.Linear(d_memory, d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, query, memory, mask=None):
        """``mask``: (B, Tq or 1, Tk) bool."""
        _check_width(query, self.d_model, "attention query")
        _check_width(memory, self.d_memory, "attention memory")
        B, Tq, _ = query.shape
        Tk = memory.shape[1]
        q = self.q(query).view(B, Tq, self.h, self.d_k).transpose(1, 2)
        k = self.k(memory).view(B, Tk, self.h, self.d_k).transpose(1, 2)
        v = self.v(memory).view(B, Tk, self.h, self.d_k).transpose(1, 2)
        attn_mask = None if mask is None else mask.unsqueeze(1)
        ctx = F.scaled_dot_product_attention(q, k, v, attn_mask=attn_mask)
        ctx = ctx.transpose(1, 2).reshape(B, Tq, self.h * self.d_k)
        return self.out(ctx)


class FeedForward(nn.Module):
    """LN -> Linear -> SiLU -> Linear (no residual; callers add it)."""

    def __init__(self, d_model: int, d_ff: int, dropout: float = 0.0):
        super().__init__()
        self.norm = nn.LayerNorm(d_model)
        self.w1 = nn.Linear(d_model, d_ff)
        self.w2 = nn.Linear(d_ff, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        return self.w2(self.drop(F.silu(self.w1(self.norm(x)))))


class FeedForwardBlock(nn.Module):
    kind = "feedforward"

    def __init__(self, d_model: int, d_ff: int, dropout: float = 0.0):
        super().__init__()
        self.d_model = d_model
        self.ff = FeedForward(d_model, d_ff, dropout)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mask=None):
        _check_width(x, self.d_model, self.kind)
        return x + self.drop(self.ff(x))


class SelfAttentionBlock(nn.Module):
    """Pre-norm Transformer encoder layer."""

    kind = "self-attention"

    def __init__(self, d_model: int, d_ff: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        self.d_model = d_model
        self.norm = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads)
        self.ff = FeedForward(d_model, d_ff, dropout)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mask=None):
        _check_width(x, self.d_model, self.kind)
        att_mask = None if mask is None else mask[:, None, :]
        h = self.norm(x)
        x = x + self.drop(self.attn(h, h, att_mask))
        return x + self.drop(self.ff(x))


class ConvModule(nn.Module):
    def __init__(self, d_model: int, kernel_size: int):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ShapeError("conv kernel size must be odd to preserve length")
        self.norm = nn.LayerNorm(d_model)
        self.pw_in = nn.Linear(d_model, 2 * d_model)
        self.dw = nn.Conv1d(d_model, d_model, kernel_size, padding=kernel_size // 2, groups=d_model)
        # LayerNorm in place of BatchNorm: no batch statistics, so single-utterance
        # and batched forwards agree
        self.mid_norm = nn.LayerNorm(d_model)
        self.pw_out = nn.Linear(d_model, d_model)

    def forward(self, x, mask=None):
        h = F.glu(self.pw_in(self.norm(x)), dim=-1)
        if mask is not None:
            h = h.masked_fill(~mask[..., None], 0.0)
        h = self.dw(h.transpose(1, 2)).transpose(1, 2)
        return self.pw_out(F.silu(self.mid_norm(h)))


class ConformerBlock(nn.Module):
    """Macaron FFN / self-attention / depthwise conv / FFN, then LayerNorm."""

    kind = "conv-augmented"

    def __init__(self, d_model: int, d_ff: int, n_heads: int, kernel_size: int = 7,
                 dropout: float = 0.0):
        super().__init__()
        self.d_model = d_model
        self.ff1 = FeedForward(d_model, d_ff, dropout)
        self.attn_norm = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads)
        self.conv = ConvModule(d_model, kernel_size)
        self.ff2 = FeedForward(d_model, d_ff, dropout)
        self.out_norm = nn.LayerNorm(d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mask=None):
        _check_width(x, self.d_model, self.kind)
        x = x + 0.5 * self.drop(self.ff1(x))
        h = self.attn_norm(x)
        x = x + self.drop(self.attn(h, h, None if mask is None else mask[:, None, :]))
        x = x + self.drop(self.conv(x, mask))
        x = x + 0.5 * self.drop(self.ff2(x))
        return self.out_norm(x)


class DecoderLayer(nn.Module):
    """Causal self-attention, cross-attention over a memory of width ``d_memory``, FFN."""

    kind = "cross-attention"

    def __init__(self, d_model: int, d_ff: int, n_heads: int, d_memory: Optional[int] = None,
                 dropout: float = 0.0):
        super().__init__()
        self.d_model = d_model
        self.self_norm = nn.LayerNorm(d_model)
        self.self_attn = MultiHeadAttention(d_model, n_heads)
        self.cross_norm = nn.LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(d_model, n_heads, d_memory)
        self.ff = FeedForward(d_model, d_ff, dropout)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, memory, self_mask, memory_mask):
        _check_width(x, self.d_model, self.kind)
        h = self.self_norm(x)
        x = x + self.drop(self.self_attn(h, h, self_mask))
        x = x + self.drop(self.cross_attn(self.cross_norm(x), memory, memory_mask))
        return x + self.drop(self.ff(x))


BLOCK_KINDS = ("feedforward", "self-attention", "conv-augmented")


def make_encoder_block(kind: str, d_model: int, d_ff: int, n_heads: int,
                       kernel_size: int = 7, dropout: float = 0.0) -> nn.Module:
    if kind == "feedforward":
        return FeedForwardBlock(d_model, d_ff, dropout)
    if kind == "self-attention":
        return SelfAttentionBlock(d_model, d_ff, n_heads, dropout)
    if kind == "conv-augmented":
        return ConformerBlock(d_model, d_ff, n_heads, kernel_size, dropout)
    raise ConfigError(f"unknown block kind {kind!r}")


class Subsampling(nn.Module):
    """Single strided front layer: (B, T0, F) -> (B, ceil(T0 / factor), d)."""

    def __init__(self, feat_dim: int, d_model: int, factor: int = 1):
        super().__init__()
        self.feat_dim, self.factor = feat_dim, factor
        self.proj = nn.Conv1d(feat_dim, d_model, kernel_size=factor, stride=factor)

    def output_lengths(self, lengths: torch.Tensor) -> torch.Tensor:
        return torch.div(lengths + self.factor - 1, self.factor, rounding_mode="floor")

    def forward(self, x, lengths):
        _check_width(x, self.feat_dim, "front-end")
        if x.shape[1] == 0:
            raise ShapeError("empty input")
        pad = (-x.shape[1]) % self.factor
        if pad:
            x = F.pad(x, (0, 0, 0, pad))
        y = self.proj(x.transpose(1, 2)).transpose(1, 2)
        return y, self.output_lengths(lengths)


# gradient checking ---------------------------------------------------------

Tensors = Union[torch.Tensor, Sequence[torch.Tensor]]


def grad_check(f: Callable[[], torch.Tensor], inputs: Tensors, eps: float = 1e-6,
               n_directions: int = 2, seed: int = 0) -> float:
    """Max relative error between autograd and central differences.

    ``f`` is a closure returning a scalar that reads ``inputs`` (leaf tensors,
    typically parameters) in place. For every input tensor the analytic
    directional derivative ``<grad, v>`` is compared with
    ``(f(x + eps v) - f(x - eps v)) / (2 eps)`` along ``n_directions`` random
    Gaussian directions ``v``; scalars use v = 1. Error per probe is
    ``|a - n| / (|a| + |n| + 1e-12)``.
    """
    if isinstance(inputs, torch.Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    gen = torch.Generator().manual_seed(seed)
    for x in inputs:
        x.grad = None
    with torch.enable_grad():
        out = f()
        if not torch.isfinite(out).all():
            raise NumericsError("non-finite value at the base point")
        grads = torch.autograd.grad(out, inputs, allow_unused=True)
    worst = 0.0
    for x, g in zip(inputs, grads):
        g = torch.zeros_like(x) if g is None else g
        probes = 1 if x.numel() == 1 else n_directions
        for _ in range(probes):
            v = (torch.ones_like(x) if x.numel() == 1
                 else torch.randn(x.shape, generator=gen, dtype=x.dtype))
            analytic = float((g * v).sum())
            with torch.no_grad():
                orig = x.detach().clone()
                x.add_(eps * v)
                up = f()
                x.copy_(orig - eps * v)
                down = f()
                x.copy_(orig)
            if not (torch.isfinite(up) and torch.isfinite(down)):
                raise NumericsError("non-finite value during finite differencing")
            numeric = float(up - down) / (2 * eps)
            err = abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-12)
            worst = max(worst, err)
    return worst


def jvp_check(fn: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor,
              eps: float = 1e-6, seed: int = 0) -> float:
    """Relative error of the Jacobian-vector product vs central differences.

    The Jacobian is assembled row by row with reverse mode, so ops without
    forward-mode or double-backward support are still covered.
    """
    gen = torch.Generator().manual_seed(seed)
    v = torch.randn(x.shape, generator=gen, dtype=x.dtype)
    xg = x.detach().clone().requires_grad_(True)
    with torch.enable_grad():
        y = fn(xg).reshape(-1)
        rows = [torch.autograd.grad(y[i], xg, retain_graph=True)[0].reshape(-1)
                for i in range(y.numel())]
    analytic = torch.stack(rows) @ v.reshape(-1)
    with torch.no_grad():
        numeric = ((fn(x + eps * v) - fn(x - eps * v)) / (2 * eps)).reshape(-1)
    if not torch.isfinite(numeric).all():
        raise NumericsError("non-finite value during finite differencing")
    return float((analytic - numeric).norm() / (analytic.norm() + numeric.norm() + 1e-12))


# checkpoints ---------------------------------------------------------------

def save_checkpoint(path, model: nn.Module, config: Dict, extra: Optional[Dict] = None):
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": dict(config),
        "params": {k: v.detach().cpu().clone() for k, v in model.state_dict().items()},
    }
    if extra:
        payload["extra"] = extra
    tmp = f"{path}.tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path, model: Optional[nn.Module] = None,
                    config: Optional[Dict] = None) -> Dict:
    """Load a checkpoint; refuse version or config mismatches."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('format_version')}")
    if config is not None:
        saved = payload["config"]
        diff = sorted(k for k in set(saved) | set(config) if saved.get(k) != config.get(k))
        if diff:
            raise CheckpointError(f"checkpoint config mismatch on keys: {diff}")
    if model is not None:
        missing, unexpected = model.load_state_dict(payload["params"], strict=False)
        if missing or unexpected:
            raise CheckpointError(
                f"parameter mismatch: missing={list(missing)[:5]} unexpected={list(unexpected)[:5]}")
    return payload


SCHEDULES = ("cosine", "inverse-sqrt", "constant")


def make_optimizer(params: Iterable[torch.nn.Parameter], lr: float, warmup_steps: int,
                   weight_decay: float = 0.0, schedule: str = "cosine",
                   total_steps: Optional[int] = None):
    """Adam with linear warmup, then the chosen decay.

    ``cosine`` anneals to zero at ``total_steps``; ``inverse-sqrt`` decays as
    sqrt(warmup / step); ``constant`` holds the peak rate.
    """
    if schedule not in SCHEDULES:
        raise ConfigError(f"schedule must be one of {SCHEDULES}")
    opt = torch.optim.Adam(params, lr=lr, betas=(0.9, 0.98), eps=1e-9, weight_decay=weight_decay)
    warm = max(1, warmup_steps)
    total = max(total_steps or 0, warm + 1)

    def factor(step):
        step = step + 1
        if step <= warm:
            return step / warm
        if schedule == "inverse-sqrt":
            return math.sqrt(warm / step)
        if schedule == "cosine":
            frac = min(1.0, (step - warm) / (total - warm))
            return 0.5 * (1.0 + math.cos(math.pi * frac))
        return 1.0

    return opt, torch.optim.lr_scheduler.LambdaLR(opt, factor)


def all_finite(module: nn.Module) -> bool:
    return all(torch.isfinite(p).all() for p in module.parameters())
