"""Transformer encoder over embedded event rows.

Pre-layer-norm residual blocks with softmax self-attention. Padding positions
are never attended to (key mask), so values stored there cannot influence any
valid position; causal mode additionally restricts position i to keys <= i.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

BIDIRECTIONAL = "bidirectional"
CAUSAL = "causal"


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 3
    num_heads: int = 4
    d_model: int = 64
    d_ff: int | None = None  # defaults to 4 * d_model
    default_mode: str = BIDIRECTIONAL

    def __post_init__(self):
        if self.num_layers < 1 or self.num_heads < 1 or self.d_model < 1:
            raise ValueError("layers, heads, and d_model must be positive")
        if self.d_model % self.num_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by num_heads {self.num_heads}"
            )
        if self.default_mode not in (BIDIRECTIONAL, CAUSAL):
            raise ValueError(f"unknown attention mode {self.default_mode!r}")

    @property
    def ff_width(self) -> int:
        return self.d_ff if self.d_ff is not None else 4 * self.d_model


@dataclass
class HiddenStates:
    """Per-position encoder outputs plus the EOS aggregate per sequence.

    ``hidden`` is (B, L+1, d_model); ``lengths`` holds event counts, so the
    EOS output of row i sits at position lengths[i].
    """

    hidden: Tensor
    lengths: Tensor

    @property
    def z(self) -> Tensor:
        idx = torch.arange(self.hidden.shape[0], device=self.hidden.device)
        return self.hidden[idx, self.lengths]

    def event_states(self, i: int) -> Tensor:
        return self.hidden[i, : int(self.lengths[i])]


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = d_model // num_heads
        self.qkv_proj = nn.Linear(d_model, 3 * d_model)
        self.out_proj = nn.Linear(d_model, d_model)

    def forward(self, x: Tensor, bias: Tensor) -> Tensor:
        # bias: (B, 1, T, T) additive mask, -inf where attention is forbidden
        b, t, d = x.shape
        qkv = self.qkv_proj(x).view(b, t, 3, self.num_heads, self.head_dim)
        q, k, v = (qkv[:, :, i].transpose(1, 2) for i in range(3))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim) + bias
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, t, d)
        return self.out_proj(out)


class EncoderLayer(nn.Module):
    def __init__(self, d_model: int, num_heads: int, d_ff: int):
        super().__init__()
        self.attn = SelfAttention(d_model, num_heads)
        self.ff = nn.Sequential(
            nn.Linear(d_model, d_ff), nn.GELU(), nn.Linear(d_ff, d_model)
        )
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)

    def forward(self, x: Tensor, bias: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x), bias)
        x = x + self.ff(self.norm2(x))
        return x


class TransformerEncoder(nn.Module):
    """Stack of pre-LN blocks with a final layer norm.

    Linear layers keep torch's uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init.
    """

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.layers = nn.ModuleList(
            EncoderLayer(config.d_model, config.num_heads, config.ff_width)
            for _ in range(config.num_layers)
        )
        self.final_norm = nn.LayerNorm(config.d_model)

    def forward(self, x: Tensor, lengths: Tensor, mode: str | None = None) -> HiddenStates:
        mode = mode or self.config.default_mode
        if mode not in (BIDIRECTIONAL, CAUSAL):
            raise ValueError(f"unknown attention mode {mode!r}")
        b, t, d = x.shape
        if d != self.config.d_model:
            raise ValueError(f"input width {d} != d_model {self.config.d_model}")
        lengths = torch.as_tensor(lengths, device=x.device, dtype=torch.long)
        # valid rows are the events plus the EOS slot at position lengths[i]
        positions = torch.arange(t, device=x.device)
        blocked = (positions.unsqueeze(0) > lengths.unsqueeze(1)).unsqueeze(1)  # (B, 1, T)
        if mode == CAUSAL:
            future = torch.triu(
                torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1
            )
            blocked = blocked | future
        bias = torch.zeros(*blocked.shape, dtype=x.dtype, device=x.device)
        bias.masked_fill_(blocked, float("-inf"))
        bias = bias.unsqueeze(1)  # broadcast over heads
        h = x
        for layer in self.layers:
            h = layer(h, bias)
        h = self.final_norm(h)
        return HiddenStates(hidden=h, lengths=lengths)


def count_params(module: nn.Module) -> int:
    """Exact number of trainable scalars."""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
