"""Event embeddings: type table, three time-embedding variants, MASK/EOS tokens.

An event row is the concatenation ``[type_embedding, time_embedding]`` of
width ``d_type + d_time``. Masked positions are replaced wholesale (both
halves) by a learnable MASK row, and a learnable EOS row is appended after the
last event of every sequence; its encoder output is the sequence embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

from .data import EventSequence, PaddedBatch, pad_batch

TIME_KINDS = ("fixed", "mercer", "mtan")


@dataclass(frozen=True)
class EmbeddingConfig:
    d_time: int = 32
    d_type: int = 32
    time_kind: str = "fixed"
    mercer_omega_init: float = 10.0

    def __post_init__(self):
        if self.d_time < 1 or self.d_type < 1:
            raise ValueError("embedding widths must be positive")
        if self.time_kind not in TIME_KINDS:
            raise ValueError(f"time_kind must be one of {TIME_KINDS}")
        if self.time_kind in ("fixed", "mtan") and self.d_time % 2 != 0:
            raise ValueError(f"d_time must be even for {self.time_kind} embeddings")
        if self.mercer_omega_init <= 0:
            raise ValueError("mercer period must be positive")

    @property
    def d_model(self) -> int:
        return self.d_time + self.d_type


def fixed_time_embedding(t: Tensor, d_time: int) -> Tensor:
    """Sinusoidal encoding: pair j holds (cos(w_j t), sin(w_j t)) with
    frequency w_j = 10000^(-(j-1)/d_time). Parameter-free and deterministic."""
    if d_time % 2 != 0:
        raise ValueError("d_time must be even for the fixed embedding")
    t = torch.as_tensor(t, dtype=torch.float64)
    j = torch.arange(d_time // 2, dtype=torch.float64)
    freqs = torch.pow(torch.tensor(10000.0, dtype=torch.float64), -j / d_time)
    phase = t.unsqueeze(-1) * freqs
    out = torch.empty(*t.shape, d_time, dtype=torch.float64)
    out[..., 0::2] = torch.cos(phase)
    out[..., 1::2] = torch.sin(phase)
    return out


class FixedTimeEmbedding(nn.Module):
    def __init__(self, d_time: int):
        super().__init__()
        self.d_time = d_time

    def forward(self, t: Tensor) -> Tensor:
        return fixed_time_embedding(t, self.d_time)


class MercerTimeEmbedding(nn.Module):
    """Periodic embedding [sqrt(c_1), sqrt(c_2) cos(pi t/w), sqrt(c_3) sin(pi t/w),
    sqrt(c_4) cos(2 pi t/w), ...], truncated to d_time components.

    Coefficients ``c`` (nonnegative at init) and period ``omega`` are learnable.
    """

    def __init__(self, d_time: int, omega_init: float = 10.0, c_init=None):
        super().__init__()
        if c_init is None:
            c_init = torch.ones(d_time)
        else:
            c_init = torch.as_tensor(c_init, dtype=torch.get_default_dtype())
        if c_init.numel() != d_time:
            raise ValueError(f"need {d_time} coefficients, got {c_init.numel()}")
        if torch.any(c_init < 0):
            raise ValueError("mercer coefficients must be nonnegative")
        if omega_init <= 0:
            raise ValueError("mercer period must be positive")
        self.d_time = d_time
        self.c = nn.Parameter(c_init.clone())
        self.omega = nn.Parameter(torch.tensor(float(omega_init)))
        # index i pairs with harmonic j: i=0 constant, odd i cos, even i>0 sin
        idx = torch.arange(d_time)
        harmonics = torch.where(idx % 2 == 1, (idx + 1) // 2, idx // 2)
        self.register_buffer(
            "harmonics", harmonics.to(torch.get_default_dtype()), persistent=False
        )
        self.register_buffer("is_sin", (idx % 2 == 0) & (idx > 0), persistent=False)

    def forward(self, t: Tensor) -> Tensor:
        t = torch.as_tensor(t, dtype=self.c.dtype)
        angle = self.harmonics.to(self.c.dtype) * torch.pi * t.unsqueeze(-1) / self.omega
        wave = torch.where(self.is_sin, torch.sin(angle), torch.cos(angle))
        return torch.sqrt(torch.clamp(self.c, min=0.0)) * wave


class MtanTimeEmbedding(nn.Module):
    """First component is the linear term w_1 t; the rest are sin(w_j t).

    ``w`` is learnable; initialized to the fixed embedding's frequency ladder
    so early training sees a sane multi-scale basis.
    """

    def __init__(self, d_time: int):
        super().__init__()
        self.d_time = d_time
        j = torch.arange(d_time, dtype=torch.float64)
        w_init = torch.pow(torch.tensor(10000.0, dtype=torch.float64), -(j // 2) / d_time)
        self.w = nn.Parameter(w_init.to(torch.get_default_dtype()))

    def forward(self, t: Tensor) -> Tensor:
        t = torch.as_tensor(t, dtype=self.w.dtype)
        scaled = self.w * t.unsqueeze(-1)
        out = torch.sin(scaled)
        return torch.cat([scaled[..., :1], out[..., 1:]], dim=-1)


def make_time_embedding(config: EmbeddingConfig) -> nn.Module:
    if config.time_kind == "fixed":
        return FixedTimeEmbedding(config.d_time)
    if config.time_kind == "mercer":
        return MercerTimeEmbedding(config.d_time, config.mercer_omega_init)
    return MtanTimeEmbedding(config.d_time)


class SequenceEmbedder(nn.Module):
    """Maps padded event batches to encoder input rows of width d_model.

    Row layout per sequence: N event rows (or the MASK row where masked), then
    the EOS row at position N, then zero padding. The EOS row is a single
    learnable full-width vector; no time is embedded for it.
    """

    def __init__(self, config: EmbeddingConfig, num_types: int):
        super().__init__()
        self.config = config
        self.num_types = num_types
        self.type_table = nn.Parameter(torch.empty(num_types, config.d_type))
        self.mask_token = nn.Parameter(torch.empty(config.d_model))
        self.eos_token = nn.Parameter(torch.empty(config.d_model))
        self.time_embedding = make_time_embedding(config)
        self.reset_parameters()

    def reset_parameters(self):
        # scale chosen to match the O(1) sinusoidal time features; near-zero
        # rows would sit in the high-curvature region of the first layer norm
        nn.init.normal_(self.type_table, std=0.5)
        nn.init.normal_(self.mask_token, std=0.5)
        nn.init.normal_(self.eos_token, std=0.5)

    @property
    def d_model(self) -> int:
        return self.config.d_model

    def embed_times(self, t: Tensor) -> Tensor:
        return self.time_embedding(t).to(self.type_table.dtype)

    def embed_types(self, marks: Tensor) -> Tensor:
        return self.type_table[marks]

    def embed_batch(self, batch: PaddedBatch, masked: np.ndarray | None = None) -> Tensor:
        """Embed a padded batch into rows of shape (B, L+1, d_model).

        ``masked`` is an optional (B, L) boolean array; True positions are
        replaced by the MASK row. Padding rows are zeroed so they carry no
        values and no gradient.
        """
        device = self.type_table.device
        times = torch.as_tensor(batch.times, device=device)
        marks = torch.as_tensor(batch.marks, device=device)
        lengths = torch.as_tensor(batch.lengths, device=device)
        valid = ~torch.as_tensor(batch.pad_mask, device=device)
        rows = torch.cat([self.embed_types(marks), self.embed_times(times)], dim=-1)
        if masked is not None:
            masked_t = torch.as_tensor(np.asarray(masked, dtype=bool), device=device)
            masked_t = masked_t & valid
            rows = torch.where(masked_t.unsqueeze(-1), self.mask_token, rows)
        rows = torch.where(valid.unsqueeze(-1), rows, torch.zeros((), dtype=rows.dtype))
        b, width = batch.times.shape
        out = torch.zeros(b, width + 1, self.d_model, dtype=rows.dtype, device=device)
        out[:, :width] = rows
        out[torch.arange(b, device=device), lengths] = self.eos_token.to(rows.dtype)
        return out

    def embed_sequence(self, seq: EventSequence, masked=None) -> Tensor:
        """Single-sequence convenience: rows of shape (N+1, d_model)."""
        if masked is not None:
            bad = [i for i in masked if not 0 <= i < len(seq)]
            if bad:
                raise ValueError(f"masked indices out of range: {bad}")
            flags = np.zeros((1, len(seq)), dtype=bool)
            flags[0, list(masked)] = True
        else:
            flags = None
        return self.embed_batch(pad_batch([seq]), flags)[0]
