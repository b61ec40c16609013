"""Event masking strategies and the masked-reconstruction objective.

Density-preserving masking samples disjoint constant-duration time windows
covering exactly ``ratio`` of the sequence span and masks every event inside
them, so busy stretches lose proportionally more events than quiet ones.
Random masking picks a fixed count of event indices uniformly instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

from .data import EventSequence

MASK_STRATEGIES = ("density", "random")


@dataclass(frozen=True)
class MaskPlan:
    """Disjoint (start, duration) windows plus the exact masked index set."""

    windows: tuple[tuple[float, float], ...]
    masked: tuple[int, ...]

    @property
    def masked_set(self) -> frozenset:
        return frozenset(self.masked)


def events_in_windows(times: np.ndarray, windows) -> tuple[int, ...]:
    """Indices of events whose time falls in some half-open [start, start+dur)."""
    hit = np.zeros(len(times), dtype=bool)
    for start, dur in windows:
        lo = np.searchsorted(times, start, side="left")
        hi = np.searchsorted(times, start + dur, side="left")
        hit[lo:hi] = True
    return tuple(int(i) for i in np.nonzero(hit)[0])


def _window_durations(total: float, window_duration: float) -> list[float]:
    n = int(math.ceil(total / window_duration))
    last = total - (n - 1) * window_duration
    if last <= 0.0:  # float roundoff pushed ceil one too far
        n -= 1
        last = total - (n - 1) * window_duration
    return [window_duration] * (n - 1) + [last]


def _disjoint(start: float, dur: float, placed) -> bool:
    end = start + dur
    return all(end <= s or start >= s + d for s, d in placed)


def _even_layout(t1: float, span: float, durations) -> list[tuple[float, float]]:
    gap = (span - sum(durations)) / (len(durations) + 1)
    windows = []
    cursor = t1
    for dur in durations:
        cursor += gap
        windows.append((cursor, dur))
        cursor += dur
    return windows


def sample_mask_windows(
    seq: EventSequence,
    ratio: float,
    window_duration: float,
    rng: np.random.Generator,
    max_attempts: int = 1000,
) -> MaskPlan:
    """Density-preserving plan: ceil(ratio*span / window_duration) disjoint
    windows (last one trimmed so total duration is exactly ratio*span).

    Windows that would contain no events are resampled up to ``max_attempts``
    times before being accepted empty; if disjoint placement itself fails that
    often, the plan falls back to an evenly spaced layout.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    if len(seq) < 2:
        raise ValueError("need at least 2 events to sample mask windows")
    t1, tn = float(seq.times[0]), float(seq.times[-1])
    span = tn - t1
    total = ratio * span
    if not 0.0 < window_duration <= total:
        raise ValueError(
            f"window_duration must be in (0, {total}] (= ratio * span), got {window_duration}"
        )
    durations = _window_durations(total, window_duration)
    placed: list[tuple[float, float]] = []
    fell_back = False
    for dur in durations:
        start = None
        for _ in range(max_attempts):  # prefer windows that mask something
            cand = rng.uniform(t1, tn - dur)
            if _disjoint(cand, dur, placed) and events_in_windows(seq.times, [(cand, dur)]):
                start = cand
                break
        if start is None:
            for _ in range(max_attempts):  # relax: allow an empty window
                cand = rng.uniform(t1, tn - dur)
                if _disjoint(cand, dur, placed):
                    start = cand
                    break
        if start is None:
            fell_back = True
            break
        placed.append((start, dur))
    if fell_back:
        placed = _even_layout(t1, span, durations)
    windows = tuple(sorted(placed))
    return MaskPlan(windows=windows, masked=events_in_windows(seq.times, windows))


def sample_random_mask(
    seq: EventSequence, ratio: float, rng: np.random.Generator
) -> MaskPlan:
    """Uniform plan: floor(ratio * N) indices without replacement, no windows."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    if len(seq) < 2:
        raise ValueError("need at least 2 events to sample a random mask")
    count = int(math.floor(ratio * len(seq)))
    picked = rng.choice(len(seq), size=count, replace=False) if count else []
    return MaskPlan(windows=(), masked=tuple(sorted(int(i) for i in picked)))


def sample_mask(
    seq: EventSequence,
    strategy: str,
    ratio: float,
    window_duration: float | None,
    rng: np.random.Generator,
) -> MaskPlan:
    """Dispatch on strategy; a None window duration means 0.1 * span."""
    if strategy not in MASK_STRATEGIES:
        raise ValueError(f"strategy must be one of {MASK_STRATEGIES}")
    if strategy == "random":
        return sample_random_mask(seq, ratio, rng)
    if window_duration is None:
        window_duration = 0.1 * seq.span
    return sample_mask_windows(seq, ratio, window_duration, rng)


class ReconstructionHeads(nn.Module):
    """Two independent two-layer decoders from hidden states back to the time
    and type embedding spaces."""

    def __init__(self, d_model: int, d_time: int, d_type: int):
        super().__init__()
        self.time_head = nn.Sequential(
            nn.Linear(d_model, d_model), nn.GELU(), nn.Linear(d_model, d_time)
        )
        self.type_head = nn.Sequential(
            nn.Linear(d_model, d_model), nn.GELU(), nn.Linear(d_model, d_type)
        )

    def forward(self, hidden: Tensor) -> tuple[Tensor, Tensor]:
        return self.time_head(hidden), self.type_head(hidden)


def reconstruction_loss(
    decoded_time: Tensor,
    decoded_type: Tensor,
    target_time: Tensor,
    target_type: Tensor,
) -> Tensor:
    """Mean over masked events of ||e_time - decoded||^2 + ||e_type - decoded||^2.

    Targets are treated as constants: no gradient flows into them, which stops
    the embedding tables from chasing the decoder outputs.
    """
    if decoded_time.shape[0] == 0:
        raise ValueError("reconstruction loss needs at least one masked event")
    if decoded_time.shape != target_time.shape or decoded_type.shape != target_type.shape:
        raise ValueError("decoded/target shape mismatch")
    target_time = target_time.detach()
    target_type = target_type.detach()
    per_event = ((decoded_time - target_time) ** 2).sum(dim=-1) + (
        (decoded_type - target_type) ** 2
    ).sum(dim=-1)
    return per_event.mean()
