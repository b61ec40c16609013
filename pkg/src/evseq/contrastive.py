"""Multi-view generation and the temperature-scaled contrastive objective.

Each sequence contributes four embeddings: the original, a contiguous-in-time
subsequence, a window-masked variant, and a Gaussian-noised copy of the
original embedding. All 4B embeddings of a batch form the negative pool.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import Tensor

from .data import EventSequence

VIEWS_PER_GROUP = 4  # original + subsequence + masked + noisy

SIMILARITIES = ("dot", "cosine")


def sample_view_window(
    seq: EventSequence, ratio: float, rng: np.random.Generator
) -> tuple[float, float]:
    """One half-open window [start, start + ratio * span) with a uniform start."""
    if len(seq) < 2:
        raise ValueError("need at least 2 events to sample a view window")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    t1, tn = float(seq.times[0]), float(seq.times[-1])
    length = ratio * (tn - t1)
    start = rng.uniform(t1, tn - length)
    return start, length


def view_subsequence(
    seq: EventSequence, ratio: float, rng: np.random.Generator
) -> EventSequence:
    """Keep exactly the events inside a sampled window; times stay as they are."""
    start, length = sample_view_window(seq, ratio, rng)
    lo = np.searchsorted(seq.times, start, side="left")
    hi = np.searchsorted(seq.times, start + length, side="left")
    return EventSequence(seq.times[lo:hi], seq.marks[lo:hi], seq.num_types)


def masked_view_indices(
    seq: EventSequence, ratio: float, rng: np.random.Generator
) -> tuple[int, ...]:
    """Indices of the events a masked view hides (same window sampling)."""
    start, length = sample_view_window(seq, ratio, rng)
    lo = np.searchsorted(seq.times, start, side="left")
    hi = np.searchsorted(seq.times, start + length, side="left")
    return tuple(range(int(lo), int(hi)))


def view_masked(embedder, seq: EventSequence, ratio: float, rng: np.random.Generator) -> Tensor:
    """Embedded rows of the sequence with one window of events replaced by MASK."""
    return embedder.embed_sequence(seq, masked=masked_view_indices(seq, ratio, rng))


def sample_noise(rng: np.random.Generator, dim: int) -> tuple[float, np.ndarray]:
    """Draw the noise scale sigma ~ U[0, 1], then noise ~ N(0, sigma^2 I).

    Returns (sigma, noise); sigma is the per-coordinate standard deviation.
    """
    sigma = float(rng.uniform(0.0, 1.0))
    return sigma, sigma * rng.standard_normal(dim)


def view_noisy(z: Tensor, rng: np.random.Generator) -> Tensor:
    """Add one multi-scale Gaussian noise draw to a sequence embedding."""
    _, noise = sample_noise(rng, z.shape[-1])
    return z + torch.as_tensor(noise, dtype=z.dtype, device=z.device)


def positive_pair_mask(batch_size: int, views: int = VIEWS_PER_GROUP) -> Tensor:
    """Boolean (B*V, B*V) matrix marking ordered same-group pairs, diagonal off."""
    group = torch.arange(batch_size).repeat_interleave(views)
    same = group.unsqueeze(0) == group.unsqueeze(1)
    return same & ~torch.eye(batch_size * views, dtype=torch.bool)


def nt_xent_loss(
    groups: Tensor, temperature: float = 0.5, similarity: str = "dot"
) -> Tensor:
    """Contrastive loss over view groups.

    ``groups`` has shape (B, V, d); for every ordered positive pair (z, z')
    within a group the log-ratio uses exp(z.z'/temperature) against all other
    embeddings in the batch union, and the result is averaged per group and
    then over groups. With V views per group each group contributes exactly
    V*(V-1) ordered pairs.
    """
    if groups.ndim != 3:
        raise ValueError("expected (batch, views, dim) embeddings")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if similarity not in SIMILARITIES:
        raise ValueError(f"similarity must be one of {SIMILARITIES}")
    b, v, _ = groups.shape
    flat = groups.reshape(b * v, -1)
    if similarity == "cosine":
        flat = flat / flat.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    sims = flat @ flat.T / temperature
    self_mask = torch.eye(b * v, dtype=torch.bool, device=flat.device)
    denom = torch.logsumexp(sims.masked_fill(self_mask, float("-inf")), dim=-1)
    log_prob = sims - denom.unsqueeze(-1)
    positives = positive_pair_mask(b, v).to(flat.device)
    # equal group sizes make the per-group average a flat mean over all pairs
    return -log_prob[positives].mean()
