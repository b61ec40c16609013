"""Misaligned-sequence generation and the alignment-verification objective.

Negatives corrupt the coupling between marks and arrival times in one of
three ways: shuffling marks in place, swapping the mark stream with another
sequence, or splicing two sequences at their midpoints with interval-shifted
tail times. A linear classifier on the sequence embedding learns to tell
genuine sequences from corrupted ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

from .data import EventSequence

MISALIGNMENTS = ("shuffle", "swap", "crossover")


@dataclass(frozen=True)
class AlignmentExample:
    seq: EventSequence
    label: int  # 1 = genuine, 0 = misaligned
    method: str  # "none" for genuine examples

    def __post_init__(self):
        if (self.label == 1) != (self.method == "none"):
            raise ValueError("label 1 must pair with method 'none'")


def permute_marks(seq: EventSequence, perm) -> EventSequence:
    """Reorder marks by ``perm`` while keeping every arrival time in place."""
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(len(seq))):
        raise ValueError("perm must be a permutation of range(N)")
    return EventSequence(seq.times, seq.marks[perm], seq.num_types, seq.label)


def misalign_shuffle(
    seq: EventSequence, rng: np.random.Generator, max_attempts: int = 100
) -> EventSequence:
    """Uniformly permute the marks, keeping times intact.

    Permutations that reproduce the original mark string are resampled; for
    degenerate inputs (all marks equal) the last draw is accepted as-is.
    """
    if len(seq) < 2:
        raise ValueError("need at least 2 events to shuffle")
    for _ in range(max_attempts):
        perm = rng.permutation(len(seq))
        if not np.array_equal(seq.marks[perm], seq.marks):
            break
    return permute_marks(seq, perm)


def misalign_swap(
    a: EventSequence, b: EventSequence
) -> tuple[EventSequence, EventSequence]:
    """Give each sequence the other's marks, truncating to the shorter length."""
    if len(a) < 1 or len(b) < 1:
        raise ValueError("swap needs nonempty sequences")
    if a.num_types != b.num_types:
        raise ValueError("swap requires matching num_types")
    n = min(len(a), len(b))
    swapped_a = EventSequence(a.times[:n], b.marks[:n], a.num_types)
    swapped_b = EventSequence(b.times[:n], a.marks[:n], b.num_types)
    return swapped_a, swapped_b


def _crossover_tail(
    head_times: np.ndarray, donor_times: np.ndarray, donor_half: int
) -> np.ndarray:
    # donor tail arrives at head-anchor + (donor time - donor anchor)
    anchor = head_times[-1]
    donor_anchor = donor_times[donor_half - 1]
    return anchor + (donor_times[donor_half:] - donor_anchor)


def misalign_crossover(
    a: EventSequence, b: EventSequence
) -> tuple[EventSequence, EventSequence]:
    """Keep each first half verbatim; splice on the other's second half with
    times shifted so the donor's inter-event gaps are preserved."""
    if len(a) < 2 or len(b) < 2:
        raise ValueError("crossover needs at least 2 events per sequence")
    if a.num_types != b.num_types:
        raise ValueError("crossover requires matching num_types")
    half_a, half_b = len(a) // 2, len(b) // 2
    times_a = np.concatenate(
        [a.times[:half_a], _crossover_tail(a.times[:half_a], b.times, half_b)]
    )
    marks_a = np.concatenate([a.marks[:half_a], b.marks[half_b:]])
    times_b = np.concatenate(
        [b.times[:half_b], _crossover_tail(b.times[:half_b], a.times, half_a)]
    )
    marks_b = np.concatenate([b.marks[:half_b], a.marks[half_a:]])
    crossed_a = EventSequence(times_a, marks_a, a.num_types)
    crossed_b = EventSequence(times_b, marks_b, b.num_types)
    return crossed_a, crossed_b


def build_alignment_batch(
    seqs: list[EventSequence],
    rng: np.random.Generator,
    methods: tuple[str, ...] = MISALIGNMENTS,
) -> list[AlignmentExample]:
    """One genuine and one misaligned example per input sequence.

    The misalignment method is drawn uniformly from ``methods``; swap and
    crossover partners come from the same batch, never the sequence itself.
    """
    if len(seqs) < 2:
        raise ValueError("alignment batches need at least 2 sequences")
    if not methods or any(m not in MISALIGNMENTS for m in methods):
        raise ValueError(f"methods must be a nonempty subset of {MISALIGNMENTS}")
    short = [i for i, s in enumerate(seqs) if len(s) < 2]
    if short:
        raise ValueError(f"sequences {short} have fewer than 2 events")
    examples = []
    for i, seq in enumerate(seqs):
        examples.append(AlignmentExample(seq, 1, "none"))
        method = methods[int(rng.integers(len(methods)))]
        if method == "shuffle":
            negative = misalign_shuffle(seq, rng)
        else:
            partner = int(rng.integers(len(seqs) - 1))
            partner = partner + 1 if partner >= i else partner
            other = seqs[partner]
            if method == "swap":
                negative = misalign_swap(seq, other)[0]
            else:
                negative = misalign_crossover(seq, other)[0]
        examples.append(AlignmentExample(negative, 0, method))
    return examples


class AlignmentClassifier(nn.Module):
    """Single linear layer mapping the sequence embedding to one logit."""

    def __init__(self, d_model: int):
        super().__init__()
        self.linear = nn.Linear(d_model, 1)

    def forward(self, z: Tensor) -> Tensor:
        return self.linear(z).squeeze(-1)


def alignment_loss(logits: Tensor, labels: Tensor) -> Tensor:
    """Mean binary cross-entropy with logits (numerically stabilized)."""
    if logits.shape != labels.shape:
        raise ValueError(f"shape mismatch: logits {tuple(logits.shape)} vs labels {tuple(labels.shape)}")
    return nn.functional.binary_cross_entropy_with_logits(
        logits, labels.to(logits.dtype)
    )
