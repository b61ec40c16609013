"""Backbone assembly: embedder + encoder with one entry point for encoding
whole sequences, optionally with per-sequence masked positions."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .data import EventSequence, pad_batch
from .embedding import EmbeddingConfig, SequenceEmbedder
from .encoder import EncoderConfig, HiddenStates, TransformerEncoder, count_params


class SequenceModel(nn.Module):
    def __init__(self, embed_config: EmbeddingConfig, encoder_config: EncoderConfig, num_types: int):
        super().__init__()
        if embed_config.d_model != encoder_config.d_model:
            raise ValueError(
                f"embedding width {embed_config.d_model} != encoder width "
                f"{encoder_config.d_model}"
            )
        self.embedder = SequenceEmbedder(embed_config, num_types)
        self.encoder = TransformerEncoder(encoder_config)

    @property
    def d_model(self) -> int:
        return self.encoder.config.d_model

    @property
    def num_types(self) -> int:
        return self.embedder.num_types

    def encode_batch(
        self,
        seqs: list[EventSequence],
        masked_sets: list | None = None,
        mode: str | None = None,
    ) -> HiddenStates:
        """Embed and encode a list of sequences.

        ``masked_sets`` gives, per sequence, an iterable of event indices to
        replace with the MASK row (None for no masking).
        """
        batch = pad_batch(seqs)
        flags = None
        if masked_sets is not None:
            if len(masked_sets) != len(seqs):
                raise ValueError("one masked set per sequence required")
            flags = np.zeros(batch.times.shape, dtype=bool)
            for i, idxs in enumerate(masked_sets):
                if idxs is None:
                    continue
                idxs = list(idxs)
                if idxs:
                    flags[i, idxs] = True
        x = self.embedder.embed_batch(batch, flags)
        lengths = torch.as_tensor(batch.lengths)
        return self.encoder(x, lengths, mode=mode)


def backbone_param_count(
    embed_config: EmbeddingConfig, encoder_config: EncoderConfig, num_types: int
) -> int:
    """Trainable scalar count for a backbone of the given shape."""
    return count_params(SequenceModel(embed_config, encoder_config, num_types))
