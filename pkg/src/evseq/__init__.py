"""Self-supervised pretext training and fine-tuning for event sequences."""

from .config import RunConfig
from .data import (
    Dataset,
    Event,
    EventSequence,
    HawkesParams,
    intervals,
    load_jsonl,
    pad_batch,
    save_jsonl,
    simulate_hawkes,
    simulate_hawkes_dataset,
    split_dataset,
    unpad_batch,
)
from .embedding import EmbeddingConfig, SequenceEmbedder
from .encoder import EncoderConfig, TransformerEncoder
from .model import SequenceModel

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EmbeddingConfig",
    "EncoderConfig",
    "Event",
    "EventSequence",
    "HawkesParams",
    "RunConfig",
    "SequenceEmbedder",
    "SequenceModel",
    "TransformerEncoder",
    "intervals",
    "load_jsonl",
    "pad_batch",
    "save_jsonl",
    "simulate_hawkes",
    "simulate_hawkes_dataset",
    "split_dataset",
    "unpad_batch",
    "__version__",
]
