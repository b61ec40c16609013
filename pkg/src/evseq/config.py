"""Run configuration: a flat map of dotted keys with typed defaults.

Config files are JSON objects whose keys mirror the module namespaces
(``mask.ratio``, ``contrastive.temperature``, ...). Every run writes its
fully-resolved configuration into the run manifest so ablations stay
reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from .embedding import TIME_KINDS
from .masking import MASK_STRATEGIES

DEFAULTS: dict[str, Any] = {
    # data
    "data.rescale_max_time": None,  # optional: rescale times so max arrival hits this
    "data.split": [0.8, 0.1, 0.1],
    "data.split_seed": 0,
    # embeddings
    "embedding.d_time": 32,
    "embedding.d_type": 32,
    "embedding.time_kind": "fixed",
    "embedding.mercer_omega_init": 10.0,
    # encoder
    "encoder.num_layers": 3,
    "encoder.num_heads": 4,
    "encoder.d_model": 64,
    "encoder.ff_multiplier": 4,
    # masked reconstruction
    "mask.ratio": 0.3,
    "mask.window_duration": None,  # None: 0.1 * sequence span
    "mask.strategy": "density",
    # contrastive views
    "contrastive.ratio": 0.3,
    "contrastive.temperature": 0.5,
    "contrastive.similarity": "dot",
    # alignment verification
    "alignment.methods": ["shuffle", "swap", "crossover"],
    # combined pretext objective
    "pretext.alpha": 1.0,
    "pretext.beta": 1.0,
    "pretext.gamma": 1.0,
    # optimization
    "train.lr": 1e-4,
    "train.pretext_epochs": 10,
    "train.finetune_epochs": 300,
    "train.batch_size": 4,
    "train.seed": 0,
    # next-event task
    "tpp.mc_samples": 20,
    "tpp.grid_points": 1000,
    # imputation task
    "impute.train_missing_ratio": 0.5,
    "impute.target": "absolute",
}


@dataclass(frozen=True)
class RunConfig:
    values: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        resolved = dict(DEFAULTS)
        unknown = [k for k in self.values if k not in DEFAULTS]
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(self.values)
        object.__setattr__(self, "values", resolved)
        _validate(resolved)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)

    def replace(self, **overrides: Any) -> "RunConfig":
        """New config with dotted keys overridden (underscores map to dots)."""
        updates = {k.replace("__", "."): v for k, v in overrides.items()}
        merged = dict(self.values)
        merged.update(updates)
        return RunConfig(merged)

    def with_updates(self, updates: dict[str, Any]) -> "RunConfig":
        merged = dict(self.values)
        merged.update(updates)
        return RunConfig(merged)

    def to_json(self) -> str:
        return json.dumps(self.values, sort_keys=True, indent=2)

    @classmethod
    def from_file(cls, path, overrides: dict[str, Any] | None = None) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            values = json.load(fh)
        if not isinstance(values, dict):
            raise ValueError("config file must hold a JSON object of dotted keys")
        if overrides:
            values.update(overrides)
        return cls(values)


def _validate(v: dict[str, Any]) -> None:
    if v["embedding.time_kind"] not in TIME_KINDS:
        raise ValueError(f"embedding.time_kind must be one of {TIME_KINDS}")
    if v["mask.strategy"] not in MASK_STRATEGIES:
        raise ValueError(f"mask.strategy must be one of {MASK_STRATEGIES}")
    if v["contrastive.similarity"] not in ("dot", "cosine"):
        raise ValueError("contrastive.similarity must be 'dot' or 'cosine'")
    for key in ("mask.ratio", "contrastive.ratio", "impute.train_missing_ratio"):
        if not 0.0 < v[key] < 1.0:
            raise ValueError(f"{key} must be in (0, 1)")
    if v["contrastive.temperature"] <= 0:
        raise ValueError("contrastive.temperature must be positive")
    weights = [v["pretext.alpha"], v["pretext.beta"], v["pretext.gamma"]]
    if any(w < 0 for w in weights):
        raise ValueError("pretext weights must be nonnegative")
    if all(w == 0 for w in weights):
        raise ValueError("at least one pretext weight must be positive")
    for key in ("train.lr", "tpp.mc_samples", "tpp.grid_points"):
        if v[key] <= 0:
            raise ValueError(f"{key} must be positive")
    for key in ("train.pretext_epochs", "train.finetune_epochs", "train.batch_size"):
        if int(v[key]) < 1:
            raise ValueError(f"{key} must be at least 1")
    if (v["pretext.beta"] > 0 or v["pretext.gamma"] > 0) and int(v["train.batch_size"]) < 2:
        raise ValueError(
            "batch_size must be >= 2 when contrastive or alignment tasks are enabled"
        )
    methods = v["alignment.methods"]
    if not methods or any(m not in ("shuffle", "swap", "crossover") for m in methods):
        raise ValueError("alignment.methods must be a nonempty subset of shuffle/swap/crossover")
    split = v["data.split"]
    if len(split) != 3 or any(f < 0 for f in split) or abs(sum(split) - 1.0) > 1e-9:
        raise ValueError("data.split must be three nonnegative fractions summing to 1")
    if v["impute.target"] not in ("absolute", "gap"):
        raise ValueError("impute.target must be 'absolute' or 'gap'")
    if v["data.rescale_max_time"] is not None and v["data.rescale_max_time"] <= 0:
        raise ValueError("data.rescale_max_time must be positive when set")
