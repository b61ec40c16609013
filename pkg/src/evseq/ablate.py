"""Ablation harness: pretext-task on/off grid plus the from-scratch baseline.

For every nonempty subset of {reconstruction, contrastive, alignment} the
harness pretrains with the corresponding weights zeroed, fine-tunes on
next-event prediction, and evaluates on the test split; the baseline row
skips pretext training entirely.
"""

from __future__ import annotations

import os
from itertools import product

from .config import RunConfig
from .data import Dataset, split_dataset
from .train import _write_csv, evaluate, finetune, pretrain


def run_ablation(
    config: RunConfig,
    data: Dataset,
    out_dir,
    pretext_epochs: int | None = None,
    finetune_epochs: int | None = None,
) -> list[dict]:
    """Returns one row per combination; also writes ``ablation.csv``."""
    os.makedirs(out_dir, exist_ok=True)
    train, dev, test = split_dataset(
        data, tuple(config["data.split"]), int(config["data.split_seed"])
    )
    rows = []
    combos = [c for c in product((1, 0), repeat=3) if any(c)]
    for use_rec, use_cl, use_align in [(0, 0, 0)] + combos:
        name = "baseline" if not (use_rec or use_cl or use_align) else (
            "".join(
                tag
                for tag, on in zip(("rec", "cl", "align"), (use_rec, use_cl, use_align))
                if on
            )
        )
        run_dir = os.path.join(out_dir, name)
        init = None
        if use_rec or use_cl or use_align:
            combo_config = config.with_updates(
                {
                    "pretext.alpha": float(use_rec),
                    "pretext.beta": float(use_cl),
                    "pretext.gamma": float(use_align),
                }
            )
            init = pretrain(combo_config, train, run_dir, epochs=pretext_epochs).checkpoint_path
        result = finetune(
            config,
            "tpp",
            train,
            dev,
            run_dir,
            init_checkpoint=init,
            epochs=finetune_epochs,
        )
        metrics = dict(
            (metric, value)
            for _, metric, value in evaluate(
                config, "tpp", result.checkpoint_path, test,
                os.path.join(run_dir, "tpp_test.csv"),
            )
        )
        rows.append(
            {
                "combo": name,
                "rec": use_rec,
                "cl": use_cl,
                "align": use_align,
                "dev_nll_per_event": result.best_dev_metric,
                **metrics,
            }
        )
    header = ["combo", "rec", "cl", "align", "dev_nll_per_event", "nll_per_event", "rmse", "accuracy"]
    _write_csv(
        os.path.join(out_dir, "ablation.csv"),
        header,
        [[row["combo"], row["rec"], row["cl"], row["align"]]
         + [repr(float(row[k])) for k in header[4:]] for row in rows],
    )
    return rows
