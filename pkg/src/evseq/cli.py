"""Command-line interface: gen-data, pretrain, finetune, evaluate, ablate, report.

Every command exits 0 on success; failures print one machine-readable JSON
line to stderr and exit 1. The output directory can be set globally through
the ``EVSEQ_OUTPUT_DIR`` environment variable.
"""

from __future__ import annotations

import functools
import json
import os

import click
import numpy as np

from .ablate import run_ablation
from .config import RunConfig
from .data import (
    Dataset,
    EventSequence,
    HawkesParams,
    load_jsonl,
    rescale_dataset,
    save_jsonl,
    simulate_hawkes_dataset,
    split_dataset,
    subsample_dataset,
)
from .report import render_report
from .train import TASKS, evaluate, finetune, pretrain

_OUT_DIR = click.option(
    "--out-dir",
    envvar="EVSEQ_OUTPUT_DIR",
    default="evseq_runs",
    show_default=True,
    help="Output directory (env: EVSEQ_OUTPUT_DIR).",
)


def _fail_clean(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (click.ClickException, click.Abort):
            raise
        except Exception as exc:
            click.echo(
                json.dumps({"error": type(exc).__name__, "message": str(exc)}),
                err=True,
            )
            raise SystemExit(1)

    return wrapper


def _parse_rates(text: str):
    """Accept a bare float or a JSON list / matrix."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return float(text)


def _load_config(config_path, seed):
    overrides = {} if seed is None else {"train.seed": int(seed)}
    if config_path is None:
        return RunConfig(overrides)
    return RunConfig.from_file(config_path, overrides)


def _load_splits(data_path, config):
    data = load_jsonl(data_path)
    if config["data.rescale_max_time"] is not None:
        data = rescale_dataset(data, float(config["data.rescale_max_time"]))
    return split_dataset(data, tuple(config["data.split"]), int(config["data.split_seed"]))


@click.group()
def main():
    """Self-supervised pretext training and fine-tuning for event sequences."""


@main.command("gen-data")
@click.option("--num-types", type=int, default=4, show_default=True)
@click.option("--num-seqs", type=int, default=1000, show_default=True)
@click.option("--horizon", type=float, default=80.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--mu", default="0.1", show_default=True, help="Base rate(s): float or JSON list.")
@click.option("--alpha", default="0.0", show_default=True, help="Excitation: float or JSON matrix.")
@click.option("--beta", default="1.0", show_default=True, help="Decay: float or JSON matrix.")
@click.option("--label-rule", type=click.Choice(["none", "type0-majority"]), default="none",
              show_default=True, help="Optional rule deriving binary sequence labels.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@_fail_clean
def gen_data(num_types, num_seqs, horizon, seed, mu, alpha, beta, label_rule, out):
    """Simulate a Hawkes dataset and write it as JSONL."""
    mu_arr = np.broadcast_to(np.atleast_1d(_parse_rates(mu)), (num_types,))
    params = HawkesParams(mu_arr, _parse_rates(alpha), _parse_rates(beta))
    data = simulate_hawkes_dataset(params, horizon, num_seqs, seed)
    if label_rule == "type0-majority":
        labeled = []
        for seq in data:
            label = int(np.sum(seq.marks == 0) * num_types >= len(seq)) if len(seq) else 0
            labeled.append(EventSequence(seq.times, seq.marks, seq.num_types, label))
        data = Dataset(labeled, num_types)
    parent = os.path.dirname(out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save_jsonl(data, out)
    click.echo(f"wrote {len(data)} sequences to {out}")


@main.command("pretrain")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Overrides train.seed.")
@click.option("--epochs", type=int, default=None, help="Overrides train.pretext_epochs.")
@click.option("--pretext-fraction", type=float, default=1.0, show_default=True,
              help="Deterministic subsample of the pretext training split.")
@_OUT_DIR
@_fail_clean
def pretrain_cmd(data_path, config_path, seed, epochs, pretext_fraction, out_dir):
    """Run the pretext objective on the training split."""
    config = _load_config(config_path, seed)
    train, _, _ = _load_splits(data_path, config)
    if pretext_fraction < 1.0:
        train = subsample_dataset(train, pretext_fraction, int(config["train.seed"]))
    result = pretrain(config, train, out_dir, epochs=epochs)
    click.echo(f"checkpoint: {result.checkpoint_path}")
    click.echo(f"manifest: {result.manifest_path}")


@main.command("finetune")
@click.option("--task", type=click.Choice(TASKS), required=True)
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--init", default="scratch", show_default=True,
              help="Pretext checkpoint path, or 'scratch' for the baseline.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Overrides train.seed.")
@click.option("--epochs", type=int, default=None, help="Overrides train.finetune_epochs.")
@click.option("--train-fraction", type=float, default=1.0, show_default=True,
              help="Deterministic subsample of the fine-tuning split.")
@click.option("--freeze-backbone", is_flag=True, default=False)
@_OUT_DIR
@_fail_clean
def finetune_cmd(task, data_path, init, config_path, seed, epochs, train_fraction,
                 freeze_backbone, out_dir):
    """Fine-tune a task head (and by default the backbone) on the training split."""
    config = _load_config(config_path, seed)
    train, dev, _ = _load_splits(data_path, config)
    if train_fraction < 1.0:
        train = subsample_dataset(train, train_fraction, int(config["train.seed"]))
    init_ckpt = None if init == "scratch" else init
    if init_ckpt is not None and not os.path.exists(init_ckpt):
        raise FileNotFoundError(f"checkpoint not found: {init_ckpt}")
    result = finetune(
        config, task, train, dev, out_dir,
        init_checkpoint=init_ckpt, freeze_backbone=freeze_backbone, epochs=epochs,
    )
    click.echo(f"checkpoint: {result.checkpoint_path}")
    click.echo(f"best dev metric: {result.best_dev_metric}")


@main.command("evaluate")
@click.option("--task", type=click.Choice(TASKS), required=True)
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--split", type=click.Choice(["train", "dev", "test", "all"]), default="test",
              show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Overrides train.seed.")
@click.option("--out", "out_csv", type=click.Path(dir_okay=False), default=None,
              help="Metrics CSV path [default: <out-dir>/<task>_metrics.csv].")
@_OUT_DIR
@_fail_clean
def evaluate_cmd(task, data_path, checkpoint, split, config_path, seed, out_csv, out_dir):
    """Compute deterministic metrics for a fine-tuned checkpoint."""
    config = _load_config(config_path, seed)
    if split == "all":
        data = load_jsonl(data_path)
        if config["data.rescale_max_time"] is not None:
            data = rescale_dataset(data, float(config["data.rescale_max_time"]))
    else:
        splits = dict(zip(("train", "dev", "test"), _load_splits(data_path, config)))
        data = splits[split]
    if out_csv is None:
        os.makedirs(out_dir, exist_ok=True)
        out_csv = os.path.join(out_dir, f"{task}_metrics.csv")
    rows = evaluate(config, task, checkpoint, data, out_csv)
    for task_name, metric, value in rows:
        click.echo(f"{task_name}\t{metric}\t{value}")
    click.echo(f"metrics: {out_csv}")


@main.command("ablate")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Overrides train.seed.")
@click.option("--pretext-epochs", type=int, default=None)
@click.option("--finetune-epochs", type=int, default=None)
@_OUT_DIR
@_fail_clean
def ablate_cmd(data_path, config_path, seed, pretext_epochs, finetune_epochs, out_dir):
    """Run the pretext-task on/off grid plus baseline on next-event prediction."""
    config = _load_config(config_path, seed)
    data = load_jsonl(data_path)
    if config["data.rescale_max_time"] is not None:
        data = rescale_dataset(data, float(config["data.rescale_max_time"]))
    rows = run_ablation(config, data, out_dir, pretext_epochs, finetune_epochs)
    for row in rows:
        click.echo(
            f"{row['combo']}: dev nll/event {row['dev_nll_per_event']:.4f}, "
            f"test nll/event {row['nll_per_event']:.4f}"
        )
    click.echo(f"table: {os.path.join(out_dir, 'ablation.csv')}")


@main.command("report")
@click.argument("csv_paths", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@_OUT_DIR
@_fail_clean
def report_cmd(csv_paths, out_dir):
    """Render metric CSVs into a markdown report (plus plots where applicable)."""
    out_md = render_report(list(csv_paths), out_dir)
    click.echo(f"report: {out_md}")


if __name__ == "__main__":
    main()
