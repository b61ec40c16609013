"""Training loops: the combined pretext objective, task fine-tuning, and
deterministic evaluation.

Every run is a pure function of (config, seed, data): model init goes through
``torch.manual_seed``, all sampling goes through named numpy streams spawned
from the run seed, and long-running entry points pin torch to one thread so
repeated runs produce byte-identical checkpoints and CSVs.
"""

from __future__ import annotations

import csv
import json
import math
import os
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

from . import alignment as al
from . import contrastive as cl
from . import masking as mk
from .checkpoint import load_checkpoint, load_into, save_checkpoint, state_tensors
from .config import RunConfig
from .data import Dataset, EventSequence, shift_to_min_time
from .downstream import (
    ImputationHeads,
    IntensityHead,
    SequenceClassifier,
    auc,
    evaluate_tpp,
    imputation_metrics,
    tpp_nll_batch,
)
from .embedding import EmbeddingConfig
from .encoder import BIDIRECTIONAL, CAUSAL, EncoderConfig
from .model import SequenceModel

TASKS = ("tpp", "classify", "impute")

_EVAL_SEED = 0x5EED  # fixed stream for dev/test Monte-Carlo draws
_TRAIN_NLL_SAMPLE = 256


@contextmanager
def _single_thread():
    old = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(old)


@dataclass
class RngStreams:
    data: np.random.Generator
    mask: np.random.Generator
    views: np.random.Generator
    align: np.random.Generator
    mc: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RngStreams":
        children = np.random.SeedSequence(seed).spawn(5)
        return cls(*(np.random.default_rng(s) for s in children))


def build_embedding_config(config: RunConfig) -> EmbeddingConfig:
    return EmbeddingConfig(
        d_time=int(config["embedding.d_time"]),
        d_type=int(config["embedding.d_type"]),
        time_kind=config["embedding.time_kind"],
        mercer_omega_init=float(config["embedding.mercer_omega_init"]),
    )


def build_encoder_config(config: RunConfig) -> EncoderConfig:
    d_model = int(config["encoder.d_model"])
    return EncoderConfig(
        num_layers=int(config["encoder.num_layers"]),
        num_heads=int(config["encoder.num_heads"]),
        d_model=d_model,
        d_ff=int(config["encoder.ff_multiplier"]) * d_model,
    )


def build_backbone(config: RunConfig, num_types: int) -> SequenceModel:
    return SequenceModel(build_embedding_config(config), build_encoder_config(config), num_types)


class PretextModel(nn.Module):
    """Backbone plus the reconstruction decoders and alignment classifier."""

    def __init__(self, config: RunConfig, num_types: int):
        super().__init__()
        self.backbone = build_backbone(config, num_types)
        embed = self.backbone.embedder.config
        self.recon = mk.ReconstructionHeads(embed.d_model, embed.d_time, embed.d_type)
        self.align = al.AlignmentClassifier(embed.d_model)


class TaskModel(nn.Module):
    """Backbone plus one downstream head."""

    def __init__(self, config: RunConfig, num_types: int, task: str):
        super().__init__()
        if task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        self.task = task
        self.backbone = build_backbone(config, num_types)
        d_model = self.backbone.d_model
        if task == "tpp":
            self.head = IntensityHead(num_types, d_model)
        elif task == "classify":
            self.head = SequenceClassifier(d_model)
        else:
            self.head = ImputationHeads(d_model, num_types)


@dataclass
class PretextLoss:
    rec: float
    cl: float
    align: float
    total: float


def pretext_step(
    seqs: list[EventSequence],
    model: PretextModel,
    config: RunConfig,
    optimizer: torch.optim.Optimizer,
    rngs: RngStreams,
) -> tuple[PretextLoss, int]:
    """One optimizer step on the weighted pretext objective.

    All enabled losses are computed from a single encoder pass over the
    concatenation of their inputs. Sequences with fewer than 2 events are
    skipped; the skip count is returned for logging.
    """
    weights = (
        float(config["pretext.alpha"]),
        float(config["pretext.beta"]),
        float(config["pretext.gamma"]),
    )
    usable = [s for s in seqs if len(s) >= 2]
    skipped = len(seqs) - len(usable)
    pair_tasks = weights[1] > 0 or weights[2] > 0
    if not usable or (pair_tasks and len(usable) < 2):
        raise ValueError("effective batch too small for the enabled pretext tasks")

    entries: list[EventSequence] = []
    masked_sets: list = []

    def add(seq, masked=None):
        entries.append(seq)
        masked_sets.append(masked)
        return len(entries) - 1

    # unmodified sequences are shared between the contrastive originals and
    # the alignment positives, so each is encoded once per step
    orig_entries: dict[int, int] = {}

    def orig_entry(i):
        if i not in orig_entries:
            orig_entries[i] = add(usable[i])
        return orig_entries[i]

    rec_rows: list[tuple[int, tuple[int, ...]]] = []
    if weights[0] > 0:
        for seq in usable:
            plan = mk.sample_mask(
                seq,
                config["mask.strategy"],
                float(config["mask.ratio"]),
                config["mask.window_duration"],
                rngs.mask,
            )
            if plan.masked:
                rec_rows.append((add(seq, plan.masked), plan.masked))

    cl_idx: dict[str, list[int]] = {"orig": [], "sub": [], "mask": []}
    if weights[1] > 0:
        ratio = float(config["contrastive.ratio"])
        for i, seq in enumerate(usable):
            cl_idx["orig"].append(orig_entry(i))
            cl_idx["sub"].append(add(cl.view_subsequence(seq, ratio, rngs.views)))
            cl_idx["mask"].append(add(seq, cl.masked_view_indices(seq, ratio, rngs.views)))

    align_examples: list[al.AlignmentExample] = []
    align_idx: list[int] = []
    if weights[2] > 0:
        align_examples = al.build_alignment_batch(
            usable, rngs.align, tuple(config["alignment.methods"])
        )
        # examples alternate (positive, negative) per input sequence
        align_idx = [
            orig_entry(j // 2) if ex.label == 1 else add(ex.seq)
            for j, ex in enumerate(align_examples)
        ]

    states = model.backbone.encode_batch(entries, masked_sets, mode=BIDIRECTIONAL)
    zero = torch.zeros((), dtype=states.hidden.dtype)
    rec_loss = cl_loss = align_loss = zero

    if weights[0] > 0 and rec_rows:
        hidden_rows, t_targets, m_targets = [], [], []
        embedder = model.backbone.embedder
        for entry, masked in rec_rows:
            idx = list(masked)
            hidden_rows.append(states.hidden[entry, idx])
            seq = entries[entry]
            t_targets.append(embedder.embed_times(torch.as_tensor(seq.times[idx])))
            m_targets.append(embedder.embed_types(torch.as_tensor(seq.marks[idx])))
        decoded_time, decoded_type = model.recon(torch.cat(hidden_rows))
        rec_loss = mk.reconstruction_loss(
            decoded_time, decoded_type, torch.cat(t_targets), torch.cat(m_targets)
        )

    if weights[1] > 0:
        z = states.z
        z_orig = z[cl_idx["orig"]]
        noisy = torch.stack(
            [cl.view_noisy(z_orig[i], rngs.views) for i in range(len(usable))]
        )
        groups = torch.stack([z_orig, z[cl_idx["sub"]], z[cl_idx["mask"]], noisy], dim=1)
        cl_loss = cl.nt_xent_loss(
            groups,
            float(config["contrastive.temperature"]),
            config["contrastive.similarity"],
        )

    if weights[2] > 0:
        logits = model.align(states.z[align_idx])
        labels = torch.as_tensor([ex.label for ex in align_examples])
        align_loss = al.alignment_loss(logits, labels)

    total = weights[0] * rec_loss + weights[1] * cl_loss + weights[2] * align_loss
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    rec_f, cl_f, align_f = (float(t.item()) for t in (rec_loss, cl_loss, align_loss))
    # reported total recomputed from the reported components so the
    # bookkeeping identity holds exactly in float
    loss = PretextLoss(
        rec=rec_f,
        cl=cl_f,
        align=align_f,
        total=weights[0] * rec_f + weights[1] * cl_f + weights[2] * align_f,
    )
    return loss, skipped


def make_optimizer(params, lr: float) -> torch.optim.Adam:
    """Adam with bias correction, betas (0.9, 0.999), eps 1e-8, fixed lr."""
    return torch.optim.Adam(params, lr=lr, betas=(0.9, 0.999), eps=1e-8)


def _batches(n: int, batch_size: int, rng: np.random.Generator, min_size: int):
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        chunk = order[lo : lo + batch_size]
        if len(chunk) >= min_size:
            yield [int(i) for i in chunk]


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


@dataclass
class PretrainResult:
    checkpoint_path: str
    manifest_path: str
    epoch_losses: list[PretextLoss]


def pretrain(
    config: RunConfig,
    train: Dataset,
    out_dir,
    epochs: int | None = None,
) -> PretrainResult:
    """Run the pretext objective and write a checkpoint plus a run manifest."""
    os.makedirs(out_dir, exist_ok=True)
    epochs = int(config["train.pretext_epochs"]) if epochs is None else int(epochs)
    seed = int(config["train.seed"])
    batch_size = int(config["train.batch_size"])
    pair_tasks = config["pretext.beta"] > 0 or config["pretext.gamma"] > 0
    min_size = 2 if pair_tasks else 1
    with _single_thread():
        torch.manual_seed(seed)
        model = PretextModel(config, train.num_types)
        optimizer = make_optimizer(model.parameters(), float(config["train.lr"]))
        rngs = RngStreams.from_seed(seed)
        epoch_losses: list[PretextLoss] = []
        skipped_total = 0
        for _ in range(epochs):
            sums = np.zeros(4)
            steps = 0
            for batch in _batches(len(train), batch_size, rngs.data, min_size):
                seqs = [train.sequences[i] for i in batch]
                if sum(len(s) >= 2 for s in seqs) < min_size:
                    skipped_total += len(seqs)
                    continue
                loss, skipped = pretext_step(seqs, model, config, optimizer, rngs)
                skipped_total += skipped
                sums += (loss.rec, loss.cl, loss.align, loss.total)
                steps += 1
            if steps == 0:
                raise ValueError("no usable batches: dataset too small or sequences too short")
            epoch_losses.append(PretextLoss(*(sums / steps)))
        ckpt_path = os.path.join(out_dir, "pretext.ckpt")
        save_checkpoint(ckpt_path, state_tensors(model))
    manifest = {
        "kind": "pretrain",
        "config": config.values,
        "seed": seed,
        "epochs": epochs,
        "num_train_sequences": len(train),
        "num_types": train.num_types,
        "skipped_sequences": skipped_total,
        "epoch_losses": [vars(l) for l in epoch_losses],
        "checkpoint": "pretext.ckpt",
    }
    manifest_path = os.path.join(out_dir, "pretrain_manifest.json")
    _write_json(manifest_path, manifest)
    return PretrainResult(ckpt_path, manifest_path, epoch_losses)


def _prepare_task_data(task: str, ds: Dataset, config: RunConfig) -> Dataset:
    """Task-specific normalization; next-event training shifts times to >= 1."""
    if task == "tpp":
        shifted = [shift_to_min_time(s) for s in ds if len(s) >= 2]
        return Dataset(shifted, ds.num_types)
    if task == "classify":
        keep = [s for s in ds if s.label is not None]
        if not keep:
            raise ValueError("classification needs sequences with labels")
        return Dataset(keep, ds.num_types)
    return Dataset([s for s in ds if len(s) >= 2], ds.num_types)


def _impute_targets(seq: EventSequence, picked: list[int], target: str) -> np.ndarray:
    if target == "absolute":
        return seq.times[picked]
    prev = np.concatenate([[0.0], seq.times[:-1]])
    return seq.times[picked] - prev[picked]


def _impute_forward(
    model: SequenceModel,
    heads: ImputationHeads,
    seqs: list[EventSequence],
    picked_sets: list[list[int]],
    target: str,
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Batched masked encoding; returns (type logits, scaled time preds,
    true marks, scaled true times) over all masked positions."""
    states = model.encode_batch(seqs, masked_sets=picked_sets, mode=BIDIRECTIONAL)
    rows, marks, times = [], [], []
    for i, (seq, picked) in enumerate(zip(seqs, picked_sets)):
        rows.append(states.hidden[i, picked])
        marks.append(torch.as_tensor(seq.marks[picked]))
        times.append(torch.as_tensor(_impute_targets(seq, picked, target)))
    hidden = torch.cat(rows)
    logits, time_pred = heads(hidden)
    scale = heads.time_scale.clamp_min(1e-12)
    scaled_times = torch.cat(times).to(time_pred.dtype) / scale
    return logits, time_pred, torch.cat(marks), scaled_times


def _dev_metric(
    task: str,
    model: TaskModel,
    dev: Dataset,
    config: RunConfig,
    chunk: int = 64,
) -> float:
    """Deterministic dev-set metric; lower is better for tpp, higher otherwise."""
    rng = np.random.default_rng(_EVAL_SEED)
    with torch.no_grad():
        if task == "tpp":
            total, count = 0.0, 0
            for lo in range(0, len(dev), chunk):
                seqs = dev.sequences[lo : lo + chunk]
                nll, n = tpp_nll_batch(
                    model.backbone, model.head, seqs, int(config["tpp.mc_samples"]), rng
                )
                total += float(nll.item())
                count += n
            return total / count
        if task == "classify":
            scores, labels = [], []
            for lo in range(0, len(dev), chunk):
                seqs = dev.sequences[lo : lo + chunk]
                z = model.backbone.encode_batch(seqs, mode=BIDIRECTIONAL).z
                scores.extend(torch.sigmoid(model.head(z)).tolist())
                labels.extend(s.label for s in seqs)
            return auc(scores, labels)
        ratio = float(config["impute.train_missing_ratio"])
        correct, seen = 0, 0
        for lo in range(0, len(dev), chunk):
            seqs = dev.sequences[lo : lo + chunk]
            picked = [
                sorted(rng.choice(len(s), max(1, int(math.floor(ratio * len(s)))), replace=False).tolist())
                for s in seqs
            ]
            logits, _, marks, _ = _impute_forward(
                model.backbone, model.head, seqs, picked, config["impute.target"]
            )
            correct += int((logits.argmax(-1) == marks).sum().item())
            seen += len(marks)
        return correct / seen


@dataclass
class FinetuneResult:
    checkpoint_path: str
    manifest_path: str
    metrics_path: str
    best_epoch: int
    best_dev_metric: float
    dev_metrics: list[float]


def finetune(
    config: RunConfig,
    task: str,
    train: Dataset,
    dev: Dataset,
    out_dir,
    init_checkpoint=None,
    freeze_backbone: bool = False,
    epochs: int | None = None,
) -> FinetuneResult:
    """Fine-tune the backbone plus a task head; keep the best-dev checkpoint.

    ``init_checkpoint`` may be a pretext checkpoint path (its backbone tensors
    are loaded, pretext heads dropped) or None for the from-scratch baseline.
    """
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}")
    os.makedirs(out_dir, exist_ok=True)
    epochs = int(config["train.finetune_epochs"]) if epochs is None else int(epochs)
    seed = int(config["train.seed"])
    batch_size = int(config["train.batch_size"])
    train = _prepare_task_data(task, train, config)
    dev = _prepare_task_data(task, dev, config)
    if len(train) == 0 or len(dev) == 0:
        raise ValueError("empty train or dev split after task filtering")
    with _single_thread():
        torch.manual_seed(seed)
        model = TaskModel(config, train.num_types, task)
        if init_checkpoint is not None:
            load_into(model.backbone, load_checkpoint(init_checkpoint), prefix="backbone.")
        if freeze_backbone:
            for p in model.backbone.parameters():
                p.requires_grad_(False)
        if task == "tpp":
            gaps = np.concatenate([np.diff(s.times) for s in train if len(s) >= 2])
            model.head.mean_interval.fill_(float(gaps.mean()))
        if task == "impute":
            targets = np.concatenate(
                [
                    _impute_targets(s, list(range(len(s))), config["impute.target"])
                    for s in train
                ]
            )
            model.head.time_scale.fill_(max(float(np.abs(targets).mean()), 1e-12))
        trainable = [p for p in model.parameters() if p.requires_grad]
        optimizer = make_optimizer(trainable, float(config["train.lr"]))
        rngs = RngStreams.from_seed(seed)
        minimize = task == "tpp"
        best_metric = math.inf if minimize else -math.inf
        best_epoch = -1
        best_state = None
        dev_metrics: list[float] = []
        train_nll_log: list[float] = []
        ce = nn.CrossEntropyLoss()
        for epoch in range(epochs):
            for batch in _batches(len(train), batch_size, rngs.data, 1):
                seqs = [train.sequences[i] for i in batch]
                if task == "tpp":
                    nll, count = tpp_nll_batch(
                        model.backbone, model.head, seqs, int(config["tpp.mc_samples"]), rngs.mc
                    )
                    loss = nll / count
                elif task == "classify":
                    z = model.backbone.encode_batch(seqs, mode=BIDIRECTIONAL).z
                    labels = torch.as_tensor([float(s.label) for s in seqs])
                    loss = nn.functional.binary_cross_entropy_with_logits(
                        model.head(z), labels
                    )
                else:
                    ratio = float(config["impute.train_missing_ratio"])
                    picked = [
                        sorted(
                            rngs.mask.choice(
                                len(s), max(1, int(math.floor(ratio * len(s)))), replace=False
                            ).tolist()
                        )
                        for s in seqs
                    ]
                    logits, time_pred, marks, scaled_times = _impute_forward(
                        model.backbone, model.head, seqs, picked, config["impute.target"]
                    )
                    loss = ce(logits, marks) + nn.functional.mse_loss(time_pred, scaled_times)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
            metric = _dev_metric(task, model, dev, config)
            dev_metrics.append(metric)
            if task == "tpp":
                sample = Dataset(train.sequences[:_TRAIN_NLL_SAMPLE], train.num_types)
                train_nll_log.append(_dev_metric(task, model, sample, config))
            if (minimize and metric < best_metric) or (not minimize and metric > best_metric):
                best_metric = metric
                best_epoch = epoch
                best_state = {k: v.clone() for k, v in state_tensors(model).items()}
        model.load_state_dict(best_state)
        ckpt_path = os.path.join(out_dir, f"{task}.ckpt")
        save_checkpoint(ckpt_path, state_tensors(model))
    metric_name = {"tpp": "dev_nll_per_event", "classify": "dev_auc", "impute": "dev_accuracy"}[task]
    metrics_path = os.path.join(out_dir, f"{task}_epochs.csv")
    _write_csv(
        metrics_path,
        ["epoch", "metric", "value"],
        [[i, metric_name, repr(m)] for i, m in enumerate(dev_metrics)],
    )
    manifest = {
        "kind": "finetune",
        "task": task,
        "config": config.values,
        "seed": seed,
        "epochs": epochs,
        "init": "scratch" if init_checkpoint is None else "checkpoint",
        "freeze_backbone": freeze_backbone,
        "num_train_sequences": len(train),
        "dev_metric": metric_name,
        "dev_metrics": dev_metrics,
        "train_nll_sample": train_nll_log,
        "best_epoch": best_epoch,
        "best_dev_metric": best_metric,
        "checkpoint": f"{task}.ckpt",
    }
    manifest_path = os.path.join(out_dir, f"{task}_manifest.json")
    _write_json(manifest_path, manifest)
    return FinetuneResult(
        ckpt_path, manifest_path, metrics_path, best_epoch, best_metric, dev_metrics
    )


IMPUTE_EVAL_RATIOS = tuple(round(0.1 * i, 1) for i in range(1, 10))


def evaluate(
    config: RunConfig,
    task: str,
    checkpoint_path,
    data: Dataset,
    out_csv,
) -> list[tuple[str, str, float]]:
    """Deterministic metrics for a fine-tuned checkpoint; writes task/metric/value rows."""
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}")
    data = _prepare_task_data(task, data, config)
    if len(data) == 0:
        raise ValueError("no evaluable sequences for this task")
    with _single_thread():
        torch.manual_seed(int(config["train.seed"]))
        model = TaskModel(config, data.num_types, task)
        load_into(model, load_checkpoint(checkpoint_path))
        model.eval()
        rows: list[tuple[str, str, float]] = []
        if task == "tpp":
            metrics = evaluate_tpp(
                model.backbone,
                model.head,
                data.sequences,
                int(config["tpp.mc_samples"]),
                _EVAL_SEED,
                int(config["tpp.grid_points"]),
            )
            rows += [
                ("tpp", "nll_per_event", metrics.nll_per_event),
                ("tpp", "rmse", metrics.rmse),
                ("tpp", "accuracy", metrics.accuracy),
            ]
        elif task == "classify":
            rows.append(("classify", "auc", _dev_metric(task, model, data, config)))
        else:
            target = config["impute.target"]
            for k, ratio in enumerate(IMPUTE_EVAL_RATIOS):
                rng = np.random.default_rng(_EVAL_SEED + k)
                type_preds, time_preds, marks, times = [], [], [], []
                for lo in range(0, len(data), 64):
                    seqs = data.sequences[lo : lo + 64]
                    picked = [
                        sorted(
                            rng.choice(
                                len(s), max(1, int(math.floor(ratio * len(s)))), replace=False
                            ).tolist()
                        )
                        for s in seqs
                    ]
                    with torch.no_grad():
                        states = model.backbone.encode_batch(
                            seqs, masked_sets=picked, mode=BIDIRECTIONAL
                        )
                        for i, (seq, idx) in enumerate(zip(seqs, picked)):
                            h = states.hidden[i, idx]
                            logits, _ = model.head(h)
                            type_preds.append(logits.argmax(-1).numpy())
                            time_preds.append(model.head.predicted_times(h).numpy())
                            marks.append(seq.marks[idx])
                            times.append(_impute_targets(seq, idx, target))
                acc, rmse = imputation_metrics(
                    np.concatenate(type_preds),
                    np.concatenate(time_preds),
                    np.concatenate(marks),
                    np.concatenate(times),
                )
                rows.append(("impute", f"accuracy@{ratio}", acc))
                rows.append(("impute", f"rmse@{ratio}", rmse))
    if out_csv is not None:
        _write_csv(
            out_csv,
            ["task", "metric", "value"],
            [[t, m, repr(float(v))] for t, m, v in rows],
        )
    return rows
