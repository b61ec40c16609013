"""Task heads and objectives for next-event prediction, sequence
classification, and missing-event imputation.

The per-type intensity is softplus(alpha_k * (t - t_j)/t_j + w_k . h + b_k)
where t_j is the preceding arrival and h the causal hidden state at that
event; the total intensity is the sum over types. The next-event likelihood
sums log total intensity at observed events (each conditioned on a nonempty
history) minus a Monte-Carlo estimate of the intensity integral between the
first and last arrival.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

from .data import EventSequence, pad_batch
from .encoder import CAUSAL
from .model import SequenceModel

_LOG_FLOOR = 1e-30  # clamp before log; inactive for any reasonable intensity


@dataclass(frozen=True)
class TPPMetrics:
    nll_per_event: float
    rmse: float
    accuracy: float

    def __post_init__(self):
        if self.rmse < 0 or not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("invalid metric values")


class IntensityHead(nn.Module):
    """Per-type softplus intensity parameters (alpha_k, w_k, b_k).

    ``mean_interval`` is a buffer recording the average training inter-event
    gap; next-event expectations integrate over a horizon of 10x this value.
    """

    def __init__(self, num_types: int, d_model: int):
        super().__init__()
        self.num_types = num_types
        self.alpha = nn.Parameter(torch.zeros(num_types))
        self.weight = nn.Parameter(torch.empty(num_types, d_model))
        self.bias = nn.Parameter(torch.zeros(num_types))
        nn.init.uniform_(self.weight, -1.0 / math.sqrt(d_model), 1.0 / math.sqrt(d_model))
        self.register_buffer("mean_interval", torch.tensor(0.0))

    def lambdas(self, hidden: Tensor, rel_dt: Tensor) -> Tensor:
        """Per-type intensities; hidden (..., d_model), rel_dt (...) holds
        (t - t_j) / t_j. Returns (..., num_types), strictly positive."""
        pre = (
            self.alpha * rel_dt.unsqueeze(-1)
            + hidden @ self.weight.T
            + self.bias
        )
        return nn.functional.softplus(pre)


def intensity_at(
    head: IntensityHead, hidden: Tensor, t: float, t_prev: float
) -> tuple[Tensor, Tensor]:
    """(per-type intensities, total) at time t given the preceding event at t_prev."""
    if t_prev <= 0:
        raise ValueError("preceding event time must be positive (shift the sequence)")
    if t <= t_prev:
        raise ValueError("query time must lie after the preceding event")
    rel = torch.as_tensor((t - t_prev) / t_prev, dtype=hidden.dtype)
    lam = head.lambdas(hidden, rel)
    return lam, lam.sum(-1)


def _causal_hidden(model: SequenceModel, seqs: list[EventSequence]) -> Tensor:
    states = model.encode_batch(seqs, mode=CAUSAL)
    return states.hidden


def tpp_nll_batch(
    model: SequenceModel,
    head: IntensityHead,
    seqs: list[EventSequence],
    mc_samples: int,
    rng: np.random.Generator,
) -> tuple[Tensor, int]:
    """Summed negative log-likelihood over a batch and the event count it covers.

    Each sequence contributes -sum_{i>=2} log lambda(t_i) plus the integral of
    lambda over [t_1, t_N], estimated with ``mc_samples`` uniform points per
    inter-event interval weighted by the interval length. The count is the
    number of log terms (N - 1 per sequence), used for per-event reporting.
    """
    if mc_samples < 1:
        raise ValueError("mc_samples must be positive")
    for seq in seqs:
        if len(seq) < 2:
            raise ValueError("next-event NLL needs sequences with at least 2 events")
        if seq.times[0] <= 0:
            raise ValueError("times must be positive (shift the sequence first)")
    hidden = _causal_hidden(model, seqs)
    batch = pad_batch(seqs)
    dtype = hidden.dtype
    times = torch.as_tensor(batch.times, dtype=dtype)
    valid = ~torch.as_tensor(batch.pad_mask)
    pair_mask = valid[:, 1:] & valid[:, :-1]  # true inter-event intervals
    prev = torch.where(pair_mask, times[:, :-1], torch.ones((), dtype=dtype))
    delta = torch.where(pair_mask, times[:, 1:] - times[:, :-1], torch.zeros((), dtype=dtype))
    h_prev = hidden[:, : times.shape[1] - 1]

    lam_event = head.lambdas(h_prev, delta / prev).sum(-1)
    log_lam = torch.log(torch.clamp(lam_event, min=_LOG_FLOOR))
    event_ll = (log_lam * pair_mask).sum()

    offsets = torch.as_tensor(
        rng.uniform(size=(*delta.shape, mc_samples)), dtype=dtype
    ) * delta.unsqueeze(-1)
    lam_mc = head.lambdas(h_prev.unsqueeze(2), offsets / prev.unsqueeze(-1)).sum(-1)
    integral = (lam_mc.mean(-1) * delta * pair_mask).sum()

    count = int(pair_mask.sum().item())
    return integral - event_ll, count


def tpp_nll(
    model: SequenceModel,
    head: IntensityHead,
    seq: EventSequence,
    mc_samples: int,
    rng: np.random.Generator,
) -> Tensor:
    """Single-sequence negative log-likelihood (summed, not per-event)."""
    total, _ = tpp_nll_batch(model, head, [seq], mc_samples, rng)
    return total


def predict_next(
    model: SequenceModel,
    head: IntensityHead,
    history: EventSequence,
    grid_points: int = 1000,
    horizon: float | None = None,
) -> tuple[float, int]:
    """Expected next arrival time and most intense type at that time.

    The expectation integrates t * lambda(t) * exp(-integral of lambda) on a
    uniform grid over (t_j, t_j + H], H defaulting to 10x the stored mean
    training interval. Deterministic: quadrature only, no sampling.
    """
    if len(history) < 1:
        raise ValueError("history must contain at least one event")
    if history.times[0] <= 0:
        raise ValueError("times must be positive (shift the sequence first)")
    if horizon is None:
        horizon = 10.0 * float(head.mean_interval.item())
    if horizon <= 0:
        raise ValueError("degenerate grid: horizon must be positive")
    t_hats, m_hats = predict_next_batch(
        model, head, [history], [len(history) - 1], grid_points, horizon
    )
    return float(t_hats[0]), int(m_hats[0])


def predict_next_batch(
    model: SequenceModel,
    head: IntensityHead,
    seqs: list[EventSequence],
    positions: list[int] | None = None,
    grid_points: int = 1000,
    horizon: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized next-event prediction.

    For each sequence, predicts the event following every prefix ending at the
    given positions (default: all positions 0..N-2, i.e. predict events
    2..N). Returns flat arrays of predicted times and types, ordered by
    sequence then position.
    """
    if horizon is None:
        horizon = 10.0 * float(head.mean_interval.item())
    if horizon <= 0:
        raise ValueError("degenerate grid: horizon must be positive")
    with torch.no_grad():
        hidden = _causal_hidden(model, seqs)
        anchors_h = []
        anchors_t = []
        for i, seq in enumerate(seqs):
            if positions is None:
                pos_list = list(range(len(seq) - 1))
            else:
                pos_list = [positions[i]]
            for p in pos_list:
                if not 0 <= p < len(seq):
                    raise ValueError(f"invalid history position {p}")
                if seq.times[p] <= 0:
                    raise ValueError("times must be positive (shift the sequence first)")
                anchors_h.append(hidden[i, p])
                anchors_t.append(float(seq.times[p]))
        if not anchors_h:
            return np.zeros(0), np.zeros(0, dtype=np.int64)
        h = torch.stack(anchors_h)  # (P, d)
        t_j = torch.as_tensor(anchors_t, dtype=h.dtype)  # (P,)
        steps = torch.arange(grid_points + 1, dtype=h.dtype) / grid_points
        grid = t_j.unsqueeze(-1) + horizon * steps  # (P, G+1), grid[:,0] = t_j
        rel = (grid - t_j.unsqueeze(-1)) / t_j.unsqueeze(-1)
        lam_k = head.lambdas(h.unsqueeze(1), rel)  # (P, G+1, K)
        lam = lam_k.sum(-1)
        dt = horizon / grid_points
        # cumulative trapezoid of lambda from t_j to each grid point
        seg = 0.5 * (lam[:, 1:] + lam[:, :-1]) * dt
        cum = torch.cat([torch.zeros_like(lam[:, :1]), seg.cumsum(-1)], dim=-1)
        integrand = grid * lam * torch.exp(-cum)
        t_hat = (0.5 * (integrand[:, 1:] + integrand[:, :-1]) * dt).sum(-1)
        rel_hat = (t_hat - t_j) / t_j
        lam_at_hat = head.lambdas(h, rel_hat)
        m_hat = lam_at_hat.argmax(-1)
    return t_hat.numpy().astype(np.float64), m_hat.numpy().astype(np.int64)


def evaluate_tpp(
    model: SequenceModel,
    head: IntensityHead,
    seqs: list[EventSequence],
    mc_samples: int,
    seed: int,
    grid_points: int = 1000,
) -> TPPMetrics:
    """Dataset-level next-event metrics with a fixed Monte-Carlo seed."""
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        nll, count = tpp_nll_batch(model, head, seqs, mc_samples, rng)
    t_hat, m_hat = predict_next_batch(model, head, seqs, None, grid_points)
    true_t = np.concatenate([s.times[1:] for s in seqs])
    true_m = np.concatenate([s.marks[1:] for s in seqs])
    rmse = float(np.sqrt(np.mean((t_hat - true_t) ** 2)))
    acc = float(np.mean(m_hat == true_m))
    return TPPMetrics(float(nll.item()) / count, rmse, acc)


class SequenceClassifier(nn.Module):
    """Two-layer perceptron on the sequence embedding producing one logit."""

    def __init__(self, d_model: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d_model, d_model), nn.GELU(), nn.Linear(d_model, 1)
        )

    def forward(self, z: Tensor) -> Tensor:
        return self.net(z).squeeze(-1)


def classify(model: SequenceModel, clf: SequenceClassifier, seq: EventSequence) -> float:
    """Probability that the sequence carries label 1."""
    with torch.no_grad():
        z = model.encode_batch([seq]).z
        return float(torch.sigmoid(clf(z))[0].item())


def auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative; ties count 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    from scipy.stats import rankdata

    ranks = rankdata(scores, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


class ImputationHeads(nn.Module):
    """Type logits and scalar time regression from masked-position states.

    The time head is trained on targets divided by ``time_scale`` (set from
    the training split) so the regression loss starts at unit scale;
    predictions are mapped back to original units.
    """

    def __init__(self, d_model: int, num_types: int):
        super().__init__()
        self.type_head = nn.Sequential(
            nn.Linear(d_model, d_model), nn.GELU(), nn.Linear(d_model, num_types)
        )
        self.time_head = nn.Sequential(
            nn.Linear(d_model, d_model), nn.GELU(), nn.Linear(d_model, 1)
        )
        self.register_buffer("time_scale", torch.tensor(1.0))

    def forward(self, hidden: Tensor) -> tuple[Tensor, Tensor]:
        return self.type_head(hidden), self.time_head(hidden).squeeze(-1)

    def predicted_times(self, hidden: Tensor) -> Tensor:
        return self.time_head(hidden).squeeze(-1) * self.time_scale


def imputation_metrics(
    type_pred: np.ndarray,
    time_pred: np.ndarray,
    true_marks: np.ndarray,
    true_times: np.ndarray,
) -> tuple[float, float]:
    """(accuracy, rmse) of imputed events against the ground truth."""
    if len(type_pred) == 0:
        raise ValueError("no imputed events to score")
    acc = float(np.mean(np.asarray(type_pred) == np.asarray(true_marks)))
    err = np.asarray(time_pred, dtype=np.float64) - np.asarray(true_times, dtype=np.float64)
    return acc, float(np.sqrt(np.mean(err**2)))


@dataclass(frozen=True)
class ImputationResult:
    masked_indices: tuple[int, ...]
    type_pred: np.ndarray
    time_pred: np.ndarray
    accuracy: float
    rmse: float


def impute(
    model: SequenceModel,
    heads: ImputationHeads,
    seq: EventSequence,
    missing_ratio: float,
    rng: np.random.Generator,
    target: str = "absolute",
) -> ImputationResult:
    """Hide floor(ratio * N) uniformly chosen events and predict them back.

    Types are argmax over the K logits; times are either absolute arrivals
    (default) or gaps to the previous event, but metrics are always reported
    on the predicted quantity's original scale.
    """
    if not 0.0 < missing_ratio < 1.0:
        raise ValueError("missing_ratio must be in (0, 1)")
    if len(seq) < 2:
        raise ValueError("imputation needs at least 2 events")
    if target not in ("absolute", "gap"):
        raise ValueError("target must be 'absolute' or 'gap'")
    count = int(math.floor(missing_ratio * len(seq)))
    if count == 0:
        raise ValueError("missing_ratio too small: nothing to impute")
    picked = tuple(sorted(int(i) for i in rng.choice(len(seq), count, replace=False)))
    with torch.no_grad():
        states = model.encode_batch([seq], masked_sets=[picked])
        h = states.hidden[0, list(picked)]
        logits, _ = heads(h)
        type_pred = logits.argmax(-1).numpy().astype(np.int64)
        time_pred = heads.predicted_times(h).numpy().astype(np.float64)
    true_marks = seq.marks[list(picked)]
    if target == "absolute":
        true_times = seq.times[list(picked)]
    else:
        prev = np.concatenate([[0.0], seq.times[:-1]])
        true_times = seq.times[list(picked)] - prev[list(picked)]
    acc, rmse = imputation_metrics(type_pred, time_pred, true_marks, true_times)
    return ImputationResult(picked, type_pred, time_pred, acc, rmse)
