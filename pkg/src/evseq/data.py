"""Event-sequence containers, JSONL i/o, Hawkes simulation, splitting, padding.

Times are abstract nonnegative reals (no calendar parsing); marks are integer
event types in ``[0, num_types)``. All randomness goes through explicit
``numpy.random.Generator`` objects or integer seeds, so every producer in this
module is deterministic given its inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class Event(NamedTuple):
    time: float
    mark: int


@dataclass(frozen=True)
class EventSequence:
    """Strictly increasing arrival times paired with marks in ``[0, num_types)``.

    ``label`` is an optional binary sequence-level label used by the
    classification task; it is ignored everywhere else.
    """

    times: np.ndarray
    marks: np.ndarray
    num_types: int
    label: int | None = None

    def __post_init__(self):
        times = np.ascontiguousarray(np.asarray(self.times, dtype=np.float64))
        marks = np.ascontiguousarray(np.asarray(self.marks, dtype=np.int64))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "marks", marks)
        if times.ndim != 1 or marks.ndim != 1:
            raise ValueError("times and marks must be one-dimensional")
        if len(times) != len(marks):
            raise ValueError(
                f"times/marks length mismatch: {len(times)} vs {len(marks)}"
            )
        if self.num_types < 1:
            raise ValueError("num_types must be a positive integer")
        if len(times) > 0 and times[0] < 0.0:
            raise ValueError("negative event time")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("non-increasing times")
        if len(marks) > 0 and (marks.min() < 0 or marks.max() >= self.num_types):
            raise ValueError(f"mark out of range [0, {self.num_types})")
        if self.label is not None and self.label not in (0, 1):
            raise ValueError("label must be 0, 1, or None")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def span(self) -> float:
        """t_N - t_1 (zero for sequences with fewer than two events)."""
        if len(self.times) < 2:
            return 0.0
        return float(self.times[-1] - self.times[0])

    @property
    def events(self) -> list[Event]:
        return [Event(float(t), int(m)) for t, m in zip(self.times, self.marks)]

    def shifted(self, offset: float) -> "EventSequence":
        """Copy with all arrival times moved by ``offset``."""
        return EventSequence(self.times + offset, self.marks, self.num_types, self.label)


def intervals(seq: EventSequence) -> np.ndarray:
    """Inter-event gaps t_{i+1} - t_i; length N-1, all strictly positive."""
    if len(seq) == 0:
        raise ValueError("intervals undefined for an empty sequence")
    return np.diff(seq.times)


def shift_to_min_time(seq: EventSequence, min_time: float = 1.0) -> EventSequence:
    """Shift so the first arrival is at least ``min_time``.

    The intensity parameterization divides by the preceding arrival time, so
    sequences entering next-event training are normalized this way first.
    """
    if len(seq) == 0 or seq.times[0] >= min_time:
        return seq
    return seq.shifted(min_time - float(seq.times[0]))


@dataclass(frozen=True)
class HawkesParams:
    """Multivariate Hawkes process with exponential excitation kernels.

    Type ``i`` intensity: mu_i + sum over past events (t_k, m_k) of
    ``alpha[i, m_k] * exp(-beta[i, m_k] * (t - t_k))``. Stationarity requires
    the spectral radius of ``alpha / beta`` to be strictly below one.
    """

    mu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        k = len(mu)
        alpha = np.broadcast_to(np.asarray(self.alpha, dtype=np.float64), (k, k)).copy()
        beta = np.broadcast_to(np.asarray(self.beta, dtype=np.float64), (k, k)).copy()
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        if np.any(mu < 0):
            raise ValueError("base rates mu must be nonnegative")
        if np.any(alpha < 0):
            raise ValueError("excitation alpha must be nonnegative")
        if np.any(beta <= 0):
            raise ValueError("decay rates beta must be strictly positive")
        rho = self.branching_radius
        if rho >= 1.0:
            raise ValueError(
                f"non-stationary parameters: spectral radius {rho:.4f} >= 1"
            )

    @property
    def num_types(self) -> int:
        return len(self.mu)

    @property
    def branching_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.alpha / self.beta))))


def simulate_hawkes(params: HawkesParams, horizon: float, seed: int) -> EventSequence:
    """Sample one realization on (0, horizon] by thinning.

    Between events the intensity only decays, so the total intensity just
    after the current time is a valid upper bound; it is refreshed after every
    candidate. State recursion keeps the per-pair excitation matrix so each
    step costs O(K^2) instead of O(K * history).
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rng = np.random.default_rng(seed)
    k = params.num_types
    mu = params.mu
    excite = np.zeros((k, k))  # excite[i, j]: current kernel mass of type j on type i
    times: list[float] = []
    marks: list[int] = []
    t = 0.0
    while True:
        lam_bar = float(mu.sum() + excite.sum())
        if lam_bar <= 0.0:
            break
        wait = rng.exponential(1.0 / lam_bar)
        t_new = t + wait
        if t_new > horizon:
            break
        if t_new <= t:  # exponential draw underflowed to zero
            t_new = np.nextafter(t, np.inf)
        excite *= np.exp(-params.beta * (t_new - t))
        t = t_new
        lam = mu + excite.sum(axis=1)
        u = rng.uniform(0.0, lam_bar)
        total = float(lam.sum())
        if u < total:  # accepted; pick the type from the same uniform draw
            mark = int(np.searchsorted(np.cumsum(lam), u, side="right"))
            mark = min(mark, k - 1)
            times.append(t)
            marks.append(mark)
            excite[:, mark] += params.alpha[:, mark]
    return EventSequence(np.array(times), np.array(marks, dtype=np.int64), k)


@dataclass(frozen=True)
class Dataset:
    sequences: list[EventSequence] = field(default_factory=list)
    num_types: int = 1

    def __post_init__(self):
        if self.num_types < 1:
            raise ValueError("num_types must be positive")
        for i, seq in enumerate(self.sequences):
            if seq.num_types != self.num_types:
                raise ValueError(
                    f"sequence {i} has num_types {seq.num_types}, dataset has {self.num_types}"
                )

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    def __getitem__(self, i: int) -> EventSequence:
        return self.sequences[i]


def simulate_hawkes_dataset(
    params: HawkesParams, horizon: float, num_seqs: int, seed: int
) -> Dataset:
    """Independent realizations; sequence ``i`` uses seed ``seed + i``."""
    seqs = [simulate_hawkes(params, horizon, seed + i) for i in range(num_seqs)]
    return Dataset(seqs, params.num_types)


def load_jsonl(path) -> Dataset:
    """Read a dataset: header line ``{"num_types": K}``, then one object per
    line ``{"seq": [[t, m], ...], "label": 0/1 optional}``.

    Malformed lines are reported with their 1-based line number.
    """
    sequences = []
    num_types = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ValueError(f"parse failure at line {lineno}: {exc}") from exc
            if lineno == 1:
                if not isinstance(obj, dict) or "num_types" not in obj:
                    raise ValueError(f'missing {{"num_types": K}} header at line 1')
                num_types = int(obj["num_types"])
                if num_types < 1:
                    raise ValueError(f"invalid num_types at line 1: {num_types}")
                continue
            if "seq" not in obj:
                raise ValueError(f'missing "seq" field at line {lineno}')
            pairs = obj["seq"]
            try:
                times = np.array([p[0] for p in pairs], dtype=np.float64)
                marks = np.array([p[1] for p in pairs], dtype=np.int64)
            except (TypeError, IndexError, ValueError) as exc:
                raise ValueError(f"malformed seq entry at line {lineno}: {exc}") from exc
            label = obj.get("label")
            try:
                sequences.append(EventSequence(times, marks, num_types, label))
            except ValueError as exc:
                raise ValueError(f"{exc} at line {lineno}") from exc
    if num_types is None:
        raise ValueError("empty file: expected a header line")
    return Dataset(sequences, num_types)


def save_jsonl(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"num_types": dataset.num_types}) + "\n")
        for seq in dataset:
            obj = {"seq": [[float(t), int(m)] for t, m in zip(seq.times, seq.marks)]}
            if seq.label is not None:
                obj["label"] = int(seq.label)
            fh.write(json.dumps(obj) + "\n")


def split_dataset(
    dataset: Dataset, fractions: tuple[float, float, float], seed: int
) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint shuffled (train, dev, test) partition; deterministic by seed.

    Train and dev take ``floor(fraction * n)`` sequences, test takes the rest.
    """
    f_train, f_dev, f_test = fractions
    if min(f_train, f_dev, f_test) < 0:
        raise ValueError("fractions must be nonnegative")
    if abs(f_train + f_dev + f_test - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {f_train + f_dev + f_test}")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(f_train * n))
    n_dev = int(math.floor(f_dev * n))
    parts = (
        order[:n_train],
        order[n_train : n_train + n_dev],
        order[n_train + n_dev :],
    )
    return tuple(
        Dataset([dataset.sequences[i] for i in part], dataset.num_types)
        for part in parts
    )


def subsample_dataset(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Deterministic subset of exactly ``floor(fraction * n)`` sequences."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    n = len(dataset)
    size = int(math.floor(fraction * n))
    keep = np.random.default_rng(seed).permutation(n)[:size]
    return Dataset([dataset.sequences[i] for i in sorted(keep)], dataset.num_types)


def rescale_dataset(dataset: Dataset, max_time: float) -> Dataset:
    """Scale all times so the largest arrival in the dataset equals ``max_time``."""
    if max_time <= 0:
        raise ValueError("max_time must be positive")
    latest = max((float(s.times[-1]) for s in dataset if len(s) > 0), default=0.0)
    if latest == 0.0:
        return dataset
    factor = max_time / latest
    return Dataset(
        [
            EventSequence(s.times * factor, s.marks, s.num_types, s.label)
            for s in dataset
        ],
        dataset.num_types,
    )


@dataclass(frozen=True)
class PaddedBatch:
    """Rectangular (batch, max_len) arrays with per-row valid lengths.

    ``pad_mask`` is True at padding positions. Padding slots hold time 0.0 and
    mark 0 as inert placeholders; consumers must never read them.
    """

    times: np.ndarray
    marks: np.ndarray
    lengths: np.ndarray
    pad_mask: np.ndarray

    @property
    def batch_size(self) -> int:
        return self.times.shape[0]

    @property
    def max_len(self) -> int:
        return self.times.shape[1]


def pad_batch(seqs: list[EventSequence]) -> PaddedBatch:
    if not seqs:
        raise ValueError("cannot pad an empty batch")
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    width = int(lengths.max())
    times = np.zeros((len(seqs), width), dtype=np.float64)
    marks = np.zeros((len(seqs), width), dtype=np.int64)
    pad_mask = np.ones((len(seqs), width), dtype=bool)
    for i, seq in enumerate(seqs):
        n = len(seq)
        times[i, :n] = seq.times
        marks[i, :n] = seq.marks
        pad_mask[i, :n] = False
    return PaddedBatch(times, marks, lengths, pad_mask)


def unpad_batch(batch: PaddedBatch) -> list[tuple[np.ndarray, np.ndarray]]:
    """Inverse of :func:`pad_batch` up to dtype: list of (times, marks)."""
    out = []
    for i in range(batch.batch_size):
        n = int(batch.lengths[i])
        out.append((batch.times[i, :n].copy(), batch.marks[i, :n].copy()))
    return out
