import math

import numpy as np
import pytest
import torch

from evseq.config import RunConfig
from evseq.data import Dataset, EventSequence


@pytest.fixture(autouse=True)
def _single_thread_torch():
    old = torch.get_num_threads()
    torch.set_num_threads(1)
    yield
    torch.set_num_threads(old)


def tiny_config(**overrides) -> RunConfig:
    """1-layer, d_model=8, K-agnostic config used by the gradient checks."""
    values = {
        "embedding.d_time": 4,
        "embedding.d_type": 4,
        "encoder.d_model": 8,
        "encoder.num_layers": 1,
        "encoder.num_heads": 2,
        "encoder.ff_multiplier": 2,
    }
    values.update(overrides)
    return RunConfig(values)


def random_sequence(rng, n, num_types, t_start=1.0, t_end=10.0, label=None):
    times = np.sort(rng.uniform(t_start, t_end, size=n))
    while np.any(np.diff(times) <= 0):
        times = np.sort(rng.uniform(t_start, t_end, size=n))
    marks = rng.integers(0, num_types, size=n)
    return EventSequence(times, marks, num_types, label)


def random_dataset(rng, num_seqs, num_types, min_len=4, max_len=12) -> Dataset:
    seqs = [
        random_sequence(rng, int(rng.integers(min_len, max_len + 1)), num_types)
        for _ in range(num_seqs)
    ]
    return Dataset(seqs, num_types)


def phase_dataset(rng, num_seqs, num_types=4, max_per_phase=8, phase_len=25.0) -> Dataset:
    """Sequences where type k only occurs inside [k*phase_len, (k+1)*phase_len).

    Per-phase event counts vary per sequence, so swapping or splicing two
    sequences misplaces types relative to the global phase grid; the hard
    type-time coupling makes misalignment detection learnable fast.
    """
    seqs = []
    for _ in range(num_seqs):
        times, marks = [], []
        for k in range(num_types):
            count = int(rng.integers(2, max_per_phase + 1))
            lo = k * phase_len
            t = np.sort(rng.uniform(lo + 0.5, lo + phase_len - 0.5, size=count))
            times.extend(t.tolist())
            marks.extend([k] * count)
        times = np.array(times)
        for i in range(1, len(times)):  # break accidental ties
            if times[i] <= times[i - 1]:
                times[i] = np.nextafter(times[i - 1], np.inf)
        seqs.append(EventSequence(times, np.array(marks), num_types))
    return Dataset(seqs, num_types)


def named_coordinates(module: torch.nn.Module, rng, count: int):
    """Sample (name, flat_index) coordinates across all trainable parameters."""
    params = [(n, p) for n, p in module.named_parameters() if p.requires_grad]
    sizes = np.array([p.numel() for _, p in params])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(count, total), replace=False)
    bounds = np.cumsum(sizes)
    coords = []
    for flat in sorted(int(i) for i in picks):
        which = int(np.searchsorted(bounds, flat, side="right"))
        offset = flat - (0 if which == 0 else int(bounds[which - 1]))
        coords.append((params[which][0], offset))
    return coords


def finite_difference_check(
    module: torch.nn.Module,
    loss_fn,
    coords,
    h: float = 1e-3,
    rtol: float = 1e-4,
    atol: float = 1e-8,
):
    """Compare autograd gradients against central differences at the given
    (parameter name, flat index) coordinates. ``loss_fn`` must be a
    deterministic closure over the module's current parameters.

    Returns the worst relative error observed.
    """
    params = dict(module.named_parameters())
    module.zero_grad()
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for name, flat in coords:
        p = params[name]
        grad = 0.0 if p.grad is None else float(p.grad.view(-1)[flat].item())
        with torch.no_grad():
            orig = float(p.view(-1)[flat].item())
            p.view(-1)[flat] = orig + h
            up = float(loss_fn().item())
            p.view(-1)[flat] = orig - h
            down = float(loss_fn().item())
            p.view(-1)[flat] = orig
        fd = (up - down) / (2.0 * h)
        err = abs(grad - fd)
        if err <= atol:
            continue
        rel = err / max(abs(grad), abs(fd), atol)
        worst = max(worst, rel)
        assert rel < rtol, (
            f"gradient mismatch at {name}[{flat}]: autodiff {grad:.8g} vs "
            f"finite difference {fd:.8g} (rel {rel:.3g})"
        )
    return worst


def assert_sequences_equal(a: EventSequence, b: EventSequence):
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.marks, b.marks)
    assert a.num_types == b.num_types
