import json
import math

import numpy as np
import pytest
from scipy import stats

from evseq.data import (
    Dataset,
    EventSequence,
    HawkesParams,
    intervals,
    load_jsonl,
    pad_batch,
    rescale_dataset,
    save_jsonl,
    shift_to_min_time,
    simulate_hawkes,
    simulate_hawkes_dataset,
    split_dataset,
    subsample_dataset,
    unpad_batch,
)


class TestEventSequence:
    def test_invariants_enforced(self):
        with pytest.raises(ValueError, match="non-increasing"):
            EventSequence([2.0, 1.0], [0, 1], 2)
        with pytest.raises(ValueError, match="mark out of range"):
            EventSequence([1.0, 2.0], [0, 2], 2)
        with pytest.raises(ValueError, match="negative"):
            EventSequence([-1.0, 2.0], [0, 1], 2)

    def test_empty_allowed(self):
        seq = EventSequence([], [], 3)
        assert len(seq) == 0 and seq.span == 0.0

    def test_shift(self):
        seq = EventSequence([0.2, 1.5], [0, 1], 2)
        shifted = shift_to_min_time(seq, 1.0)
        assert shifted.times[0] == pytest.approx(1.0)
        np.testing.assert_allclose(np.diff(shifted.times), np.diff(seq.times))
        already = EventSequence([3.0, 4.0], [0, 1], 2)
        assert shift_to_min_time(already, 1.0) is already


class TestIntervals:
    def test_single_event(self):
        assert len(intervals(EventSequence([1.0], [0], 1))) == 0

    def test_direct_subtraction(self):
        seq = EventSequence([1.0, 3.0, 6.0], [0, 0, 0], 1)
        np.testing.assert_allclose(intervals(seq), [2.0, 3.0])

    def test_telescoping_sum(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            times = np.sort(rng.uniform(0, 100, size=rng.integers(2, 50)))
            times = np.unique(times)
            seq = EventSequence(times, np.zeros(len(times), dtype=int), 1)
            assert intervals(seq).sum() == pytest.approx(times[-1] - times[0])

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            intervals(EventSequence([], [], 1))


class TestJsonl:
    def test_header_only(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text('{"num_types": 3}\n')
        ds = load_jsonl(path)
        assert len(ds) == 0 and ds.num_types == 3

    def test_hand_parsed_line(self, tmp_path):
        path = tmp_path / "two.jsonl"
        path.write_text('{"num_types": 2}\n{"seq": [[1.0, 0], [2.5, 1]]}\n')
        ds = load_jsonl(path)
        assert len(ds) == 1
        np.testing.assert_allclose(ds[0].times, [1.0, 2.5])
        np.testing.assert_array_equal(ds[0].marks, [0, 1])

    def test_non_increasing_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"num_types": 2}\n{"seq": [[2.0, 0], [1.0, 1]]}\n')
        with pytest.raises(ValueError, match="non-increasing times at line 2"):
            load_jsonl(path)

    def test_mark_out_of_range_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(
            '{"num_types": 2}\n{"seq": [[1.0, 0]]}\n{"seq": [[1.0, 5]]}\n'
        )
        with pytest.raises(ValueError, match="line 3"):
            load_jsonl(path)

    def test_parse_failure_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"num_types": 2}\nnot json\n')
        with pytest.raises(ValueError, match="parse failure at line 2"):
            load_jsonl(path)

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        seqs = []
        for i in range(10):
            times = np.sort(rng.uniform(0, 50, size=rng.integers(1, 20)))
            times = np.unique(times)
            marks = rng.integers(0, 4, size=len(times))
            seqs.append(EventSequence(times, marks, 4, label=int(i % 2)))
        ds = Dataset(seqs, 4)
        path = tmp_path / "rt.jsonl"
        save_jsonl(ds, path)
        back = load_jsonl(path)
        assert len(back) == len(ds)
        for a, b in zip(ds, back):
            np.testing.assert_array_equal(a.times, b.times)
            np.testing.assert_array_equal(a.marks, b.marks)
            assert a.label == b.label


class TestHawkes:
    def test_zero_rate_gives_empty(self):
        params = HawkesParams([0.0, 0.0], 0.0, 1.0)
        assert len(simulate_hawkes(params, 100.0, 0)) == 0

    def test_poisson_mean_count(self):
        # homogeneous Poisson special case: E[N] = mu * horizon = 100
        params = HawkesParams([2.0], 0.0, 1.0)
        counts = [len(simulate_hawkes(params, 50.0, seed)) for seed in range(200)]
        assert abs(np.mean(counts) - 100.0) < 10.0

    def test_non_stationary_rejected(self):
        with pytest.raises(ValueError, match="non-stationary"):
            HawkesParams([0.1], [[1.2]], [[1.0]])
        # spectral radius exactly at threshold is rejected too
        with pytest.raises(ValueError):
            HawkesParams([0.1], [[1.0]], [[1.0]])

    def test_deterministic_given_seed(self):
        params = HawkesParams([0.2, 0.3], [[0.3, 0.1], [0.0, 0.2]], 1.5)
        a = simulate_hawkes(params, 40.0, 123)
        b = simulate_hawkes(params, 40.0, 123)
        np.testing.assert_array_equal(a.times, b.times)
        np.testing.assert_array_equal(a.marks, b.marks)

    def test_monotonicity_many_seeds(self):
        # strict increase must hold for every realization
        params = HawkesParams([0.5, 0.5], [[0.4, 0.2], [0.2, 0.4]], 2.0)
        for seed in range(10_000):
            seq = simulate_hawkes(params, 4.0, seed)
            assert np.all(np.diff(seq.times) > 0)
            assert np.all(seq.times > 0) and (len(seq) == 0 or seq.times[-1] <= 4.0)
            assert np.all(seq.marks < 2)

    def test_poisson_interarrivals_ks(self):
        # alpha = 0: gaps are iid Exponential(mu)
        mu = 1.7
        params = HawkesParams([mu], 0.0, 1.0)
        seq = simulate_hawkes(params, 10_500.0 / mu, seed=42)
        gaps = np.diff(seq.times)[:10_000]
        assert len(gaps) == 10_000
        result = stats.kstest(gaps, "expon", args=(0, 1.0 / mu))
        assert result.pvalue > 0.01

    def test_dataset_seeding(self):
        params = HawkesParams([1.0], [[0.5]], [[2.0]])
        ds = simulate_hawkes_dataset(params, 10.0, 5, seed=9)
        for i, seq in enumerate(ds):
            expected = simulate_hawkes(params, 10.0, 9 + i)
            np.testing.assert_array_equal(seq.times, expected.times)


class TestSplit:
    def _dataset(self, n=100):
        rng = np.random.default_rng(0)
        seqs = [
            EventSequence(np.sort(rng.uniform(0, 10, 3)), rng.integers(0, 2, 3), 2)
            for _ in range(n)
        ]
        return Dataset(seqs, 2)

    def test_degenerate_split(self):
        ds = self._dataset()
        train, dev, test = split_dataset(ds, (1.0, 0.0, 0.0), 0)
        assert (len(train), len(dev), len(test)) == (100, 0, 0)

    def test_exact_sizes(self):
        train, dev, test = split_dataset(self._dataset(), (0.8, 0.1, 0.1), 0)
        assert (len(train), len(dev), len(test)) == (80, 10, 10)

    def test_deterministic(self):
        ds = self._dataset()
        a = split_dataset(ds, (0.6, 0.2, 0.2), 7)
        b = split_dataset(ds, (0.6, 0.2, 0.2), 7)
        for part_a, part_b in zip(a, b):
            assert [id(s) for s in part_a] == [id(s) for s in part_b]

    def test_disjoint_partition(self):
        ds = self._dataset(57)
        parts = split_dataset(ds, (0.5, 0.25, 0.25), 3)
        ids = [id(s) for part in parts for s in part]
        assert len(ids) == 57 and len(set(ids)) == 57

    def test_invalid_fractions(self):
        with pytest.raises(ValueError):
            split_dataset(self._dataset(), (0.5, 0.2, 0.2), 0)
        with pytest.raises(ValueError):
            split_dataset(self._dataset(), (1.2, -0.1, -0.1), 0)

    def test_subsample_floor(self):
        ds = self._dataset(101)
        sub = subsample_dataset(ds, 0.25, 0)
        assert len(sub) == 25
        again = subsample_dataset(ds, 0.25, 0)
        assert [id(s) for s in sub] == [id(s) for s in again]


class TestPadding:
    def test_equal_lengths_no_pads(self):
        seqs = [
            EventSequence([1.0, 2.0], [0, 1], 2),
            EventSequence([3.0, 4.0], [1, 0], 2),
        ]
        batch = pad_batch(seqs)
        assert not batch.pad_mask.any()

    def test_pad_count(self):
        seqs = [
            EventSequence([1.0, 2.0], [0, 0], 2),
            EventSequence([1.0, 2.0, 3.0, 4.0], [0, 1, 0, 1], 2),
        ]
        batch = pad_batch(seqs)
        assert batch.pad_mask[0].sum() == 2 and batch.pad_mask[1].sum() == 0
        np.testing.assert_array_equal(batch.lengths, [2, 4])

    def test_round_trip(self):
        rng = np.random.default_rng(5)
        seqs = []
        for _ in range(7):
            n = int(rng.integers(1, 9))
            times = np.unique(np.sort(rng.uniform(0, 10, n)))
            seqs.append(EventSequence(times, rng.integers(0, 3, len(times)), 3))
        restored = unpad_batch(pad_batch(seqs))
        for seq, (times, marks) in zip(seqs, restored):
            np.testing.assert_array_equal(seq.times, times)
            np.testing.assert_array_equal(seq.marks, marks)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            pad_batch([])


class TestRescale:
    def test_max_time_hits_target(self):
        ds = Dataset(
            [EventSequence([1.0, 4.0], [0, 0], 1), EventSequence([2.0, 8.0], [0, 0], 1)], 1
        )
        scaled = rescale_dataset(ds, 2.0)
        assert max(s.times[-1] for s in scaled) == pytest.approx(2.0)
        assert scaled[0].times[0] == pytest.approx(0.25)
