import numpy as np
import pytest

from gaze_fusion.data.sampler import MixedBatchSampler, audit_epoch, mixed_batch_sampler


def test_every_batch_has_equal_share_per_dataset():
    sampler = MixedBatchSampler([500, 300, 320, 400], 64, np.random.default_rng(0))
    batches = list(sampler.epoch())
    assert len(batches) == sampler.steps_per_epoch == 300 * 4 // 64
    counts = audit_epoch(batches, 4)
    assert np.all(counts == 16)
    assert all(len(b) == 64 for b in batches)


def test_no_sample_repeats_within_epoch():
    sampler = MixedBatchSampler([40, 24], 8, np.random.default_rng(1))
    batches = list(sampler.epoch())
    for slot, size in enumerate([40, 24]):
        seen = np.concatenate([b.for_slot(slot) for b in batches])
        assert len(seen) == len(set(seen.tolist()))
        assert seen.max() < size


def test_single_dataset_is_plain_shuffle():
    sampler = MixedBatchSampler([32], 8, np.random.default_rng(2))
    batches = list(sampler)
    seen = np.sort(np.concatenate([b.indices for b in batches]))
    np.testing.assert_array_equal(seen, np.arange(32))


def test_same_rng_same_sequence():
    a = list(mixed_batch_sampler([30, 30], 6, np.random.default_rng(7)))
    b = list(mixed_batch_sampler([30, 30], 6, np.random.default_rng(7)))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.indices, y.indices)
        np.testing.assert_array_equal(x.slots, y.slots)


def test_epochs_reshuffle():
    sampler = MixedBatchSampler([30, 30], 6, np.random.default_rng(7))
    first = np.concatenate([b.indices for b in sampler.epoch()])
    second = np.concatenate([b.indices for b in sampler.epoch()])
    assert not np.array_equal(first, second)


@pytest.mark.parametrize("sizes, batch", [([10, 10, 10], 64), ([10, 10], 0), ([], 4), ([1, 100], 4)])
def test_invalid_configurations(sizes, batch):
    with pytest.raises(ValueError):
        MixedBatchSampler(sizes, batch, np.random.default_rng(0))
