import gzip
import struct

import numpy as np
import pytest
import torch

from conftest import blob_examples, make_blobs
from s2osc.errors import ConsistencyError, FormatError, PreconditionError, ProtocolError
from s2osc.models.split import OscSplit, StreamSchedule
from s2osc.services.dataset_store import (_shift_draws, build_stream, load_idx_dataset, make_osc_split,
                                          shift_image, subsample, weak_augment, weak_augment_batch,
                                          write_idx_images, write_idx_labels)


def test_load_idx_dataset(idx_files):
    """Every record becomes a single-channel Example scaled to [0, 1]"""
    dataset = load_idx_dataset(*idx_files)
    assert len(dataset) == 180
    assert dataset[0].shape == (1, 8, 8)
    pixels = np.stack([x.pixels for x in dataset])
    assert pixels.min() == pytest.approx(0.0)
    assert pixels.max() == pytest.approx(1.0)
    assert [x.instance_id for x in dataset] == list(range(180))
    assert dataset[-1].label == 5


def test_load_gzip_idx(tmp_path):
    images, labels = make_blobs(n_classes=2, per_class=3)
    write_idx_images(tmp_path / 'img.gz', images)
    write_idx_labels(tmp_path / 'lbl.gz', labels)
    dataset = load_idx_dataset(str(tmp_path / 'img.gz'), str(tmp_path / 'lbl.gz'))
    assert [x.label for x in dataset] == [0, 0, 0, 1, 1, 1]


def test_malformed_magic(tmp_path, idx_files):
    bad = tmp_path / 'bad'
    bad.write_bytes(b'\x01\x02\x08\x03' + b'\x00' * 16)
    with pytest.raises(FormatError):
        load_idx_dataset(str(bad), idx_files[1])


def test_truncated_payload(tmp_path, idx_files):
    bad = tmp_path / 'short'
    bad.write_bytes(struct.pack('>HBB', 0, 8, 3) + struct.pack('>III', 2, 8, 8) + b'\x00' * 10)
    with pytest.raises(FormatError):
        load_idx_dataset(str(bad), idx_files[1])


def test_label_count_mismatch(tmp_path, idx_files):
    labels = tmp_path / 'few-labels'
    write_idx_labels(labels, np.zeros(7, dtype=np.uint8))
    with pytest.raises(ConsistencyError):
        load_idx_dataset(idx_files[0], str(labels))


def test_split_partitions_known_and_unknown(blobs):
    split = make_osc_split(blobs, known_fraction=0.5, n_unknown=1, known_holdout=0.33, seed=3)
    assert len(split.known_classes) == 3
    assert len(split.unknown_classes) == 1
    assert len(split.unused_classes) == 2
    assert not split.known_classes & split.unknown_classes

    train_ids = {x.instance_id for x in split.train}
    test_ids = {x.instance_id for x in split.test_pool}
    in_scope = {x.instance_id for x in blobs if x.label in split.known_classes | split.unknown_classes}
    assert not train_ids & test_ids
    assert train_ids | test_ids == in_scope

    assert {x.label for x in split.train} == split.known_classes
    assert all(x.label is None for x in split.test_pool)
    for c in split.known_classes:
        held = sum(1 for i, label in split.withheld_labels.items() if label == c)
        assert held == round(0.33 * 30)
    assert [x.instance_id for x in split.train] == sorted(train_ids)


def test_split_is_seeded(blobs):
    a = make_osc_split(blobs, 0.5, 1, 0.33, seed=11)
    b = make_osc_split(blobs, 0.5, 1, 0.33, seed=11)
    assert a.to_dict() == b.to_dict()


def test_split_rejects_no_unknown(blobs):
    with pytest.raises(ProtocolError):
        make_osc_split(blobs, 0.5, 0, 0.33, seed=0)


def test_split_rejects_too_many_classes(blobs):
    with pytest.raises(PreconditionError):
        make_osc_split(blobs, 0.5, 4, 0.33, seed=0)


def test_split_replays_from_manifest(blobs):
    split = make_osc_split(blobs, 0.5, 2, 0.33, seed=5)
    replayed = OscSplit.from_dict(split.to_dict(), blobs)
    assert replayed.to_dict() == split.to_dict()
    assert all(x.label is None for x in replayed.test_pool)


def test_subsample_is_stratified(blobs):
    subset = subsample(blobs, 60, seed=0)
    counts = {c: sum(1 for x in subset if x.label == c) for c in range(6)}
    assert set(counts.values()) == {10}
    assert subsample(blobs, 1000, seed=0) == blobs


@pytest.mark.parametrize('arrival', ['single', 'multi'])
def test_stream_covers_test_pool_once(arrival):
    dataset = blob_examples(n_classes=8, per_class=12)
    split = make_osc_split(dataset, 0.5, 3, 0.33, seed=2)
    schedule = build_stream(split, arrival, seed=2)

    assert schedule.windows[0].index == 0
    assert schedule.windows[0].instance_ids == [x.instance_id for x in split.train]
    streamed = [i for w in schedule.stream_windows for i in w.instance_ids]
    assert sorted(streamed) == sorted(x.instance_id for x in split.test_pool)

    arrived = [c for w in schedule.stream_windows for c in w.novel_class_ids]
    assert sorted(arrived) == sorted(split.unknown_classes)
    if arrival == 'single':
        assert len(schedule.stream_windows) == 3
        assert all(len(w.novel_class_ids) == 1 for w in schedule.stream_windows)
    for w in schedule.stream_windows:
        labels = {split.truth(i) for i in w.instance_ids}
        assert labels & set(w.novel_class_ids) == set(w.novel_class_ids)
        assert labels - set(w.novel_class_ids) <= split.known_classes


def test_stream_replays_from_manifest():
    dataset = blob_examples(n_classes=6, per_class=10)
    split = make_osc_split(dataset, 0.5, 2, 0.33, seed=1)
    schedule = build_stream(split, 'single', seed=1)
    replayed = StreamSchedule.from_dict(schedule.to_dict(), dataset)
    assert replayed.to_dict() == schedule.to_dict()


def test_stream_needs_unknown_classes(blobs):
    split = make_osc_split(blobs, 0.5, 1, 0.33, seed=0)
    split.unknown_classes = set()
    with pytest.raises(PreconditionError):
        build_stream(split, 'single', seed=0)


def test_shift_image_zero_fills():
    pixels = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
    shifted = shift_image(pixels, 1, -1)
    assert shifted[0, 0].tolist() == [0, 0, 0, 0]
    assert shifted[0, 1, :3].tolist() == pixels[0, 0, 1:].tolist()
    assert shifted[0, 1, 3] == 0


def test_weak_augment_is_seeded(blobs):
    a = weak_augment(blobs[0], seed=4)
    b = weak_augment(blobs[0], seed=4)
    assert np.array_equal(a.pixels, b.pixels)
    assert a.shape == blobs[0].shape
    assert a.label == blobs[0].label
    # a shift of at most one pixel on 8x8 keeps most of the mass
    assert a.pixels.sum() <= blobs[0].pixels.sum() + 1e-5


def test_weak_augment_identity_draw(blobs):
    x = blobs[7]
    identity = [s for s in range(200) if _shift_draws(np.random.default_rng(s), 8, 8) == (False, 0, 0)]
    assert identity
    for seed in identity:
        assert np.array_equal(weak_augment(x, seed).pixels, x.pixels)


def test_weak_augment_shifts_one_pixel_on_8_wide_images(blobs):
    x = blobs[3]
    shifts = set()
    for seed in range(200):
        flip, dy, dx = _shift_draws(np.random.default_rng(seed), 8, 8)
        shifts.update((dy, dx))
        source = np.ascontiguousarray(x.pixels[..., ::-1]) if flip else x.pixels
        out = weak_augment(x, seed).pixels
        assert np.array_equal(out, shift_image(source, dy, dx))
        assert out.min() >= 0 and out.max() <= 1
    assert shifts == {-1, 0, 1}


def test_weak_augment_batch_matches_per_row_shapes():
    batch = torch.rand(5, 1, 8, 8)
    out = weak_augment_batch(batch, seed=9)
    assert out.shape == batch.shape
    assert torch.equal(out, weak_augment_batch(batch, seed=9))
    assert weak_augment_batch(torch.empty(0, 1, 8, 8), seed=0).shape == (0, 1, 8, 8)


def test_gzip_writer_round_trip(tmp_path):
    write_idx_labels(tmp_path / 'l.gz', np.array([3, 1, 2], dtype=np.uint8))
    with gzip.open(tmp_path / 'l.gz', 'rb') as fh:
        raw = fh.read()
    assert raw[:4] == b'\x00\x00\x08\x01'
    assert raw[-3:] == b'\x03\x01\x02'
