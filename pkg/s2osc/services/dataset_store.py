"""IDX loading, open set splits, incremental streams and weak augmentation."""
import gzip
import logging
import math
import struct

import numpy as np
import torch

from s2osc.errors import ConsistencyError, FormatError, PreconditionError, ProtocolError
from s2osc.models.example import Example, class_groups
from s2osc.models.split import OscSplit, StreamSchedule, StreamWindow

logger = logging.getLogger(__name__)

IDX_UBYTE = 0x08
SHIFT_FRACTION = 0.125
FLIP_PROBABILITY = 0.5

_IDX_DTYPES = {
    0x08: np.dtype('>u1'),
    0x09: np.dtype('>i1'),
    0x0B: np.dtype('>i2'),
    0x0C: np.dtype('>i4'),
    0x0D: np.dtype('>f4'),
    0x0E: np.dtype('>f8'),
}


def _open(path):
    if str(path).endswith('.gz'):
        return gzip.open(path, 'rb')
    return open(path, 'rb')


def _read_idx(path):
    """Decode one IDX file into an ndarray"""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for an IDX header")
    zero, type_code, ndim = struct.unpack('>HBB', raw[:4])
    if zero != 0 or type_code not in _IDX_DTYPES or ndim == 0:
        raise FormatError(f"{path}: malformed magic number 0x{raw[:4].hex()}")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise FormatError(f"{path}: truncated dimension header")
    dims = struct.unpack('>' + 'I' * ndim, raw[4:header_len])
    dtype = _IDX_DTYPES[type_code]
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = raw[header_len:]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, header declares {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims)


def load_idx_dataset(images_path, labels_path):
    """One Example per IDX record, pixels min-max scaled to [0, 1]"""
    images = _read_idx(images_path)
    labels = _read_idx(labels_path)
    if labels.ndim != 1:
        raise FormatError(f"{labels_path}: labels must be one-dimensional, got {labels.ndim} dims")
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images.shape[0]} images but {labels.shape[0]} labels")

    images = images.astype(np.float32)
    if images.ndim == 3:
        images = images[:, None, :, :]  # grayscale -> single channel
    elif images.ndim == 4 and images.shape[-1] in (1, 3) and images.shape[1] not in (1, 3):
        images = images.transpose(0, 3, 1, 2)  # HWC -> CHW
    elif images.ndim != 4:
        raise FormatError(f"{images_path}: expected 3 or 4 dims, got {images.ndim}")

    if images.size:
        lo, hi = float(images.min()), float(images.max())
        images = (images - lo) / (hi - lo) if hi > lo else np.zeros_like(images)

    dataset = [Example(images[i], int(labels[i]), i) for i in range(images.shape[0])]
    logger.info("loaded %d examples of shape %s from %s", len(dataset),
                images.shape[1:] if images.size else '()', images_path)
    return dataset


def write_idx_images(path, images):
    """Write an unsigned-byte IDX image file (N x H x W or N x H x W x C)"""
    images = np.asarray(images)
    if images.dtype != np.uint8:
        images = np.clip(np.rint(np.asarray(images, dtype=np.float64) * 255), 0, 255).astype(np.uint8)
    _write_idx(path, images)


def write_idx_labels(path, labels):
    _write_idx(path, np.asarray(labels, dtype=np.uint8))


def _write_idx(path, array):
    header = struct.pack('>HBB', 0, IDX_UBYTE, array.ndim)
    header += struct.pack('>' + 'I' * array.ndim, *array.shape)
    with (gzip.open(path, 'wb') if str(path).endswith('.gz') else open(path, 'wb')) as fh:
        fh.write(header)
        fh.write(array.astype('>u1').tobytes())


def subsample(dataset, size, seed):
    """Stratified random subset of about `size` instances"""
    if size >= len(dataset):
        return list(dataset)
    rng = np.random.default_rng(seed)
    groups = class_groups(dataset)
    picked = []
    for label, members in groups.items():
        take = max(1, int(round(size * len(members) / len(dataset))))
        idx = rng.permutation(len(members))[:take]
        picked.extend(members[i] for i in sorted(idx))
    return sorted(picked, key=lambda x: x.instance_id)


def make_osc_split(dataset, known_fraction, n_unknown, known_holdout, seed):
    """Known/unknown class split with a stratified known-class holdout"""
    if n_unknown < 1:
        raise ProtocolError("open set classification needs at least one unknown class")
    if not 0 < known_holdout < 1:
        raise PreconditionError(f"known_holdout must lie in (0, 1), got {known_holdout}")

    groups = class_groups(dataset)
    classes = [c for c in groups if c is not None]
    n_known = max(1, int(round(known_fraction * len(classes))))
    if n_known + n_unknown > len(classes):
        raise PreconditionError(
            f"{len(classes)} classes cannot provide {n_known} known + {n_unknown} unknown")

    rng = np.random.default_rng(seed)
    order = [classes[i] for i in rng.permutation(len(classes))]
    known = sorted(order[:n_known])
    unknown = sorted(order[n_known:n_known + n_unknown])
    unused = sorted(order[n_known + n_unknown:])

    train, test = [], []
    for c in known:
        members = groups[c]
        perm = rng.permutation(len(members))
        n_hold = int(round(known_holdout * len(members)))
        if len(members) > 1:
            n_hold = min(max(n_hold, 1), len(members) - 1)
        test.extend(members[i] for i in perm[:n_hold])
        train.extend(members[i] for i in perm[n_hold:])
    for c in unknown:
        test.extend(groups[c])

    train.sort(key=lambda x: x.instance_id)
    test.sort(key=lambda x: x.instance_id)
    split = OscSplit(
        train=train,
        test_pool=[x.with_label(None) for x in test],
        known_classes=known,
        unknown_classes=unknown,
        withheld_labels={x.instance_id: x.label for x in test},
        unused_classes=unused,
        seed=seed,
    )
    logger.info("split: known=%s unknown=%s train=%d test=%d", known, unknown, len(train), len(test))
    return split


def build_stream(split, class_arrival, seed):
    """Incremental stream over the test pool; window 0 holds the initial train set"""
    if not split.unknown_classes:
        raise PreconditionError("a stream needs at least one unknown class")
    if class_arrival not in ('single', 'multi'):
        raise PreconditionError(f"unknown class_arrival mode {class_arrival!r}")

    rng = np.random.default_rng(seed)
    unknown = [sorted(split.unknown_classes)[i] for i in rng.permutation(len(split.unknown_classes))]
    if class_arrival == 'single':
        parts = [[c] for c in unknown]
    else:
        n_parts = int(rng.integers(1, len(unknown) + 1))
        cuts = sorted(rng.choice(np.arange(1, len(unknown)), size=n_parts - 1, replace=False)) \
            if n_parts > 1 else []
        bounds = [0, *[int(c) for c in cuts], len(unknown)]
        parts = [unknown[a:b] for a, b in zip(bounds[:-1], bounds[1:])]

    novel_by_class = {}
    known_pool = []
    for x in split.test_pool:
        label = split.withheld_labels[x.instance_id]
        if label in split.unknown_classes:
            novel_by_class.setdefault(label, []).append(x)
        else:
            known_pool.append(x)
    known_pool = [known_pool[i] for i in rng.permutation(len(known_pool))]

    windows = [StreamWindow(0, list(split.train), sorted(split.known_classes))]
    interval_size = 0
    for t, part in enumerate(parts, start=1):
        novel = [x for c in sorted(part) for x in novel_by_class.get(c, [])]
        interval_size = max([interval_size, *[len(novel_by_class.get(c, [])) for c in part]])
        remaining_windows = len(parts) - t + 1
        take = min(len(novel), math.ceil(len(known_pool) / remaining_windows))
        known_part, known_pool = known_pool[:take], known_pool[take:]
        if t == len(parts):
            known_part, known_pool = known_part + known_pool, []
        instances = novel + known_part
        instances = [instances[i] for i in rng.permutation(len(instances))]
        windows.append(StreamWindow(t, instances, part))

    logger.info("stream (%s): %d windows, novel classes per window %s",
                class_arrival, len(parts), [w.novel_class_ids for w in windows[1:]])
    return StreamSchedule(windows, interval_size=interval_size, class_arrival=class_arrival, seed=seed)


def _shift_draws(rng, height, width):
    max_dy = int(math.floor(height * SHIFT_FRACTION))
    max_dx = int(math.floor(width * SHIFT_FRACTION))
    flip = rng.random() >= FLIP_PROBABILITY
    dy = int(rng.integers(-max_dy, max_dy + 1))
    dx = int(rng.integers(-max_dx, max_dx + 1))
    return flip, dy, dx


def shift_image(pixels, dy, dx):
    """Translate the last two axes by (dy, dx), zero-filling vacated pixels"""
    out = np.zeros_like(pixels)
    h, w = pixels.shape[-2:]
    if abs(dy) >= h or abs(dx) >= w:
        return out
    src_y = slice(max(0, -dy), h - max(0, dy))
    dst_y = slice(max(0, dy), h - max(0, -dy))
    src_x = slice(max(0, -dx), w - max(0, dx))
    dst_x = slice(max(0, dx), w - max(0, -dx))
    out[..., dst_y, dst_x] = pixels[..., src_y, src_x]
    return out


def weak_augment(x, seed):
    """Horizontal flip with probability 0.5 plus a shift of up to 12.5% per axis"""
    rng = np.random.default_rng(seed)
    h, w = x.pixels.shape[-2:]
    flip, dy, dx = _shift_draws(rng, h, w)
    pixels = x.pixels[..., ::-1] if flip else x.pixels
    return x.with_pixels(shift_image(np.ascontiguousarray(pixels), dy, dx))


def weak_augment_batch(batch, seed):
    """weak_augment over a (N, C, H, W) tensor, one draw per row"""
    if batch.numel() == 0:
        return batch
    rng = np.random.default_rng(seed)
    h, w = batch.shape[-2:]
    out = torch.zeros_like(batch)
    max_dy = int(math.floor(h * SHIFT_FRACTION))
    max_dx = int(math.floor(w * SHIFT_FRACTION))
    for i in range(batch.shape[0]):
        flip, dy, dx = _shift_draws(rng, h, w)
        row = torch.flip(batch[i], dims=(-1,)) if flip else batch[i]
        if max_dy == 0 and max_dx == 0:
            out[i] = row
            continue
        ys, yd = slice(max(0, -dy), h - max(0, dy)), slice(max(0, dy), h - max(0, -dy))
        xs, xd = slice(max(0, -dx), w - max(0, dx)), slice(max(0, dx), w - max(0, -dx))
        out[i][..., yd, xd] = row[..., ys, xs]
    return out
