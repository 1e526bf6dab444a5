import numpy as np
import torch

# Label markers. ABSENT is a withheld label; SUPER_CLASS is the unified
# out-of-class pseudo-label C'; KNOWN_SUPER is the positive class of the
# binary variant. Both super labels sort after every real class id.
ABSENT = None
SUPER_CLASS = -1
KNOWN_SUPER = -2


class Example:
    """One image with an optional label"""

    __slots__ = ('pixels', 'label', 'instance_id')

    def __init__(self, pixels, label=ABSENT, instance_id=0):
        self.pixels = np.asarray(pixels, dtype=np.float32)
        self.label = None if label is None else int(label)
        self.instance_id = int(instance_id)

    @property
    def shape(self):
        return self.pixels.shape

    def with_label(self, label):
        """Copy sharing pixels, with a different label"""
        return Example(self.pixels, label, self.instance_id)

    def with_pixels(self, pixels):
        return Example(pixels, self.label, self.instance_id)

    @classmethod
    def from_dict(cls, data):
        """Create an Example instance from dictionary data"""
        if not data:
            return None

        return cls(
            pixels=np.asarray(data.get('pixels'), dtype=np.float32),
            label=data.get('label'),
            instance_id=data.get('instance_id', 0)
        )

    def to_dict(self):
        """Convert Example instance to dictionary"""
        return {
            'pixels': self.pixels.tolist(),
            'label': self.label,
            'instance_id': self.instance_id
        }

    def __repr__(self):
        return f"Example(id={self.instance_id}, label={self.label}, shape={self.pixels.shape})"


def stack_pixels(examples):
    """Batch tensor (N, C, H, W) for a list of examples"""
    if not examples:
        return torch.empty(0)
    return torch.from_numpy(np.stack([x.pixels for x in examples]))


def class_groups(examples):
    """Map class id -> examples, in input order, classes sorted"""
    groups = {}
    for x in examples:
        groups.setdefault(x.label, []).append(x)
    return {c: groups[c] for c in sorted(groups, key=_label_sort_key)}


def _label_sort_key(label):
    # super labels last, KNOWN_SUPER before SUPER_CLASS
    if label is None:
        return (2, 0)
    if label < 0:
        return (1, label)
    return (0, label)


def sort_labels(labels):
    return sorted(labels, key=_label_sort_key)
