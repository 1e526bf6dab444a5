import hashlib

import numpy as np


class MemoryBuffer:
    """Bounded per-class exemplar store"""

    def __init__(self, capacity, store=None):
        self.capacity = int(capacity)
        self.store = store or {}  # class id -> list of Example, oldest first

    @property
    def class_count(self):
        return len(self.store)

    @property
    def per_class_quota(self):
        if not self.store:
            return self.capacity
        return self.capacity // len(self.store)

    @property
    def size(self):
        return sum(len(v) for v in self.store.values())

    def examples(self):
        """All stored exemplars, classes in ascending id order"""
        return [x for c in sorted(self.store) for x in self.store[c]]

    def copy(self):
        return MemoryBuffer(self.capacity, {c: list(v) for c, v in self.store.items()})

    def to_manifest(self):
        """class -> instance ids, for per-window replay"""
        return {
            'capacity': self.capacity,
            'per_class_quota': self.per_class_quota,
            'store': {str(c): [x.instance_id for x in self.store[c]] for c in sorted(self.store)}
        }

    @classmethod
    def from_manifest(cls, data, dataset):
        by_id = {x.instance_id: x for x in dataset}
        store = {int(c): [by_id[i] for i in ids] for c, ids in data.get('store', {}).items()}
        return cls(data['capacity'], store)


class UpdatePacket:
    """Newly labeled instances and frozen distillation targets for one window"""

    def __init__(self, newly_labeled=None, window_index=0, q_targets=None, known_classes=None):
        self.newly_labeled = newly_labeled or []
        self.window_index = window_index
        self.q_targets = q_targets or {}  # instance_id -> probability vector of f^{t-1}
        self.known_classes = set(known_classes or ())

    @property
    def new_class_ids(self):
        """Labels in the packet that the previous model did not know"""
        return sorted({x.label for x in self.newly_labeled} - self.known_classes)

    def targets_digest(self):
        """sha256 over the stored targets, ids in ascending order"""
        h = hashlib.sha256()
        for i in sorted(self.q_targets):
            h.update(str(i).encode())
            h.update(np.ascontiguousarray(self.q_targets[i], dtype='<f8').tobytes())
        return h.hexdigest()

    def to_dict(self):
        return {
            'window': self.window_index,
            'newly_labeled_ids': [x.instance_id for x in self.newly_labeled],
            'new_class_ids': self.new_class_ids,
            'targets_digest': self.targets_digest()
        }
