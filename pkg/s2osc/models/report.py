import json

import numpy as np

from s2osc.errors import ConsistencyError

WINDOW_COLUMNS = ('window', 'accuracy', 'precision', 'recall', 'weighted_f1', 'f_out')
AVERAGED_METRICS = ('accuracy', 'precision', 'recall', 'weighted_f1', 'f_out')


class ConfusionMatrix:
    """Rows are true classes, columns predicted classes, both in label_order"""

    def __init__(self, counts, label_order):
        self.counts = np.asarray(counts, dtype=np.int64)
        self.label_order = list(label_order)
        n = len(self.label_order)
        if self.counts.shape != (n, n):
            raise ConsistencyError(f"counts shape {self.counts.shape} does not match {n} labels")
        if (self.counts < 0).any():
            raise ConsistencyError("negative count in confusion matrix")

    @property
    def total(self):
        return int(self.counts.sum())

    def to_dict(self):
        return {'counts': self.counts.tolist(), 'label_order': self.label_order}


class WindowReport:
    """Metrics of one window (or of a single OSC run, window 0)"""

    def __init__(self, window_index=0, accuracy=0.0, precision=0.0, recall=0.0,
                 weighted_f1=0.0, f_out=None, acc_per_classset=None, extra=None):
        self.window_index = window_index
        self.accuracy = accuracy
        self.precision = precision
        self.recall = recall
        self.weighted_f1 = weighted_f1
        self.f_out = f_out  # None marks a vacuous window
        self.acc_per_classset = acc_per_classset or {}
        self.extra = extra or {}

    @property
    def average_accuracy(self):
        """A_k: mean of acc_{k,j} over the class sets seen so far"""
        if not self.acc_per_classset:
            return None
        return float(np.mean([self.acc_per_classset[j] for j in sorted(self.acc_per_classset)]))

    def row(self):
        return [self.window_index, self.accuracy, self.precision, self.recall,
                self.weighted_f1, self.f_out]

    @classmethod
    def from_dict(cls, data):
        """Create a WindowReport instance from dictionary data"""
        if not data:
            return None

        return cls(
            window_index=data.get('window', 0),
            accuracy=data.get('accuracy'),
            precision=data.get('precision'),
            recall=data.get('recall'),
            weighted_f1=data.get('weighted_f1'),
            f_out=data.get('f_out'),
            acc_per_classset={int(k): v for k, v in (data.get('acc_per_classset') or {}).items()},
            extra=data.get('extra', {})
        )

    def to_dict(self):
        """Convert WindowReport instance to dictionary"""
        return {
            'window': self.window_index,
            'accuracy': self.accuracy,
            'precision': self.precision,
            'recall': self.recall,
            'weighted_f1': self.weighted_f1,
            'f_out': self.f_out,
            'acc_per_classset': {str(k): v for k, v in sorted(self.acc_per_classset.items())},
            'extra': self.extra
        }


class RunReport:
    """Per-window rows plus their unweighted averages and run-level fields"""

    def __init__(self, windows=None, averages=None, extra=None):
        self.windows = windows or []
        self.averages = averages or {}
        self.extra = extra or {}

    @classmethod
    def from_dict(cls, data):
        """Create a RunReport instance from dictionary data"""
        if not data:
            return None

        return cls(
            windows=[WindowReport.from_dict(w) for w in data.get('windows', [])],
            averages=data.get('averages', {}),
            extra=data.get('extra', {})
        )

    def to_dict(self):
        """Convert RunReport instance to dictionary"""
        return {
            'windows': [w.to_dict() for w in self.windows],
            'averages': dict(self.averages),
            'extra': self.extra
        }

    def to_json(self):
        """Canonical JSON: sorted keys, fixed separators, trailing newline"""
        return json.dumps(_plain(self.to_dict()), sort_keys=True, indent=2) + '\n'


def _plain(value):
    # numpy scalars and arrays -> builtin types
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, set):
        return sorted(_plain(v) for v in value)
    return value
