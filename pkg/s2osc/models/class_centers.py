import numpy as np


class ClassCenters:
    """Per-class mean embedding of a trained model"""

    def __init__(self, centers=None, source_model=None):
        self.centers = {int(c): np.asarray(v, dtype=np.float64) for c, v in (centers or {}).items()}
        self.source_model = source_model

    @property
    def class_ids(self):
        return sorted(self.centers)

    @property
    def dim(self):
        if not self.centers:
            return 0
        return len(next(iter(self.centers.values())))

    def matrix(self):
        """(n_classes, dim) array in ascending class order"""
        if not self.centers:
            return np.empty((0, 0))
        return np.stack([self.centers[c] for c in self.class_ids])

    @classmethod
    def from_dict(cls, data):
        """Create a ClassCenters instance from dictionary data"""
        if not data:
            return None

        return cls(
            centers={int(k): v for k, v in data.get('centers', {}).items()},
            source_model=data.get('source_model')
        )

    def to_dict(self):
        """Convert ClassCenters instance to dictionary"""
        return {
            'centers': {str(c): self.centers[c].tolist() for c in self.class_ids},
            'source_model': self.source_model
        }
