import numpy as np


class ClusterAssignment:
    """k-means result over a set of instances"""

    def __init__(self, labels, centroids, iterations_run=0, instance_ids=None, wcss_history=None):
        self.labels = np.asarray(labels, dtype=np.int64)
        self.centroids = np.asarray(centroids, dtype=np.float64)
        self.iterations_run = iterations_run
        if instance_ids is None:
            instance_ids = range(len(self.labels))
        self.instance_ids = [int(i) for i in instance_ids]
        self.wcss_history = list(wcss_history or [])

    @property
    def n_clusters(self):
        return len(self.centroids)

    @property
    def assignments(self):
        """instance_id -> cluster index"""
        return {i: int(c) for i, c in zip(self.instance_ids, self.labels)}

    @classmethod
    def from_dict(cls, data):
        """Create a ClusterAssignment instance from dictionary data"""
        if not data:
            return None

        ids = [int(k) for k in data['assignments']]
        return cls(
            labels=[data['assignments'][k] for k in data['assignments']],
            centroids=data.get('centroids', []),
            iterations_run=data.get('iterations_run', 0),
            instance_ids=ids,
            wcss_history=data.get('wcss_history')
        )

    def to_dict(self):
        """Convert ClusterAssignment instance to dictionary"""
        return {
            'assignments': {str(k): v for k, v in self.assignments.items()},
            'centroids': self.centroids.tolist(),
            'iterations_run': self.iterations_run,
            'wcss_history': self.wcss_history
        }
