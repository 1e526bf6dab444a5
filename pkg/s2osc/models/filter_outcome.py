WEIGHTS_ELISION_THRESHOLD = 10000


class FilterOutcome:
    """Result of the self-taught filtering step"""

    def __init__(self, weights=None, d_out=None, d_in=None, lambda_used=1.0,
                 entropies=None, distances=None, purity=None):
        self.weights = weights or {}      # instance_id -> w_j
        self.d_out = d_out or []          # pseudo-labeled C'
        self.d_in = d_in or {}            # class id -> instance ids
        self.lambda_used = lambda_used
        self.entropies = entropies or {}  # instance_id -> u_j
        self.distances = distances or {}  # instance_id -> d_j
        self.purity = purity

    @property
    def labeled_count(self):
        return len(self.d_out) + sum(len(ids) for ids in self.d_in.values())

    def component_summary(self):
        """Mean entropy / distance over D_out, for diagnosing the scale of lambda"""
        if not self.d_out or not self.entropies:
            return {'mean_entropy': None, 'mean_distance': None}
        n = len(self.d_out)
        return {
            'mean_entropy': sum(self.entropies[i] for i in self.d_out) / n,
            'mean_distance': sum(self.distances[i] for i in self.d_out) / n,
        }

    @classmethod
    def from_dict(cls, data):
        """Create a FilterOutcome instance from dictionary data"""
        if not data:
            return None

        return cls(
            weights={int(k): v for k, v in (data.get('weights') or {}).items()},
            d_out=list(data.get('d_out', [])),
            d_in={int(k): list(v) for k, v in data.get('d_in', {}).items()},
            lambda_used=data.get('lambda_used', 1.0),
            purity=data.get('purity')
        )

    def to_dict(self, elide_above=WEIGHTS_ELISION_THRESHOLD):
        """Convert FilterOutcome instance to dictionary; large weight maps are elided"""
        weights = None
        if len(self.weights) <= elide_above:
            weights = {str(k): v for k, v in sorted(self.weights.items())}
        return {
            'weights': weights,
            'n_scored': len(self.weights),
            'd_out': list(self.d_out),
            'd_in': {str(k): list(v) for k, v in sorted(self.d_in.items())},
            'lambda_used': self.lambda_used,
            'purity': self.purity,
            'components': self.component_summary()
        }
