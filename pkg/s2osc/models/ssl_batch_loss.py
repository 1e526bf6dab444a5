class SslBatchLoss:
    """Loss terms of one mini-batch; total = l_s + lambda_u * l_u"""

    def __init__(self, l_s, l_u, total, n_unlabeled_retained=0, n_unlabeled=0):
        self.l_s = l_s
        self.l_u = l_u
        self.total = total
        self.n_unlabeled_retained = n_unlabeled_retained
        self.n_unlabeled = n_unlabeled

    def to_dict(self):
        return {
            'l_s': float(self.l_s),
            'l_u': float(self.l_u),
            'total': float(self.total),
            'n_unlabeled_retained': self.n_unlabeled_retained,
            'n_unlabeled': self.n_unlabeled
        }
