from s2osc.errors import ConsistencyError


class OscSplit:
    """Open set split: labeled known-class train set and a mixed test pool"""

    def __init__(self, train=None, test_pool=None, known_classes=None,
                 unknown_classes=None, withheld_labels=None, unused_classes=None, seed=None):
        self.train = train or []
        self.test_pool = test_pool or []  # labels withheld (ABSENT)
        self.known_classes = set(known_classes or ())
        self.unknown_classes = set(unknown_classes or ())
        self.withheld_labels = withheld_labels or {}  # instance_id -> class id
        self.unused_classes = set(unused_classes or ())
        self.seed = seed

    def truth(self, instance_id):
        """Withheld label of a test-pool instance"""
        return self.withheld_labels[instance_id]

    def pool_by_id(self):
        return {x.instance_id: x for x in self.test_pool}

    @classmethod
    def from_dict(cls, data, dataset):
        """Rebuild a split from its id manifest against the source dataset"""
        if not data:
            return None

        by_id = {x.instance_id: x for x in dataset}
        try:
            train = [by_id[i] for i in data.get('train_ids', [])]
            test_pool = [by_id[i].with_label(None) for i in data.get('test_ids', [])]
        except KeyError as e:
            raise ConsistencyError(f"split references unknown instance id {e}") from e
        withheld = {int(k): v for k, v in data.get('withheld_labels', {}).items()}
        return cls(
            train=train,
            test_pool=test_pool,
            known_classes=data.get('known_classes', []),
            unknown_classes=data.get('unknown_classes', []),
            withheld_labels=withheld,
            unused_classes=data.get('unused_classes', []),
            seed=data.get('seed')
        )

    def to_dict(self):
        """Convert OscSplit instance to an id manifest"""
        return {
            'train_ids': [x.instance_id for x in self.train],
            'test_ids': [x.instance_id for x in self.test_pool],
            'known_classes': sorted(self.known_classes),
            'unknown_classes': sorted(self.unknown_classes),
            'unused_classes': sorted(self.unused_classes),
            'withheld_labels': {str(k): v for k, v in sorted(self.withheld_labels.items())},
            'seed': self.seed
        }


class StreamWindow:
    """One segment of the incremental stream"""

    def __init__(self, index, instances=None, novel_class_ids=None):
        self.index = index
        self.instances = instances or []
        self.novel_class_ids = sorted(novel_class_ids or ())

    @property
    def instance_ids(self):
        return [x.instance_id for x in self.instances]

    def to_dict(self):
        return {
            'window': self.index,
            'instance_ids': self.instance_ids,
            'novel_class_ids': self.novel_class_ids
        }


class StreamSchedule:
    """Ordered windows of an incremental stream; window 0 is the initial known set"""

    def __init__(self, windows=None, interval_size=0, class_arrival='single', seed=None):
        self.windows = windows or []
        self.interval_size = interval_size
        self.class_arrival = class_arrival
        self.seed = seed

    @property
    def stream_windows(self):
        """Windows t >= 1"""
        return [w for w in self.windows if w.index >= 1]

    @classmethod
    def from_dict(cls, data, dataset):
        """Rebuild a schedule from its id manifest for exact replay"""
        if not data:
            return None

        by_id = {x.instance_id: x for x in dataset}
        windows = []
        for row in data.get('windows', []):
            try:
                instances = [by_id[i] for i in row['instance_ids']]
            except KeyError as e:
                raise ConsistencyError(f"schedule references unknown instance id {e}") from e
            if row['window'] >= 1:
                instances = [x.with_label(None) for x in instances]
            windows.append(StreamWindow(row['window'], instances, row.get('novel_class_ids')))
        return cls(
            windows=windows,
            interval_size=data.get('interval_size', 0),
            class_arrival=data.get('class_arrival', 'single'),
            seed=data.get('seed')
        )

    def to_dict(self):
        """Convert StreamSchedule instance to dictionary"""
        return {
            'windows': [w.to_dict() for w in self.windows],
            'interval_size': self.interval_size,
            'class_arrival': self.class_arrival,
            'seed': self.seed
        }
