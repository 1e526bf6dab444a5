"""Fixed output directory layout and deterministic writers."""
import csv
import json
import logging
import os

import numpy as np

from s2osc.models.report import _plain

logger = logging.getLogger(__name__)

SUBDIRS = ('splits', 'checkpoints', 'filters', 'reports', 'plots')


class OutputLayout:
    """<root>/config.snapshot, splits/, checkpoints/, filters/, reports/, plots/"""

    def __init__(self, root):
        self.root = str(root)

    def prepare(self):
        for sub in SUBDIRS:
            os.makedirs(os.path.join(self.root, sub), exist_ok=True)
        return self

    @property
    def snapshot_path(self):
        return os.path.join(self.root, 'config.snapshot')

    def path(self, subdir, name):
        return os.path.join(self.root, subdir, name)


def write_json(path, data):
    with open(path, 'w', encoding='utf-8') as fh:
        fh.write(json.dumps(_plain(data), sort_keys=True, indent=2) + '\n')
    return path


def read_json(path):
    with open(path, 'r', encoding='utf-8') as fh:
        return json.load(fh)


def write_text(path, text):
    with open(path, 'w', encoding='utf-8') as fh:
        fh.write(text)
    return path


def write_csv(path, columns, rows):
    """Rows are sequences in column order or dicts keyed by column"""
    with open(path, 'w', encoding='utf-8', newline='') as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(c) for c in columns]
            writer.writerow(['' if v is None else v for v in row])
    return path


def export_embeddings(vectors_path, metadata_path, embeddings, instance_ids, truth, predicted):
    """Vectors TSV (no header) plus metadata TSV, the layout projection tools read"""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    with open(vectors_path, 'w', encoding='utf-8') as fh:
        for row in embeddings:
            fh.write('\t'.join(f"{v:.6g}" for v in row) + '\n')
    with open(metadata_path, 'w', encoding='utf-8') as fh:
        fh.write('instance_id\ttruth\tpredicted\n')
        for i, t, p in zip(instance_ids, truth, predicted):
            fh.write(f"{i}\t{t}\t{p}\n")
    logger.debug("exported %d embeddings to %s", len(embeddings), vectors_path)
    return vectors_path, metadata_path


def read_embeddings(vectors_path, metadata_path):
    """(embeddings, metadata rows); empty arrays when the export is missing or empty"""
    if not os.path.exists(vectors_path) or os.path.getsize(vectors_path) == 0:
        return np.empty((0, 0)), []
    embeddings = np.loadtxt(vectors_path, delimiter='\t', ndmin=2)
    rows = []
    if os.path.exists(metadata_path):
        with open(metadata_path, 'r', encoding='utf-8') as fh:
            rows = list(csv.DictReader(fh, delimiter='\t'))
    return embeddings, rows
