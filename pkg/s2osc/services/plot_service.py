"""Result display: K-sensitivity curves, per-window curves and a PCA projection."""
import logging
import os

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np

from s2osc.services.artifact_store import read_embeddings

logger = logging.getLogger(__name__)

CURVE_METRICS = ('accuracy', 'weighted_f1', 'precision', 'recall', 'f_out')


def pca_project(embeddings, n_components=2):
    """Project rows onto their leading principal components"""
    X = np.asarray(embeddings, dtype=np.float64)
    X = X - X.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(X, full_matrices=False)
    components = vt[:n_components]
    projected = X @ components.T
    if projected.shape[1] < n_components:
        projected = np.pad(projected, ((0, 0), (0, n_components - projected.shape[1])))
    return projected


def _plot_k_curve(rows, path):
    ks = [row['K'] for row in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name in CURVE_METRICS:
        values = [row.get(name) for row in rows]
        if all(v is None for v in values):
            continue
        ax.plot(ks, [np.nan if v is None else v for v in values], marker='o', label=name)
    ax.set_xscale('log')
    ax.set_xticks(ks)
    ax.set_xticklabels([str(k) for k in ks])
    ax.set_xlabel('K (filtered instances)')
    ax.set_ylabel('score')
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _plot_windows(report, path):
    windows = [w.window_index for w in report.windows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name in CURVE_METRICS:
        values = [getattr(w, name) for w in report.windows]
        if all(v is None for v in values):
            continue
        ax.plot(windows, [np.nan if v is None else v for v in values], marker='o', label=name)
    averages = [w.average_accuracy for w in report.windows]
    if any(a is not None for a in averages):
        ax.plot(windows, [np.nan if a is None else a for a in averages], marker='s',
                linestyle='--', label='A_k')
    ax.set_xlabel('window')
    ax.set_ylabel('score')
    ax.set_xticks(windows)
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _plot_projection(embeddings, metadata, path):
    projected = pca_project(embeddings)
    labels = [row.get('truth', '') for row in metadata] or [''] * len(projected)
    fig, ax = plt.subplots(figsize=(5, 5))
    for label in sorted(set(labels)):
        mask = np.array([l == label for l in labels])
        ax.scatter(projected[mask, 0], projected[mask, 1], s=4, label=str(label))
    ax.set_xlabel('PC 1')
    ax.set_ylabel('PC 2')
    ax.legend(fontsize=6, markerscale=3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def emit_plots(report, out_dir, embeddings_path=None, metadata_path=None):
    """Write every plot the report supports; returns the list of files"""
    os.makedirs(out_dir, exist_ok=True)
    files = []
    sweep = report.extra.get('k_sweep')
    if sweep:
        files.append(_plot_k_curve(sorted(sweep, key=lambda r: r['K']), os.path.join(out_dir, 'k_sensitivity.png')))
    if report.windows:
        files.append(_plot_windows(report, os.path.join(out_dir, 'window_metrics.png')))

    if embeddings_path:
        embeddings, metadata = read_embeddings(embeddings_path, metadata_path or '')
        if embeddings.size == 0:
            logger.info("no exported embeddings at %s; projection skipped", embeddings_path)
        else:
            files.append(_plot_projection(embeddings, metadata, os.path.join(out_dir, 'embedding_pca.png')))
    logger.info("wrote %d plot files to %s", len(files), out_dir)
    return files
