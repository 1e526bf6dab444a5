"""Accuracy, precision, recall, weighted F1, F_out, forgetting and window averages."""
import numpy as np
from sklearn.metrics import accuracy_score, confusion_matrix, f1_score, precision_recall_fscore_support

from s2osc.errors import ParameterError, PreconditionError, UndefinedMetricError
from s2osc.models.example import sort_labels
from s2osc.models.report import AVERAGED_METRICS, ConfusionMatrix, RunReport


def confusion_from_labels(truth, predicted, label_order=None):
    """Confusion matrix from aligned truth / prediction sequences"""
    truth, predicted = list(truth), list(predicted)
    if len(truth) != len(predicted):
        raise PreconditionError("truth and predictions differ in length")
    if label_order is None:
        label_order = sort_labels(set(truth) | set(predicted))
    if not truth:
        return ConfusionMatrix(np.zeros((len(label_order), len(label_order))), label_order)
    return ConfusionMatrix(confusion_matrix(truth, predicted, labels=label_order), label_order)


def label_sequences(cm):
    """Expand counts back into (truth, predicted) index sequences"""
    n = len(cm.label_order)
    rows, cols = np.meshgrid(np.arange(n), np.arange(n), indexing='ij')
    counts = cm.counts.ravel()
    return np.repeat(rows.ravel(), counts), np.repeat(cols.ravel(), counts)


def classification_metrics(cm):
    """(accuracy, macro precision, macro recall, weighted F1)"""
    if cm.total <= 0:
        raise UndefinedMetricError("metrics of an empty confusion matrix are undefined")
    y_true, y_pred = label_sequences(cm)
    # macro averages over labels that occur in truth or prediction
    present = np.flatnonzero((cm.counts.sum(axis=1) > 0) | (cm.counts.sum(axis=0) > 0))
    precision, recall, _, _ = precision_recall_fscore_support(y_true, y_pred, labels=present,
                                                              average='macro', zero_division=0)
    weighted_f1 = f1_score(y_true, y_pred, labels=present, average='weighted', zero_division=0)
    return float(accuracy_score(y_true, y_pred)), float(precision), float(recall), float(weighted_f1)


def binary_confusion(truth_unknown, predicted_unknown):
    """2x2 matrix, rows truth, columns prediction, order (known, unknown)"""
    truth_unknown = np.asarray(truth_unknown, dtype=bool)
    predicted_unknown = np.asarray(predicted_unknown, dtype=bool)
    if truth_unknown.size == 0:
        return np.zeros((2, 2), dtype=np.int64)
    return confusion_matrix(truth_unknown, predicted_unknown, labels=[False, True]).astype(np.int64)


def f_out(cm_binary):
    """F1 of the unknown class; None for a window with no unknown truth or prediction"""
    cm_binary = np.asarray(cm_binary)
    fp, fn, tp = int(cm_binary[0, 1]), int(cm_binary[1, 0]), int(cm_binary[1, 1])
    denominator = 2 * tp + fp + fn
    if denominator == 0:
        return None
    return 2 * tp / denominator


def forgetting(per_window_avg_acc, a_star):
    """(A* - mean(A)) / A*"""
    if a_star <= 0:
        raise ParameterError(f"A* must be positive, got {a_star}")
    if not per_window_avg_acc:
        raise PreconditionError("no window accuracies to average")
    return (a_star - float(np.mean(per_window_avg_acc))) / a_star


def average_over_windows(reports, extra=None):
    """Unweighted per-metric means; vacuous F_out windows are skipped"""
    if not reports:
        raise PreconditionError("at least one window report is required")
    averages = {}
    for name in AVERAGED_METRICS:
        values = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        averages[name] = float(np.mean(values)) if values else None
    return RunReport(windows=list(reports), averages=averages, extra=extra or {})
