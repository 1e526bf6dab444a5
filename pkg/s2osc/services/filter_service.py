"""Self-taught weighting w_j = u_j + lambda * d_j and the D_out / D_in selections."""
import logging

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import entr

from s2osc.agents.backbone import BackboneAgent
from s2osc.errors import InputError, ParameterError, StateError, record_warning
from s2osc.models.example import class_groups
from s2osc.models.filter_outcome import FilterOutcome

logger = logging.getLogger(__name__)

ROW_SUM_TOLERANCE = 1e-4


def _check_distributions(probs):
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if (probs < 0).any() or np.abs(probs.sum(axis=1) - 1.0).max() > ROW_SUM_TOLERANCE:
        raise InputError("rows must be probability distributions")
    return probs


def prediction_entropies(probs):
    """Natural-log entropy of each row, 0 ln 0 taken as 0"""
    return entr(_check_distributions(probs)).sum(axis=1)


def prediction_entropy(probs):
    return float(prediction_entropies(probs)[0])


def center_distances(embeddings, centers):
    """Minimum squared Euclidean distance of each row to any class center"""
    if not centers.centers:
        raise StateError("no class centers available")
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if embeddings.shape[1] != centers.dim:
        raise InputError(f"embedding dim {embeddings.shape[1]} does not match centers dim {centers.dim}")
    return cdist(embeddings, centers.matrix(), metric='sqeuclidean').min(axis=1)


def center_distance(embedding, centers):
    return float(center_distances(embedding, centers)[0])


def score_components(model_f, centers, pool, backbone=None):
    """(entropy, distance) arrays aligned with pool order"""
    backbone = backbone or BackboneAgent()
    if not pool:
        return np.empty(0), np.empty(0)
    u = prediction_entropies(backbone.predict_proba(model_f, pool))
    d = center_distances(backbone.embed(model_f, pool), centers)
    return u, d


def combine_weights(u, d, lam):
    if lam < 0:
        raise ParameterError(f"lambda must be non-negative, got {lam}")
    return np.asarray(u, dtype=np.float64) + lam * np.asarray(d, dtype=np.float64)


def score_pool(model_f, centers, pool, lam, backbone=None):
    """instance_id -> w_j for every pool instance"""
    if lam < 0:
        raise ParameterError(f"lambda must be non-negative, got {lam}")
    u, d = score_components(model_f, centers, pool, backbone)
    w = combine_weights(u, d, lam)
    return {x.instance_id: float(v) for x, v in zip(pool, w)}


def select_filtered(weights, pool, K):
    """The K largest-weight pool instances; ties go to the lower instance_id"""
    if K < 1:
        raise ParameterError(f"K must be at least 1, got {K}")
    ids = np.array([x.instance_id for x in pool], dtype=np.int64)
    if K > len(ids):
        record_warning('filter', 'K exceeds pool size; selecting the whole pool', K=K, pool=len(ids))
        K = len(ids)
    w = np.array([weights[i] for i in ids], dtype=np.float64)
    order = np.lexsort((ids, -w))
    return [int(i) for i in ids[order[:K]]]


def select_exemplars(train, K, seed):
    """K uniformly drawn instance ids per class"""
    if K < 1:
        raise ParameterError(f"K must be at least 1, got {K}")
    rng = np.random.default_rng(seed)
    d_in = {}
    for label, members in class_groups(train).items():
        ids = sorted(x.instance_id for x in members)
        if len(ids) < K:
            record_warning('filter', 'class has fewer than K instances; taking all',
                           class_id=label, available=len(ids), K=K)
            d_in[label] = ids
        else:
            d_in[label] = sorted(int(i) for i in rng.choice(ids, size=K, replace=False))
    return d_in


def pseudo_label_purity(d_out, withheld_labels, unknown_classes):
    """Fraction of D_out whose true class is unknown"""
    if not d_out:
        return None
    hits = sum(1 for i in d_out if withheld_labels.get(i) in unknown_classes)
    return hits / len(d_out)


def run_filter(model_f, centers, pool, train, K, lam, seed, backbone=None):
    """Score the pool, select D_out and D_in"""
    u, d = score_components(model_f, centers, pool, backbone)
    w = combine_weights(u, d, lam)
    ids = [x.instance_id for x in pool]
    weights = {i: float(v) for i, v in zip(ids, w)}
    outcome = FilterOutcome(
        weights=weights,
        d_out=select_filtered(weights, pool, K),
        d_in=select_exemplars(train, K, seed),
        lambda_used=lam,
        entropies={i: float(v) for i, v in zip(ids, u)},
        distances={i: float(v) for i, v in zip(ids, d)},
    )
    summary = outcome.component_summary()
    logger.info("filter: |D_out|=%d, |D_in|=%d, mean u=%s, mean d=%s", len(outcome.d_out),
                sum(len(v) for v in outcome.d_in.values()), summary['mean_entropy'], summary['mean_distance'])
    return outcome
