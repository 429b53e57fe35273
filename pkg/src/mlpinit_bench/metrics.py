"""Evaluation metrics for node classification and link prediction."""

import numpy as np
from scipy.special import expit
from sklearn.metrics import average_precision_score, roc_auc_score

from .errors import DegenerateError, RangeError, ShapeError
from .models import HitsMode, RankMetrics


def accuracy(logits: np.ndarray, labels: np.ndarray, index: np.ndarray) -> float:
    """Fraction of ``index`` rows whose argmax (first on ties) equals the label.

    Raises:
        DegenerateError: If ``index`` is empty
    """
    if index.size == 0:
        raise DegenerateError("accuracy over an empty node set")
    predicted = np.argmax(logits[index], axis=1)
    return float(np.mean(predicted == labels[index]))


def link_logits(embeddings: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Inner products h_u · h_v for each (u, v) row of ``pairs``.

    Raises:
        ShapeError: If ``pairs`` is not (P, 2)
        RangeError: If a pair index is outside the embedding rows
    """
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ShapeError(f"pairs must be (P, 2), got {pairs.shape}")
    if pairs.size and (pairs.min() < 0 or pairs.max() >= embeddings.shape[0]):
        raise RangeError(f"pair index outside [0, {embeddings.shape[0]})")
    return np.einsum("ij,ij->i", embeddings[pairs[:, 0]], embeddings[pairs[:, 1]])


def decode_links(embeddings: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Edge probabilities sigmoid(h_u · h_v); symmetric in u and v."""
    return expit(link_logits(embeddings, pairs))


def _hits_at(pos: np.ndarray, neg: np.ndarray, k: int) -> float:
    if neg.size < k:
        return 1.0
    threshold = np.partition(neg, neg.size - k)[neg.size - k]
    return float(np.mean(pos > threshold))


def rank_metrics(
    pos_scores: np.ndarray,
    neg_scores: np.ndarray,
    ks: tuple[int, ...] = (10, 20, 50, 100),
    hits_mode: HitsMode = HitsMode.SHARED,
) -> RankMetrics:
    """ROC-AUC, average precision and Hits@K of positives over negatives.

    Hits@K counts a positive when it scores strictly above the K-th highest
    negative; with fewer than K negatives every positive counts. In
    ``per_positive`` mode ``neg_scores`` has one row of negatives per positive.

    Raises:
        DegenerateError: If either score set is empty
        RangeError: If a score is NaN
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise DegenerateError("rank metrics need at least one positive and one negative")
    if np.isnan(pos).any() or np.isnan(neg).any():
        raise RangeError("score is NaN")

    flat_neg = neg.ravel()
    targets = np.concatenate([np.ones(pos.size), np.zeros(flat_neg.size)])
    scores = np.concatenate([pos.ravel(), flat_neg])
    auc = float(roc_auc_score(targets, scores))
    ap = float(average_precision_score(targets, scores))

    hits: dict[int, float] = {}
    for k in ks:
        if hits_mode == HitsMode.SHARED:
            hits[k] = _hits_at(pos.ravel(), flat_neg, k)
        else:
            rows = neg.reshape(pos.size, -1)
            per_row = [_hits_at(pos[i : i + 1], rows[i], k) for i in range(pos.size)]
            hits[k] = float(np.mean(per_row))
    return RankMetrics(auc=auc, ap=ap, hits=hits)
