"""Task heads, losses and ranking metrics for link prediction and
dynamic node classification."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DataError
from .tensor import Tensor

PROB_EPS = 1e-7


def init_link_decoder(rng: np.random.Generator, d_h: int) -> dict:
    """2-layer MLP on concatenated endpoint embeddings -> one logit."""
    return {
        "w1": T.parameter(rng, (2 * d_h, d_h)),
        "b1": T.zeros_param((d_h,)),
        "w2": T.parameter(rng, (d_h, 1)),
        "b2": T.zeros_param((1,)),
    }


def init_node_decoder(rng: np.random.Generator, d_h: int, n_classes: int) -> dict:
    return {
        "w1": T.parameter(rng, (d_h, d_h)),
        "b1": T.zeros_param((d_h,)),
        "w2": T.parameter(rng, (d_h, n_classes)),
        "b2": T.zeros_param((n_classes,)),
    }


def flp_score(h_u: Tensor, h_v: Tensor, params: dict) -> Tensor:
    """Edge probability in (0, 1) for each (source, destination) row pair."""
    x = T.concat([h_u, h_v], axis=1)
    hidden = T.relu(T.matmul(x, params["w1"]) + params["b1"])
    logit = T.matmul(hidden, params["w2"]) + params["b2"]
    return T.sigmoid(T.reshape(logit, (-1,)))


def dnc_logits(h: Tensor, params: dict) -> Tensor:
    hidden = T.relu(T.matmul(h, params["w1"]) + params["b1"])
    return T.matmul(hidden, params["w2"]) + params["b2"]


def bce_loss(labels: np.ndarray, probs: Tensor) -> Tensor:
    """Mean binary cross-entropy; probabilities clamped away from 0/1."""
    y = np.asarray(labels, dtype=probs.dtype)
    p = T.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    terms = T.mul(Tensor(y), T.log(p)) + T.mul(Tensor(1.0 - y), T.log(1.0 - p))
    return T.mul(T.reduce_mean(terms), -1.0)


def ce_loss(labels: np.ndarray, logits: Tensor) -> Tensor:
    """Mean cross-entropy of integer class labels against row logits."""
    y = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if np.any((y < 0) | (y >= c)):
        raise DataError(f"class label out of range [0, {c})")
    m = T.reduce_max(logits, axis=1, keepdims=True)
    shifted = logits - m
    logz = T.log(T.reduce_sum(T.exp(shifted), axis=1))
    onehot = np.zeros((n, c), dtype=logits.dtype)
    onehot[np.arange(n), y] = 1.0
    picked = T.reduce_sum(T.mul(shifted, Tensor(onehot)), axis=1)
    return T.reduce_mean(logz - picked)


# ---------------------------------------------------------------------------
# ranking metrics


def _check_two_class(labels: np.ndarray):
    labels = np.asarray(labels)
    if labels.min() == labels.max():
        raise DataError("metric undefined: need both a positive and a negative")
    return labels.astype(bool)


def average_precision(scores, labels) -> float:
    """AP: mean of precision@k over the positives, score-descending."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = _check_two_class(labels)
    order = np.argsort(-scores, kind="stable")
    hits = pos[order]
    cum = np.cumsum(hits)
    ranks = np.arange(1, len(scores) + 1)
    return float((cum[hits] / ranks[hits]).mean())


def roc_auc(scores, labels) -> float:
    """AUC via the Mann-Whitney U statistic; ties count half."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = _check_two_class(labels)
    ps, ns = scores[pos], scores[~pos]
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    ranks[order] = np.arange(1, len(scores) + 1)
    # average ranks over ties
    uniq, inv = np.unique(scores, return_inverse=True)
    sums = np.bincount(inv, weights=ranks)
    counts = np.bincount(inv)
    ranks = (sums / counts)[inv]
    u = ranks[pos].sum() - len(ps) * (len(ps) + 1) / 2.0
    return float(u / (len(ps) * len(ns)))


def mrr(pos_scores, neg_scores) -> float:
    """Mean reciprocal rank of the positive among its negatives.

    Rank = 1 + count(neg > pos): ties favor the positive.
    """
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    rrs = []
    for p, negs in zip(pos_scores, neg_scores):
        negs = np.asarray(negs, dtype=np.float64)
        if len(negs) == 0:
            raise DataError("mrr needs >=1 negative per query")
        rank = 1 + int((negs > p).sum())
        rrs.append(1.0 / rank)
    return float(np.mean(rrs))
