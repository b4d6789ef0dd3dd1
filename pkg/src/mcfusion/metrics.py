"""Set-based retrieval metrics, the fusion objective, and channel diversity.

Precision/recall/F1 at L score a merged set against the user's relevant
items; the objective averages one of them over users. Diversity helpers
compare channels by item overlap (Jaccard), by how they rank users
(rank-biased overlap), and measure catalogue coverage of merged sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import METRICS
from .errors import ValidationError
from .fusion import as_weight_matrix

__all__ = [
    "EvalReport",
    "ChannelUserRanking",
    "evaluate_user",
    "evaluate",
    "evaluate_objective",
    "jaccard_matrix",
    "channel_user_rankings",
    "rbo_pair",
    "rbo_matrix",
    "item_coverage",
    "coverage_for_weights",
]


def _f1(p, r):
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def evaluate_user(merged, truth):
    """``(precision, recall, f1)`` of one merged set."""
    rel = truth.get(merged.user)
    if not rel:
        raise ValidationError(f"user {merged.user!r} has no relevant items")
    hits = len(set(merged.items) & rel)
    p = hits / len(merged.items) if merged.items else 0.0
    r = hits / len(rel)
    return p, r, _f1(p, r)


@dataclass
class EvalReport:
    L: int
    user_count: int
    mean_precision: float
    mean_recall: float
    mean_f1: float
    per_user: dict  # user -> (precision, recall, f1)

    def mean(self, metric):
        return {"precision": self.mean_precision, "recall": self.mean_recall,
                "f1": self.mean_f1}[metric]

    def to_dict(self, per_user=False):
        doc = {"L": self.L, "user_count": self.user_count,
               "precision": self.mean_precision, "recall": self.mean_recall, "f1": self.mean_f1}
        if per_user:
            doc["per_user"] = [
                {"user": u, "precision": p, "recall": r, "f1": f}
                for u, (p, r, f) in self.per_user.items()]
        return doc


def _mean(values):
    return math.fsum(values) / len(values)


def evaluate(ds, weights, L, truth=None, users=None, threads=1):
    """Full :class:`EvalReport` for global or personalized weights."""
    eng = ds.engine(truth, users)
    W = as_weight_matrix(ds, weights, eng.users)
    res = eng.merge_weights(W, L, threads=threads)
    p, r, f = (a.tolist() for a in eng.user_metrics(res))
    return EvalReport(
        L=L, user_count=eng.n,
        mean_precision=_mean(p), mean_recall=_mean(r), mean_f1=_mean(f),
        per_user={u: (p[i], r[i], f[i]) for i, u in enumerate(eng.users)})


def evaluate_objective(ds, weights, L, metric="recall", truth=None, users=None, threads=1):
    """Mean per-user ``metric`` of the merged sets: the black-box objective."""
    if metric not in METRICS:
        raise ValidationError(f"unknown metric {metric!r}; expected one of {METRICS}")
    eng = ds.engine(truth, users)
    return eng.objective(as_weight_matrix(ds, weights, eng.users), L, metric, threads)


def jaccard_matrix(ds):
    """User-averaged pairwise Jaccard similarity of the channels' item lists."""
    K = ds.K
    acc = np.zeros((K, K))
    for u in ds.users:
        sets = [set(ch.lists[u]) for ch in ds.channels]
        for a in range(K):
            for b in range(a + 1, K):
                union = len(sets[a] | sets[b])
                acc[a, b] += len(sets[a] & sets[b]) / union if union else 1.0
    acc /= ds.N
    acc = acc + acc.T
    np.fill_diagonal(acc, 1.0)
    return acc


@dataclass(frozen=True)
class ChannelUserRanking:
    channel_id: int
    users_ranked: tuple


def channel_user_rankings(ds, truth=None, depth=None):
    """Per channel, users sorted by that channel's recall (desc), ties by user id."""
    eng = ds.engine(truth)
    recall = eng.channel_recall(depth)
    out = []
    for k in range(ds.K):
        order = sorted(range(eng.n), key=lambda i: (-recall[i, k], eng.users[i]))
        out.append(ChannelUserRanking(k, tuple(eng.users[i] for i in order)))
    return out


def rbo_pair(r1, r2, p=0.9, depth=None):
    """Truncated rank-biased overlap ``(1-p) * sum_d p^(d-1) |A_d & B_d| / d``.

    Accepts :class:`ChannelUserRanking` objects or plain sequences. Bounded
    above by ``1 - p**depth`` (identical rankings).
    """
    if not 0 < p < 1:
        raise ValidationError(f"persistence p must lie in (0, 1), got {p}")
    a = r1.users_ranked if isinstance(r1, ChannelUserRanking) else tuple(r1)
    b = r2.users_ranked if isinstance(r2, ChannelUserRanking) else tuple(r2)
    if set(a) != set(b):
        raise ValidationError("rankings must cover the same user set")
    D = len(a) if depth is None else depth
    if not 1 <= D <= len(a):
        raise ValidationError(f"depth must lie in [1, {len(a)}], got {D}")
    seen_a, seen_b = set(), set()
    overlap = 0
    total = 0.0
    for d in range(1, D + 1):
        x, y = a[d - 1], b[d - 1]
        if x == y:
            overlap += 1
        else:
            overlap += (x in seen_b) + (y in seen_a)
        seen_a.add(x)
        seen_b.add(y)
        total += p ** (d - 1) * overlap / d
    return (1 - p) * total


def rbo_matrix(ds, p=0.9, depth=None, truth=None):
    ranks = channel_user_rankings(ds, truth)
    K = len(ranks)
    out = np.zeros((K, K))
    for a in range(K):
        for b in range(a, K):
            out[a, b] = out[b, a] = rbo_pair(ranks[a], ranks[b], p, depth)
    return out


def item_coverage(merged_all, M):
    """Fraction of the item universe recommended to at least one user."""
    if M < 1:
        raise ValidationError("item universe size must be >= 1")
    union = set()
    for ms in merged_all.values():
        union.update(ms.items)
    return len(union) / M


def coverage_for_weights(ds, weights, L, threads=1):
    """Item coverage straight from the engine, without building MergedSets."""
    eng = ds.engine()
    res = eng.merge_weights(as_weight_matrix(ds, weights), L, threads=threads)
    valid = np.arange(L)[None, :] < res.count[:, None]
    glob = np.take_along_axis(eng.glob, res.items, axis=1)[valid]
    return np.unique(glob).size / ds.item_universe_size
