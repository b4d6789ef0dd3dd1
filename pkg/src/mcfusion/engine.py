"""Vectorized merge and scoring over all users at once.

Every user's candidate items (at most K*C of them) are renumbered into a
private dense range at build time, so set membership during dedup and
backfill is a boolean table lookup regardless of the item universe size.
The merge rules are those of :func:`mcfusion.fusion.merge_user`.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .fusion import quotas_batch, scan_order

METRICS = ("recall", "precision", "f1")


@dataclass
class MergeResult:
    items: np.ndarray       # (n, L) local item ids, sentinel past ``count``
    chan: np.ndarray        # (n, L) source channel
    rank: np.ndarray        # (n, L) rank within the source channel
    backfilled: np.ndarray  # (n, L) bool
    count: np.ndarray       # (n,) merged set sizes


class MergeEngine:
    def __init__(self, ds, truth, users=None):
        ranked = ds.ranked
        if users is None:
            rows = np.arange(ds.N)
            self.users = ds.users
        else:
            self.users = tuple(users)
            try:
                rows = np.array([ds.user_index[u] for u in self.users], dtype=np.int64)
            except KeyError as exc:
                raise ValidationError(f"unknown user {exc.args[0]!r}") from None
        ranked = ranked[rows]
        n, K, C = ranked.shape
        self.n, self.K, self.C = n, K, C

        local = np.empty((n, K, C), dtype=np.int32)
        uniques = []
        for r in range(n):
            uniq, inv = np.unique(ranked[r].ravel(), return_inverse=True)
            local[r] = inv.reshape(K, C)
            uniques.append(uniq)
        U = max((u.size for u in uniques), default=0)
        self.U = U  # doubles as the "empty slot" sentinel id
        self.local = local
        self.glob = np.full((n, U + 1), -1, dtype=np.int64)
        self.rel = np.zeros((n, U + 1), dtype=bool)
        self.tsize = np.zeros(n, dtype=np.int64)
        idx = ds.item_index
        for r, u in enumerate(self.users):
            uniq = uniques[r]
            self.glob[r, :uniq.size] = uniq
            rel = truth.get(u)
            self.tsize[r] = len(rel)
            if rel:
                rel_idx = np.fromiter((idx[i] for i in rel if i in idx), dtype=np.int64)
                self.rel[r, :uniq.size] = np.isin(uniq, rel_idx)

    # ------------------------------------------------------------------
    def merge(self, quotas, order, L, rows=None):
        """Merge for the given rows with per-row ``(K,)`` quotas and scan orders."""
        rows = np.arange(self.n) if rows is None else np.asarray(rows)
        n, K, C, U = rows.size, self.K, self.C, self.U
        loc = self.local[rows]
        quotas = np.asarray(quotas, dtype=np.int64)
        order = np.asarray(order, dtype=np.int64)
        ri = np.arange(n)

        # quota phase: slot j of the output takes rank (j - start) of the channel
        # whose cumulative quota range (in scan order) contains j
        qs = np.take_along_axis(quotas, order, axis=1)
        cum = np.cumsum(qs, axis=1)
        start = cum - qs
        j = np.arange(L)
        valid = j[None, :] < cum[:, -1:]
        slot = np.minimum((j[None, None, :] >= cum[:, :, None]).sum(axis=1), K - 1)
        chan = np.take_along_axis(order, slot, axis=1)
        rank = np.where(valid, j[None, :] - np.take_along_axis(start, slot, axis=1), 0)
        cand = np.where(valid, loc[ri[:, None], chan, rank], U)

        # first occurrence wins
        srt = np.argsort(cand, axis=1, kind="stable")
        sv = np.take_along_axis(cand, srt, axis=1)
        dup_sorted = np.zeros_like(valid)
        dup_sorted[:, 1:] = sv[:, 1:] == sv[:, :-1]
        dup = np.empty_like(dup_sorted)
        np.put_along_axis(dup, srt, dup_sorted, axis=1)
        keep = valid & ~dup

        perm = np.argsort(~keep, axis=1, kind="stable")
        items = np.take_along_axis(np.where(keep, cand, U), perm, axis=1)
        chan = np.take_along_axis(np.where(keep, chan, -1), perm, axis=1)
        rank = np.take_along_axis(np.where(keep, rank, -1), perm, axis=1)
        count = keep.sum(axis=1)
        backfilled = np.zeros((n, L), dtype=bool)

        member = np.zeros((n, U + 1), dtype=bool)
        member[ri[:, None], items] = True
        member[:, U] = False

        # backfill: round-robin over scan order, each turn the channel's next unused item
        need = L - count
        ptr = quotas.copy()
        while True:
            act = np.flatnonzero(need > 0)
            if act.size == 0:
                break
            progressed = False
            for s in range(K):
                act = act[need[act] > 0]
                if act.size == 0:
                    break
                c = order[act, s]
                p = ptr[act, c]
                while True:
                    live = np.flatnonzero(p < C)
                    if live.size == 0:
                        break
                    hit = member[act[live], loc[act[live], c[live], p[live]]]
                    if not hit.any():
                        break
                    p[live[hit]] += 1
                ptr[act, c] = p
                live = p < C
                a2, c2, p2 = act[live], c[live], p[live]
                if a2.size == 0:
                    continue
                it = loc[a2, c2, p2]
                pos = count[a2]
                items[a2, pos] = it
                chan[a2, pos] = c2
                rank[a2, pos] = p2
                backfilled[a2, pos] = True
                member[a2, it] = True
                count[a2] += 1
                need[a2] -= 1
                ptr[a2, c2] = p2 + 1
                progressed = True
            if not progressed:
                break
        return MergeResult(items, chan, rank, backfilled, count)

    def merge_weights(self, W, L, rows=None, threads=1):
        """Merge from an ``(n, K)`` weight matrix (one row per selected user)."""
        rows = np.arange(self.n) if rows is None else np.asarray(rows)
        W = np.asarray(W, dtype=np.float64)
        if W.ndim == 1:
            W = np.broadcast_to(W, (rows.size, W.size))
        if W.shape != (rows.size, self.K):
            raise ValidationError(f"weight matrix shape {W.shape} != ({rows.size}, {self.K})")
        quotas = quotas_batch(W, L, self.C)
        order = scan_order(W)
        if threads <= 1 or rows.size < 2 * threads:
            return self.merge(quotas, order, L, rows)
        chunks = np.array_split(np.arange(rows.size), threads)
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda ix: self.merge(quotas[ix], order[ix], L, rows[ix]), chunks))
        return MergeResult(*(np.concatenate([getattr(p, f) for p in parts])
                             for f in ("items", "chan", "rank", "backfilled", "count")))

    # ------------------------------------------------------------------
    def hits(self, res, rows=None):
        rows = np.arange(self.n) if rows is None else np.asarray(rows)
        return self.rel[rows[:, None], res.items].sum(axis=1)

    def user_metrics(self, res, rows=None):
        """Per-user ``(precision, recall, f1)`` arrays for a merge result."""
        rows = np.arange(self.n) if rows is None else np.asarray(rows)
        h = self.hits(res, rows)
        size = res.count
        precision = np.where(size > 0, h / np.maximum(size, 1), 0.0)
        recall = h / self.tsize[rows]
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / np.where(denom > 0, denom, 1.0), 0.0)
        return precision, recall, f1

    def user_scores(self, W, L, metric="recall", rows=None, threads=1):
        if metric not in METRICS:
            raise ValidationError(f"unknown metric {metric!r}; expected one of {METRICS}")
        res = self.merge_weights(W, L, rows, threads)
        p, r, f = self.user_metrics(res, rows)
        return {"precision": p, "recall": r, "f1": f}[metric]

    def objective(self, W, L, metric="recall", threads=1):
        """Mean per-user metric. Summation is exact (fsum) so it is order independent."""
        scores = self.user_scores(W, L, metric, threads=threads)
        return math.fsum(scores.tolist()) / scores.size

    def channel_hits(self, depth=None):
        """``(n, K)`` counts of relevant items in each channel's top ``depth``."""
        depth = self.C if depth is None else depth
        ri = np.arange(self.n)[:, None, None]
        return self.rel[ri, self.local[:, :, :depth]].sum(axis=2)

    def channel_recall(self, depth=None):
        return self.channel_hits(depth) / self.tsize[:, None]
