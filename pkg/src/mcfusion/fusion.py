"""Quota-based merging of channel rankings into fixed-size recommendation sets.

A weight vector on the simplex becomes integer per-channel quotas
(``round(w_k * L)`` with largest-remainder repair so they sum to ``L``).
Each channel contributes its top ``quota_k`` items; duplicates keep their
first occurrence scanning channels by descending weight, and dedup losses
are backfilled round-robin from the channels' next unused items.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ValidationError

__all__ = [
    "SUM_TOL",
    "WeightVector",
    "PersonalizedWeights",
    "MergedSet",
    "quotas_from_weights",
    "quotas_batch",
    "scan_order",
    "merge_user",
    "merge_all",
    "project_to_bounded_simplex",
    "baseline_weights",
    "as_weight_matrix",
    "load_weights",
    "save_weights",
    "write_merged_jsonl",
]

SUM_TOL = 1e-9


@dataclass(frozen=True)
class WeightVector:
    """Non-negative channel weights summing to one, optionally box-bounded."""

    w: np.ndarray
    bounds: tuple | None = None

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64).reshape(-1)
        if w.size == 0 or not np.all(np.isfinite(w)):
            raise ValidationError("weights must be a non-empty vector of finite numbers")
        if np.any(w < 0):
            raise ValidationError(f"weights must be non-negative, got {w.tolist()}")
        total = w.sum()
        if abs(total - 1.0) > SUM_TOL:
            raise ValidationError(f"weights must sum to 1 (got {total:.12g})")
        if self.bounds is not None:
            lo, hi = self.bounds
            if not 0 <= lo <= hi <= 1:
                raise ValidationError(f"invalid weight bounds {self.bounds}")
            if np.any(w < lo - SUM_TOL) or np.any(w > hi + SUM_TOL):
                raise ValidationError(f"weights {w.tolist()} violate bounds {self.bounds}")
            object.__setattr__(self, "bounds", (float(lo), float(hi)))
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def normalized(cls, raw, bounds=None):
        raw = np.asarray(raw, dtype=np.float64)
        total = raw.sum()
        if total <= 0:
            raise ValidationError("cannot normalize a weight vector with non-positive sum")
        return cls(raw / total, bounds)

    @classmethod
    def equal(cls, k):
        return cls(np.full(k, 1.0 / k))

    @property
    def k(self):
        return self.w.size

    def __len__(self):
        return self.w.size

    def __eq__(self, other):
        if not isinstance(other, WeightVector):
            return NotImplemented
        return np.array_equal(self.w, other.w) and self.bounds == other.bounds

    def __hash__(self):
        return hash((self.w.tobytes(), self.bounds))


@dataclass(frozen=True)
class PersonalizedWeights:
    per_user: Mapping[str, WeightVector]

    def __getitem__(self, user):
        return self.per_user[user]

    def matrix(self, users):
        missing = [u for u in users if u not in self.per_user]
        if missing:
            raise ValidationError(f"personalized weights missing user {missing[0]!r}")
        return np.stack([self.per_user[u].w for u in users])


@dataclass(frozen=True)
class MergedSet:
    user: str
    items: tuple
    provenance: tuple  # (channel index, rank within channel, backfilled)
    exhausted: bool = False

    @property
    def backfilled(self):
        return sum(1 for p in self.provenance if p[2])

    def to_json(self):
        return {"user": self.user, "items": list(self.items), "backfilled": self.backfilled}


def _w_array(w):
    return w.w if isinstance(w, WeightVector) else np.asarray(w, dtype=np.float64)


def scan_order(W):
    """Channels by descending weight, ties by lower index; rowwise for 2-D input."""
    W = np.asarray(W, dtype=np.float64)
    return np.argsort(-W, axis=-1, kind="stable")


def quotas_batch(W, L, C):
    """Integer quotas for every row of an ``(n, K)`` weight matrix.

    ``C`` caps each quota (scalar or length-K). Rounding is half away from
    zero; the sum is then repaired one unit at a time: add to the channel
    furthest below its exact share ``w_k * L``, remove from the one furthest
    above, lower channel index first on ties.
    """
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    n, K = W.shape
    cap = np.broadcast_to(np.asarray(C, dtype=np.int64), (K,))
    if L < 0 or L > cap.sum():
        raise ValidationError(f"L={L} exceeds the {int(cap.sum())} items available across channels")
    exact = W * L
    q = np.minimum(np.floor(exact + 0.5).astype(np.int64), cap)
    q = np.maximum(q, 0)
    rows = np.arange(n)
    for _ in range(int(cap.sum()) + K):
        diff = L - q.sum(axis=1)
        if not np.any(diff):
            break
        resid = exact - q
        up = diff > 0
        if np.any(up):
            r = np.where(q < cap, resid, -np.inf)[up]
            q[rows[up], np.argmax(r, axis=1)] += 1
        down = diff < 0
        if np.any(down):
            r = np.where(q > 0, resid, np.inf)[down]
            q[rows[down], np.argmin(r, axis=1)] -= 1
    return q


def quotas_from_weights(w, L, C=None):
    """Per-channel item budgets summing exactly to ``L``.

    ``C`` is the per-channel depth cap; default unlimited (``L``).
    """
    w = _w_array(w)
    if C is None:
        C = L
    return quotas_batch(w[None, :], L, C)[0]


def merge_user(ds, user, w, L):
    """Merge one user's channel lists into a set of ``L`` distinct items.

    Straight-line reference implementation; :func:`merge_all` uses the
    vectorized engine and must agree with it item for item.
    """
    if user not in ds.user_index:
        raise ValidationError(f"unknown user {user!r}")
    w = _w_array(w)
    if w.size != ds.K:
        raise ValidationError(f"expected {ds.K} weights, got {w.size}")
    lists = [ch.lists[user] for ch in ds.channels]
    caps = np.array([len(x) for x in lists])
    quotas = quotas_from_weights(w, L, caps)
    order = scan_order(w)

    seen, items, prov = set(), [], []
    for k in order:
        for r in range(quotas[k]):
            item = lists[k][r]
            if item not in seen:
                seen.add(item)
                items.append(item)
                prov.append((int(k), r, False))

    ptr = quotas.copy()
    exhausted = False
    while len(items) < L:
        progressed = False
        for k in order:
            if len(items) >= L:
                break
            lst = lists[k]
            while ptr[k] < len(lst) and lst[ptr[k]] in seen:
                ptr[k] += 1
            if ptr[k] < len(lst):
                item = lst[ptr[k]]
                seen.add(item)
                items.append(item)
                prov.append((int(k), int(ptr[k]), True))
                ptr[k] += 1
                progressed = True
        if not progressed:
            exhausted = True
            break
    return MergedSet(user, tuple(items), tuple(prov), exhausted)


def as_weight_matrix(ds, weights, users=None):
    """``(n, K)`` weight matrix for ``users`` from global or personalized weights."""
    users = ds.users if users is None else users
    if isinstance(weights, PersonalizedWeights):
        W = weights.matrix(users)
    else:
        w = _w_array(weights)
        if w.ndim == 2:
            return w
        W = np.broadcast_to(w, (len(users), w.size))
    if W.shape[1] != ds.K:
        raise ValidationError(f"expected {ds.K} weights per user, got {W.shape[1]}")
    return W


def merge_all(ds, weights, L, threads=1):
    """Merge every user; ``weights`` is a global or personalized weight spec."""
    eng = ds.engine()
    W = as_weight_matrix(ds, weights)
    res = eng.merge_weights(W, L, threads=threads)
    items = ds.item_ids
    out = {}
    for n, u in enumerate(eng.users):
        cnt = int(res.count[n])
        glob = eng.glob[n, res.items[n, :cnt]]
        prov = tuple(zip(res.chan[n, :cnt].tolist(), res.rank[n, :cnt].tolist(),
                         res.backfilled[n, :cnt].tolist()))
        out[u] = MergedSet(u, tuple(items[g] for g in glob), prov, cnt < L)
    return out


def project_to_bounded_simplex(w, w_min, w_max):
    """Clip-and-redistribute ``w`` into ``{x : sum x = 1, w_min <= x_k <= w_max}``.

    Out-of-bound coordinates are clamped and frozen; the resulting mass
    deficit or surplus is spread over the free coordinates in proportion
    to their current values. Each pass freezes at least one coordinate, so
    at most K passes are needed.
    """
    x = np.array(_w_array(w), dtype=np.float64)
    K = x.size
    if not 0 <= w_min <= w_max <= 1 or K * w_min > 1 + 1e-12 or K * w_max < 1 - 1e-12:
        raise ValidationError(f"bounds [{w_min}, {w_max}] are infeasible for K={K}")
    x = np.maximum(x, 0.0)
    if x.sum() <= 0:
        x = np.full(K, 1.0 / K)
    elif abs(x.sum() - 1.0) > 1e-12:
        x = x / x.sum()
    if np.all(x >= w_min) and np.all(x <= w_max):
        return WeightVector(x, (w_min, w_max))

    fixed = np.zeros(K, dtype=bool)
    for _ in range(K + 1):
        clipped = np.clip(x, w_min, w_max)
        fixed |= clipped != x
        x = clipped
        gap = 1.0 - x.sum()
        free = ~fixed
        if abs(gap) <= 1e-15 or not free.any():
            break
        base = x[free]
        share = base / base.sum() if base.sum() > 0 else np.full(base.size, 1.0 / base.size)
        x[free] = base + gap * share
    gap = 1.0 - x.sum()
    if abs(gap) > 1e-12:
        room = (w_max - x) if gap > 0 else (x - w_min)
        x = x + gap * room / room.sum()
    return WeightVector(np.clip(x, w_min, w_max), (w_min, w_max))


def baseline_weights(ds, mode, validation_truth=None):
    """Equal weights, or weights proportional to each channel's validation hits."""
    if mode == "equal":
        return WeightVector.equal(ds.K)
    if mode != "statistical":
        raise ValidationError(f"unknown baseline mode {mode!r}")
    truth = ds.truth if validation_truth is None else validation_truth
    hits = np.zeros(ds.K)
    for k, ch in enumerate(ds.channels):
        for u in ds.users:
            rel = truth.get(u)
            hits[k] += sum(1 for i in ch.lists[u] if i in rel)
    if hits.sum() == 0:
        return WeightVector.equal(ds.K)
    return WeightVector(hits / hits.sum())


# --------------------------------------------------------------------------
# Weights / merged-set files
# --------------------------------------------------------------------------

def save_weights(path, w, channel_names=None, source="manual", extra=None):
    doc = {"weights": [float(x) for x in _w_array(w)], "source": source}
    if channel_names is not None:
        doc["channel_names"] = list(channel_names)
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")


def load_weights(path):
    """Read a weights JSON file; global ``{"weights": [...]}`` or personalized JSONL."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        doc = None
    if isinstance(doc, dict) and "weights" in doc and "user" not in doc:
        return WeightVector(doc["weights"])
    per_user = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            per_user[row["user"]] = WeightVector(row["weights"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValidationError(f"{path}:{lineno}: bad weights row ({exc})") from None
    if not per_user:
        raise ValidationError(f"{path}: no weights found")
    return PersonalizedWeights(per_user)


def write_merged_jsonl(path, merged):
    with Path(path).open("w", encoding="utf-8") as fh:
        for u in merged:
            fh.write(json.dumps(merged[u].to_json(), ensure_ascii=False) + "\n")
