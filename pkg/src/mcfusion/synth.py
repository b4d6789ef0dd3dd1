"""Seeded synthetic multi-channel retrieval benchmarks.

Users and items get Gaussian latent factors. Each user's relevant pool is
the top of a noisy dot-product preference; it is split into the evaluation
ground truth and (optionally) a training split. A channel walks down its
list and, at every rank, emits the next pool item with probability equal
to its quality for that user (boosted on the user's favored channel) and a
distractor otherwise. Distractors follow a channel-specific Zipf
popularity over the catalogue, so different channels cover different
parts of it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .ingest import ChannelRanking, Dataset, EmbeddingTable, GroundTruth

__all__ = [
    "ChannelProfile",
    "SyntheticSpec",
    "generate_benchmark",
    "preset",
    "PRESETS",
]


@dataclass(frozen=True)
class ChannelProfile:
    quality: float
    overlap_with: int | None = None
    overlap_rate: float = 0.0


@dataclass(frozen=True)
class SyntheticSpec:
    n_users: int
    n_items: int
    K: int
    depth: int
    truth_size: int
    d: int = 16
    channel_profiles: tuple = ()
    segments: tuple = ()          # (user fraction, favored channel) pairs
    segment_boost: float = 0.5
    train_size: int = 0
    noise: float = 0.1
    popularity_skew: float = 1.0
    master_seed: int = 0

    def __post_init__(self):
        profiles = tuple(p if isinstance(p, ChannelProfile) else ChannelProfile(**p)
                         if isinstance(p, dict) else ChannelProfile(*p)
                         for p in self.channel_profiles)
        if not profiles:
            profiles = tuple(ChannelProfile(0.3) for _ in range(self.K))
        object.__setattr__(self, "channel_profiles", profiles)
        object.__setattr__(self, "segments", tuple((float(f), int(c)) for f, c in self.segments))
        self.check()

    def check(self):
        if min(self.n_users, self.n_items, self.K, self.depth, self.truth_size, self.d) < 1:
            raise ValidationError("synthetic sizes must all be positive")
        if len(self.channel_profiles) != self.K:
            raise ValidationError(f"expected {self.K} channel profiles, got {len(self.channel_profiles)}")
        pool = self.truth_size + self.train_size
        if self.depth > self.n_items or pool + self.depth > self.n_items:
            raise ValidationError(
                f"infeasible spec: depth {self.depth} plus relevant pool {pool} exceeds {self.n_items} items")
        for k, p in enumerate(self.channel_profiles):
            if not 0 <= p.quality <= 1 or not 0 <= p.overlap_rate <= 1:
                raise ValidationError(f"channel {k}: quality and overlap_rate must lie in [0, 1]")
            if p.overlap_with is not None and not 0 <= p.overlap_with < k:
                raise ValidationError(f"channel {k}: overlap_with must name an earlier channel")
        if sum(f for f, _ in self.segments) > 1 + 1e-12:
            raise ValidationError("segment fractions sum to more than 1")
        if any(not 0 <= c < self.K for _, c in self.segments):
            raise ValidationError("segment favored channel out of range")

    def to_dict(self):
        doc = asdict(self)
        doc["segments"] = [list(s) for s in self.segments]
        return doc

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        doc["channel_profiles"] = tuple(ChannelProfile(**p) for p in doc.get("channel_profiles", ()))
        return cls(**doc)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _segment_of_users(spec, rng):
    seg = np.full(spec.n_users, -1)
    perm = rng.permutation(spec.n_users)
    start = 0
    for s, (frac, _) in enumerate(spec.segments):
        n = int(round(frac * spec.n_users))
        seg[perm[start:start + n]] = s
        start += n
    return seg


def generate_benchmark(spec):
    """Build a padded, embedding-carrying :class:`Dataset` from ``spec``."""
    spec.check()
    ss = np.random.SeedSequence(spec.master_seed)
    r_lat, r_seg, r_pool, r_pop, *r_chan = (np.random.default_rng(s) for s in ss.spawn(4 + spec.K))
    N, M, K, C, d = spec.n_users, spec.n_items, spec.K, spec.depth, spec.d
    T, P = spec.truth_size, spec.truth_size + spec.train_size

    seg = _segment_of_users(spec, r_seg)
    U = r_lat.normal(size=(N, d)) / np.sqrt(d)
    V = r_lat.normal(size=(M, d)) / np.sqrt(d)
    if spec.segments:
        centers = r_lat.normal(size=(len(spec.segments), d)) / np.sqrt(d)
        U = U + np.where(seg[:, None] >= 0, centers[np.maximum(seg, 0)], 0.0)
    pref = U @ V.T + spec.noise * r_lat.normal(size=(N, M))
    pool = np.argsort(-pref, axis=1, kind="stable")[:, :P]          # (N, P) preference order
    split = np.argsort(r_pool.random((N, P)), axis=1)
    is_valid = np.zeros((N, P), dtype=bool)
    np.put_along_axis(is_valid, split[:, :T], True, axis=1)

    in_pool = np.zeros((N, M), dtype=bool)
    np.put_along_axis(in_pool, pool, True, axis=1)

    quality = np.array([p.quality for p in spec.channel_profiles])
    q_user = np.broadcast_to(quality, (N, K)).copy()
    for s, (_, fav) in enumerate(spec.segments):
        q_user[seg == s, fav] = np.minimum(q_user[seg == s, fav] + spec.segment_boost, 1.0)

    # channel popularity: Zipf over a channel-specific permutation of the catalogue
    log_pop = np.empty((K, M))
    for k in range(K):
        ranks = r_pop.permutation(M) + 1
        log_pop[k] = -spec.popularity_skew * np.log(ranks)

    lists = np.empty((K, N, C), dtype=np.int64)
    own_keys = []
    for k in range(K):
        rng = r_chan[k]
        prof = spec.channel_profiles[k]
        keys = log_pop[k] + rng.gumbel(size=(N, M))
        if prof.overlap_with is not None:
            keys = prof.overlap_rate * own_keys[prof.overlap_with] + (1 - prof.overlap_rate) * keys
        own_keys.append(keys)
        masked = np.where(in_pool, -np.inf, keys)
        distract = np.argpartition(-masked, C - 1, axis=1)[:, :C]
        dkeys = np.take_along_axis(masked, distract, axis=1)
        distract = np.take_along_axis(distract, np.argsort(-dkeys, axis=1, kind="stable"), axis=1)

        pool_order = np.take_along_axis(pool, np.argsort(rng.random((N, P)), axis=1), axis=1)
        slot_rel = rng.random((N, C)) < q_user[:, k:k + 1]
        n_rel = np.cumsum(slot_rel, axis=1)
        slot_rel &= n_rel <= P                                        # pool exhausted -> distractor
        n_rel = np.cumsum(slot_rel, axis=1)
        n_dis = np.cumsum(~slot_rel, axis=1)
        rel_item = np.take_along_axis(pool_order, np.clip(n_rel - 1, 0, P - 1), axis=1)
        dis_item = np.take_along_axis(distract, np.clip(n_dis - 1, 0, C - 1), axis=1)
        lists[k] = np.where(slot_rel, rel_item, dis_item)

    users = tuple(f"u{n:05d}" for n in range(N))
    items = [f"i{m:06d}" for m in range(M)]
    channels = tuple(
        ChannelRanking(k, f"ch{k}", {users[n]: tuple(items[i] for i in lists[k, n]) for n in range(N)})
        for k in range(K))
    valid_sets, train_sets = {}, {}
    for n, u in enumerate(users):
        valid_sets[u] = frozenset(items[i] for i in pool[n, is_valid[n]])
        train_sets[u] = frozenset(items[i] for i in pool[n, ~is_valid[n]])
    emb = EmbeddingTable(d, {u: U[n] for n, u in enumerate(users)},
                         {items[m]: V[m] for m in range(M)})
    train = GroundTruth(train_sets) if spec.train_size else None
    ds = Dataset(channels, GroundTruth(valid_sets), emb, users, M, train)
    ds._cache["segments"] = seg
    return ds


def _dominant_channel(seed):
    return SyntheticSpec(
        n_users=1000, n_items=3000, K=9, depth=200, truth_size=170, d=16,
        channel_profiles=(ChannelProfile(1.0),) + tuple(
            ChannelProfile(q) for q in (0.2, 0.15, 0.1, 0.1, 0.05, 0.05, 0.02, 0.02)),
        master_seed=seed)


def _two_segment(seed):
    return SyntheticSpec(
        n_users=600, n_items=3000, K=4, depth=100, truth_size=30, train_size=30, d=16,
        channel_profiles=(ChannelProfile(0.15), ChannelProfile(0.15), ChannelProfile(0.1),
                          ChannelProfile(0.1, overlap_with=0, overlap_rate=0.5)),
        segments=((0.5, 0), (0.5, 1)), segment_boost=0.5, master_seed=seed)


def _uniform_noise(seed):
    return SyntheticSpec(
        n_users=400, n_items=4000, K=5, depth=100, truth_size=20, d=16,
        channel_profiles=tuple(ChannelProfile(0.1) for _ in range(5)),
        popularity_skew=1.2, master_seed=seed)


PRESETS = {
    "dominant-channel": _dominant_channel,
    "two-segment": _two_segment,
    "uniform-noise": _uniform_noise,
}


def preset(name, seed=0, **overrides):
    """Named known-answer spec; keyword overrides replace individual fields."""
    try:
        spec = PRESETS[name](seed)
    except KeyError:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(spec, **overrides) if overrides else spec
