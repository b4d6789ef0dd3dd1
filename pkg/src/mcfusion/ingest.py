"""Channel rankings, ground truth and embeddings: loading, padding, validation.

External ids are opaque strings. Hot loops never touch them: a padded
:class:`Dataset` exposes ``ranked``, an ``(N, K, C)`` array of dense item
indices, and ``engine()`` builds the vectorized merge/evaluation index.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ExhaustedError, ParseError, ValidationError

__all__ = [
    "ChannelRanking",
    "GroundTruth",
    "EmbeddingTable",
    "LoadReport",
    "Dataset",
    "Issue",
    "ValidationReport",
    "load_dataset",
    "load_manifest",
    "save_dataset",
    "pad_channels",
    "popularity_order",
    "validate_dataset",
    "read_jsonl",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChannelRanking:
    channel_id: int
    name: str
    lists: Mapping[str, tuple]
    pad_flags: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "lists", {u: tuple(v) for u, v in self.lists.items()})
        flags = {u: int(self.pad_flags.get(u, 0)) for u in self.lists}
        object.__setattr__(self, "pad_flags", flags)

    @property
    def depth(self):
        return max((len(v) for v in self.lists.values()), default=0)

    def padded_count(self):
        return sum(self.pad_flags.values())


@dataclass(frozen=True)
class GroundTruth:
    relevant: Mapping[str, frozenset]

    def __post_init__(self):
        object.__setattr__(self, "relevant", {u: frozenset(v) for u, v in self.relevant.items()})

    def __getitem__(self, user):
        return self.relevant[user]

    def __contains__(self, user):
        return user in self.relevant

    def get(self, user, default=frozenset()):
        return self.relevant.get(user, default)


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    user_vecs: Mapping[str, np.ndarray]
    item_vecs: Mapping[str, np.ndarray]

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError("embedding dim must be positive")
        for kind, table in (("user", self.user_vecs), ("item", self.item_vecs)):
            fixed = {}
            for key, vec in table.items():
                v = np.asarray(vec, dtype=np.float64).reshape(-1)
                if v.size != self.dim:
                    raise ValidationError(
                        f"{kind} embedding {key!r} has dimension {v.size}, expected {self.dim}")
                if not np.all(np.isfinite(v)):
                    raise ValidationError(f"{kind} embedding {key!r} has non-finite entries")
                v.setflags(write=False)
                fixed[key] = v
            object.__setattr__(self, f"{kind}_vecs", fixed)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        if self.dim != other.dim:
            return False
        for a, b in ((self.user_vecs, other.user_vecs), (self.item_vecs, other.item_vecs)):
            if a.keys() != b.keys() or any(not np.array_equal(a[k], b[k]) for k in a):
                return False
        return True

    def item_matrix(self, ids):
        try:
            return np.stack([self.item_vecs[i] for i in ids])
        except KeyError as exc:
            raise ValidationError(f"missing item embedding for {exc.args[0]!r}") from None

    def user_vector(self, user):
        try:
            return self.user_vecs[user]
        except KeyError:
            raise ValidationError(f"missing user embedding for {user!r}") from None


@dataclass(frozen=True)
class LoadReport:
    truth_users_without_channels: int = 0
    channel_users_without_truth: int = 0
    users_dropped_by_intersection: int = 0

    def warnings(self):
        out = []
        if self.truth_users_without_channels:
            out.append(f"{self.truth_users_without_channels} ground-truth users absent from channels dropped")
        if self.channel_users_without_truth:
            out.append(f"{self.channel_users_without_truth} channel users without relevant items dropped")
        if self.users_dropped_by_intersection:
            out.append(f"{self.users_dropped_by_intersection} users missing from some channel dropped")
        return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """K channel rankings over a common user set plus ground truth.

    ``truth`` is the split objectives are scored against. ``train_truth``
    (optional) is the split used for per-channel recall features and policy
    rewards; when absent ``truth`` stands in for it.
    """

    channels: tuple
    truth: GroundTruth
    embeddings: EmbeddingTable | None = None
    users: tuple = ()
    item_universe_size: int = 0
    train_truth: GroundTruth | None = None
    report: LoadReport = field(default_factory=LoadReport)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if not self.users and self.channels:
            object.__setattr__(self, "users", tuple(sorted(self.channels[0].lists)))
        object.__setattr__(self, "users", tuple(self.users))
        object.__setattr__(self, "item_universe_size",
                           max(int(self.item_universe_size), len(self.item_ids)))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.channels == other.channels and self.truth == other.truth
                and self.embeddings == other.embeddings and self.users == other.users
                and self.item_universe_size == other.item_universe_size
                and self.train_truth == other.train_truth)

    __hash__ = None

    @property
    def K(self):
        return len(self.channels)

    @property
    def N(self):
        return len(self.users)

    @property
    def channel_names(self):
        return [c.name for c in self.channels]

    @property
    def depth(self):
        return max((c.depth for c in self.channels), default=0)

    @property
    def fit_truth(self):
        return self.train_truth if self.train_truth is not None else self.truth

    @cached_property
    def item_ids(self):
        seen = set()
        for ch in self.channels:
            for items in ch.lists.values():
                seen.update(items)
        for gt in (self.truth, self.train_truth):
            if gt is not None:
                for items in gt.relevant.values():
                    seen.update(items)
        if self.embeddings is not None:
            seen.update(self.embeddings.item_vecs)
        return tuple(sorted(seen))

    @cached_property
    def item_index(self):
        return {item: i for i, item in enumerate(self.item_ids)}

    @cached_property
    def user_index(self):
        return {u: i for i, u in enumerate(self.users)}

    @cached_property
    def ranked(self):
        """Dense ``(N, K, C)`` int32 array of item indices; requires equal depth."""
        C = self.depth
        out = np.empty((self.N, self.K, C), dtype=np.int32)
        idx = self.item_index
        for k, ch in enumerate(self.channels):
            for n, u in enumerate(self.users):
                items = ch.lists[u]
                if len(items) != C:
                    raise ValidationError(
                        f"channel {ch.name!r}, user {u!r}: list length {len(items)} != depth {C}; "
                        "pad_channels first")
                out[n, k] = [idx[i] for i in items]
        out.setflags(write=False)
        return out

    def engine(self, truth=None, users=None):
        """Cached vectorized merge/evaluation index (see :mod:`mcfusion.engine`)."""
        from .engine import MergeEngine

        truth = self.truth if truth is None else truth
        key = (id(truth), None if users is None else tuple(users))
        eng = self._cache.get(key)
        if eng is None:
            eng = MergeEngine(self, truth, users)
            self._cache[key] = eng
        return eng

    def with_truth(self, truth):
        return replace(self, truth=truth, _cache={})

    def subset_users(self, users):
        users = tuple(users)
        chans = tuple(
            ChannelRanking(c.channel_id, c.name, {u: c.lists[u] for u in users},
                           {u: c.pad_flags.get(u, 0) for u in users})
            for c in self.channels)
        return replace(self, channels=chans, users=users, _cache={})


# --------------------------------------------------------------------------
# JSON Lines readers
# --------------------------------------------------------------------------

def read_jsonl(path):
    """Yield ``(lineno, obj)`` for every non-blank line; raise ParseError on bad JSON."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ParseError(path, lineno, "expected a JSON object")
            yield lineno, obj


def _str_list(path, lineno, obj, key):
    val = obj.get(key)
    if not isinstance(val, list) or not all(isinstance(x, str) for x in val):
        raise ParseError(path, lineno, f"{key!r} must be a list of strings")
    return val


def _user(path, lineno, obj):
    u = obj.get("user")
    if not isinstance(u, str):
        raise ParseError(path, lineno, "'user' must be a string")
    return u


def _read_channel(path, channel_id, name):
    lists, flags = {}, {}
    for lineno, obj in read_jsonl(path):
        u = _user(path, lineno, obj)
        items = _str_list(path, lineno, obj, "items")
        if u in lists:
            raise ParseError(path, lineno, f"user {u!r} listed twice")
        if len(set(items)) != len(items):
            dup = next(i for i, c in Counter(items).items() if c > 1)
            raise ValidationError(f"channel {name!r}, user {u!r}: duplicate item {dup!r}")
        padded = obj.get("padded", 0)
        if not isinstance(padded, int) or not 0 <= padded <= len(items):
            raise ParseError(path, lineno, "'padded' must be an integer in [0, len(items)]")
        lists[u] = tuple(items)
        flags[u] = padded
    return ChannelRanking(channel_id, name, lists, flags)


def _read_truth(path):
    rel = {}
    for lineno, obj in read_jsonl(path):
        u = _user(path, lineno, obj)
        items = _str_list(path, lineno, obj, "relevant")
        if u in rel:
            raise ParseError(path, lineno, f"user {u!r} listed twice")
        rel[u] = frozenset(items)
    return GroundTruth(rel)


def _read_embeddings(path):
    users, items, dim = {}, {}, None
    for lineno, obj in read_jsonl(path):
        key, kind, vec = obj.get("id"), obj.get("kind"), obj.get("vec")
        if not isinstance(key, str) or kind not in ("user", "item"):
            raise ParseError(path, lineno, "expected 'id' string and 'kind' in {user, item}")
        if not isinstance(vec, list) or not all(isinstance(x, (int, float)) for x in vec):
            raise ParseError(path, lineno, "'vec' must be a list of numbers")
        if dim is None:
            dim = len(vec)
        elif len(vec) != dim:
            raise ValidationError(
                f"{path}:{lineno}: embedding {key!r} has dimension {len(vec)}, expected {dim}")
        (users if kind == "user" else items)[key] = vec
    if dim is None:
        raise ValidationError(f"{path}: no embeddings found")
    return EmbeddingTable(dim, users, items)


def load_dataset(rankings_paths, truth_path, embeddings_path=None, *, strict=False,
                 train_truth_path=None, names=None, item_universe_size=0):
    """Load channel rankings plus ground truth into a validated :class:`Dataset`.

    Channel names default to the file stems. Users missing from some channel
    are dropped (``strict=False``) or rejected (``strict=True``); users
    without any relevant item and ground-truth users absent from the
    channels are dropped and counted in ``ds.report``.
    """
    paths = [Path(p) for p in rankings_paths]
    if not paths:
        raise ValidationError("at least one channel file is required")
    names = list(names) if names is not None else [p.stem for p in paths]
    if len(set(names)) != len(names):
        raise ValidationError(f"channel names must be unique: {names}")
    channels = [_read_channel(p, k, n) for k, (p, n) in enumerate(zip(paths, names))]
    truth = _read_truth(truth_path)
    train = _read_truth(train_truth_path) if train_truth_path else None
    emb = _read_embeddings(embeddings_path) if embeddings_path else None

    user_sets = [set(c.lists) for c in channels]
    union = set().union(*user_sets)
    common = set.intersection(*user_sets)
    if strict and common != union:
        bad = next(c.name for c, s in zip(channels, user_sets) if s != union)
        raise ValidationError(f"channel {bad!r} does not cover the same user set as the others")
    keep = {u for u in common if truth.get(u)}
    report = LoadReport(
        truth_users_without_channels=sum(1 for u in truth.relevant if u not in union),
        channel_users_without_truth=sum(1 for u in common if not truth.get(u)),
        users_dropped_by_intersection=len(union - common),
    )
    for msg in report.warnings():
        logger.warning(msg)
    users = tuple(sorted(keep))
    if not users:
        raise ValidationError("no user has both channel lists and relevant items")
    channels = tuple(
        ChannelRanking(c.channel_id, c.name, {u: c.lists[u] for u in users},
                       {u: c.pad_flags[u] for u in users})
        for c in channels)
    truth = GroundTruth({u: truth[u] for u in users})
    if train is not None:
        train = GroundTruth({u: train.get(u) for u in users})
    return Dataset(channels, truth, emb, users, item_universe_size, train, report)


def load_manifest(path):
    """Load a dataset described by a ``manifest.json`` (file or containing directory)."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        man = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read manifest {path}: {exc}") from None
    base = path.parent

    def rel(p):
        return None if p is None else base / p

    return load_dataset(
        [rel(p) for p in man["channels"]], rel(man["truth"]), rel(man.get("embeddings")),
        train_truth_path=rel(man.get("train_truth")), names=man.get("channel_names"),
        item_universe_size=man.get("item_universe_size", 0), strict=man.get("strict", False))


def _write_jsonl(path, rows):
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def save_dataset(ds, directory):
    """Write ``ds`` in the JSON Lines formats :func:`load_dataset` reads.

    Returns the path of the ``manifest.json`` tying the files together.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    chan_files = []
    for k, ch in enumerate(ds.channels):
        fname = f"channel_{k:02d}.jsonl"
        rows = []
        for u in ds.users:
            row = {"user": u, "items": list(ch.lists[u])}
            if ch.pad_flags.get(u):
                row["padded"] = ch.pad_flags[u]
            rows.append(row)
        _write_jsonl(out / fname, rows)
        chan_files.append(fname)
    _write_jsonl(out / "truth.jsonl",
                 ({"user": u, "relevant": sorted(ds.truth[u])} for u in ds.users))
    man = {"channels": chan_files, "channel_names": ds.channel_names, "truth": "truth.jsonl",
           "item_universe_size": ds.item_universe_size}
    if ds.train_truth is not None:
        _write_jsonl(out / "train_truth.jsonl",
                     ({"user": u, "relevant": sorted(ds.train_truth.get(u))} for u in ds.users))
        man["train_truth"] = "train_truth.jsonl"
    if ds.embeddings is not None:
        emb = ds.embeddings
        rows = [{"id": u, "kind": "user", "vec": [float(x) for x in emb.user_vecs[u]]}
                for u in sorted(emb.user_vecs)]
        rows += [{"id": i, "kind": "item", "vec": [float(x) for x in emb.item_vecs[i]]}
                 for i in sorted(emb.item_vecs)]
        _write_jsonl(out / "embeddings.jsonl", rows)
        man["embeddings"] = "embeddings.jsonl"
    (out / "manifest.json").write_text(json.dumps(man, indent=2), encoding="utf-8")
    return out / "manifest.json"


# --------------------------------------------------------------------------
# Padding
# --------------------------------------------------------------------------

def popularity_order(ds, truth=None):
    """All known items, most frequent in the (training) ground truth first.

    Ties fall back to how often the channels retrieve the item, then item id.
    """
    truth = ds.fit_truth if truth is None else truth
    in_truth = Counter(i for items in truth.relevant.values() for i in items)
    in_lists = Counter(i for ch in ds.channels for items in ch.lists.values() for i in items)
    return sorted(ds.item_ids, key=lambda i: (-in_truth[i], -in_lists[i], i))


def pad_channels(ds, fallback_order):
    """Extend every list to the longest depth with unused fallback items, in order."""
    fallback = list(fallback_order)
    if len(set(fallback)) != len(fallback):
        raise ValidationError("fallback order contains duplicates")
    C = ds.depth
    channels = []
    for ch in ds.channels:
        lists, flags = {}, {}
        for u in ds.users:
            items = list(ch.lists[u])
            need = C - len(items)
            added = 0
            if need > 0:
                present = set(items)
                for item in fallback:
                    if added == need:
                        break
                    if item not in present:
                        items.append(item)
                        added += 1
                if added < need:
                    raise ExhaustedError(
                        f"fallback exhausted padding channel {ch.name!r}, user {u!r} "
                        f"({len(items)} of {C} items)")
            lists[u] = tuple(items)
            flags[u] = ch.pad_flags.get(u, 0) + added
        channels.append(ChannelRanking(ch.channel_id, ch.name, lists, flags))
    return replace(ds, channels=tuple(channels), _cache={})


# --------------------------------------------------------------------------
# Validation report
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Issue:
    severity: str  # "error" | "warning"
    message: str


@dataclass
class ValidationReport:
    issues: list
    channel_depth: dict
    user_count: int
    pad_fraction: float
    truth_coverage: float

    @property
    def errors(self):
        return [i for i in self.issues if i.severity == "error"]

    @property
    def warnings(self):
        return [i for i in self.issues if i.severity == "warning"]

    @property
    def ok(self):
        return not self.errors

    def to_dict(self):
        return {
            "ok": self.ok,
            "user_count": self.user_count,
            "channel_depth": self.channel_depth,
            "pad_fraction": self.pad_fraction,
            "truth_coverage": self.truth_coverage,
            "issues": [{"severity": i.severity, "message": i.message} for i in self.issues],
        }


def validate_dataset(ds, strict=False):
    """Check every dataset invariant, reporting violations instead of raising."""
    issues = []

    def add(sev, msg):
        issues.append(Issue(sev, msg))

    if ds.K < 1:
        add("error", "dataset has no channels")
    if ds.N < 1:
        add("error", "dataset has no users")
    users = set(ds.users)
    depths, total, padded = {}, 0, 0
    C = ds.depth
    for ch in ds.channels:
        lens = [len(v) for v in ch.lists.values()]
        depths[ch.name] = {"min": min(lens, default=0), "max": max(lens, default=0)}
        if set(ch.lists) != users:
            add("error" if strict else "warning",
                f"channel {ch.name!r} user set differs from the dataset user set")
        for u, items in ch.lists.items():
            if len(set(items)) != len(items):
                add("error", f"channel {ch.name!r}, user {u!r}: duplicate items")
            flag = ch.pad_flags.get(u, 0)
            if flag > len(items):
                add("error", f"channel {ch.name!r}, user {u!r}: pad flag {flag} exceeds list length")
            total += len(items)
            padded += flag
        if lens and min(lens) != C:
            add("warning", f"channel {ch.name!r} has lists shorter than depth {C}; pad before merging")
    covered = sum(1 for u in ds.users if ds.truth.get(u))
    for u in ds.users:
        if not ds.truth.get(u):
            add("error", f"user {u!r} has no relevant items")
    if ds.embeddings is not None:
        missing = [u for u in ds.users if u not in ds.embeddings.user_vecs]
        if missing:
            add("warning", f"{len(missing)} users lack embeddings (first: {missing[0]!r})")
    for msg in ds.report.warnings():
        add("warning", msg)
    return ValidationReport(
        issues=issues,
        channel_depth=depths,
        user_count=ds.N,
        pad_fraction=padded / total if total else 0.0,
        truth_coverage=covered / ds.N if ds.N else 0.0,
    )
