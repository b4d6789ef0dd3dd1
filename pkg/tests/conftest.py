from __future__ import annotations

import numpy as np
import pytest

from mcfusion.ingest import ChannelRanking, Dataset, EmbeddingTable, GroundTruth
from mcfusion.synth import generate_benchmark, preset

# criterion number -> PASS/FAIL line, filled by test_acceptance
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])


def make_ds(channels, truth, names=None, embeddings=None, train=None, universe=0):
    """Dataset from ``channels[k] = {user: [items]}`` and ``truth = {user: [items]}``."""
    users = tuple(sorted(channels[0]))
    chans = tuple(
        ChannelRanking(k, names[k] if names else f"c{k}", {u: tuple(ch[u]) for u in users})
        for k, ch in enumerate(channels))
    return Dataset(chans, GroundTruth(truth), embeddings, users, universe,
                   GroundTruth(train) if train is not None else None)


def random_instance(rng, max_users=20, max_K=3, max_L=10, sufficient=False):
    """Small random padded dataset with heavy item overlap across channels.

    Returns ``(ds, channel_lists, truth, L)``.
    """
    n = int(rng.integers(1, max_users + 1))
    K = int(rng.integers(1, max_K + 1))
    C = int(rng.integers(1, 9))
    pool = int(rng.integers(C, C + 12))
    items = [f"i{j}" for j in range(pool)]
    users = [f"u{j:02d}" for j in range(n)]
    lists = [{u: [items[j] for j in rng.permutation(pool)[:C]] for u in users} for _ in range(K)]
    truth = {u: [items[j] for j in rng.choice(pool, size=int(rng.integers(1, pool + 1)), replace=False)]
             for u in users}
    ds = make_ds(lists, truth)
    if sufficient:
        distinct = min(len({i for ch in lists for i in ch[u]}) for u in users)
        L = int(rng.integers(1, min(max_L, distinct) + 1))
    else:
        L = int(rng.integers(1, min(max_L, K * C) + 1))
    return ds, lists, truth, L


def random_simplex(rng, K, sparse=True):
    w = rng.dirichlet(np.full(K, 0.7))
    if sparse and K > 1 and rng.random() < 0.3:
        w[rng.integers(K)] = 0.0
        w = w / w.sum()
    return w


@pytest.fixture
def merge_fixture():
    """Channels A and B from the documented overlap example."""
    A = ["i1", "i2", "i4", "i6"]
    B = ["i1", "i3", "i5", "i7"]
    return make_ds([{"u1": A}, {"u1": B}], {"u1": ["i1", "i3"]}, names=["A", "B"])


@pytest.fixture
def embedded_fixture():
    """Two users, three channels, hand-set embeddings (d=2)."""
    lists = [
        {"u1": ["a", "b", "c"], "u2": ["b", "a", "d"]},
        {"u1": ["d", "e", "a"], "u2": ["e", "d", "c"]},
        {"u1": ["c", "a", "e"], "u2": ["a", "c", "b"]},
    ]
    truth = {"u1": ["a", "d"], "u2": ["c"]}
    train = {"u1": ["a", "e"], "u2": ["b", "c"]}
    vec = {"a": [1.0, 0.0], "b": [0.0, 1.0], "c": [1.0, 1.0], "d": [-1.0, 2.0], "e": [0.5, -0.5]}
    emb = EmbeddingTable(2, {"u1": np.array([1.0, 2.0]), "u2": np.array([-1.0, 0.5])},
                         {k: np.array(v) for k, v in vec.items()})
    return make_ds(lists, truth, embeddings=emb, train=train)


@pytest.fixture(scope="session")
def dominant_ds():
    return generate_benchmark(preset("dominant-channel", 0))


@pytest.fixture(scope="session")
def two_segment_ds():
    return generate_benchmark(preset("two-segment", 0))


@pytest.fixture(scope="session")
def uniform_ds():
    return generate_benchmark(preset("uniform-noise", 0))


@pytest.fixture(scope="session")
def small_synth():
    """A quick benchmark with embeddings, a training split and two segments."""
    from mcfusion.synth import ChannelProfile, SyntheticSpec

    spec = SyntheticSpec(n_users=60, n_items=400, K=3, depth=30, truth_size=8, train_size=8, d=6,
                         channel_profiles=(ChannelProfile(0.3), ChannelProfile(0.2),
                                           ChannelProfile(0.1, overlap_with=0, overlap_rate=0.5)),
                         segments=((0.5, 0), (0.5, 1)), master_seed=7)
    return generate_benchmark(spec)
