import filecmp

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcfusion.errors import ValidationError
from mcfusion.fusion import WeightVector
from mcfusion.ingest import save_dataset, validate_dataset
from mcfusion.metrics import evaluate_objective
from mcfusion.synth import PRESETS, ChannelProfile, SyntheticSpec, generate_benchmark, preset


def one_hot(K, k):
    w = np.zeros(K)
    w[k] = 1.0
    return WeightVector(w)


def small(**kw):
    base = dict(n_users=40, n_items=300, K=2, depth=20, truth_size=6, d=4,
                channel_profiles=(ChannelProfile(1.0), ChannelProfile(0.0)))
    base.update(kw)
    return SyntheticSpec(**base)


def test_perfect_and_empty_channels():
    ds = generate_benchmark(small())
    for u in ds.users:
        assert set(ds.channels[0].lists[u][:6]) == ds.truth[u]
        assert not set(ds.channels[1].lists[u]) & ds.truth[u]
    assert evaluate_objective(ds, one_hot(2, 0), 6) == 1.0
    assert evaluate_objective(ds, one_hot(2, 1), 6) == 0.0


def test_same_seed_is_byte_identical(tmp_path):
    spec = small(segments=((0.5, 1),), train_size=4)
    a = save_dataset(generate_benchmark(spec), tmp_path / "a").parent
    b = save_dataset(generate_benchmark(spec), tmp_path / "b").parent
    files = sorted(p.name for p in a.iterdir())
    match, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
    assert mismatch == [] and errors == [] and len(match) == len(files)


def test_different_seed_differs():
    a = generate_benchmark(small(master_seed=1))
    b = generate_benchmark(small(master_seed=2))
    assert a != b


@pytest.mark.parametrize("seed", range(5))
def test_segment_recall_gap(seed):
    ds = generate_benchmark(preset("two-segment", seed))
    seg = ds._cache["segments"]
    eng = ds.engine()
    L = 50
    for s, fav in enumerate((0, 1)):
        users = [u for u, g in zip(ds.users, seg) if g == s]
        other = 1 - fav
        r_fav = evaluate_objective(ds, one_hot(ds.K, fav), L, users=users)
        r_other = evaluate_objective(ds, one_hot(ds.K, other), L, users=users)
        assert r_fav - r_other >= 0.2
    assert eng.n == ds.N


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_validate_cleanly(name):
    ds = generate_benchmark(preset(name, 0, n_users=50))
    rep = validate_dataset(ds, strict=True)
    assert rep.errors == []
    assert rep.pad_fraction == 0.0
    C = ds.depth
    for ch in ds.channels:
        for items in ch.lists.values():
            assert len(items) == C == len(set(items))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 0.9), st.floats(0.01, 0.1))
def test_recall_monotone_in_quality(seed, q, dq):
    profiles = lambda qk: (ChannelProfile(qk), ChannelProfile(0.2))  # noqa: E731
    lo = generate_benchmark(small(channel_profiles=profiles(q), master_seed=seed))
    hi = generate_benchmark(small(channel_profiles=profiles(min(q + dq, 1.0)), master_seed=seed))
    assert evaluate_objective(hi, one_hot(2, 0), 20) >= evaluate_objective(lo, one_hot(2, 0), 20)


def test_train_split_is_disjoint_from_validation():
    ds = generate_benchmark(small(train_size=5))
    for u in ds.users:
        assert len(ds.train_truth[u]) == 5 and len(ds.truth[u]) == 6
        assert not ds.train_truth[u] & ds.truth[u]


def test_embeddings_cover_users_and_items():
    ds = generate_benchmark(small())
    assert ds.embeddings.dim == 4
    assert set(ds.embeddings.user_vecs) == set(ds.users)
    assert len(ds.embeddings.item_vecs) == ds.item_universe_size == 300


@pytest.mark.parametrize("kw", [dict(depth=400), dict(truth_size=290),
                                dict(channel_profiles=(ChannelProfile(1.5), ChannelProfile(0.0))),
                                dict(segments=((0.7, 0), (0.6, 1))), dict(segments=((0.5, 5),)),
                                dict(channel_profiles=(ChannelProfile(0.3, overlap_with=1), ChannelProfile(0.1)))])
def test_infeasible_specs(kw):
    with pytest.raises(ValidationError):
        small(**kw)


def test_preset_lookup_and_overrides():
    assert preset("uniform-noise", 3, n_users=10).n_users == 10
    assert preset("uniform-noise", 3).master_seed == 3
    with pytest.raises(ValidationError):
        preset("nope")


def test_spec_json_round_trip(tmp_path):
    spec = preset("two-segment", 4)
    import json
    (tmp_path / "s.json").write_text(json.dumps(spec.to_dict()))
    assert SyntheticSpec.from_json(tmp_path / "s.json") == spec
