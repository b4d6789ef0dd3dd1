import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import mcfusion.policy as pol
from conftest import make_ds
from mcfusion.errors import NumericalError, ValidationError
from mcfusion.fusion import baseline_weights
from mcfusion.ingest import EmbeddingTable
from mcfusion.policy import (AlphaGeneratorParams, Momentum, PgConfig, StateBatch, UserState,
                             alpha_activation, build_states, build_user_state, forward_alpha, forward_batch,
                             infer_weights, load_theta, policy_grad_step, save_personalized,
                             save_theta, surrogate_grad, surrogate_loss, train_pg)

seeds = st.integers(0, 2**32 - 1)


def zero_theta(d=2, h=3, **kw):
    return AlphaGeneratorParams.zeros(d, h, **kw)


def state(r, d=2, u=None, c=None):
    K = len(r)
    return UserState(np.zeros(d) if u is None else u, np.asarray(r, float),
                     np.zeros((K, d)) if c is None else c)


# -- states ------------------------------------------------------------------------------

def test_user_state_validation():
    with pytest.raises(ValidationError):
        state([0.5, 1.5])
    with pytest.raises(ValidationError):
        UserState(np.zeros(2), np.array([0.5, 0.5]), np.zeros((3, 2)))
    with pytest.raises(ValidationError):
        UserState(np.array([np.nan, 0.0]), np.array([0.5]), np.zeros((1, 2)))


def test_state_pools_identical_embeddings():
    lists = [{"u": ["a", "b", "c"]}, {"u": ["c", "b", "a"]}]
    e = np.array([0.3, -1.2])
    emb = EmbeddingTable(2, {"u": np.ones(2)}, {i: e.copy() for i in "abc"})
    ds = make_ds(lists, {"u": ["a"]}, embeddings=emb)
    np.testing.assert_array_equal(build_user_state(ds, "u", m=3).c_uk, [e, e])


def test_state_m1_is_top_item(embedded_fixture):
    s = build_user_state(embedded_fixture, "u1", m=1)
    np.testing.assert_array_equal(s.c_uk, [[1.0, 0.0], [-1.0, 2.0], [1.0, 1.0]])


def test_state_hand_computed_fixture(embedded_fixture):
    s = build_user_state(embedded_fixture, "u1", m=2)
    # u1: ch0 top2 {a, b}, ch1 {d, e}, ch2 {c, a}
    np.testing.assert_allclose(s.c_uk, [[0.5, 0.5], [-0.25, 0.75], [1.0, 0.5]], atol=1e-12)
    # train truth {a, e}: ch0 holds a, ch1 holds e and a, ch2 holds a and e
    np.testing.assert_allclose(s.r_u, [0.5, 1.0, 1.0])
    np.testing.assert_array_equal(s.u_vec, [1.0, 2.0])


def test_vectorized_states_match_single(embedded_fixture, small_synth):
    for ds, m in ((embedded_fixture, 2), (small_synth, 10)):
        S = build_states(ds, m=m)
        for i, u in enumerate(ds.users):
            s = build_user_state(ds, u, m)
            np.testing.assert_allclose(S.c[i], s.c_uk, atol=1e-14)
            np.testing.assert_array_equal(S.r[i], s.r_u)
            np.testing.assert_array_equal(S.u[i], s.u_vec)


def test_state_missing_item_embedding_names_it():
    emb = EmbeddingTable(1, {"u": np.ones(1)}, {"a": np.ones(1)})
    ds = make_ds([{"u": ["a", "zz"]}], {"u": ["a"]}, embeddings=emb)
    with pytest.raises(ValidationError, match="'zz'"):
        build_user_state(ds, "u", m=2)
    with pytest.raises(ValidationError, match="'zz'"):
        build_states(ds, m=2)


def test_state_requires_embeddings(merge_fixture):
    with pytest.raises(ValidationError):
        build_user_state(merge_fixture, "u1", m=1)


# -- forward -------------------------------------------------------------------------------

def test_forward_zero_network():
    a = forward_alpha(zero_theta(), state([0.5, 0.5]))
    np.testing.assert_allclose(a.alpha, [4.621172] * 2, atol=1e-6)
    np.testing.assert_allclose(a.alpha, 10 * np.tanh(0.5) + 1e-6, rtol=1e-15)


def test_activation_floor_and_ceiling():
    alpha, _, _ = alpha_activation(np.array([-1.0, 0.0, 50.0]), 10.0, 1e-6)
    assert alpha.tolist() == [1e-6, 1e-6, 10 + 1e-6]


def test_forward_zero_score_hits_floor():
    # a positive user bias with zero channel layer gives v = 0; with r = 0, e = 0
    th = AlphaGeneratorParams(np.zeros((1, 2)), np.array([1.0]), np.zeros((1, 2)), np.array([0.0]))
    assert forward_alpha(th, state([0.0, 0.0])).alpha.tolist() == [1e-6, 1e-6]


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_score_is_never_negative(seed):
    # v is a dot product of two ReLU outputs and r >= 0, so alpha >= 10 tanh(r) + eps
    rng = np.random.default_rng(seed)
    th = AlphaGeneratorParams.init(3, 5, rng, scale=3.0)
    th = th.replace_arrays([th.W_u, rng.normal(size=5), th.W_c, rng.normal(size=5)])
    S = StateBatch(rng.normal(size=(4, 3)), rng.random((4, 2)), rng.normal(size=(4, 2, 3)))
    alpha, _ = forward_batch(th, S)
    assert np.all(alpha >= 10 * np.tanh(S.r) + 1e-6 - 1e-12)


def test_forward_saturates_at_ceiling():
    th = AlphaGeneratorParams(np.zeros((1, 2)), np.array([1e3]), np.zeros((1, 2)), np.array([1e3]))
    np.testing.assert_array_equal(forward_alpha(th, state([0.2, 0.9])).alpha, [10 + 1e-6] * 2)


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_forward_output_in_bounds(seed):
    rng = np.random.default_rng(seed)
    n, K, d, h = (int(x) for x in rng.integers(1, 6, size=4))
    th = AlphaGeneratorParams.init(d, h, rng, scale=float(rng.uniform(0.1, 5)),
                                   delta=float(rng.uniform(0.5, 20)), eps=float(rng.uniform(1e-8, 1e-2)))
    S = StateBatch(rng.normal(size=(n, d)), rng.random((n, K)), rng.normal(size=(n, K, d)))
    alpha, _ = forward_batch(th, S)
    assert np.all(alpha >= th.eps) and np.all(alpha <= th.delta + th.eps)


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_forward_non_finite_layer_raises():
    th = AlphaGeneratorParams(np.full((1, 2), 1e308), np.zeros(1), np.full((1, 2), 1e308), np.zeros(1))
    with pytest.raises(NumericalError, match="layer"):
        forward_alpha(th, state([0.5, 0.5], u=np.array([1e10, 1e10]), c=np.full((2, 2), 1e10)))


# -- gradients ------------------------------------------------------------------------------

def fd_fixture(seed=0):
    rng = np.random.default_rng(seed)
    n, K, d, h = 2, 3, 4, 4
    th = AlphaGeneratorParams.init(d, h, rng, scale=1.0)
    th = th.replace_arrays([a + (0.3 * rng.normal(size=a.shape) if a.ndim == 1 else 0) for a in th.arrays()])
    S = StateBatch(rng.normal(size=(n, d)), rng.random((n, K)), rng.normal(size=(n, K, d)))
    W = rng.dirichlet(np.ones(K), size=n)
    costs = -rng.random(n)
    return th, S, W, costs


def max_fd_error(th, S, W, costs, h=1e-6):
    grads = surrogate_grad(th, S, W, costs)
    worst = 0.0
    arrays = th.arrays()
    for j, (a, g) in enumerate(zip(arrays, grads)):
        for idx in np.ndindex(a.shape):
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[j][idx] += h
            minus[j][idx] -= h
            fd = (surrogate_loss(th.replace_arrays(plus), S, W, costs)
                  - surrogate_loss(th.replace_arrays(minus), S, W, costs)) / (2 * h)
            denom = max(abs(fd), abs(g[idx]), 1e-6)
            worst = max(worst, abs(fd - g[idx]) / denom)
    return worst


def test_frozen_sample_gradient_matches_finite_differences():
    for seed in range(5):
        assert max_fd_error(*fd_fixture(seed)) < 1e-3


def test_backward_exact_on_saturated_and_dead_units():
    th, S, W, costs = fd_fixture(1)
    # push some channel-layer units into the ReLU-off region
    th = th.replace_arrays([th.W_u, th.b_u, th.W_c, th.b_c - 2.0])
    assert max_fd_error(th, S, W, costs) < 1e-3


# -- policy step ------------------------------------------------------------------------------

@pytest.fixture
def tiny_ds():
    """Two users, identical channels: every sampled weight vector earns the same reward."""
    rng = np.random.default_rng(0)
    items = [f"i{j}" for j in range(12)]
    lists = {u: items[:10] for u in ("u1", "u2")}
    emb = EmbeddingTable(4, {u: rng.normal(size=4) for u in ("u1", "u2")},
                         {i: rng.normal(size=4) for i in items})
    return make_ds([lists, lists, lists], {"u1": ["i0", "i11"], "u2": ["i1", "i10"]}, embeddings=emb)


def test_identical_rewards_leave_theta_unchanged(tiny_ds):
    cfg = PgConfig(lam=0.0, w_global=[1 / 3] * 3, m=2, h=4)
    th = AlphaGeneratorParams.init(4, 4, np.random.default_rng(1), 1.0)
    S = build_states(tiny_ds, m=2)
    new, loss, reward = policy_grad_step(th, S, cfg, tiny_ds, 5, np.random.default_rng(2))
    assert reward == 0.5 and loss == -0.5
    assert new == th


def test_reward_shift_invariance_with_baseline(small_synth, monkeypatch):
    cfg = PgConfig(lam=0.3, w_global=[0.4, 0.4, 0.2], h=8, momentum=0.0, clip_norm=0)
    th = AlphaGeneratorParams.init(6, 8, np.random.default_rng(0), 1.0)
    S = build_states(small_synth).take(np.arange(12))
    base, _, _ = policy_grad_step(th, S, cfg, small_synth, 10, np.random.default_rng(5))
    real = pol._rewards
    monkeypatch.setattr(pol, "_rewards", lambda *a: real(*a) + 7.0)
    shifted, _, _ = policy_grad_step(th, S, cfg, small_synth, 10, np.random.default_rng(5))
    for a, b in zip(base.arrays(), shifted.arrays()):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_regularizer_vanishes_at_concentrated_global_mean(tiny_ds):
    # zero network with equal r gives equal alphas; a huge delta concentrates the samples
    th = AlphaGeneratorParams.zeros(4, 4, delta=1e5)
    S = StateBatch(np.zeros((2, 4)), np.full((2, 3), 0.5), np.zeros((2, 3, 4)))
    c0 = PgConfig(lam=0.0, w_global=[1 / 3] * 3, h=4, delta=1e5)
    c1 = PgConfig(lam=1.0, w_global=[1 / 3] * 3, h=4, delta=1e5)
    _, l0, _ = policy_grad_step(th, S, c0, tiny_ds, 5, np.random.default_rng(3))
    _, l1, _ = policy_grad_step(th, S, c1, tiny_ds, 5, np.random.default_rng(3))
    assert 0 <= l1 - l0 < 1e-4


def test_nan_gradient_aborts_step(small_synth, monkeypatch):
    cfg = PgConfig(w_global=[0.4, 0.4, 0.2], h=4)
    th = AlphaGeneratorParams.init(6, 4, np.random.default_rng(0))
    S = build_states(small_synth).take(np.arange(4))
    monkeypatch.setattr(pol, "_rewards", lambda *a: np.full(4, np.nan))
    with pytest.raises(NumericalError, match="gradient"):
        policy_grad_step(th, S, cfg, small_synth, 10, np.random.default_rng(0))


def test_momentum_accumulates():
    th = zero_theta(1, 1)
    opt = Momentum()
    g = [np.ones((1, 1)), np.ones(1), np.ones((1, 1)), np.ones(1)]
    th = opt.step(th, g, 0.1, 0.9)
    th = opt.step(th, g, 0.1, 0.9)
    np.testing.assert_allclose(th.W_u, [[-0.1 - 0.19]])


@pytest.mark.parametrize("kw", [dict(lam=-1), dict(S=0), dict(eta2=0), dict(w_global=None)])
def test_config_validation(kw):
    base = dict(w_global=[0.5, 0.5])
    base.update(kw)
    with pytest.raises(ValidationError):
        PgConfig(**base).check(2)


def test_config_round_trip():
    cfg = PgConfig(w_global=[0.25, 0.75], lam=5.0)
    assert PgConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValidationError):
        PgConfig.from_dict({"nope": 1})


# -- inference --------------------------------------------------------------------------------

def test_infer_weights_examples(embedded_fixture):
    r = np.arctanh(0.2)  # 10 * tanh(r) = 2
    S = StateBatch(np.zeros((2, 2)), np.full((2, 2), r), np.zeros((2, 2, 2)))
    ds2 = make_ds([{"u1": ["a"], "u2": ["a"]}] * 2, {"u1": ["a"], "u2": ["a"]})
    pw = infer_weights(zero_theta(), ds2, S)
    np.testing.assert_allclose(pw["u1"].w, [0.5, 0.5], atol=1e-15)
    assert pw["u1"] == pw["u2"]

    # one channel embedding lights up the dot product; the rest sit at the floor
    th = AlphaGeneratorParams(np.zeros((1, 2)), np.array([1e3]), np.array([[1e3, 0.0]]), np.zeros(1))
    c = np.array([[[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]])
    S3 = StateBatch(np.zeros((1, 2)), np.zeros((1, 3)), c)
    alpha, _ = forward_batch(th, S3)
    np.testing.assert_array_equal(alpha[0], [1e-6, 1e-6, 10 + 1e-6])
    ds3 = make_ds([{"u": ["a"]}] * 3, {"u": ["a"]})
    np.testing.assert_allclose(infer_weights(th, ds3, S3)["u"].w, [0, 0, 1], atol=1e-5)


def test_infer_weights_valid_for_every_user(small_synth):
    th = AlphaGeneratorParams.init(6, 16, np.random.default_rng(4), 2.0)
    pw = infer_weights(th, small_synth)
    assert set(pw.per_user) == set(small_synth.users)
    W = pw.matrix(small_synth.users)
    np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(W >= 0)


def test_theta_and_weights_files(tmp_path, small_synth):
    th = AlphaGeneratorParams.init(6, 8, np.random.default_rng(0))
    save_theta(tmp_path / "t.json", th, PgConfig(w_global=[0.4, 0.4, 0.2]))
    assert load_theta(tmp_path / "t.json") == th
    save_personalized(tmp_path / "p.jsonl", infer_weights(th, small_synth))
    rows = [json.loads(x) for x in (tmp_path / "p.jsonl").read_text().splitlines()]
    assert len(rows) == small_synth.N and set(rows[0]) == {"user", "weights"}


# -- training -----------------------------------------------------------------------------------

def test_training_is_deterministic(small_synth):
    cfg = PgConfig(w_global=[0.4, 0.4, 0.2], epochs=3, h=8)
    log_a, log_b = [], []
    a = train_pg(small_synth, cfg, 10, log_a)
    b = train_pg(small_synth, cfg, 10, log_b)
    assert a == b and log_a == log_b
    assert [r["epoch"] for r in log_a] == [1, 2, 3]
    assert train_pg(small_synth, PgConfig(w_global=[0.4, 0.4, 0.2], epochs=3, h=8, threads=3), 10) == a


def test_training_selects_best_validation_epoch(small_synth):
    log = []
    cfg = PgConfig(w_global=[0.4, 0.4, 0.2], epochs=5, h=8)
    best = train_pg(small_synth, cfg, 10, log)
    from mcfusion.metrics import evaluate_objective
    score = evaluate_objective(small_synth, infer_weights(best, small_synth), 10)
    assert score == max(r["validation"] for r in log)


@pytest.fixture(scope="module")
def lambda_sweep(uniform_ds):
    wg = baseline_weights(uniform_ds, "statistical").w
    S = build_states(uniform_ds)
    out = {}
    for lam in (0.5, 1.0, 5.0, 1e6):
        th = train_pg(uniform_ds, PgConfig(lam=lam, w_global=wg.tolist(), epochs=20), 50)
        out[lam] = infer_weights(th, uniform_ds, S).matrix(uniform_ds.users) - wg
    return out


def test_distance_to_global_shrinks_across_lambda_sweep(lambda_sweep):
    dist = [np.linalg.norm(D, axis=1).mean() for D in lambda_sweep.values()]
    assert all(b <= a for a, b in zip(dist, dist[1:]))
    assert dist[-1] < dist[0] / 2


def test_huge_lambda_pins_users_to_global_weights(lambda_sweep):
    within = np.abs(lambda_sweep[1e6]).max(axis=1) <= 0.05
    assert within.mean() >= 0.95
