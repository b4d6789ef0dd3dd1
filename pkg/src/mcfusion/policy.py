"""Personalized channel weights from a small user-state network.

The network maps a user state (user embedding, per-channel training
recall, pooled channel embeddings) to Dirichlet parameters:

    h_u  = relu(W_u u + b_u)
    h_ck = relu(W_c c_k + b_c)
    e_k  = h_u . h_ck + r_k
    a_k  = relu(delta * tanh(e_k)) + eps

Training samples weight vectors from Dirichlet(a), scores the merged sets
and follows the score-function gradient ``cost * grad log p(w | a)``
back through the network by hand. At inference a user's weights are the
Dirichlet mean.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import dirichlet
from .dirichlet import DirichletParams, log_pdf, log_pdf_grad_alpha
from .errors import NumericalError, ValidationError
from .fusion import PersonalizedWeights, WeightVector

__all__ = [
    "UserState",
    "StateBatch",
    "AlphaGeneratorParams",
    "PgConfig",
    "Momentum",
    "build_user_state",
    "build_states",
    "alpha_activation",
    "forward_alpha",
    "forward_batch",
    "backward_batch",
    "surrogate_loss",
    "surrogate_grad",
    "policy_grad_step",
    "train_pg",
    "infer_weights",
    "save_theta",
    "load_theta",
    "save_personalized",
]

logger = logging.getLogger(__name__)

PARAM_NAMES = ("W_u", "b_u", "W_c", "b_c")


@dataclass(frozen=True)
class UserState:
    u_vec: np.ndarray     # (d,)
    r_u: np.ndarray       # (K,)
    c_uk: np.ndarray      # (K, d)

    def __post_init__(self):
        for name in ("u_vec", "r_u", "c_uk"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(a)):
                raise ValidationError(f"user state {name} has non-finite entries")
            object.__setattr__(self, name, a)
        if np.any(self.r_u < 0) or np.any(self.r_u > 1):
            raise ValidationError("r_u entries must lie in [0, 1]")
        if self.c_uk.shape != (self.r_u.size, self.u_vec.size):
            raise ValidationError(f"c_uk shape {self.c_uk.shape} != (K, d) = ({self.r_u.size}, {self.u_vec.size})")


@dataclass
class StateBatch:
    """Stacked states: ``u`` (n, d), ``r`` (n, K), ``c`` (n, K, d)."""

    u: np.ndarray
    r: np.ndarray
    c: np.ndarray

    @classmethod
    def stack(cls, states):
        return cls(np.stack([s.u_vec for s in states]), np.stack([s.r_u for s in states]),
                   np.stack([s.c_uk for s in states]))

    def __len__(self):
        return self.u.shape[0]

    def take(self, idx):
        return StateBatch(self.u[idx], self.r[idx], self.c[idx])

    def state(self, i):
        return UserState(self.u[i], self.r[i], self.c[i])


def _item_vectors(ds, items):
    emb = ds.embeddings
    try:
        return np.stack([emb.item_vecs[i] for i in items])
    except KeyError as exc:
        raise ValidationError(f"no embedding for item {exc.args[0]!r}") from None


def build_user_state(ds, user, m=10):
    """State of one user: embedding, training-split channel recall, pooled top-m embeddings."""
    if ds.embeddings is None:
        raise ValidationError("dataset has no embeddings")
    try:
        u_vec = ds.embeddings.user_vecs[user]
    except KeyError:
        raise ValidationError(f"no embedding for user {user!r}") from None
    lists = [ch.lists[user] for ch in ds.channels]
    if any(len(lst) < m for lst in lists):
        raise ValidationError(f"user {user!r}: a channel list is shorter than m={m}")
    c = np.stack([_item_vectors(ds, lst[:m]).mean(axis=0) for lst in lists])
    rel = ds.fit_truth.get(user)
    r = np.array([sum(1 for i in lst if i in rel) / len(rel) if rel else 0.0 for lst in lists])
    return UserState(u_vec, r, c)


def build_states(ds, users=None, m=10):
    """Vectorized :func:`build_user_state` for many users as a :class:`StateBatch`."""
    if ds.embeddings is None:
        raise ValidationError("dataset has no embeddings")
    users = ds.users if users is None else tuple(users)
    ranked = ds.ranked
    if ranked.shape[2] < m:
        raise ValidationError(f"channel depth {ranked.shape[2]} is shorter than m={m}")
    rows = np.array([ds.user_index[u] for u in users], dtype=np.int64)
    item_ids = ds.item_ids
    table = _item_vectors(ds, item_ids)
    try:
        U = np.stack([ds.embeddings.user_vecs[u] for u in users])
    except KeyError as exc:
        raise ValidationError(f"no embedding for user {exc.args[0]!r}") from None
    C = table[ranked[rows, :, :m]].mean(axis=2)
    eng = ds.engine(ds.fit_truth, users)
    with np.errstate(invalid="ignore", divide="ignore"):
        R = eng.channel_hits() / eng.tsize[:, None]
    R = np.where(eng.tsize[:, None] > 0, R, 0.0)
    return StateBatch(U, R, C)


@dataclass
class AlphaGeneratorParams:
    W_u: np.ndarray
    b_u: np.ndarray
    W_c: np.ndarray
    b_c: np.ndarray
    delta: float = 10.0
    eps: float = 1e-6

    def __post_init__(self):
        if self.delta <= 0 or self.eps <= 0:
            raise ValidationError("delta and eps must be positive")
        h, d = np.shape(self.W_u)
        if np.shape(self.W_c) != (h, d) or np.shape(self.b_u) != (h,) or np.shape(self.b_c) != (h,):
            raise ValidationError("inconsistent AlphaGenerator parameter shapes")

    @property
    def h(self):
        return self.W_u.shape[0]

    @property
    def d(self):
        return self.W_u.shape[1]

    @classmethod
    def init(cls, d, h, rng, scale=0.1, delta=10.0, eps=1e-6):
        """Small Gaussian weights, zero biases: the network starts close to ``e = r``."""
        return cls(scale * rng.standard_normal((h, d)) / np.sqrt(d), np.zeros(h),
                   scale * rng.standard_normal((h, d)) / np.sqrt(d), np.zeros(h), delta, eps)

    @classmethod
    def zeros(cls, d, h, delta=10.0, eps=1e-6):
        return cls(np.zeros((h, d)), np.zeros(h), np.zeros((h, d)), np.zeros(h), delta, eps)

    def arrays(self):
        return [getattr(self, n) for n in PARAM_NAMES]

    def replace_arrays(self, arrays):
        return AlphaGeneratorParams(*arrays, delta=self.delta, eps=self.eps)

    def to_dict(self):
        doc = {n: np.asarray(getattr(self, n)).tolist() for n in PARAM_NAMES}
        doc.update(delta=self.delta, eps=self.eps, h=self.h, d=self.d)
        return doc

    @classmethod
    def from_dict(cls, doc):
        return cls(*(np.asarray(doc[n], dtype=np.float64) for n in PARAM_NAMES),
                   delta=doc.get("delta", 10.0), eps=doc.get("eps", 1e-6))

    def __eq__(self, other):
        if not isinstance(other, AlphaGeneratorParams):
            return NotImplemented
        return (self.delta == other.delta and self.eps == other.eps
                and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())))


def _check_finite(name, a):
    if not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(a))[0].tolist()
        raise NumericalError(f"non-finite value in layer {name} at index {bad}")


def alpha_activation(e, delta, eps):
    """``relu(delta * tanh(e)) + eps`` clamped to ``[eps, delta + eps]``; also returns ``tanh(e)``."""
    t = np.tanh(e)
    a = delta * t
    return np.clip(np.maximum(a, 0.0) + eps, eps, delta + eps), t, a


def forward_batch(theta, S):
    """Forward pass over a :class:`StateBatch`; returns ``(alpha, cache)``."""
    if S.u.shape[1] != theta.d:
        raise ValidationError(f"state dim {S.u.shape[1]} != network input dim {theta.d}")
    A_u = S.u @ theta.W_u.T + theta.b_u                       # (n, h)
    H_u = np.maximum(A_u, 0.0)
    A_c = S.c @ theta.W_c.T + theta.b_c                       # (n, K, h)
    H_c = np.maximum(A_c, 0.0)
    v = np.einsum("nh,nkh->nk", H_u, H_c)
    e = v + S.r
    alpha, t, a = alpha_activation(e, theta.delta, theta.eps)
    for name, arr in (("user", A_u), ("channel", A_c), ("score", e), ("alpha", alpha)):
        _check_finite(name, arr)
    return alpha, (S, A_u, H_u, A_c, H_c, t, a)


def forward_alpha(theta, s):
    alpha, _ = forward_batch(theta, StateBatch(s.u_vec[None], s.r_u[None], s.c_uk[None]))
    return DirichletParams(alpha[0])


def backward_batch(theta, cache, g_alpha):
    """Gradients of ``sum(g_alpha * alpha)`` with respect to every parameter array."""
    S, A_u, H_u, A_c, H_c, t, a = cache
    g_e = g_alpha * (a > 0) * theta.delta * (1.0 - t * t)     # relu'(0) := 0
    g_Hu = np.einsum("nk,nkh->nh", g_e, H_c)
    g_Hc = g_e[:, :, None] * H_u[:, None, :]
    g_Au = g_Hu * (A_u > 0)
    g_Ac = g_Hc * (A_c > 0)
    return [g_Au.T @ S.u, g_Au.sum(axis=0),
            np.einsum("nkh,nkd->hd", g_Ac, S.c), g_Ac.sum(axis=(0, 1))]


def _pair_alpha(alpha, n_samples):
    return np.repeat(alpha, n_samples, axis=0)


def surrogate_loss(theta, S, W, costs):
    """Frozen-sample surrogate ``mean(cost * log p(w | alpha(theta)))``.

    ``W`` holds ``n * n_samples`` weight vectors grouped by user; ``costs``
    one scalar per vector. Its gradient is the score-function estimate.
    """
    alpha, _ = forward_batch(theta, S)
    A = _pair_alpha(alpha, W.shape[0] // alpha.shape[0])
    return float(np.mean(np.asarray(costs) * log_pdf(A, W)))


def _alpha_grad(alpha, W, costs):
    n, K = alpha.shape
    n_samples = W.shape[0] // n
    g = log_pdf_grad_alpha(_pair_alpha(alpha, n_samples), W)
    g = np.asarray(costs)[:, None] * g / W.shape[0]
    return g.reshape(n, n_samples, K).sum(axis=1)


def surrogate_grad(theta, S, W, costs):
    """Analytic gradient of :func:`surrogate_loss` (list of arrays in ``PARAM_NAMES`` order)."""
    alpha, cache = forward_batch(theta, S)
    return backward_batch(theta, cache, _alpha_grad(alpha, W, costs))


@dataclass
class PgConfig:
    eta2: float = 0.1
    momentum: float = 0.9
    lam: float = 1.0
    S: int = 1
    w_global: list | None = None
    batch_size: int = 16
    epochs: int = 60
    baseline_enabled: bool = True
    master_seed: int = 0
    m: int = 10
    h: int = 64
    delta: float = 10.0
    eps: float = 1e-6
    init_scale: float = 1.0
    clip_norm: float = 1.0
    metric: str = "recall"
    threads: int = 1

    def check(self, K=None):
        if self.lam < 0 or self.S < 1 or self.eta2 <= 0:
            raise ValidationError("need lam >= 0, S >= 1, eta2 > 0")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.m < 1 or self.h < 1:
            raise ValidationError("batch_size, m, h must be >= 1 and epochs >= 0")
        if self.w_global is None:
            raise ValidationError("PG needs the global weights w_global")
        if K is not None and len(self.global_vector()) != K:
            raise ValidationError(f"w_global has {len(self.global_vector())} entries, expected {K}")

    def global_vector(self):
        w = self.w_global
        return w.w if isinstance(w, WeightVector) else WeightVector(w).w

    def to_dict(self):
        doc = asdict(self)
        doc["w_global"] = None if self.w_global is None else self.global_vector().tolist()
        return doc

    @classmethod
    def from_dict(cls, doc):
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValidationError(f"unknown PG config fields {sorted(unknown)}")
        return cls(**doc)


@dataclass
class Momentum:
    """Heavy-ball velocity buffers, one per parameter array."""

    velocity: list = field(default_factory=list)

    def step(self, theta, grads, eta, beta):
        if not self.velocity:
            self.velocity = [np.zeros_like(g) for g in grads]
        self.velocity = [beta * v + g for v, g in zip(self.velocity, grads)]
        return theta.replace_arrays([p - eta * v for p, v in zip(theta.arrays(), self.velocity)])


def _rewards(eng, rows, W, L, metric, S, threads):
    return eng.user_scores(W, L, metric, rows=np.repeat(rows, S), threads=threads)


def policy_grad_step(theta, batch, cfg, ds, L, rng, optimizer=None, rows=None, engine=None):
    """One REINFORCE update on a batch of users.

    ``batch`` is a :class:`StateBatch` (or list of :class:`UserState`) whose
    users are ``rows`` of ``engine`` (default: the training-truth engine over
    all users, rows in order). Returns ``(theta, loss, mean reward)``; the
    loss is the mean per-sample cost ``-reward + lam * ||w - w_global||^2``.
    """
    S = batch if isinstance(batch, StateBatch) else StateBatch.stack(batch)
    n = len(S)
    eng = ds.engine(ds.fit_truth) if engine is None else engine
    rows = np.arange(n) if rows is None else np.asarray(rows)
    optimizer = Momentum() if optimizer is None else optimizer

    alpha, cache = forward_batch(theta, S)
    A = _pair_alpha(alpha, cfg.S)
    W = np.stack([dirichlet.sample(DirichletParams(a), rng) for a in A])
    reward = _rewards(eng, rows, W, L, cfg.metric, cfg.S, cfg.threads)
    penalty = np.sum((W - cfg.global_vector()) ** 2, axis=1)
    cost = -reward + cfg.lam * penalty
    centered = cost - cost.mean() if cfg.baseline_enabled else cost

    grads = backward_batch(theta, cache, _alpha_grad(alpha, W, centered))
    for name, gr in zip(PARAM_NAMES, grads):
        if not np.all(np.isfinite(gr)):
            raise NumericalError(f"non-finite gradient for {name}; step aborted")
    norm = np.sqrt(sum(float(np.sum(gr * gr)) for gr in grads))
    if cfg.clip_norm and norm > cfg.clip_norm:
        grads = [gr * (cfg.clip_norm / norm) for gr in grads]
    theta = optimizer.step(theta, grads, cfg.eta2, cfg.momentum)
    return theta, float(cost.mean()), float(reward.mean())


def infer_weights(theta, ds, states=None, users=None, m=10):
    """Per-user Dirichlet means as :class:`PersonalizedWeights`."""
    users = ds.users if users is None else tuple(users)
    S = build_states(ds, users, m) if states is None else states
    alpha, _ = forward_batch(theta, S)
    W = alpha / alpha.sum(axis=1, keepdims=True)
    return PersonalizedWeights({u: WeightVector.normalized(W[i]) for i, u in enumerate(users)})


def _mean_matrix(theta, S):
    alpha, _ = forward_batch(theta, S)
    return alpha / alpha.sum(axis=1, keepdims=True)


def train_pg(ds, cfg, L, log=None):
    """Train the network; returns the parameters with the best validation objective.

    Rewards use the training truth; selection uses the validation truth and
    considers the parameters after every epoch (not the initialization).
    ``log``, when a list, receives one record per epoch.
    """
    cfg.check(ds.K)
    S_all = build_states(ds, m=cfg.m)
    d = S_all.u.shape[1]
    theta = AlphaGeneratorParams.init(d, cfg.h, np.random.default_rng(
        np.random.SeedSequence(cfg.master_seed, spawn_key=(0,))), cfg.init_scale, cfg.delta, cfg.eps)
    train_eng = ds.engine(ds.fit_truth)
    val_eng = ds.engine(ds.truth)
    w_global = cfg.global_vector()
    opt = Momentum()
    best, best_score = theta, -np.inf
    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.master_seed, spawn_key=(1, epoch)))
        order = rng.permutation(ds.N)
        losses, rewards = [], []
        for b, start in enumerate(range(0, ds.N, cfg.batch_size)):
            rows = order[start:start + cfg.batch_size]
            srng = np.random.default_rng(np.random.SeedSequence(cfg.master_seed, spawn_key=(2, epoch, b)))
            theta, loss, rew = policy_grad_step(theta, S_all.take(rows), cfg, ds, L, srng, opt,
                                                rows, train_eng)
            losses.append(loss)
            rewards.append(rew)
        means = _mean_matrix(theta, S_all)
        score = val_eng.objective(means, L, cfg.metric, cfg.threads)
        if score > best_score:
            best, best_score = theta, score
        rec = {"epoch": epoch, "loss": float(np.mean(losses)), "reward": float(np.mean(rewards)),
               "validation": score,
               "distance_to_global": float(np.linalg.norm(means - w_global, axis=1).mean())}
        logger.debug("pg epoch %d: %s", epoch, rec)
        if log is not None:
            log.append(rec)
    return best


def save_theta(path, theta, cfg=None):
    doc = theta.to_dict()
    if cfg is not None:
        doc["config"] = cfg.to_dict()
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_theta(path):
    return AlphaGeneratorParams.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_personalized(path, weights):
    with Path(path).open("w", encoding="utf-8") as fh:
        for u, wv in weights.per_user.items():
            fh.write(json.dumps({"user": u, "weights": wv.w.tolist()}) + "\n")
