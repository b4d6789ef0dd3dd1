"""Cross Entropy Method over Dirichlet-distributed global channel weights.

Each iteration samples Q weight vectors from the current Dirichlet, scores
them with the fusion objective, refits a Dirichlet to the elite fraction
by maximum likelihood, and moves the sampler part of the way toward that
fit. The incumbent is the iterate whose mean weight vector scores best.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dirichlet
from .dirichlet import ALPHA_MIN, DirichletParams, fit_mle, mean_weights
from .errors import ValidationError
from .fusion import WeightVector, project_to_bounded_simplex

__all__ = [
    "CemConfig",
    "CemState",
    "select_elites",
    "update_params",
    "interpolate_params",
    "cem_optimize",
    "run_cem",
    "eval_subsample",
    "make_objective",
    "sample_stream",
]

logger = logging.getLogger(__name__)


@dataclass
class CemConfig:
    Q: int = 60
    q: float = 0.1
    eta1: float = 0.1
    eta1_decay: float = 0.95
    patience: int = 5
    max_iters: int = 50
    alpha0: list | None = None      # default: all ones
    metric: str = "recall"
    master_seed: int = 0
    bounds: tuple | None = None     # (w_min, w_max)
    eval_users: int | None = None   # fixed validation subsample size
    threads: int = 1

    @property
    def n_elite(self):
        # guard against 0.1 * 60 == 6.000000000000001
        return math.ceil(self.q * self.Q - 1e-9)

    def check(self, K=None):
        if self.Q < 2:
            raise ValidationError("CEM needs Q >= 2 samples per iteration")
        if not 0 < self.q <= 1:
            raise ValidationError("elite fraction q must lie in (0, 1]")
        if self.n_elite < 2:
            raise ValidationError(f"ceil(q*Q) = {self.n_elite} elites; the Dirichlet refit needs >= 2")
        if not 0 < self.eta1 <= 1:
            raise ValidationError("eta1 must lie in (0, 1]")
        if not 0 < self.eta1_decay <= 1:
            raise ValidationError("eta1_decay must lie in (0, 1]")
        if self.patience < 1 or self.max_iters < 0:
            raise ValidationError("patience must be >= 1 and max_iters >= 0")
        if K is not None and self.alpha0 is not None and len(self.alpha0) != K:
            raise ValidationError(f"alpha0 has {len(self.alpha0)} entries, expected {K}")

    def initial(self, K):
        return DirichletParams(np.ones(K) if self.alpha0 is None else np.asarray(self.alpha0, float))


@dataclass
class CemState:
    iter: int
    alpha: DirichletParams
    gamma: float
    best_score: float
    best_alpha: DirichletParams
    eta1: float
    stale: int = 0
    history: list = field(default_factory=list)

    def to_dict(self):
        return {
            "iteration": self.iter,
            "alpha": self.alpha.alpha.tolist(),
            "gamma": self.gamma,
            "best_score": self.best_score,
            "best_alpha": self.best_alpha.alpha.tolist(),
            "eta1": self.eta1,
            "stale": self.stale,
            # samples of iteration t come from streams keyed (seed, t, i): the
            # next iteration index is the whole RNG position
            "rng_position": self.iter + 1,
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["iteration"], DirichletParams(doc["alpha"]), doc["gamma"], doc["best_score"],
                   DirichletParams(doc["best_alpha"]), doc["eta1"], doc.get("stale", 0),
                   list(doc.get("history", [])))

    def write_history_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "mean", "best", "gamma", "incumbent"])
            for h in self.history:
                w.writerow([h["iter"], h["mean"], h["best"], h["gamma"], h["incumbent"]])


def select_elites(scores, q):
    """Threshold at the ``(Q - ceil(qQ) + 1)``-th smallest score; keep all ties."""
    s = np.asarray(scores, dtype=np.float64)
    n_elite = math.ceil(q * s.size - 1e-9)
    n_elite = min(max(n_elite, 1), s.size)
    gamma = float(np.sort(s)[s.size - n_elite])
    return gamma, np.flatnonzero(s >= gamma)


def update_params(alpha_t, alpha_star, eta1):
    a = alpha_t.alpha if isinstance(alpha_t, DirichletParams) else np.asarray(alpha_t, float)
    b = alpha_star.alpha if isinstance(alpha_star, DirichletParams) else np.asarray(alpha_star, float)
    return DirichletParams((1.0 - eta1) * a + eta1 * b)


def interpolate_params(alpha0, alpha_t, xi):
    """``xi * alpha0 + (1 - xi) * alpha_t``; xi = 0 gives the optimized parameters."""
    if not 0 <= xi <= 1:
        raise ValidationError(f"xi must lie in [0, 1], got {xi}")
    a0 = alpha0.alpha if isinstance(alpha0, DirichletParams) else np.asarray(alpha0, float)
    at = alpha_t.alpha if isinstance(alpha_t, DirichletParams) else np.asarray(alpha_t, float)
    return DirichletParams(xi * a0 + (1.0 - xi) * at)


def sample_stream(master_seed, *key):
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))


def _feasible(w, bounds):
    if bounds is None:
        return w
    return project_to_bounded_simplex(w, *bounds).w


def cem_optimize(objective, K, cfg, state=None, on_iteration=None):
    """Run CEM against any ``objective(weights) -> float``.

    ``state`` resumes from a checkpointed :class:`CemState`;
    ``on_iteration(state)`` is called after every completed iteration.
    """
    cfg.check(K)
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None

    def score_all(W):
        if pool is None:
            return np.array([objective(w) for w in W])
        return np.array(list(pool.map(objective, W)))

    try:
        if state is None:
            alpha0 = cfg.initial(K)
            s0 = objective(_feasible(mean_weights(alpha0), cfg.bounds))
            state = CemState(0, alpha0, float("nan"), s0, alpha0, cfg.eta1)
            state.history.append({"iter": 0, "mean": s0, "best": s0, "gamma": None,
                                  "incumbent": s0, "alpha": alpha0.alpha.tolist()})
        while state.iter < cfg.max_iters and state.stale < cfg.patience:
            t = state.iter + 1
            W = np.stack([_feasible(dirichlet.sample(state.alpha, sample_stream(cfg.master_seed, t, i)),
                                    cfg.bounds) for i in range(cfg.Q)])
            scores = score_all(W)
            gamma, elite = select_elites(scores, cfg.q)
            alpha_star = fit_mle(W[elite]).params.clamped(ALPHA_MIN)
            alpha = update_params(state.alpha, alpha_star, state.eta1).clamped(ALPHA_MIN)
            incumbent = objective(_feasible(mean_weights(alpha), cfg.bounds))
            state.iter, state.alpha, state.gamma = t, alpha, gamma
            if incumbent > state.best_score:
                state.best_score, state.best_alpha, state.stale = incumbent, alpha, 0
            else:
                state.stale += 1
                state.eta1 *= cfg.eta1_decay
            state.history.append({
                "iter": t, "mean": float(scores.mean()), "best": float(scores.max()),
                "gamma": gamma, "incumbent": incumbent, "alpha": alpha.alpha.tolist()})
            logger.debug("cem iter %d: mean %.5f best %.5f incumbent %.5f", t, scores.mean(),
                         scores.max(), incumbent)
            if on_iteration is not None:
                on_iteration(state)
    finally:
        if pool is not None:
            pool.shutdown()
    return state


def eval_subsample(ds, n, seed):
    """Fixed user subsample (sorted) used for every objective call of a run."""
    if n is None or n >= ds.N:
        return None
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xC0FFEE,)))
    idx = np.sort(rng.choice(ds.N, size=n, replace=False))
    return tuple(ds.users[i] for i in idx)


def make_objective(ds, L, metric="recall", users=None, threads=1):
    eng = ds.engine(users=users)
    return lambda w: eng.objective(w, L, metric, threads)


def run_cem(ds, cfg, L, checkpoint=None, resume=None):
    """Optimize global weights on ``ds``; returns ``(state, mean weights of best_alpha)``.

    ``checkpoint`` is a path rewritten after every iteration; ``resume`` a
    path to a previous checkpoint to continue from.
    """
    cfg.check(ds.K)
    users = eval_subsample(ds, cfg.eval_users, cfg.master_seed)
    objective = make_objective(ds, L, cfg.metric, users)
    state = None
    if resume is not None:
        state = CemState.from_dict(json.loads(Path(resume).read_text(encoding="utf-8")))

    def save(st):
        if checkpoint is not None:
            Path(checkpoint).write_text(json.dumps(st.to_dict()), encoding="utf-8")

    state = cem_optimize(objective, ds.K, cfg, state, on_iteration=save)
    w = WeightVector(_feasible(mean_weights(state.best_alpha), cfg.bounds), cfg.bounds)
    return state, w


def config_dict(cfg):
    return asdict(cfg)
