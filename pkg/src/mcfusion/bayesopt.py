"""Gaussian-process refinement of Dirichlet parameters around a CEM solution.

The search box is ``[0.5 * alpha, 1.5 * alpha]`` per dimension. Inputs are
rescaled to the unit box and scores standardized before fitting a
Matern-5/2 GP with median-heuristic length scales; the next query is the
best of a random candidate batch under Expected Improvement.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import erf

from .cem import _feasible, eval_subsample, make_objective, sample_stream
from .dirichlet import DirichletParams, mean_weights
from .errors import NumericalError, ValidationError
from .fusion import WeightVector

__all__ = [
    "GpModel",
    "BoConfig",
    "BoResult",
    "matern52",
    "fit_gp",
    "gp_posterior",
    "expected_improvement",
    "bo_optimize",
    "run_bayesopt",
]

JITTER = 1e-6
SQRT5 = math.sqrt(5.0)


def matern52(A, B, lengthscales, variance=1.0):
    """Matern-5/2 covariance between the rows of ``A`` and ``B``."""
    D = (A[:, None, :] - B[None, :, :]) / lengthscales
    r = np.sqrt(np.sum(D * D, axis=-1))
    return variance * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * np.exp(-SQRT5 * r)


def median_lengthscales(X):
    """Per-dimension median of pairwise absolute differences; 1.0 where undefined."""
    n, K = X.shape
    if n < 2:
        return np.ones(K)
    iu = np.triu_indices(n, 1)
    diffs = np.abs(X[:, None, :] - X[None, :, :])[iu]
    ls = np.median(diffs, axis=0)
    return np.where(ls > 0, ls, 1.0)


@dataclass
class GpModel:
    train_x: np.ndarray
    train_y: np.ndarray          # standardized
    lengthscales: np.ndarray
    variance: float = 1.0
    jitter: float = JITTER
    y_mean: float = 0.0
    y_std: float = 1.0
    chol: np.ndarray | None = None
    weights: np.ndarray | None = None   # (K + jitter I)^-1 y

    def destandardize(self, mu, var):
        return mu * self.y_std + self.y_mean, var * self.y_std ** 2


def fit_gp(X, y, variance=1.0, jitter=JITTER):
    """Fit on normalized inputs ``X`` (n, K) and raw scores ``y`` (n,)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.shape[0] != y.size:
        raise ValidationError("GP inputs and targets differ in length")
    if jitter < JITTER:
        raise ValidationError(f"jitter must be >= {JITTER}")
    n, K = X.shape
    mean = float(y.mean()) if n else 0.0
    std = float(y.std()) if n > 1 else 0.0
    std = std if std > 0 else 1.0
    ys = (y - mean) / std
    ls = median_lengthscales(X) if n else np.ones(K)
    model = GpModel(X, ys, ls, variance, jitter, mean, std)
    if n == 0:
        return model
    G = matern52(X, X, ls, variance)
    for _ in range(8):
        try:
            Lc = np.linalg.cholesky(G + model.jitter * np.eye(n))
            break
        except np.linalg.LinAlgError:
            model.jitter *= 10.0
    else:
        raise NumericalError("GP Gram matrix is not positive definite even with jitter")
    model.chol = Lc
    model.weights = solve_triangular(Lc.T, solve_triangular(Lc, ys, lower=True), lower=False)
    return model


def gp_posterior(model, x):
    """Standardized posterior ``(mu, var)`` at one point or a batch of rows."""
    if model is None:
        raise ValidationError("GP model is not fitted")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    Xq = np.atleast_2d(x)
    if model.train_x.shape[0] == 0:
        mu = np.zeros(Xq.shape[0])
        var = np.full(Xq.shape[0], model.variance)
    else:
        if model.chol is None:
            raise ValidationError("GP model is not fitted")
        Ks = matern52(Xq, model.train_x, model.lengthscales, model.variance)
        mu = Ks @ model.weights
        v = solve_triangular(model.chol, Ks.T, lower=True)
        var = np.maximum(model.variance - np.sum(v * v, axis=0), 0.0)
    if single:
        return float(mu[0]), float(var[0])
    return mu, var


def _phi(z):
    z = np.clip(z, -40.0, 40.0)  # density underflows to 0 well before this
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def _Phi(z):
    return 0.5 * (1.0 + erf(z / math.sqrt(2.0)))


def expected_improvement(mu, sigma, s_best):
    """EI for maximization; ``sigma`` is the posterior standard deviation."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise ValidationError("sigma must be non-negative")
    imp = mu - s_best
    safe = np.where(sigma > 0, sigma, 1.0)
    with np.errstate(over="ignore"):  # subnormal sigma: z -> +-inf is handled by Phi/phi
        z = imp / safe
    ei = np.where(sigma > 0, imp * _Phi(z) + sigma * _phi(z), np.maximum(imp, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


@dataclass
class BoConfig:
    T: int = 10
    n_init: int = 5
    n_candidates: int = 2048
    box_lo: list | None = None     # default 0.5 * alpha_cem
    box_hi: list | None = None     # default 1.5 * alpha_cem
    metric: str = "recall"
    master_seed: int = 0
    bounds: tuple | None = None
    eval_users: int | None = None
    threads: int = 1

    def box(self, alpha):
        a = alpha.alpha if isinstance(alpha, DirichletParams) else np.asarray(alpha, float)
        lo = 0.5 * a if self.box_lo is None else np.asarray(self.box_lo, float)
        hi = 1.5 * a if self.box_hi is None else np.asarray(self.box_hi, float)
        if lo.shape != a.shape or hi.shape != a.shape:
            raise ValidationError("box bounds must have one entry per channel")
        if np.any(lo <= 0) or np.any(lo >= hi):
            raise ValidationError("need 0 < box_lo < box_hi componentwise")
        return lo, hi

    def check(self):
        if self.T < 0 or self.n_init < 1 or self.n_candidates < 1:
            raise ValidationError("need T >= 0, n_init >= 1, n_candidates >= 1")


@dataclass
class BoResult:
    beta: DirichletParams
    weights: WeightVector
    best_score: float
    start_score: float
    trace: list = field(default_factory=list)

    def to_dict(self):
        return {"beta": self.beta.alpha.tolist(), "weights": self.weights.w.tolist(),
                "best_score": self.best_score, "start_score": self.start_score,
                "trace": self.trace}


def bo_optimize(score_beta, alpha_cem, cfg, checkpoint=None):
    """Refine ``alpha_cem`` against ``score_beta(beta_array) -> float``.

    Returns ``(best beta, best score, trace)``. The CEM point is scored
    first and wins ties, so the result never scores below it.
    """
    cfg.check()
    alpha_cem = alpha_cem if isinstance(alpha_cem, DirichletParams) else DirichletParams(alpha_cem)
    lo, hi = cfg.box(alpha_cem)
    K = lo.size
    span = hi - lo
    X, Y, B, trace = [], [], [], []

    def record(beta, ei, phase):
        try:
            s = float(score_beta(beta))
        except Exception:
            if checkpoint is not None:
                Path(checkpoint).write_text(json.dumps({"trace": trace, "partial": True}), encoding="utf-8")
            raise
        B.append(beta)
        X.append((beta - lo) / span)
        Y.append(s)
        trace.append({"call": len(trace), "phase": phase, "beta": beta.tolist(), "score": s, "ei": ei})

    a0 = np.clip(alpha_cem.alpha, lo, hi)
    record(a0, None, "start")
    if cfg.T > 0:
        rng = sample_stream(cfg.master_seed, 0)
        for _ in range(cfg.n_init - 1):
            record(lo + rng.random(K) * span, None, "init")
    for t in range(1, cfg.T + 1):
        model = fit_gp(np.array(X), np.array(Y))
        rng = sample_stream(cfg.master_seed, t)
        U = rng.random((cfg.n_candidates, K))
        mu, var = gp_posterior(model, U)
        s_best = (max(Y) - model.y_mean) / model.y_std
        ei = expected_improvement(mu, np.sqrt(var), s_best)
        j = int(np.argmax(ei))
        record(lo + U[j] * span, float(ei[j] * model.y_std), "ei")
    best = int(np.argmax(Y))
    return DirichletParams(B[best]), Y[best], trace


def run_bayesopt(ds, alpha_cem, cfg, L, checkpoint=None):
    """Refine CEM parameters on ``ds``; returns a :class:`BoResult`."""
    users = eval_subsample(ds, cfg.eval_users, cfg.master_seed)
    objective = make_objective(ds, L, cfg.metric, users, cfg.threads)

    def score_beta(beta):
        return objective(_feasible(mean_weights(DirichletParams(beta)), cfg.bounds))

    beta, best, trace = bo_optimize(score_beta, alpha_cem, cfg, checkpoint)
    w = WeightVector(_feasible(mean_weights(beta), cfg.bounds), cfg.bounds)
    return BoResult(beta, w, best, trace[0]["score"], trace)


def config_dict(cfg):
    return asdict(cfg)
