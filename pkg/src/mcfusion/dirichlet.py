"""Dirichlet distribution over channel weight vectors.

Sampling, log-density, its gradient with respect to the concentration
vector, the distribution mean, and maximum-likelihood fitting from a cloud
of simplex points (used to refit the sampler to elite weight vectors).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .special import digamma, gammaln, inv_digamma

__all__ = [
    "ALPHA_MIN",
    "ALPHA_MAX",
    "W_MIN",
    "DirichletParams",
    "DirichletFit",
    "sample",
    "log_pdf",
    "log_pdf_grad_alpha",
    "mean_weights",
    "fit_mle",
]

#: Lower clamp for fitted concentrations.
ALPHA_MIN = 1e-3
#: Upper clamp; a zero-variance sample cloud drives the MLE here.
ALPHA_MAX = 1e6
#: Weight components are clamped to this before taking logs.
W_MIN = 1e-12


@dataclass(frozen=True)
class DirichletParams:
    """Strictly positive, finite concentration vector."""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.array(self.alpha, dtype=np.float64).reshape(-1)
        if a.size == 0 or not np.all(np.isfinite(a)) or np.any(a <= 0):
            raise ValidationError(f"Dirichlet concentrations must be finite and > 0, got {a}")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @classmethod
    def ones(cls, k):
        return cls(np.ones(k))

    @property
    def k(self):
        return self.alpha.size

    def clamped(self, lo=ALPHA_MIN, hi=ALPHA_MAX):
        return DirichletParams(np.clip(self.alpha, lo, hi))

    def to_json(self):
        return json.dumps([float(a) for a in self.alpha])

    @classmethod
    def from_json(cls, text):
        return cls(np.asarray(json.loads(text), dtype=np.float64))

    def __eq__(self, other):
        if not isinstance(other, DirichletParams):
            return NotImplemented
        return np.array_equal(self.alpha, other.alpha)

    def __hash__(self):
        return hash(self.alpha.tobytes())


def _alpha(params):
    if isinstance(params, DirichletParams):
        return params.alpha
    return np.asarray(params, dtype=np.float64)


def sample(params, rng, size=None):
    """Draw weight vectors from ``Dirichlet(alpha)``.

    Each draw normalizes K independent ``Gamma(alpha_k, 1)`` variates. For
    ``alpha_k >= 1`` numpy's Marsaglia-Tsang squeeze sampler is used
    directly; for ``alpha_k < 1`` the variate is boosted,
    ``G(a) = G(a + 1) * U**(1/a)``. Normalization happens in log space so
    that very small concentrations (``U**(1/a)`` underflows) still yield a
    valid point on the simplex.

    Returns shape ``(K,)`` when ``size`` is None, else ``(size, K)``.
    """
    alpha = _alpha(params)
    n = 1 if size is None else int(size)
    boost = alpha < 1.0
    shape = np.where(boost, alpha + 1.0, alpha)
    g = rng.standard_gamma(shape, size=(n, alpha.size))
    u = 1.0 - rng.random((n, alpha.size))
    with np.errstate(divide="ignore"):
        logg = np.log(g)
    logg = np.where(boost, logg + np.log(u) / alpha, logg)
    logg -= logg.max(axis=1, keepdims=True)
    w = np.exp(logg)
    w /= w.sum(axis=1, keepdims=True)
    return w[0] if size is None else w


def _log_norm(alpha):
    return gammaln(alpha.sum(axis=-1)) - gammaln(alpha).sum(axis=-1)


def log_pdf(params, w):
    """Log-density at ``w``; ``w`` may be a single vector or a batch ``(n, K)``."""
    alpha = _alpha(params)
    logw = np.log(np.maximum(np.asarray(w, dtype=np.float64), W_MIN))
    return _log_norm(alpha) + ((alpha - 1.0) * logw).sum(axis=-1)


def log_pdf_grad_alpha(params, w):
    """Gradient of :func:`log_pdf` with respect to the concentration vector.

    ``d/d alpha_i = psi(sum alpha) - psi(alpha_i) + log w_i``. Broadcasts
    over leading batch dimensions of either argument.
    """
    alpha = _alpha(params)
    logw = np.log(np.maximum(np.asarray(w, dtype=np.float64), W_MIN))
    total = alpha.sum(axis=-1, keepdims=True)
    return digamma(total) - digamma(alpha) + logw


def mean_weights(params):
    alpha = _alpha(params)
    return alpha / alpha.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class DirichletFit:
    params: DirichletParams
    converged: bool
    iterations: int


def _moment_start(w):
    m = w.mean(axis=0)
    v = w.var(axis=0)
    ok = v > 1e-300
    if not np.any(ok):
        return None
    precision = np.median(m[ok] * (1.0 - m[ok]) / v[ok] - 1.0)
    if not np.isfinite(precision) or precision <= 0:
        precision = 1.0
    return np.clip(precision * m, ALPHA_MIN, ALPHA_MAX)


def fit_mle(samples, max_iter=1000, tol=1e-8):
    """Maximum-likelihood concentration for a set of equally weighted simplex points.

    Moment matching gives the starting point; Minka's fixed point
    ``alpha_k <- inv_digamma(digamma(sum alpha) + mean(log w_k))`` then
    climbs the (concave) log-likelihood. Stops when the largest relative
    change falls below ``tol``. A degenerate (zero-variance) cloud has no
    finite maximizer: the iterate grows until ``ALPHA_MAX`` or the iteration
    cap and the result is flagged as not converged.
    """
    w = np.asarray(samples, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] < 2:
        raise ValidationError("fit_mle needs at least 2 samples")
    w = np.maximum(w, W_MIN)
    mean_log = np.log(w).mean(axis=0)

    alpha = _moment_start(w)
    if alpha is None:
        alpha = np.ones(w.shape[1])

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new = inv_digamma(digamma(alpha.sum()) + mean_log, x0=alpha)
        new = np.clip(new, ALPHA_MIN, ALPHA_MAX)
        rel = np.max(np.abs(new - alpha) / alpha)
        alpha = new
        if rel < tol:
            converged = True
            break
        if np.all(alpha >= ALPHA_MAX):
            break
    return DirichletFit(DirichletParams(alpha), converged, it)
