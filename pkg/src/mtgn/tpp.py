"""Log-normal mixture densities over inter-event intervals.

A mixture is stored row-batched: each of ``R`` rows holds ``K`` log-weights,
log-means and log-scales. Density functions accept intervals shaped ``(R,)``
or ``(R, S)`` (S samples per row) and return log-densities of the same shape.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import autodiff as ad
from .autodiff import Tensor
from .layers import MLP

LOG_SIGMA_MIN = math.log(1e-3)
LOG_SIGMA_MAX = math.log(1e3)
OUTSIDE_WINDOW = -1e30
_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
# window mass below this cannot be sampled
MIN_WINDOW_MASS = 1e-12
# below this the renormalizing log-mass is meaningless
MIN_DENSITY_MASS = 1e-300


class TruncationError(ValueError):
    """The truncation window holds (numerically) no probability mass."""


@dataclass
class MixtureParams:
    log_w: Tensor
    mu: Tensor
    log_sigma: Tensor

    @classmethod
    def from_arrays(cls, w, mu, sigma):
        w, mu, sigma = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (w, mu, sigma))
        if np.any(w < 0) or not np.allclose(w.sum(axis=-1), 1.0, atol=1e-9):
            raise ValueError("mixture weights must be a simplex")
        if np.any(sigma <= 0):
            raise ValueError("sigma must be positive")
        with np.errstate(divide="ignore"):
            return cls(Tensor(np.log(w)), Tensor(mu), Tensor(np.log(sigma)))

    @property
    def w(self):
        return np.exp(self.log_w.data)

    @property
    def sigma(self):
        return np.exp(self.log_sigma.data)

    @property
    def rows(self):
        return self.mu.shape[0]

    @property
    def K(self):
        return self.mu.shape[-1]

    def detach(self):
        return MixtureParams(self.log_w.detach(), self.mu.detach(), self.log_sigma.detach())

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        return MixtureParams(ad.gather_rows(self.log_w, idx), ad.gather_rows(self.mu, idx), ad.gather_rows(self.log_sigma, idx))


class MixtureHead:
    """Context -> (softmax weights, raw means, exp scales), one MLP per branch."""

    def __init__(self, store, name, in_dim, hidden, K):
        self.in_dim, self.K = in_dim, K
        self.w = MLP(store, f"{name}.w", in_dim, hidden, K)
        self.mu = MLP(store, f"{name}.mu", in_dim, hidden, K)
        self.sigma = MLP(store, f"{name}.sigma", in_dim, hidden, K)

    def __call__(self, context):
        if not np.all(np.isfinite(context.data)):
            raise ad.NumericFault("non-finite context passed to mixture head")
        return MixtureParams(
            ad.log_softmax(self.w(context)),
            self.mu(context),
            ad.clip(self.sigma(context), LOG_SIGMA_MIN, LOG_SIGMA_MAX),
        )


def _broadcast_params(p, ndim):
    if ndim == 1:
        return p.log_w, p.mu, p.log_sigma
    R, K = p.mu.shape
    return tuple(x.reshape(R, 1, K) for x in (p.log_w, p.mu, p.log_sigma))


def log_pdf(tau, p):
    """Mixture log-density at positive intervals ``tau`` (shape (R,) or (R, S))."""
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau <= 0):
        raise ValueError("log_pdf needs strictly positive intervals")
    log_w, mu, log_sigma = _broadcast_params(p, tau.ndim)
    x = np.log(tau)[..., None]
    z = (x - mu) / ad.exp(log_sigma)
    comp = log_w - log_sigma - 0.5 * ad.square(z) - (x + _HALF_LOG_2PI)
    return ad.logsumexp(comp, axis=-1)


def log_window_mass(p, upper):
    """log P(tau < upper) per row; ``upper`` is a scalar or (R,) array."""
    upper = np.broadcast_to(np.asarray(upper, dtype=np.float64), (p.rows,))
    if np.any(upper <= 0):
        raise ValueError("truncation upper bound must be positive")
    # infinite bounds become huge finite ones so the backward pass stays finite
    log_u = np.log(np.minimum(upper, 1e300))[:, None]
    a = (log_u - p.mu) / ad.exp(p.log_sigma)
    return ad.logsumexp(p.log_w + ad.log_ndtr(a), axis=-1)


def truncated_log_pdf(delta, p, upper, normalize=True):
    """Log-density restricted to ``(0, upper)``.

    With ``normalize`` the density is divided by the window mass so it
    integrates to one; points at or beyond ``upper`` get ``OUTSIDE_WINDOW``.
    """
    delta = np.asarray(delta, dtype=np.float64)
    upper_arr = np.broadcast_to(np.asarray(upper, dtype=np.float64), (p.rows,))
    bound = upper_arr if delta.ndim == 1 else upper_arr[:, None]
    inside = delta < bound
    safe = np.where(inside, delta, 1.0)
    lp = log_pdf(safe, p)
    if normalize:
        log_z = log_window_mass(p, upper_arr)
        if np.any(log_z.data < math.log(MIN_DENSITY_MASS)):
            raise TruncationError("window mass underflows; the truncation window is untrainable")
        lp = lp - (log_z if delta.ndim == 1 else log_z.reshape(-1, 1))
    return ad.mask_mul(lp, inside) + np.where(inside, 0.0, OUTSIDE_WINDOW)


def expectation(p):
    """Closed-form mean ``sum_k w_k exp(mu_k + sigma_k^2 / 2)`` per row."""
    expo = p.mu.data + 0.5 * p.sigma**2
    if np.any(expo > 700):
        warnings.warn("mixture expectation overflows; saturating exponent at 700", RuntimeWarning, stacklevel=2)
        expo = np.minimum(expo, 700.0)
    return np.sum(p.w * np.exp(expo), axis=-1)


def _pick_components(probs, rng, size):
    cdf = np.cumsum(probs, axis=-1)
    cdf[:, -1] = 1.0
    u = rng.random((probs.shape[0], size))
    return np.stack([np.searchsorted(cdf[r], u[r], side="right") for r in range(probs.shape[0])])


def sample(p, rng, size=1):
    """Ancestral draws: component from the weights, then a log-normal. Shape (R, size)."""
    k = _pick_components(p.w, rng, size)
    rows = np.arange(p.rows)[:, None]
    z = rng.standard_normal((p.rows, size))
    return np.exp(p.mu.data[rows, k] + p.sigma[rows, k] * z)


def sample_truncated(p, upper, rng, size=1):
    """Draws from the mixture restricted to ``(0, upper)``; shape (R, size).

    Components are re-weighted by their in-window mass, then sampled with a
    per-component inverse CDF computed in log space.
    """
    upper = np.broadcast_to(np.asarray(upper, dtype=np.float64), (p.rows,))
    with np.errstate(divide="ignore"):
        a = (np.log(upper)[:, None] - p.mu.data) / p.sigma
    log_mass = p.log_w.data + special.log_ndtr(a)
    log_z = special.logsumexp(log_mass, axis=-1, keepdims=True)
    if np.any(log_z < math.log(MIN_WINDOW_MASS)):
        raise TruncationError("window mass below 1e-12; cannot sample the truncated mixture")
    k = _pick_components(np.exp(log_mass - log_z), rng, size)
    rows = np.arange(p.rows)[:, None]
    u = rng.random((p.rows, size))
    # u in [0,1) -> avoid log(0)
    log_target = np.log(np.maximum(u, np.finfo(float).tiny)) + special.log_ndtr(a[rows, k])
    z = special.ndtri_exp(log_target)
    out = np.exp(p.mu.data[rows, k] + p.sigma[rows, k] * z)
    ub = upper[:, None]
    return np.clip(out, np.finfo(float).tiny, np.nextafter(ub, 0.0))


def categorical_kl(q, p):
    """KL(q || p) for probability vectors along the last axis (numpy)."""
    q, p = np.asarray(q, dtype=np.float64), np.asarray(p, dtype=np.float64)
    if q.shape != p.shape:
        raise ValueError(f"shape mismatch {q.shape} vs {p.shape}")
    if np.any((q > 0) & (p <= 0)):
        warnings.warn("q puts mass where p has none; KL is infinite", RuntimeWarning, stacklevel=2)
        return math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0, q * (np.log(q) - np.log(np.where(p > 0, p, 1.0))), 0.0)
    return terms.sum(axis=-1)


def categorical_kl_logits(log_q, log_p):
    """Differentiable KL(q || p) from log-probabilities, summed over the last axis."""
    return (ad.exp(log_q) * (log_q - log_p)).sum(axis=-1)


def mc_kl(q, upper, p, n=10, rng=None, samples=None, normalize=True, score=False):
    """Monte-Carlo KL(q_trunc || p) per row, averaged over ``n`` draws from q.

    Samples are constants for differentiation; pass ``samples`` (R, n) to
    replay a previous draw. Returns ``(estimate, samples)``.

    With fixed samples the gradient reaching ``q`` is E_q[grad log q] = 0,
    i.e. pure noise. ``score=True`` adds the score-function term
    ``(log q - log p - b) grad log q`` with a leave-one-out baseline ``b``;
    it has value zero, so the estimate itself is unchanged.
    """
    if samples is None:
        if n < 1:
            raise ValueError("mc_kl needs n >= 1")
        samples = sample_truncated(q.detach(), upper, rng, size=n)
    lq = truncated_log_pdf(samples, q, upper, normalize=normalize)
    lp = log_pdf(samples, p)
    est = lq - lp
    if score:
        diff = est.data
        m = diff.shape[-1]
        base = (diff.sum(axis=-1, keepdims=True) - diff) / (m - 1) if m > 1 else 0.0
        est = est + Tensor(diff - base) * (lq - lq.detach())
    return est.mean(axis=-1), samples


def lognormal_kl(mu_q, sigma_q, mu_p, sigma_p):
    """Closed-form KL between two single log-normals (equal to the normal KL)."""
    return math.log(sigma_p / sigma_q) + (sigma_q**2 + (mu_q - mu_p) ** 2) / (2 * sigma_p**2) - 0.5
