"""Scalar priors and likelihoods and the moments of their Gaussian-tilted densities.

For a prior ``p(x)`` the tilted density is ``q(x) ∝ p(x) exp(-L/2 (x - kappa)^2)``;
for a likelihood ``p(y|z)`` the same tilt is applied in ``z`` with ``y`` fixed.
Every channel here returns the mean and variance of ``q`` for arrays of
``kappa``/``L``. Conjugate and mixture channels use closed forms; the Laplace prior
and the probit likelihood have closed forms through truncated-normal moments, and
all channels can also be integrated with fixed-node Gauss-Hermite quadrature.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import expit, log_ndtr, logsumexp

from .errors import DomainError, NumericError

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class TiltedMoments(NamedTuple):
    mean: np.ndarray
    variance: np.ndarray


def _check_tilt(tilt):
    tilt = np.asarray(tilt, dtype=float)
    if np.any(~(tilt > 0)) or np.any(~np.isfinite(tilt)):
        raise DomainError("tilt precision must be finite and > 0")
    return tilt


def _mills(a):
    """phi(a) / Phi(a), stable for large negative ``a``."""
    return np.exp(-0.5 * a * a - _LOG_SQRT_2PI - log_ndtr(a))


_CF_SWITCH = -5.0
_CF_TERMS = 120


def _truncated_normal(a):
    """``(d, g)`` with ``r = phi(a)/Phi(a)``, ``d = a + r`` and ``g = 1 - r (a + r)``.

    For a standard normal conditioned on ``X > -a``, ``d`` is the mean of
    ``X + a`` and ``g`` the variance. Both cancel catastrophically in the lower
    tail, so for ``a < -5`` they come from the continued fraction
    ``Phi(-x)/phi(x) = 1/(x + t1)``, ``t_k = k/(x + t_{k+1})``, with ``x = -a``:
    ``d = t1`` and ``g = (t2 - t1)/(x + t2)``.
    """
    a = np.asarray(a, dtype=float)
    r = _mills(a)
    d = a + r
    g = 1.0 - r * d
    tail = a < _CF_SWITCH
    if np.any(tail):
        x = -a[tail]
        t = np.zeros_like(x)
        for k in range(_CF_TERMS, 1, -1):
            t = k / (x + t)
        t2 = t
        t1 = 1.0 / (x + t2)
        d = np.where(tail, 0.0, d)
        g = np.where(tail, 0.0, g)
        d[tail] = t1
        g[tail] = (t2 - t1) / (x + t2)
    return d, g


class Channel:
    """Base class for scalar channels; subclasses set ``name`` and ``role``."""

    name = ""
    role = ""  # "prior" or "likelihood"

    def log_factor(self, s, y=None):
        raise NotImplementedError

    def _exact(self, kappa, tilt, y):
        raise NotImplementedError

    def tilted_moments(self, kappa, tilt, y=None, method="exact", n_nodes=64):
        kappa = np.asarray(kappa, dtype=float)
        tilt = _check_tilt(tilt)
        if self.role == "likelihood":
            if y is None:
                raise DomainError(f"{self.name} likelihood needs observations y")
            y = self._check_y(np.asarray(y, dtype=float))
        if method == "exact":
            mean, var = self._exact(kappa, tilt, y)
        elif method == "quadrature":
            mean, var = gauss_hermite_moments(
                lambda s: self.log_factor(s, None if y is None else y[..., None]),
                kappa, tilt, n_nodes)
        else:
            raise ValueError(f"unknown method {method!r}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
            raise NumericError(f"{self.name}: non-finite tilted moments")
        return TiltedMoments(mean, var)

    def _check_y(self, y):
        return y

    def params(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GaussianPrior(Channel):
    mean: float = 0.0
    variance: float = 1.0
    name = "gaussian"
    role = "prior"

    def __post_init__(self):
        if not self.variance > 0:
            raise DomainError("gaussian prior variance must be > 0")

    @property
    def prior_mean(self):
        return self.mean

    @property
    def prior_variance(self):
        return self.variance

    def log_factor(self, s, y=None):
        return -0.5 * (s - self.mean) ** 2 / self.variance

    def _exact(self, kappa, tilt, y):
        prec = 1.0 / self.variance + tilt
        mean = (self.mean / self.variance + tilt * kappa) / prec
        return mean, np.broadcast_to(1.0 / prec, np.shape(mean)).copy()

    def sample(self, rng, size):
        return self.mean + np.sqrt(self.variance) * rng.standard_normal(size)


@dataclass(frozen=True)
class BernoulliGaussianPrior(Channel):
    """``(1 - sparsity) * delta_0 + sparsity * N(mean, variance)``."""

    sparsity: float = 0.1
    mean: float = 0.0
    variance: float = 1.0
    name = "bernoulli-gaussian"
    role = "prior"

    def __post_init__(self):
        if not 0 < self.sparsity <= 1:
            raise DomainError("sparsity must lie in (0, 1]")
        if not self.variance > 0:
            raise DomainError("bernoulli-gaussian variance must be > 0")

    @property
    def prior_mean(self):
        return self.sparsity * self.mean

    @property
    def prior_variance(self):
        r = self.sparsity
        return r * self.variance + r * (1 - r) * self.mean ** 2

    def log_factor(self, s, y=None):
        # the point mass is not representable as a density; quadrature only
        # sees the slab.
        raise DomainError("bernoulli-gaussian has no density; use method='exact'")

    def _exact(self, kappa, tilt, y):
        r, m0, v0 = self.sparsity, self.mean, self.variance
        cavity_var = 1.0 / tilt
        # log evidences of the spike and slab components, common constants dropped
        with np.errstate(divide="ignore"):
            log_spike = np.log1p(-r) - 0.5 * tilt * kappa ** 2 + 0.5 * np.log(tilt)
        log_slab = (np.log(r) - 0.5 * (kappa - m0) ** 2 / (v0 + cavity_var)
                    - 0.5 * np.log(v0 + cavity_var))
        w = expit(log_slab - log_spike)
        prec = 1.0 / v0 + tilt
        mu = (m0 / v0 + tilt * kappa) / prec
        mean = w * mu
        var = w / prec + w * (1.0 - w) * mu ** 2
        return mean, var

    def sample(self, rng, size):
        active = rng.random(size) < self.sparsity
        slab = self.mean + np.sqrt(self.variance) * rng.standard_normal(size)
        return np.where(active, slab, 0.0)


@dataclass(frozen=True)
class LaplacePrior(Channel):
    """``p(x) = rate/2 * exp(-rate |x|)``."""

    rate: float = 1.0
    name = "laplace"
    role = "prior"

    def __post_init__(self):
        if not self.rate > 0:
            raise DomainError("laplace rate must be > 0")

    prior_mean = 0.0

    @property
    def prior_variance(self):
        return 2.0 / self.rate ** 2

    def log_factor(self, s, y=None):
        return -self.rate * np.abs(s)

    def _exact(self, kappa, tilt, y):
        lam = self.rate
        sd = 1.0 / np.sqrt(tilt)
        # each half-line is a Gaussian N(mu, sd^2) truncated to that half-line
        mu_pos = kappa - lam / tilt
        mu_neg = kappa + lam / tilt
        a = mu_pos / sd
        b = -mu_neg / sd
        log_pos = -lam * kappa + log_ndtr(a)
        log_neg = lam * kappa + log_ndtr(b)
        w = expit(log_pos - log_neg)
        da, ga = _truncated_normal(a)
        db, gb = _truncated_normal(b)
        m_pos = sd * da
        m_neg = -sd * db
        v_pos = sd ** 2 * ga
        v_neg = sd ** 2 * gb
        mean = w * m_pos + (1.0 - w) * m_neg
        var = w * v_pos + (1.0 - w) * v_neg + w * (1.0 - w) * (m_pos - m_neg) ** 2
        return mean, var

    def sample(self, rng, size):
        return rng.laplace(0.0, 1.0 / self.rate, size)


@dataclass(frozen=True)
class AWGN(Channel):
    """``y = z + w`` with ``w ~ N(0, noise_var)``."""

    noise_var: float = 1.0
    name = "awgn"
    role = "likelihood"

    def __post_init__(self):
        if not self.noise_var >= 0:
            raise DomainError("noise variance must be >= 0")

    def log_factor(self, s, y=None):
        return -0.5 * (y - s) ** 2 / self.noise_var

    def _exact(self, kappa, tilt, y):
        if self.noise_var == 0:
            raise DomainError("noiseless awgn has a degenerate tilted density")
        prec = 1.0 / self.noise_var + tilt
        mean = (y / self.noise_var + tilt * kappa) / prec
        return mean, np.broadcast_to(1.0 / prec, np.shape(mean)).copy()

    def sample(self, rng, z):
        if self.noise_var == 0:
            return np.array(z, dtype=float, copy=True)
        return z + np.sqrt(self.noise_var) * rng.standard_normal(np.shape(z))


@dataclass(frozen=True)
class Probit(Channel):
    """``p(y|z) = Phi(y z / scale)`` with ``y in {-1, +1}``."""

    scale: float = 1.0
    name = "probit"
    role = "likelihood"

    def __post_init__(self):
        if not self.scale > 0:
            raise DomainError("probit scale must be > 0")

    def _check_y(self, y):
        if np.any(np.abs(y) != 1):
            raise DomainError("probit observations must be coded as -1/+1")
        return y

    def log_factor(self, s, y=None):
        return log_ndtr(y * s / self.scale)

    def _exact(self, kappa, tilt, y):
        v = 1.0 / tilt
        c2 = self.scale ** 2 + v
        c = np.sqrt(c2)
        u = y * kappa / c
        d, g = _truncated_normal(u)
        rho = v / c2
        # kappa + y v r / c with r = d - u, rearranged to avoid cancellation
        mean = kappa * (self.scale ** 2 / c2) + y * v * d / c
        var = v * ((1.0 - rho) + rho * g)
        return mean, var

    def sample(self, rng, z):
        noisy = z + self.scale * rng.standard_normal(np.shape(z))
        return np.where(noisy >= 0, 1.0, -1.0)


CATALOG = {
    "gaussian": GaussianPrior,
    "bernoulli-gaussian": BernoulliGaussianPrior,
    "laplace": LaplacePrior,
    "awgn": AWGN,
    "probit": Probit,
}


def make_channel(name: str, **params) -> Channel:
    try:
        cls = CATALOG[name]
    except KeyError:
        raise DomainError(f"unknown channel {name!r}; known: {sorted(CATALOG)}") from None
    return cls(**params)


def gauss_hermite_moments(log_factor, kappa, tilt, n_nodes=64):
    """Mean and variance of ``exp(log_factor(s)) N(s; kappa, 1/tilt)`` by Gauss-Hermite.

    Nodes are placed at ``kappa + t / sqrt(tilt)`` with probabilists' Hermite
    abscissae ``t``; weights are normalised in log space.
    """
    kappa = np.asarray(kappa, dtype=float)
    tilt = _check_tilt(tilt)
    t, w = hermegauss(n_nodes)
    kappa_b, tilt_b = np.broadcast_arrays(kappa, tilt)
    s = kappa_b[..., None] + t / np.sqrt(tilt_b)[..., None]
    logw = np.log(w) + log_factor(s)
    norm = logsumexp(logw, axis=-1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise NumericError("quadrature weights vanish; tilted density not resolved by nodes")
    p = np.exp(logw - norm)
    mean = np.sum(p * s, axis=-1)
    var = np.sum(p * (s - mean[..., None]) ** 2, axis=-1)
    return mean, var


def prior_tilted_moments(model: Channel, kappa, tilt_precision, **kw) -> TiltedMoments:
    if model.role != "prior":
        raise DomainError(f"{model.name} is not a prior")
    return model.tilted_moments(kappa, tilt_precision, **kw)


def likelihood_tilted_moments(model: Channel, y, kappa, tilt_precision, **kw) -> TiltedMoments:
    if model.role != "likelihood":
        raise DomainError(f"{model.name} is not a likelihood")
    return model.tilted_moments(kappa, tilt_precision, y=y, **kw)


def vector_moments(model: Channel | Sequence[Channel], kappa, tilt, y=None) -> TiltedMoments:
    """Elementwise tilted moments; ``model`` is one channel or one channel per index.

    A scalar ``tilt`` is broadcast. Prior and likelihood channels cannot be
    mixed within one call.
    """
    kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
    tilt = np.broadcast_to(np.asarray(tilt, dtype=float), kappa.shape)
    if y is not None:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if y.shape != kappa.shape:
            raise DomainError(f"y has shape {y.shape}, kappa has {kappa.shape}")
    if isinstance(model, Channel):
        return model.tilted_moments(kappa, tilt, y=y)

    models = list(model)
    if len(models) != kappa.size:
        raise DomainError(f"{len(models)} channels for {kappa.size} coordinates")
    if len({m.role for m in models}) > 1:
        raise DomainError("prior and likelihood channels cannot be mixed in one call")
    mean = np.empty_like(kappa)
    var = np.empty_like(kappa)
    groups: dict[Channel, list[int]] = {}
    for i, m in enumerate(models):
        groups.setdefault(m, []).append(i)
    for m, idx in groups.items():
        idx = np.asarray(idx)
        out = m.tilted_moments(kappa[idx], tilt[idx], y=None if y is None else y[idx])
        mean[idx], var[idx] = out
    return TiltedMoments(mean, var)
