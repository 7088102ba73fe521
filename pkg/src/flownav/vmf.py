"""von Mises-Fisher distributions over unit vectors in 2D and 3D.

Density with respect to the surface measure: exp(kappa * mu.x) / C_d(kappa),
with C_2 = 2*pi*I0(kappa) and C_3 = 4*pi*sinh(kappa)/kappa. Log-normalizers
use exponentially-scaled Bessel/log-sinh forms, stable to kappa ~ 1e3 and
beyond. 2D sampling is von Mises angle sampling (Best-Fisher rejection, via
numpy); 3D uses Wood's rejection algorithm. kappa = 0 is the uniform
distribution on the circle/sphere.

`VmfHead` is the policy head: it maps raw network outputs (an unnormalized
mean vector m plus a scalar s) to mu = m/||m||, kappa = softplus(s - 3.5),
with exact gradients of log-probabilities back to the raw outputs. The -3.5
shift keeps the initial kappa below 0.05 (near-uniform policy) when the final
layer starts near zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

LOG_2PI = math.log(2.0 * math.pi)
LOG_4PI = math.log(4.0 * math.pi)
KAPPA_SHIFT = -3.5
_MNORM_FLOOR = 1e-12


@dataclass(frozen=True)
class VmfDistribution:
    """Validated (mu, kappa) pair; the batched functions below do the work."""

    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        if mu.ndim != 1 or mu.shape[0] not in (2, 3):
            raise ValueError("mu must be a 2- or 3-vector")
        if abs(np.linalg.norm(mu) - 1.0) > 1e-9:
            raise ValueError("mu must be a unit vector")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        object.__setattr__(self, "mu", mu)

    @property
    def dim(self):
        return self.mu.shape[0]

    def sample(self, rng, size=None):
        n = 1 if size is None else int(size)
        mu = np.broadcast_to(self.mu, (n, self.dim))
        kappa = np.full(n, float(self.kappa))
        out = vmf_sample(mu, kappa, rng)
        return out[0] if size is None else out

    def log_prob(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xs = x[None, :] if single else x
        norms = np.linalg.norm(xs, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("log_prob requires unit vectors")
        mu = np.broadcast_to(self.mu, xs.shape)
        kappa = np.full(xs.shape[0], float(self.kappa))
        out = vmf_log_prob(mu, kappa, xs)
        return float(out[0]) if single else out


def log_norm_const(kappa, dim):
    """log C_d(kappa), the reciprocal normalizer: density = exp(kappa mu.x)/C_d."""
    k = np.asarray(kappa, dtype=float)
    if dim == 2:
        # log(2 pi I0(k)) = log(2 pi) + k + log(i0e(k))
        return LOG_2PI + k + np.log(special.i0e(k))
    if dim == 3:
        # log(4 pi sinh(k)/k); series for small k avoids 0/0
        small = k < 1e-6
        ks = np.where(small, 1.0, k)
        exact = LOG_4PI + ks + np.log1p(-np.exp(-2.0 * ks)) - math.log(2.0) - np.log(ks)
        series = LOG_4PI + k * k / 6.0
        return np.where(small, series, exact)
    raise ValueError(f"dim must be 2 or 3, got {dim}")


def dlog_norm_const(kappa, dim):
    """d/dkappa log C_d: the mean resultant length A_d(kappa)."""
    k = np.asarray(kappa, dtype=float)
    if dim == 2:
        return special.i1e(k) / special.i0e(k)
    if dim == 3:
        # coth(k) - 1/k, with the k -> 0 series k/3 - k^3/45
        small = k < 1e-4
        ks = np.where(small, 1.0, k)
        exact = 1.0 / np.tanh(ks) - 1.0 / ks
        series = k / 3.0 - k**3 / 45.0
        return np.where(small, series, exact)
    raise ValueError(f"dim must be 2 or 3, got {dim}")


def vmf_log_prob(mu, kappa, x):
    """Batched log-density at unit vectors x; shapes (B, d), (B,), (B, d)."""
    mu = np.asarray(mu, dtype=float)
    x = np.asarray(x, dtype=float)
    k = np.asarray(kappa, dtype=float)
    dots = np.einsum("...i,...i->...", mu, x)
    return k * dots - log_norm_const(k, mu.shape[-1])


def vmf_sample(mu, kappa, rng):
    """Batched sampling; mu (B, d) unit rows, kappa (B,) >= 0."""
    mu = np.asarray(mu, dtype=float)
    k = np.asarray(kappa, dtype=float)
    if mu.shape[-1] == 2:
        theta_mu = np.arctan2(mu[:, 1], mu[:, 0])
        theta = rng.vonmises(theta_mu, k)
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    if mu.shape[-1] == 3:
        w = _wood_w(k, rng)
        e1, e2 = _tangent_basis(mu)
        phi = rng.uniform(0.0, 2.0 * math.pi, size=mu.shape[0])
        sin_t = np.sqrt(np.clip(1.0 - w * w, 0.0, None))
        return (
            w[:, None] * mu
            + sin_t[:, None] * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
        )
    raise ValueError("mu must have 2 or 3 components")


def _wood_w(kappa, rng):
    """Wood's rejection sampler for the mu.x marginal on the 2-sphere."""
    k = np.asarray(kappa, dtype=float)
    n = k.shape[0]
    b = np.sqrt(k * k + 1.0) - k
    x0 = (1.0 - b) / (1.0 + b)
    c = k * x0 + 2.0 * np.log1p(-x0 * x0)
    w = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        z = rng.beta(1.0, 1.0, size=todo.size)
        u = rng.uniform(size=todo.size)
        bt, x0t, ct, kt = b[todo], x0[todo], c[todo], k[todo]
        wt = (1.0 - (1.0 + bt) * z) / (1.0 - (1.0 - bt) * z)
        ok = kt * wt + 2.0 * np.log1p(-x0t * wt) - ct >= np.log(u)
        w[todo[ok]] = wt[ok]
        todo = todo[~ok]
    return w


def _tangent_basis(mu):
    """Orthonormal (e1, e2) spanning the plane orthogonal to each unit row."""
    helper = np.zeros_like(mu)
    use_z = np.abs(mu[:, 2]) < 0.9
    helper[use_z, 2] = 1.0
    helper[~use_z, 0] = 1.0
    e1 = helper - np.einsum("bi,bi->b", helper, mu)[:, None] * mu
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(mu, e1)
    return e1, e2


def softplus(s):
    return np.logaddexp(0.0, s)


class VmfHead:
    """Raw network outputs (B, d+1) -> direction distribution, with backprop.

    Columns 0..d-1 form the unnormalized mean m, column d the concentration
    logit s. A zero-initialized final layer yields kappa ~= softplus(-3.5),
    i.e. a near-uniform initial policy.
    """

    def __init__(self, dim):
        if dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        self.dim = dim

    def split(self, raw):
        raw = np.asarray(raw, dtype=float)
        m = raw[:, : self.dim]
        s = raw[:, self.dim]
        mnorm = np.maximum(np.linalg.norm(m, axis=-1), _MNORM_FLOOR)
        mu = m / mnorm[:, None]
        kappa = softplus(s + KAPPA_SHIFT)
        return mu, kappa, (mu, kappa, mnorm, s)

    def log_prob(self, cache, x):
        mu, kappa, _, _ = cache
        return vmf_log_prob(mu, kappa, x)

    def backward(self, cache, x, coeff):
        """d(sum coeff * logp)/d(raw outputs); coeff shape (B,)."""
        mu, kappa, mnorm, s = cache
        x = np.asarray(x, dtype=float)
        c = np.asarray(coeff, dtype=float)[:, None]
        dots = np.einsum("bi,bi->b", mu, x)[:, None]
        # dlogp/dm = kappa (x - (mu.x) mu) / ||m||
        d_m = (kappa / mnorm)[:, None] * (x - dots * mu) * c
        # dlogp/ds = (mu.x - A_d(kappa)) * sigmoid(s + shift)
        sig = special.expit(s + KAPPA_SHIFT)
        d_s = (dots[:, 0] - dlog_norm_const(kappa, self.dim)) * sig * c[:, 0]
        return np.concatenate([d_m, d_s[:, None]], axis=1)
