"""Analytic navigation baselines: naive ascent, surfing, and their discrete variant.

The surfing heading is lambda/||lambda|| with lambda = expm(tau * M) @ zhat,
where M is the local observable matrix supplied by the environment
(see flownav.env.surfing_matrix) and tau is a per-flow correlation time.
tau = 0 recovers the naive policy exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import MatrixMagnitudeError

_TAYLOR_ORDER = 12
_SCALE_TARGET = 0.25
_NORM_LIMIT = 64.0
#: lambda shorter than this falls back to zhat (degenerate direction)
DEGENERATE_NORM = 1e-14


@dataclass(frozen=True)
class SurfingConfig:
    tau_star: float

    def __post_init__(self):
        if self.tau_star < 0:
            raise ValueError("tau_star must be >= 0")


#: tuned correlation times per flow (see the tau sweep in scripts/)
TAU_STAR_DEFAULTS = {"tgv": 2.0, "abc": 0.72, "turb": 0.23}


def matrix_exponential(m):
    """exp(M) for small matrices, by scaling-and-squaring of a truncated Taylor series.

    Broadcasts over leading axes: input (..., d, d). Entrywise error stays below
    1e-12 relative to the result magnitude for ||M||_inf <= 10 (absolute 1e-12
    whenever exp(M) is order unity); inputs beyond ||M||_inf = 64 are rejected.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("non-finite matrix entries")
    norm = np.max(np.sum(np.abs(m), axis=-1)) if m.size else 0.0
    if norm > _NORM_LIMIT:
        raise MatrixMagnitudeError(
            f"matrix norm {norm:.3g} exceeds the accuracy limit {_NORM_LIMIT}"
        )
    # one scaling exponent for the whole batch: extra squarings of small-norm
    # members only add negligible roundoff
    s = max(0, int(math.ceil(math.log2(norm / _SCALE_TARGET)))) if norm > _SCALE_TARGET else 0
    a = m / (2.0**s)
    d = m.shape[-1]
    eye = np.broadcast_to(np.eye(d), m.shape).copy()
    # Horner evaluation of sum_{k<=order} a^k / k!
    out = eye.copy()
    for k in range(_TAYLOR_ORDER, 0, -1):
        out = eye + np.matmul(a / k, out)
    for _ in range(s):
        out = np.matmul(out, out)
    return out


def naive_action(dim):
    """Always swim toward +zhat (last coordinate axis)."""
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    z = np.zeros(dim)
    z[-1] = 1.0
    return z


def discrete_action_set(dim):
    """Axis-aligned unit actions, +-zhat first (tie-breaking prefers upward)."""
    if dim == 2:
        rows = [(0, 1), (0, -1), (1, 0), (-1, 0)]
    elif dim == 3:
        rows = [(0, 0, 1), (0, 0, -1), (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0)]
    else:
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    return np.array(rows, dtype=float)


def surfing_lambda(m, tau):
    """Unnormalized surfing direction exp(tau*M) @ zhat, batched over (..., d, d)."""
    return matrix_exponential(tau * np.asarray(m, dtype=float))[..., :, -1]


def surfing_action(m, cfg: SurfingConfig):
    """Normalized surfing heading; degenerate lambda falls back to zhat.

    Returns (actions, n_degenerate).
    """
    lam = surfing_lambda(m, cfg.tau_star)
    norm = np.linalg.norm(lam, axis=-1)
    bad = norm < DEGENERATE_NORM
    n_bad = int(np.count_nonzero(bad))
    if n_bad:
        lam = np.where(bad[..., None], naive_action(lam.shape[-1]), lam)
        norm = np.where(bad, 1.0, norm)
    return lam / norm[..., None], n_bad


def discrete_surfing_action(m, cfg: SurfingConfig, actions=None):
    """Best action from a discrete set: argmax of action . lambda, first index wins ties.

    Returns (actions, n_degenerate).
    """
    lam = surfing_lambda(m, cfg.tau_star)
    d = lam.shape[-1]
    if actions is None:
        actions = discrete_action_set(d)
    norm = np.linalg.norm(lam, axis=-1)
    bad = norm < DEGENERATE_NORM
    n_bad = int(np.count_nonzero(bad))
    if n_bad:
        lam = np.where(bad[..., None], naive_action(d), lam)
    scores = lam @ actions.T
    best = np.argmax(scores, axis=-1)
    return actions[best], n_bad


class NaivePolicy:
    """Constant upward heading."""

    def __init__(self, dim):
        self._action = naive_action(dim)

    def act(self, obs, rng=None):
        n = np.asarray(obs).shape[0]
        return np.broadcast_to(self._action, (n, self._action.size)).copy()

    act_deterministic = act


class SurfingPolicy:
    """Continuous surfing baseline for a given environment kind."""

    discrete = False

    def __init__(self, kind, tau_star=None):
        from .env import surfing_matrix  # deferred: env imports this module

        self.kind = kind
        self.cfg = SurfingConfig(
            TAU_STAR_DEFAULTS[kind] if tau_star is None else tau_star
        )
        self._matrix = surfing_matrix
        self.degenerate_count = 0

    def act(self, obs, rng=None):
        m = self._matrix(np.asarray(obs), self.kind)
        act, n_bad = surfing_action(m, self.cfg)
        self.degenerate_count += n_bad
        return act

    act_deterministic = act


class DiscreteSurfingPolicy(SurfingPolicy):
    """Surfing constrained to the axis-aligned action set."""

    discrete = True

    def act(self, obs, rng=None):
        m = self._matrix(np.asarray(obs), self.kind)
        act, n_bad = discrete_surfing_action(m, self.cfg)
        self.degenerate_count += n_bad
        return act

    act_deterministic = act


def adjoint_solution(gradient_history, dt):
    """Backward-integrated adjoint direction along a trajectory; test oracle only.

    `gradient_history` holds d x d velocity gradients (repo convention
    grad[i,j] = du_i/dx_j) sampled every `dt`; the terminal condition is
    lambda(t_f) = zhat. Integrates d(lambda)/dt = -grad^T lambda backward with
    RK4, interpolating the gradient linearly at substage times. Returns the
    lambda series aligned with the input samples (index 0 = earliest time).
    """
    hist = np.asarray(gradient_history, dtype=float)
    if hist.ndim != 3 or hist.shape[0] == 0 or hist.shape[1] != hist.shape[2]:
        raise ValueError(f"expected non-empty (T, d, d) history, got {hist.shape}")
    n, d, _ = hist.shape
    lam = np.zeros((n, d))
    lam[-1] = naive_action(d)
    gt = np.swapaxes(hist, -1, -2)

    for k in range(n - 1, 0, -1):
        # integrate from t_k back to t_{k-1}; h < 0
        h = -dt
        g1, g0 = gt[k], gt[k - 1]
        gmid = 0.5 * (g0 + g1)
        y = lam[k]
        k1 = -(g1 @ y)
        k2 = -(gmid @ (y + 0.5 * h * k1))
        k3 = -(gmid @ (y + 0.5 * h * k2))
        k4 = -(g0 @ (y + h * k3))
        lam[k - 1] = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return lam


def adjoint_constant_closed_form(grad, horizon):
    """lambda(t0) for a constant gradient over `horizon`: exp(h * grad^T) @ zhat."""
    g = np.asarray(grad, dtype=float)
    return matrix_exponential(horizon * g.T)[..., :, -1]
