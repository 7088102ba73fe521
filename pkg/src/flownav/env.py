"""Directional-navigation POMDP over the three carrier flows.

An inertialess agent swims at constant speed v in a direction it re-picks
every dt while being advected by the flow. Per-step reward is the vertical
displacement; the episode return is the total unwrapped vertical travel.
Observations are the independent local velocity-gradient components (TGV,
TURB) or the vorticity vector (ABC).

Environments come in a scalar flavor (`NavigationEnv`) and a batched one
(`VectorNavigationEnv`) whose stepping is elementwise identical to stepping
the members sequentially.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import flows
from .errors import (
    BatchShapeError,
    EpisodeFinishedError,
    InvalidActionError,
    MissingDatasetError,
)
from .flows import TWO_PI, AbcConfig, TgvConfig

#: action vectors may deviate from unit norm by this much and get renormalized
ACTION_NORM_TOL = 1e-6

#: fraction of TURB snapshots used for training vs held out; episode start
#: indices are drawn from [0, 0.7c] (train) and [0.8c, 0.9c] (test), the
#: test range additionally clipped so a full episode fits in the dataset
TRAIN_START_FRACTION = 0.7
TEST_START_LO_FRACTION = 0.8
TEST_START_HI_FRACTION = 0.9

_TABLE_DEFAULTS = {
    "tgv": dict(swim_speed=0.25, episode_steps=4000, observables=("g_xx", "g_zx")),
    "abc": dict(swim_speed=1.5, episode_steps=2000, observables=("w_x", "w_y", "w_z")),
    "turb": dict(swim_speed=2.0, episode_steps=500, observables=("g_xx", "g_zx", "g_xz")),
}


@dataclass(frozen=True)
class EnvConfig:
    """Environment parameters; `defaults` fills the per-flow table values."""

    kind: str
    swim_speed: float
    episode_steps: int
    dt: float = 0.01
    observables: tuple = ()
    tgv: TgvConfig = TgvConfig()
    abc: AbcConfig = AbcConfig()
    dataset: str | None = None
    mode: str = "train"
    rk_substeps: int = 1

    @staticmethod
    def defaults(kind, **overrides):
        if kind not in _TABLE_DEFAULTS:
            raise ValueError(f"unknown flow kind {kind!r}")
        params = dict(_TABLE_DEFAULTS[kind])
        params.update(overrides)
        return EnvConfig(kind=kind, **params)

    @property
    def dim(self):
        return 3 if self.kind == "abc" else 2

    @property
    def obs_dim(self):
        return 2 if self.kind == "tgv" else 3

    @property
    def horizon(self):
        return self.episode_steps * self.dt


@dataclass
class EnvState:
    """Single-agent state; `position` is unwrapped (net displacement preserved)."""

    position: np.ndarray
    step_index: int
    t0: float
    cum_z: float


@dataclass(frozen=True)
class Transition:
    observation: np.ndarray
    action: np.ndarray
    reward: float
    next_observation: np.ndarray
    done: bool


@dataclass
class Trajectory:
    """Completed-episode record sufficient for the return metric."""

    z_start: float
    z_final: float
    rewards: np.ndarray
    episode_steps: int


def episode_return(trajectory: Trajectory):
    """Unwrapped vertical displacement over a complete episode."""
    if len(trajectory.rewards) != trajectory.episode_steps:
        raise ValueError(
            f"incomplete episode: {len(trajectory.rewards)} of "
            f"{trajectory.episode_steps} steps"
        )
    return trajectory.z_final - trajectory.z_start


def gradient_from_observation(obs, kind):
    """Reconstruct the observable matrix (repo convention grad[i,j] = du_i/dx_j).

    TGV uses the lattice identities (dz_ux = -dx_uz, dz_uz = -dx_ux), TURB fills
    the fourth component by incompressibility. For ABC only the antisymmetric
    part is observable; returns 0.5*(grad - grad^T) built from vorticity.
    """
    o = np.asarray(obs, dtype=float)
    if kind == "tgv":
        a, b = o[..., 0], o[..., 1]
        return np.stack(
            [np.stack([a, -b], axis=-1), np.stack([b, -a], axis=-1)], axis=-2
        )
    if kind == "turb":
        a, b, c = o[..., 0], o[..., 1], o[..., 2]
        return np.stack(
            [np.stack([a, c], axis=-1), np.stack([b, -a], axis=-1)], axis=-2
        )
    if kind == "abc":
        wx, wy, wz = o[..., 0], o[..., 1], o[..., 2]
        zero = np.zeros_like(wx)
        return 0.5 * np.stack(
            [
                np.stack([zero, -wz, wy], axis=-1),
                np.stack([wz, zero, -wx], axis=-1),
                np.stack([-wy, wx, zero], axis=-1),
            ],
            axis=-2,
        )
    raise ValueError(f"unknown flow kind {kind!r}")


def surfing_matrix(obs, kind):
    """Observable matrix M entering the surfing heading exp(tau*M) @ zhat.

    The exponential acts with the transpose of the repo-convention gradient,
    i.e. M[i,j] = du_j/dx_i: to first order the heading tilts toward the
    spatial gradient of the vertical velocity (zhat + tau * grad(u_z) + ...),
    which is the adjoint-equation direction. Validated against the published
    baseline performance in all three flows.
    """
    return np.swapaxes(gradient_from_observation(obs, kind), -1, -2)


def as_seed_sequence(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def integrate_step(pos, actions, velocity_fn, t, dt, swim_speed, substeps=1):
    """Classical RK4 for dX/dt = u(X, t) + v * p over one decision interval.

    The heading is held fixed (zero-order hold); flow lookups wrap positions,
    the returned positions stay unwrapped. velocity_fn(wrapped, time) must
    broadcast over the batch.
    """
    swim = swim_speed * actions
    h = dt / substeps
    x = pos
    for _ in range(substeps):
        k1 = velocity_fn(np.mod(x, TWO_PI), t) + swim
        k2 = velocity_fn(np.mod(x + 0.5 * h * k1, TWO_PI), t + 0.5 * h) + swim
        k3 = velocity_fn(np.mod(x + 0.5 * h * k2, TWO_PI), t + 0.5 * h) + swim
        k4 = velocity_fn(np.mod(x + h * k3, TWO_PI), t + h) + swim
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t + h
    return x


def _start_index_range(count, steps, mode):
    feasible_hi = count - steps - 1
    if mode == "train":
        lo, hi = 0, min(int(TRAIN_START_FRACTION * count), feasible_hi)
    elif mode == "test":
        lo = int(TEST_START_LO_FRACTION * count)
        hi = min(int(TEST_START_HI_FRACTION * count), feasible_hi)
    else:
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    if hi < lo:
        raise ValueError(
            f"dataset with {count} frames cannot host {steps}-step episodes "
            f"in mode {mode!r} (start range [{lo}, {hi}] is empty)"
        )
    return lo, hi


class VectorNavigationEnv:
    """Batch of independent navigation episodes stepped in lockstep.

    Each member owns its RNG stream, so batched stepping is elementwise equal
    to stepping the members one by one. Single-owner: not thread-safe.
    """

    def __init__(self, cfg: EnvConfig, n_envs, seed=None, rngs=None, dataset=None,
                 autoreset=True):
        self.cfg = cfg
        self.n_envs = int(n_envs)
        self.autoreset = autoreset
        if rngs is not None:
            if len(rngs) != self.n_envs:
                raise BatchShapeError("need one rng per environment")
            self.rngs = list(rngs)
        else:
            seeds = as_seed_sequence(seed).spawn(self.n_envs)
            self.rngs = [np.random.default_rng(s) for s in seeds]

        self._sampler = None
        if cfg.kind == "turb":
            if dataset is None:
                if cfg.dataset is None:
                    raise MissingDatasetError(
                        "TURB environment needs a snapshot dataset "
                        "(cfg.dataset path or dataset= argument)"
                    )
                from .turbulence import load_dataset

                dataset = load_dataset(cfg.dataset)
            from .turbulence import TurbulenceSampler

            if isinstance(dataset, TurbulenceSampler):
                self._sampler = dataset
            else:
                cache = max(16, 2 * self.n_envs + 4)
                self._sampler = TurbulenceSampler(dataset, cache_size=cache)
            ds = self._sampler.dataset
            if abs(ds.dt - cfg.dt) > 1e-12:
                raise ValueError(
                    f"dataset snapshot interval {ds.dt} != decision step {cfg.dt}"
                )
            self._start_range = _start_index_range(
                ds.count, cfg.episode_steps, cfg.mode
            )

        d = cfg.dim
        self.positions = np.zeros((self.n_envs, d))
        self.steps = np.zeros(self.n_envs, dtype=int)
        self.start_indices = np.zeros(self.n_envs, dtype=int)
        self.z_start = np.zeros(self.n_envs)
        self._done = np.ones(self.n_envs, dtype=bool)

    @property
    def sampler(self):
        return self._sampler

    # -- flow access -------------------------------------------------------

    def _velocity(self, wrapped, t):
        kind = self.cfg.kind
        if kind == "tgv":
            return flows.tgv_velocity(wrapped, self.cfg.tgv)
        if kind == "abc":
            return flows.abc_velocity(wrapped, self.cfg.abc)
        return self._sampler.velocity(wrapped, t)

    def observe(self, positions=None, times=None):
        """Observation vectors at the given (default: current) agent states."""
        pos = self.positions if positions is None else positions
        wrapped = np.mod(pos, TWO_PI)
        kind = self.cfg.kind
        if kind == "tgv":
            _, grad = flows.tgv_sample(wrapped, self.cfg.tgv)
            return np.stack([grad[..., 0, 0], grad[..., 1, 0]], axis=-1)
        if kind == "abc":
            _, grad = flows.abc_sample(wrapped, self.cfg.abc)
            return flows.vorticity_from_gradient(grad)
        t = self._times() if times is None else times
        return self._sampler.gradient_obs(wrapped, t)

    def _times(self):
        if self.cfg.kind != "turb":
            return 0.0
        return (self.start_indices + self.steps) * self.cfg.dt

    # -- episode control ----------------------------------------------------

    def _reset_mask(self, mask):
        cfg = self.cfg
        d = cfg.dim
        for i in np.flatnonzero(mask):
            rng = self.rngs[i]
            self.positions[i] = rng.uniform(0.0, TWO_PI, size=d)
            if cfg.kind == "turb":
                lo, hi = self._start_range
                self.start_indices[i] = rng.integers(lo, hi + 1)
        self.steps[mask] = 0
        self.z_start[mask] = self.positions[mask, -1]
        self._done[mask] = False

    def reset(self):
        """Reset every member; returns the initial observations (n_envs, obs_dim)."""
        self._reset_mask(np.ones(self.n_envs, dtype=bool))
        return self.observe()

    def step(self, actions):
        """Advance every member one decision step.

        Returns (next_obs, rewards, dones, info). With autoreset on, members
        whose episode just ended are reset and `next_obs` holds their fresh
        initial observation; info["episode_returns"] carries the finished
        returns (NaN elsewhere).
        """
        cfg = self.cfg
        acts = np.asarray(actions, dtype=float)
        if acts.shape != (self.n_envs, cfg.dim):
            raise BatchShapeError(
                f"expected actions of shape {(self.n_envs, cfg.dim)}, got {acts.shape}"
            )
        if np.any(self._done):
            raise EpisodeFinishedError(
                "step() on finished episodes; call reset() or enable autoreset"
            )
        norms = np.linalg.norm(acts, axis=-1)
        if np.any(np.abs(norms - 1.0) > ACTION_NORM_TOL):
            worst = float(np.max(np.abs(norms - 1.0)))
            raise InvalidActionError(
                f"actions must be unit vectors (worst norm deviation {worst:.3g})"
            )
        acts = acts / norms[..., None]

        z_old = self.positions[:, -1].copy()
        self.positions = self._integrate(self.positions, acts)
        self.steps += 1
        rewards = self.positions[:, -1] - z_old

        dones = self.steps >= cfg.episode_steps
        info = {}
        if np.any(dones):
            ep_returns = np.full(self.n_envs, np.nan)
            ep_returns[dones] = self.positions[dones, -1] - self.z_start[dones]
            info["episode_returns"] = ep_returns
            self._done = dones.copy()
            if self.autoreset:
                self._reset_mask(dones)
        return self.observe(), rewards, dones, info

    def _integrate(self, pos, actions):
        cfg = self.cfg
        t = self._times() if cfg.kind == "turb" else 0.0
        return integrate_step(
            pos, actions, self._velocity, t, cfg.dt, cfg.swim_speed, cfg.rk_substeps
        )


class NavigationEnv:
    """Single-episode view; thin wrapper over a batch of one."""

    def __init__(self, cfg: EnvConfig, seed=None, rng=None, dataset=None):
        rngs = [rng] if rng is not None else None
        self._v = VectorNavigationEnv(
            cfg, 1, seed=seed, rngs=rngs, dataset=dataset, autoreset=False
        )
        self.cfg = cfg
        self._last_obs = None

    @property
    def state(self):
        v = self._v
        return EnvState(
            position=v.positions[0].copy(),
            step_index=int(v.steps[0]),
            t0=float(v.start_indices[0] * self.cfg.dt),
            cum_z=float(v.positions[0, -1] - v.z_start[0]),
        )

    def reset(self):
        self._last_obs = self._v.reset()[0]
        return self._last_obs

    def step(self, action):
        obs_before = self._last_obs
        obs, rewards, dones, _ = self._v.step(np.asarray(action, dtype=float)[None, :])
        self._last_obs = obs[0]
        return Transition(
            observation=obs_before,
            action=np.asarray(action, dtype=float),
            reward=float(rewards[0]),
            next_observation=obs[0],
            done=bool(dones[0]),
        )

    def run_episode(self, policy, rng=None, deterministic=False):
        """Roll one full episode under `policy`; returns a Trajectory."""
        obs = self.reset()
        z0 = float(self._v.positions[0, -1])
        rewards = np.empty(self.cfg.episode_steps)
        for k in range(self.cfg.episode_steps):
            if deterministic:
                act = policy.act_deterministic(obs[None, :])[0]
            else:
                act = policy.act(obs[None, :], rng)[0]
            tr = self.step(act)
            rewards[k] = tr.reward
            obs = tr.next_observation
        return Trajectory(
            z_start=z0,
            z_final=float(self._v.positions[0, -1]),
            rewards=rewards,
            episode_steps=self.cfg.episode_steps,
        )
