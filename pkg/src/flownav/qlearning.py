"""Tabular Q-Learning with tercile observation bins, axis-aligned actions,
epsilon-greedy exploration, and optimistic initialization.

Each observation component is split into three bins at its empirical 1/3 and
2/3 quantiles (estimated from observations at uniform random positions, and
uniform random training times for TURB), giving 3^2 or 3^3 discrete states.
The learning rate anneals linearly to zero across the episode budget; the
Q-matrix starts at the optimistic value v*dt/(1-gamma), the discounted sum of
the best possible per-step reward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import discrete_action_set
from .env import EnvConfig, VectorNavigationEnv
from .errors import DegenerateObservableError
from .evaluation import RunRecord, run_episodes


@dataclass(frozen=True)
class QlConfig:
    learning_rate: float = 0.8
    anneal: bool = True
    epsilon: float = 0.1
    gamma: float = 0.95

    @staticmethod
    def for_env(kind):
        return QlConfig(gamma=0.99 if kind == "turb" else 0.95)


@dataclass(frozen=True)
class Discretizer:
    """Per-component tercile bin edges, shape (obs_dim, 2)."""

    edges: np.ndarray

    @property
    def n_states(self):
        return 3 ** self.edges.shape[0]

    def index(self, obs):
        o = np.atleast_2d(np.asarray(obs, dtype=float))
        idx = np.zeros(o.shape[0], dtype=np.int64)
        for c in range(o.shape[1]):
            bins = np.digitize(o[:, c], self.edges[c])
            idx = idx * 3 + bins
        return idx


def sample_observations(env_cfg: EnvConfig, n_samples, rng, dataset=None):
    """Observations at uniform random positions (+ random train times for TURB)."""
    probe = VectorNavigationEnv(env_cfg, 1, seed=0, dataset=dataset)
    pos = rng.uniform(0.0, 2.0 * np.pi, size=(int(n_samples), env_cfg.dim))
    times = None
    if env_cfg.kind == "turb":
        ds = probe.sampler.dataset
        t_hi = (int(0.8 * ds.count) - 1) * ds.dt
        times = rng.uniform(0.0, t_hi, size=int(n_samples))
    return probe.observe(positions=pos, times=times)


def build_discretizer(env_cfg, n_samples, rng, dataset=None):
    obs = sample_observations(env_cfg, n_samples, rng, dataset=dataset)
    stds = obs.std(axis=0)
    if np.any(stds < 1e-12):
        comp = int(np.argmin(stds))
        raise DegenerateObservableError(
            f"observation component {comp} has zero variance; cannot bin"
        )
    edges = np.quantile(obs, [1.0 / 3.0, 2.0 / 3.0], axis=0).T
    return Discretizer(edges=np.ascontiguousarray(edges))


def optimistic_value(env_cfg: EnvConfig, cfg: QlConfig):
    return env_cfg.swim_speed * env_cfg.dt / (1.0 - cfg.gamma)


def make_q_table(env_cfg: EnvConfig, cfg: QlConfig):
    n_actions = discrete_action_set(env_cfg.dim).shape[0]
    return np.full((3**env_cfg.obs_dim, n_actions), optimistic_value(env_cfg, cfg))


def ql_update(table, s, a, r, s_next, done, lr, gamma):
    """Single-entry update; terminal steps bootstrap with zero."""
    target = r if done else r + gamma * table[s_next].max()
    table[s, a] += lr * (target - table[s, a])


def epsilon_greedy(table, s_idx, epsilon, rng):
    """Vectorized action choice; greedy ties break to the lowest index."""
    s = np.atleast_1d(np.asarray(s_idx))
    greedy = np.argmax(table[s], axis=1)
    if epsilon <= 0:
        return greedy
    n_actions = table.shape[1]
    explore = rng.random(s.shape[0]) < epsilon
    randoms = rng.integers(0, n_actions, size=s.shape[0])
    return np.where(explore, randoms, greedy)


class QlPolicy:
    def __init__(self, table, discretizer: Discretizer, dim, epsilon=0.0):
        self.table = table
        self.discretizer = discretizer
        self.actions = discrete_action_set(dim)
        self.epsilon = epsilon

    def act(self, obs, rng=None):
        s = self.discretizer.index(obs)
        if self.epsilon > 0 and rng is not None:
            a = epsilon_greedy(self.table, s, self.epsilon, rng)
        else:
            a = np.argmax(self.table[s], axis=1)
        return self.actions[a]

    def act_deterministic(self, obs):
        s = self.discretizer.index(obs)
        return self.actions[np.argmax(self.table[s], axis=1)]


def ql_train(env_cfg: EnvConfig, cfg: QlConfig, episodes, seed=0, n_envs=100,
             eval_every=1000, eval_episodes=200, dataset=None, discretizer=None,
             discretizer_samples=100_000, verbose=False):
    """Train over `episodes` completed episodes; returns a RunRecord.

    Exploration runs on a batch of environments stepped in lockstep, with the
    shared table updated once per transition (in env order within a step).
    """
    root = np.random.SeedSequence(seed)
    s_disc, s_env, s_act, s_eval = root.spawn(4)
    rng_act = np.random.default_rng(s_act)
    if discretizer is None:
        discretizer = build_discretizer(
            env_cfg, discretizer_samples, np.random.default_rng(s_disc),
            dataset=dataset,
        )
    table = make_q_table(env_cfg, cfg)
    actions = discrete_action_set(env_cfg.dim)
    n_envs = int(min(n_envs, max(1, episodes)))
    env = VectorNavigationEnv(env_cfg, n_envs, seed=s_env, dataset=dataset)

    record = RunRecord(algo="ql", kind=env_cfg.kind, seed=seed, returns=None)
    returns = []
    gamma = cfg.gamma
    done_eps = 0
    next_eval = eval_every
    obs = env.reset()
    s_cur = discretizer.index(obs)

    while done_eps < episodes:
        lr = cfg.learning_rate
        if cfg.anneal:
            lr *= max(0.0, 1.0 - done_eps / episodes)
        a_idx = epsilon_greedy(table, s_cur, cfg.epsilon, rng_act)
        obs, rewards, dones, info = env.step(actions[a_idx])
        s_next = discretizer.index(obs)
        for i in range(n_envs):
            ql_update(
                table, s_cur[i], a_idx[i], rewards[i], s_next[i], dones[i], lr, gamma
            )
        s_cur = s_next
        if "episode_returns" in info:
            ep = info["episode_returns"]
            finished = np.flatnonzero(~np.isnan(ep))
            returns.extend(ep[finished])
            done_eps += finished.size
            if done_eps >= next_eval or done_eps >= episodes:
                next_eval += eval_every
                policy = QlPolicy(table.copy(), discretizer, env_cfg.dim)
                z = run_episodes(
                    env_cfg, policy, eval_episodes,
                    seed=np.random.SeedSequence((seed, 977, len(record.evals))),
                    dataset=env.sampler if env_cfg.kind == "turb" else None,
                )
                score = float(np.mean(z) / (env_cfg.swim_speed * env_cfg.horizon))
                record.evals.append((done_eps, score))
                if not record.evals or score >= record.best_eval or np.isnan(
                    record.best_eval
                ):
                    record.best_eval = score
                    record.best_policy = policy
                if verbose:
                    print(f"  ql ep {done_eps}: eval {score:.3f}")

    record.returns = np.asarray(returns[: int(episodes)])
    if np.isnan(record.best_eval):
        record.best_policy = QlPolicy(table.copy(), discretizer, env_cfg.dim)
    record.checkpoints["final_table"] = table
    return record
