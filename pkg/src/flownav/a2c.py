"""Vanilla online advantage actor-critic with a von Mises-Fisher policy head.

One environment, one TD(0) update per step: the critic regresses the
one-step target, the actor ascends delta * grad log pi. No entropy bonus, no
gradient clipping, no learning-rate annealing; stability instead comes from
the deliberately small learning rates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agents import ActorCritic, VmfPolicy
from .env import EnvConfig, VectorNavigationEnv
from .evaluation import RunRecord, run_episodes
from .nn import Adam, TrainingDivergenceError
from .vmf import vmf_sample


@dataclass(frozen=True)
class A2cConfig:
    lr_actor: float = 1e-6
    lr_critic: float = 1e-4
    anneal: bool = False
    gamma: float = 0.99

    @staticmethod
    def for_env(kind):
        return A2cConfig(gamma=0.95 if kind == "tgv" else 0.99)


def a2c_step_update(ac: ActorCritic, adam_actor: Adam, adam_critic: Adam,
                    obs_n, action, reward, next_obs_n, done, cfg: A2cConfig):
    """One online TD(0) actor-critic update on normalized observations.

    Returns the TD error delta. The critic target is semi-gradient (next
    value treated as a constant); terminal transitions bootstrap with zero.
    """
    v, cache_c = ac.critic.forward(obs_n)
    v = v[:, 0]
    if done:
        v_next = np.zeros(1)
    else:
        v_next = ac.critic.value(next_obs_n)
    delta = float(reward + cfg.gamma * v_next[0] - v[0])
    if not np.isfinite(delta):
        raise TrainingDivergenceError(
            f"non-finite TD error (r={reward}, v={v[0]}, v_next={v_next[0]})"
        )

    # critic: d/dV of (V - target)^2 = -2 delta
    grads_c, _ = ac.critic.backward(cache_c, np.array([[-2.0 * delta]]))
    adam_critic.update(ac.critic.params, grads_c)

    # actor: descend -delta * log pi
    raw, cache_a = ac.actor.forward(obs_n)
    _, _, cache_h = ac.head.split(np.atleast_2d(raw))
    d_raw = ac.head.backward(cache_h, np.atleast_2d(action), np.array([-delta]))
    grads_a, _ = ac.actor.backward(cache_a, d_raw)
    adam_actor.update(ac.actor.params, grads_a)
    return delta


def a2c_train(env_cfg: EnvConfig, cfg: A2cConfig, episodes, seed=0,
              eval_every=1000, eval_episodes=200, dataset=None, verbose=False):
    """Fully online training over `episodes`; keeps the best-eval checkpoint."""
    root = np.random.SeedSequence(seed)
    s_net, s_env, s_act = root.spawn(3)
    ac = ActorCritic(env_cfg.obs_dim, env_cfg.dim, np.random.default_rng(s_net))
    adam_a = Adam(ac.actor.params, cfg.lr_actor)
    adam_c = Adam(ac.critic.params, cfg.lr_critic)
    rng = np.random.default_rng(s_act)
    env = VectorNavigationEnv(env_cfg, 1, seed=s_env, dataset=dataset)

    record = RunRecord(algo="a2c", kind=env_cfg.kind, seed=seed, returns=None)
    returns = []
    done_eps = 0
    next_eval = eval_every
    raw_obs = env.reset()

    while done_eps < episodes:
        ac.normalizer.update(raw_obs)
        obs_n = ac.normalizer.apply(raw_obs)
        raw_out, _ = ac.actor.forward(obs_n)
        mu, kappa, _ = ac.head.split(raw_out)
        action = vmf_sample(mu, kappa, rng)
        next_raw, rewards, dones, info = env.step(action)
        next_n = ac.normalizer.apply(next_raw)
        a2c_step_update(
            ac, adam_a, adam_c, obs_n, action[0], float(rewards[0]), next_n,
            bool(dones[0]), cfg,
        )
        raw_obs = next_raw
        if "episode_returns" in info:
            ep = info["episode_returns"]
            if not np.isnan(ep[0]):
                returns.append(float(ep[0]))
                done_eps += 1
                if done_eps >= next_eval or done_eps >= episodes:
                    next_eval += eval_every
                    _periodic_eval(record, ac, env_cfg, env, eval_episodes, seed,
                                   done_eps, verbose)

    record.returns = np.asarray(returns[: int(episodes)])
    if record.best_policy is None:
        record.best_policy = VmfPolicy(ac.copy(), deterministic=True)
    record.checkpoints["final"] = ac
    return record


def _periodic_eval(record, ac, env_cfg, env, eval_episodes, seed, done_eps, verbose):
    policy = VmfPolicy(ac, deterministic=True)
    z = run_episodes(
        env_cfg, policy, eval_episodes,
        seed=np.random.SeedSequence((seed, 977, len(record.evals))),
        dataset=env.sampler if env_cfg.kind == "turb" else None,
    )
    score = float(np.mean(z) / (env_cfg.swim_speed * env_cfg.horizon))
    record.evals.append((done_eps, score))
    if record.best_policy is None or np.isnan(record.best_eval) or score >= record.best_eval:
        record.best_eval = score
        record.best_policy = VmfPolicy(ac.copy(), deterministic=True)
    if verbose:
        print(f"  {record.algo} ep {done_eps}: eval {score:.3f}")
