"""PPO with clipped surrogate, vectorized rollouts, GAE, advantage and
observation normalization, fixed-length segments, minibatch epochs, KL early
stopping, and linearly annealed learning rates.

Segments of rollout_len steps are collected from num_envs environments in
lockstep; segments cross episode boundaries with done flags cutting the
bootstrap. Updates run `epochs` passes over `minibatches` shuffled minibatches;
once the mean approximate KL (mean of rho - 1 - log rho) of an epoch exceeds
target_kl, later epochs leave the actor untouched (the critic keeps fitting).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agents import ActorCritic, VmfPolicy
from .env import EnvConfig, VectorNavigationEnv
from .evaluation import RunRecord, run_episodes
from .nn import Adam, TrainingDivergenceError
from .vmf import vmf_log_prob, vmf_sample


@dataclass(frozen=True)
class PpoConfig:
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    anneal: bool = True
    gamma: float = 0.99
    num_envs: int = 100
    rollout_len: int = 10
    gae_lambda: float = 1.0
    minibatches: int = 5
    epochs: int = 4
    clip: float = 0.1
    entropy_coef: float = 0.0
    target_kl: float = 0.02

    @staticmethod
    def for_env(kind):
        if kind == "tgv":
            return PpoConfig(num_envs=100, rollout_len=10)
        if kind == "abc":
            return PpoConfig(num_envs=10, rollout_len=10)
        return PpoConfig(num_envs=10, rollout_len=100)


@dataclass
class RolloutBuffer:
    """Fixed-size on-policy segment: (rollout_len, num_envs, ...) arrays."""

    obs: np.ndarray        # normalized observations fed to the networks
    actions: np.ndarray
    log_probs: np.ndarray  # log pi(a|o) at collection time
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    bootstrap: np.ndarray  # V(o_T) per env, masked by dones[-1] in GAE

    @property
    def size(self):
        return self.obs.shape[0] * self.obs.shape[1]


def collect_rollout(env: VectorNavigationEnv, ac: ActorCritic, cfg: PpoConfig,
                    rng, raw_obs):
    """Step all envs rollout_len times, sampling from the current policy.

    The observation normalizer ingests each raw observation exactly when it
    becomes a policy input; the bootstrap pass reuses frozen statistics.
    Returns (buffer, raw_obs_carry, finished_episode_returns).
    """
    t_len, b = cfg.rollout_len, env.n_envs
    obs_dim, act_dim = ac.obs_dim, ac.act_dim
    buf = RolloutBuffer(
        obs=np.empty((t_len, b, obs_dim)),
        actions=np.empty((t_len, b, act_dim)),
        log_probs=np.empty((t_len, b)),
        rewards=np.empty((t_len, b)),
        values=np.empty((t_len, b)),
        dones=np.zeros((t_len, b), dtype=bool),
        bootstrap=np.empty(b),
    )
    finished = []
    for t in range(t_len):
        ac.normalizer.update(raw_obs)
        obs_n = ac.normalizer.apply(raw_obs)
        raw_out, _ = ac.actor.forward(obs_n)
        mu, kappa, _ = ac.head.split(raw_out)
        actions = vmf_sample(mu, kappa, rng)
        buf.obs[t] = obs_n
        buf.actions[t] = actions
        buf.log_probs[t] = vmf_log_prob(mu, kappa, actions)
        buf.values[t] = ac.value(obs_n)
        raw_obs, rewards, dones, info = env.step(actions)
        buf.rewards[t] = rewards
        buf.dones[t] = dones
        if "episode_returns" in info:
            ep = info["episode_returns"]
            finished.extend(ep[~np.isnan(ep)])
    buf.bootstrap = ac.value(ac.normalizer.apply(raw_obs))
    return buf, raw_obs, finished


def compute_gae(buffer: RolloutBuffer, gamma, lam):
    """Standard GAE recursion with done masking; returns (advantages, returns)."""
    t_len, b = buffer.rewards.shape
    adv = np.zeros((t_len, b))
    last = np.zeros(b)
    for t in range(t_len - 1, -1, -1):
        nonterminal = 1.0 - buffer.dones[t]
        next_v = buffer.bootstrap if t == t_len - 1 else buffer.values[t + 1]
        delta = buffer.rewards[t] + gamma * next_v * nonterminal - buffer.values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv, adv + buffer.values


def normalize_advantages(adv):
    flat = adv.reshape(-1)
    return (flat - flat.mean()) / (flat.std() + 1e-8)


def ppo_losses(ac: ActorCritic, obs, actions, logp_old, adv, returns, clip):
    """Clipped-surrogate and value losses with exact minibatch gradients.

    Returns (policy_loss, value_loss, approx_kl, clip_frac, grads_actor,
    grads_critic); gradients are of the minibatch-mean losses.
    """
    n = obs.shape[0]
    raw_out, cache_a = ac.actor.forward(obs)
    mu, kappa, cache_h = ac.head.split(raw_out)
    logp_new = vmf_log_prob(mu, kappa, actions)
    log_ratio = logp_new - logp_old
    ratio = np.exp(log_ratio)
    approx_kl = float(np.mean(ratio - 1.0 - log_ratio))
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > clip))

    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    policy_loss = float(-np.mean(np.minimum(unclipped, clipped)))
    # gradient of min(r A, clip(r) A) wrt log pi: A*r where the unclipped
    # branch is active (A>=0 and r<1+eps, or A<0 and r>1-eps), else 0
    active = np.where(adv >= 0, ratio < 1.0 + clip, ratio > 1.0 - clip)
    coeff = -(adv * ratio * active) / n
    d_raw = ac.head.backward(cache_h, actions, coeff)
    grads_a, _ = ac.actor.backward(cache_a, d_raw)

    v, cache_c = ac.critic.forward(obs)
    v = v[:, 0]
    err = v - returns
    value_loss = float(np.mean(err**2))
    grads_c, _ = ac.critic.backward(cache_c, (2.0 * err / n)[:, None])
    return policy_loss, value_loss, approx_kl, clip_frac, grads_a, grads_c


def ppo_update(ac: ActorCritic, adam_a: Adam, adam_c: Adam, buffer: RolloutBuffer,
               cfg: PpoConfig, rng, lr_frac=1.0):
    """Epoch/minibatch pass over one rollout; returns update statistics."""
    n = buffer.size
    obs = buffer.obs.reshape(n, -1)
    actions = buffer.actions.reshape(n, -1)
    logp_old = buffer.log_probs.reshape(n)
    adv_raw, rets = compute_gae(buffer, cfg.gamma, cfg.gae_lambda)
    adv = normalize_advantages(adv_raw)
    rets = rets.reshape(n)

    lr_a = cfg.lr_actor * lr_frac
    lr_c = cfg.lr_critic * lr_frac
    stats = dict(policy_loss=0.0, value_loss=0.0, kl=0.0, clip_frac=0.0,
                 actor_epochs=0)
    actor_live = True
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        epoch_kl = []
        for mb in np.array_split(perm, cfg.minibatches):
            pl, vl, kl, cf, ga, gc = ppo_losses(
                ac, obs[mb], actions[mb], logp_old[mb], adv[mb], rets[mb], cfg.clip
            )
            if not (np.isfinite(pl) and np.isfinite(vl)):
                raise TrainingDivergenceError(
                    f"non-finite PPO loss (policy={pl}, value={vl})"
                )
            if actor_live:
                adam_a.update(ac.actor.params, ga, lr=lr_a)
            adam_c.update(ac.critic.params, gc, lr=lr_c)
            epoch_kl.append(kl)
            stats.update(policy_loss=pl, value_loss=vl, clip_frac=cf)
        stats["kl"] = float(np.mean(epoch_kl))
        if actor_live:
            stats["actor_epochs"] += 1
            if stats["kl"] > cfg.target_kl:
                actor_live = False
    return stats


def ppo_train(env_cfg: EnvConfig, cfg: PpoConfig, episodes, seed=0,
              eval_every=1000, eval_episodes=200, dataset=None, verbose=False):
    """Alternate rollout collection and updates until `episodes` complete."""
    root = np.random.SeedSequence(seed)
    s_net, s_env, s_act, s_perm = root.spawn(4)
    ac = ActorCritic(env_cfg.obs_dim, env_cfg.dim, np.random.default_rng(s_net))
    adam_a = Adam(ac.actor.params, cfg.lr_actor)
    adam_c = Adam(ac.critic.params, cfg.lr_critic)
    rng_act = np.random.default_rng(s_act)
    rng_perm = np.random.default_rng(s_perm)
    env = VectorNavigationEnv(env_cfg, cfg.num_envs, seed=s_env, dataset=dataset)

    record = RunRecord(algo="ppo", kind=env_cfg.kind, seed=seed, returns=None)
    returns = []
    done_eps = 0
    next_eval = eval_every
    raw_obs = env.reset()

    while done_eps < episodes:
        buf, raw_obs, finished = collect_rollout(env, ac, cfg, rng_act, raw_obs)
        lr_frac = max(0.0, 1.0 - done_eps / episodes) if cfg.anneal else 1.0
        stats = ppo_update(ac, adam_a, adam_c, buf, cfg, rng_perm, lr_frac)
        record.stats.append(
            dict(episodes=done_eps, lr_frac=lr_frac, **stats)
        )
        if finished:
            returns.extend(finished)
            done_eps += len(finished)
            if done_eps >= next_eval or done_eps >= episodes:
                while next_eval <= done_eps:
                    next_eval += eval_every
                _periodic_eval(
                    record, ac, env_cfg, env, eval_episodes, seed, done_eps, verbose
                )

    record.returns = np.asarray(returns[: int(episodes)])
    if record.best_policy is None:
        record.best_policy = VmfPolicy(ac.copy(), deterministic=True)
    record.checkpoints["final"] = ac
    return record


def _periodic_eval(record, ac, env_cfg, env, eval_episodes, seed, done_eps, verbose):
    policy = VmfPolicy(ac.copy(), deterministic=True)
    z = run_episodes(
        env_cfg, policy, eval_episodes,
        seed=np.random.SeedSequence((seed, 977, len(record.evals))),
        dataset=env.sampler if env_cfg.kind == "turb" else None,
    )
    score = float(np.mean(z) / (env_cfg.swim_speed * env_cfg.horizon))
    record.evals.append((done_eps, score))
    if record.best_policy is None or np.isnan(record.best_eval) or score >= record.best_eval:
        record.best_eval = score
        record.best_policy = policy
    if verbose:
        print(f"  ppo ep {done_eps}: eval {score:.3f} (kl {record.stats[-1]['kl']:.4f})")
