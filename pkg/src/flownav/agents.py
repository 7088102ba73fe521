"""Actor-critic containers shared by A2C and PPO, plus checkpoint IO.

Actor: dense 2x40 ELU net mapping (normalized) observations to a
von Mises-Fisher direction distribution. Critic: independent 2x100 net
mapping observations to a scalar value; no shared layers.

Checkpoints are plain JSON (format "flownav-checkpoint-v1") with fields, in
order: format, algo, env_kind, actor_sizes, critic_sizes, actor_params,
critic_params, normalizer. Parameter lists follow Mlp.params order (all
weight matrices, then all bias vectors), stored as 64-bit float nested lists.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import CheckpointError
from .nn import Mlp, RunningNormalizer
from .vmf import VmfHead, vmf_sample

ACTOR_HIDDEN = (40, 40)
CRITIC_HIDDEN = (100, 100)
#: final-layer weights scaled down so the initial policy is near-uniform
ACTOR_FINAL_SCALE = 0.01

CHECKPOINT_FORMAT = "flownav-checkpoint-v1"


def make_actor(obs_dim, act_dim, rng):
    return Mlp(
        [obs_dim, *ACTOR_HIDDEN, act_dim + 1], rng, final_scale=ACTOR_FINAL_SCALE
    )


def make_critic(obs_dim, rng):
    return Mlp([obs_dim, *CRITIC_HIDDEN, 1], rng)


class ActorCritic:
    """Bundles actor, critic, vMF head and the observation normalizer."""

    def __init__(self, obs_dim, act_dim, rng):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.actor = make_actor(obs_dim, act_dim, rng)
        self.critic = make_critic(obs_dim, rng)
        self.head = VmfHead(act_dim)
        self.normalizer = RunningNormalizer(obs_dim)

    def value(self, obs_norm):
        v, _ = self.critic.forward(obs_norm)
        return v[..., 0]

    def policy(self, deterministic=True):
        return VmfPolicy(self, deterministic=deterministic)

    def copy(self):
        rng = np.random.default_rng(0)
        out = ActorCritic(self.obs_dim, self.act_dim, rng)
        for dst, src in ((out.actor, self.actor), (out.critic, self.critic)):
            dst.set_params([p.copy() for p in src.params])
        out.normalizer = RunningNormalizer.from_state(self.normalizer.state_dict())
        return out


class VmfPolicy:
    """Evaluation-facing policy view; normalizer statistics are frozen here."""

    def __init__(self, ac: ActorCritic, deterministic=True):
        self.ac = ac
        self.deterministic = deterministic

    def _dist(self, obs):
        x = self.ac.normalizer.apply(np.asarray(obs, dtype=float))
        raw, _ = self.ac.actor.forward(x)
        mu, kappa, _ = self.ac.head.split(np.atleast_2d(raw))
        return mu, kappa

    def act(self, obs, rng=None):
        mu, kappa = self._dist(obs)
        if self.deterministic or rng is None:
            return mu
        return vmf_sample(mu, kappa, rng)

    def act_deterministic(self, obs):
        mu, _ = self._dist(obs)
        return mu


def save_checkpoint(path, ac: ActorCritic, algo, env_kind):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "algo": algo,
        "env_kind": env_kind,
        "actor_sizes": list(ac.actor.sizes),
        "critic_sizes": list(ac.critic.sizes),
        "actor_params": [p.tolist() for p in ac.actor.params],
        "critic_params": [p.tolist() for p in ac.critic.params],
        "normalizer": ac.normalizer.state_dict(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format in {path}")
    obs_dim = payload["actor_sizes"][0]
    act_dim = payload["actor_sizes"][-1] - 1
    ac = ActorCritic(obs_dim, act_dim, np.random.default_rng(0))
    if list(ac.actor.sizes) != payload["actor_sizes"] or list(
        ac.critic.sizes
    ) != payload["critic_sizes"]:
        raise CheckpointError("checkpoint layer sizes do not match this build")
    ac.actor.set_params([np.array(p, dtype=float) for p in payload["actor_params"]])
    ac.critic.set_params([np.array(p, dtype=float) for p in payload["critic_params"]])
    ac.normalizer = RunningNormalizer.from_state(payload["normalizer"])
    return ac, payload
