"""Evaluation protocol: deterministic-policy episode batches, normalized
performance with confidence intervals, learning-curve smoothing,
best-checkpoint selection, tau sweeps, and policy-field export.

Performance is reported as Z/(vT): mean vertical displacement per episode
normalized by the still-fluid naive value.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import flows
from .env import (
    EnvConfig,
    TWO_PI,
    VectorNavigationEnv,
    _start_index_range,
    as_seed_sequence,
    integrate_step,
    surfing_matrix,
)


@dataclass
class RunRecord:
    """One training run: per-episode returns plus periodic evaluations."""

    algo: str
    kind: str
    seed: int
    returns: np.ndarray
    evals: list = field(default_factory=list)  # (episodes_done, score)
    best_eval: float = float("nan")
    best_policy: object = None
    checkpoints: dict = field(default_factory=dict)
    stats: list = field(default_factory=list)

    def best(self):
        return select_best(self)


@dataclass(frozen=True)
class ReportRow:
    label: str
    mean: float
    ci95: float
    episodes: int
    mode: str


def run_episodes(env_cfg: EnvConfig, policy, n_episodes, seed=None, dataset=None,
                 deterministic=True, rng=None):
    """Z for `n_episodes` independent episodes; batched in lockstep.

    TURB episodes start at random snapshot indices, so they are advanced with
    a single sweep along the dataset time axis (each frame is decoded once,
    all episodes active at that absolute time step together).
    """
    if rng is None:
        rng = np.random.default_rng(as_seed_sequence(seed))
    if env_cfg.kind == "turb":
        return _run_turb_episodes(
            env_cfg, policy, n_episodes, rng, dataset, deterministic
        )
    env = VectorNavigationEnv(
        env_cfg,
        n_episodes,
        rngs=[rng] * n_episodes,  # resets draw sequentially from one stream
        autoreset=False,
    )
    obs = env.reset()
    for _ in range(env_cfg.episode_steps):
        if deterministic:
            acts = policy.act_deterministic(obs)
        else:
            acts = policy.act(obs, rng)
        obs, _, _, _ = env.step(acts)
    return env.positions[:, -1] - env.z_start


def _resolve_sampler(env_cfg, dataset):
    from .turbulence import SnapshotDataset, TurbulenceSampler, load_dataset

    if dataset is None:
        if env_cfg.dataset is None:
            raise ValueError("TURB evaluation needs a dataset")
        dataset = load_dataset(env_cfg.dataset)
    if isinstance(dataset, TurbulenceSampler):
        return dataset
    return TurbulenceSampler(dataset, cache_size=16)


def _run_turb_episodes(env_cfg, policy, n, rng, dataset, deterministic, taus=None):
    sampler = _resolve_sampler(env_cfg, dataset)
    ds = sampler.dataset
    steps = env_cfg.episode_steps
    lo, hi = _start_index_range(ds.count, steps, env_cfg.mode)
    starts = rng.integers(lo, hi + 1, size=n)
    pos = rng.uniform(0.0, TWO_PI, size=(n, 2))
    z0 = pos[:, 1].copy()
    dt = env_cfg.dt

    for f in range(int(starts.min()), int(starts.max()) + steps):
        active = np.flatnonzero((starts <= f) & (f < starts + steps))
        if active.size == 0:
            continue
        t = f * dt
        wrapped = np.mod(pos[active], TWO_PI)
        obs = sampler.gradient_obs(wrapped, t)
        if taus is not None:
            m = surfing_matrix(obs, "turb")
            acts, _ = _tau_actions(m, taus[active])
        elif deterministic:
            acts = policy.act_deterministic(obs)
        else:
            acts = policy.act(obs, rng)
        pos[active] = integrate_step(
            pos[active], acts, sampler.velocity, t, dt, env_cfg.swim_speed
        )
    return pos[:, 1] - z0


def _tau_actions(m, taus):
    from .baselines import matrix_exponential, naive_action, DEGENERATE_NORM

    lam = matrix_exponential(taus[:, None, None] * m)[..., :, -1]
    norm = np.linalg.norm(lam, axis=-1)
    bad = norm < DEGENERATE_NORM
    if np.any(bad):
        lam = np.where(bad[:, None], naive_action(lam.shape[-1]), lam)
        norm = np.where(bad, 1.0, norm)
    return lam / norm[:, None], int(bad.sum())


def evaluate_policy(env_cfg: EnvConfig, policy, n_episodes, seed=None, dataset=None,
                    label="policy", deterministic=True):
    """Mean Z/(vT) with a 95% confidence interval over fresh episodes."""
    z = run_episodes(
        env_cfg, policy, n_episodes, seed=seed, dataset=dataset,
        deterministic=deterministic,
    )
    zn = z / (env_cfg.swim_speed * env_cfg.horizon)
    ci = 1.96 * zn.std(ddof=1) / np.sqrt(len(zn)) if len(zn) > 1 else float("nan")
    return ReportRow(
        label=label,
        mean=float(zn.mean()),
        ci95=float(ci),
        episodes=int(n_episodes),
        mode=env_cfg.mode,
    )


def tune_tau(env_cfg: EnvConfig, grid, episodes_per_point, seed=None, dataset=None):
    """Mean performance of the surfing policy over a tau grid.

    Uses common random numbers: the same episode initial conditions are run
    for every tau, so the curve is smooth in tau and the argmax is stable.
    Returns (tau_star, rows) with rows of (tau, mean, ci95).
    """
    grid = np.asarray(list(grid), dtype=float)
    if grid.size == 0:
        raise ValueError("empty tau grid")
    e = int(episodes_per_point)
    rng = np.random.default_rng(as_seed_sequence(seed))
    kind = env_cfg.kind
    norm = env_cfg.swim_speed * env_cfg.horizon

    if kind == "turb":
        sampler = _resolve_sampler(env_cfg, dataset)
        steps = env_cfg.episode_steps
        lo, hi = _start_index_range(sampler.dataset.count, steps, env_cfg.mode)
        starts1 = rng.integers(lo, hi + 1, size=e)
        pos1 = rng.uniform(0.0, TWO_PI, size=(e, 2))
        starts = np.tile(starts1, grid.size)
        pos = np.tile(pos1, (grid.size, 1))
        taus = np.repeat(grid, e)
        z0 = pos[:, 1].copy()
        dt = env_cfg.dt
        for f in range(int(starts.min()), int(starts.max()) + steps):
            active = np.flatnonzero((starts <= f) & (f < starts + steps))
            if active.size == 0:
                continue
            t = f * dt
            obs = sampler.gradient_obs(np.mod(pos[active], TWO_PI), t)
            m = surfing_matrix(obs, kind)
            acts, _ = _tau_actions(m, taus[active])
            pos[active] = integrate_step(
                pos[active], acts, sampler.velocity, t, dt, env_cfg.swim_speed
            )
        z = (pos[:, 1] - z0).reshape(grid.size, e)
    else:
        d = env_cfg.dim
        pos1 = rng.uniform(0.0, TWO_PI, size=(e, d))
        pos = np.tile(pos1, (grid.size, 1))
        taus = np.repeat(grid, e)
        z0 = pos[:, -1].copy()
        if kind == "tgv":
            vel_fn = lambda p, t: flows.tgv_velocity(p, env_cfg.tgv)
            obs_fn = lambda p: _tgv_obs(p, env_cfg)
        else:
            vel_fn = lambda p, t: flows.abc_velocity(p, env_cfg.abc)
            obs_fn = lambda p: _abc_obs(p, env_cfg)
        for _ in range(env_cfg.episode_steps):
            obs = obs_fn(np.mod(pos, TWO_PI))
            m = surfing_matrix(obs, kind)
            acts, _ = _tau_actions(m, taus)
            pos = integrate_step(pos, acts, vel_fn, 0.0, env_cfg.dt, env_cfg.swim_speed)
        z = (pos[:, -1] - z0).reshape(grid.size, e)

    zn = z / norm
    means = zn.mean(axis=1)
    cis = 1.96 * zn.std(axis=1, ddof=1) / np.sqrt(e)
    rows = [(float(t), float(m), float(c)) for t, m, c in zip(grid, means, cis)]
    return float(grid[int(np.argmax(means))]), rows


def _tgv_obs(wrapped, cfg):
    _, grad = flows.tgv_sample(wrapped, cfg.tgv)
    return np.stack([grad[..., 0, 0], grad[..., 1, 0]], axis=-1)


def _abc_obs(wrapped, cfg):
    _, grad = flows.abc_sample(wrapped, cfg.abc)
    return flows.vorticity_from_gradient(grad)


def learning_curve(returns, window=1000):
    """Trailing moving average; the first window-1 points average their prefix."""
    if window < 1:
        raise ValueError("window must be >= 1")
    r = np.asarray(returns, dtype=float)
    if r.size == 0:
        return r.copy()
    c = np.concatenate([[0.0], np.cumsum(r)])
    n = r.size
    out = np.empty(n)
    w = int(window)
    idx = np.arange(1, n + 1)
    lo = np.maximum(0, idx - w)
    out = (c[idx] - c[lo]) / (idx - lo)
    return out


def select_best(record: RunRecord):
    """Checkpoint with the highest periodic-evaluation score."""
    if not record.evals:
        raise ValueError("run has no evaluations/checkpoints")
    k = int(np.argmax([s for _, s in record.evals]))
    return record.evals[k]


def policy_field_export(policy, env_cfg: EnvConfig, resolution, slice_spec=None,
                        dataset=None):
    """Deterministic action vectors on a position grid; rows for CSV export.

    slice_spec fixes the out-of-grid coordinate: {"z": value} selects the ABC
    horizontal plane, {"t": value} the TURB sampling time. Returns
    (header, rows).
    """
    spec = dict(slice_spec or {})
    ticks = np.linspace(0.0, TWO_PI, int(resolution), endpoint=False)
    kind = env_cfg.kind
    if kind == "abc":
        z = float(spec.get("z", 0.0))
        gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)], axis=-1)
        obs = _abc_obs(pts, env_cfg)
        header = ["x", "y", "z", "a_x", "a_y", "a_z"]
    else:
        gx, gz = np.meshgrid(ticks, ticks, indexing="ij")
        pts = np.stack([gx.ravel(), gz.ravel()], axis=-1)
        if kind == "tgv":
            obs = _tgv_obs(pts, env_cfg)
        else:
            sampler = _resolve_sampler(env_cfg, dataset)
            obs = sampler.gradient_obs(pts, float(spec.get("t", 0.0)))
        header = ["x", "z", "a_x", "a_z"]
    acts = policy.act_deterministic(obs)
    rows = np.concatenate([pts, acts], axis=1)
    return header, rows


def rows_to_csv(header, rows):
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in np.asarray(rows):
        buf.write(",".join(f"{v:.10g}" for v in row) + "\n")
    return buf.getvalue()


def report_csv(rows_by_env):
    """Assemble a summary table: one line per environment, one column per policy."""
    labels = []
    for rows in rows_by_env.values():
        for r in rows:
            if r.label not in labels:
                labels.append(r.label)
    buf = io.StringIO()
    buf.write("env," + ",".join(f"{l},{l}_ci95" for l in labels) + "\n")
    for env_name, rows in rows_by_env.items():
        by_label = {r.label: r for r in rows}
        cells = []
        for l in labels:
            r = by_label.get(l)
            cells.append(f"{r.mean:.4f},{r.ci95:.4f}" if r else ",")
        buf.write(f"{env_name}," + ",".join(cells) + "\n")
    return buf.getvalue()
