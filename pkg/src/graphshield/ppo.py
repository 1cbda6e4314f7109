"""Clipped-surrogate policy optimization with generalized advantage
estimation.

Rollouts run a fixed number of steps across parallel environment copies;
episodes truncate at the time limit and bootstrap from the value of the
state they stopped in, never treating the cut as a real terminal. The
update replays the whole buffer for a fixed number of epochs, one
optimizer step per epoch by default, with ratio clipping, a value
regression term, an optional entropy bonus, and a global gradient norm
clip.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step, clip_grad_norm
from .env import BlueEnv
from .errors import NonFinite
from .simulator import RedKind
from .topology import NetworkTopology


@dataclass(frozen=True)
class PpoConfig:
    total_steps: int = 500_000
    n_envs: int = 16
    steps_per_env: int = 120
    minibatch: int = 1920
    epochs: int = 30
    clip: float = 0.3
    gamma: float = 0.99
    gae_lambda: float = 0.95
    c_value: float = 1e-4
    c_entropy: float = 0.0
    max_grad_norm: float = 0.5
    lr: float = 3e-4
    episode_len: int = 50
    red_kind: RedKind = RedKind.MEANDER
    seed: int = 0
    advantage_norm: bool = True
    p_detect: float = 0.9
    exploit_success_prob: float = 1.0

    @property
    def buffer_size(self) -> int:
        return self.n_envs * self.steps_per_env

    def validate(self) -> None:
        if self.n_envs < 1 or self.steps_per_env < 1:
            raise ValueError("need at least one environment and one step")
        if not 0 < self.minibatch <= self.buffer_size:
            raise ValueError("minibatch must divide into the buffer")
        if self.total_steps < self.buffer_size:
            raise ValueError(
                f"total_steps must be at least one buffer ({self.buffer_size})"
            )
        if not 0.0 < self.clip:
            raise ValueError("clip range must be positive")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gamma and lambda must sit in [0, 1]")


@dataclass
class RolloutBuffer:
    """Fixed-size rollout across environments; env-major layout."""

    obs: np.ndarray  # (n_envs, T, ...) encoded observations
    natives: np.ndarray  # (n_envs, T, k) native action components
    logprobs: np.ndarray  # (n_envs, T)
    values: np.ndarray  # (n_envs, T)
    rewards: np.ndarray  # (n_envs, T)
    boundary: np.ndarray  # (n_envs, T) bool: episode ended after this step
    bootstrap: np.ndarray  # (n_envs, T) value of the post-boundary state
    tail_values: np.ndarray  # (n_envs,) value of the state after the last step
    episode_returns: list = field(default_factory=list)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def n_transitions(self) -> int:
        return self.rewards.size


def collect_rollouts(
    envs: list,
    agent,
    cfg: PpoConfig,
    reset_rng: np.random.Generator,
    action_rng: np.random.Generator,
) -> RolloutBuffer:
    """Run steps_per_env steps in every env, resetting at the time limit."""
    n, t_len = len(envs), cfg.steps_per_env
    obs_rows = [agent.encode_obs(e) for e in envs]
    obs = np.zeros((n, t_len) + obs_rows[0].shape)
    natives = None
    logprobs = np.zeros((n, t_len))
    values = np.zeros((n, t_len))
    rewards = np.zeros((n, t_len))
    boundary = np.zeros((n, t_len), dtype=bool)
    bootstrap = np.zeros((n, t_len))
    episode_returns: list = []

    for t in range(t_len):
        for k, env in enumerate(envs):
            obs[k, t] = agent.encode_obs(env)
        steps = agent.act_batch(envs, action_rng)
        if natives is None:
            natives = np.zeros((n, t_len, len(steps[0].native)), dtype=np.int64)
        truncated = []
        for k, (env, s) in enumerate(zip(envs, steps)):
            natives[k, t] = s.native
            logprobs[k, t] = s.logprob
            values[k, t] = s.value
            out = env.step(s.blue)
            rewards[k, t] = out.reward
            if out.truncated:
                truncated.append(k)
        if truncated:
            # Time-limit cut: bootstrap from the value of the state the
            # episode stopped in, then start a fresh episode.
            boot = _state_values(agent, [envs[k] for k in truncated])
            for j, k in enumerate(truncated):
                boundary[k, t] = True
                bootstrap[k, t] = boot[j]
                episode_returns.append(envs[k].episode_reward)
                envs[k].reset(int(reset_rng.integers(2**31 - 1)))
    tail_values = _state_values(agent, envs)
    return RolloutBuffer(
        obs=obs,
        natives=natives,
        logprobs=logprobs,
        values=values,
        rewards=rewards,
        boundary=boundary,
        bootstrap=bootstrap,
        tail_values=tail_values,
        episode_returns=episode_returns,
    )


def _state_values(agent, envs: list) -> np.ndarray:
    feats = [agent.encode_obs(e) for e in envs]
    if agent.kind == "mpnn":
        stacked = np.concatenate(feats, axis=0)
        return agent.values_batch(envs[0].obs_graph(), stacked, len(envs))
    return agent.values_batch(np.stack(feats, axis=0))


def compute_gae(buffer: RolloutBuffer, gamma: float, lam: float) -> None:
    """Backward recursion per environment; boundaries cut the recursion and
    bootstrap from the stored post-episode value."""
    n, t_len = buffer.rewards.shape
    adv = np.zeros((n, t_len))
    for k in range(n):
        acc = 0.0
        for t in range(t_len - 1, -1, -1):
            if buffer.boundary[k, t]:
                next_value = buffer.bootstrap[k, t]
                acc = 0.0
            elif t == t_len - 1:
                next_value = buffer.tail_values[k]
            else:
                next_value = buffer.values[k, t + 1]
            delta = (
                buffer.rewards[k, t] + gamma * next_value - buffer.values[k, t]
            )
            acc = delta + gamma * lam * acc
            adv[k, t] = acc
    buffer.advantages = adv
    buffer.returns = adv + buffer.values


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    grad_norm: float
    ratio_max: float


def _flat_eval_batch(agent, buffer: RolloutBuffer, envs_obs_graph):
    """Pre-build the full-buffer evaluation inputs once per update."""
    n, t_len = buffer.rewards.shape
    if agent.kind == "mpnn":
        feats = buffer.obs.reshape(n * t_len * buffer.obs.shape[2], buffer.obs.shape[3])
        return agent.batch_for(envs_obs_graph, feats, n * t_len)
    return buffer.obs.reshape(n * t_len, buffer.obs.shape[2])


def ppo_update(
    agent,
    buffer: RolloutBuffer,
    cfg: PpoConfig,
    adam_state: AdamState,
    shuffle_rng: np.random.Generator,
    obs_graph=None,
) -> list:
    """Replay the buffer for cfg.epochs epochs; returns per-epoch stats."""
    assert buffer.advantages is not None, "run compute_gae first"
    n, t_len = buffer.rewards.shape
    total = n * t_len
    adv = buffer.advantages.reshape(total).copy()
    if cfg.advantage_norm:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    returns = buffer.returns.reshape(total, 1)
    old_lp = buffer.logprobs.reshape(total, 1)
    natives = buffer.natives.reshape(total, buffer.natives.shape[2])
    eval_input = _flat_eval_batch(agent, buffer, obs_graph)
    adv_t = Tensor(adv[:, None])
    ret_t = Tensor(returns)
    old_t = Tensor(old_lp)

    full_batch = cfg.minibatch >= total
    stats: list[UpdateStats] = []
    for _ in range(cfg.epochs):
        if full_batch:
            slices = [None]
        else:
            order = shuffle_rng.permutation(total)
            slices = [
                order[i : i + cfg.minibatch] for i in range(0, total, cfg.minibatch)
            ]
        for pick in slices:
            if pick is None:
                mb_input, mb_nat = eval_input, natives
                mb_adv, mb_ret, mb_old = adv_t, ret_t, old_t
            else:
                if agent.kind == "mpnn":
                    width = buffer.obs.shape[2]
                    rows = (pick[:, None] * width + np.arange(width)).ravel()
                    mb_input = agent.batch_for(
                        obs_graph, eval_input.features[rows], pick.size
                    )
                else:
                    mb_input = eval_input[pick]
                mb_nat = natives[pick]
                mb_adv = Tensor(adv[pick, None])
                mb_ret = Tensor(returns[pick])
                mb_old = Tensor(old_lp[pick])
            lp, ent, val = agent.evaluate_actions(mb_input, mb_nat)
            ratio = ad.exp(ad.sub(lp, mb_old))
            surr = ad.minimum(
                ad.mul(ratio, mb_adv),
                ad.mul(ad.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), mb_adv),
            )
            policy_term = ad.neg(ad.tmean(surr))
            value_term = ad.tmean(ad.square(ad.sub(val, mb_ret)))
            entropy_term = ad.tmean(ent)
            loss = ad.add(
                ad.add(policy_term, ad.mul(value_term, Tensor(cfg.c_value))),
                ad.mul(entropy_term, Tensor(-cfg.c_entropy)),
            )
            agent.params.zero_grad()
            loss.backward()
            grads = agent.params.collect_grads()
            for name, g in grads.items():
                if not np.all(np.isfinite(g)):
                    raise NonFinite(f"gradient for {name} went non-finite")
            norm = clip_grad_norm(grads, cfg.max_grad_norm)
            adam_step(agent.params, grads, adam_state, lr=cfg.lr)
            stats.append(
                UpdateStats(
                    policy_loss=float(policy_term.data),
                    value_loss=float(value_term.data),
                    entropy=float(entropy_term.data),
                    grad_norm=norm,
                    ratio_max=float(ratio.data.max()),
                )
            )
    return stats


@dataclass
class TrainResult:
    curve: list  # (update index, env steps so far, mean episode return)
    stats: list
    agent: object


def train(cfg: PpoConfig, agent, topo: NetworkTopology) -> TrainResult:
    """Full training run; deterministic for a given config and agent init."""
    cfg.validate()
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    reset_rng = np.random.default_rng(seeds[0])
    action_rng = np.random.default_rng(seeds[1])
    shuffle_rng = np.random.default_rng(seeds[2])
    envs = [
        BlueEnv(
            topo,
            cfg.red_kind,
            episode_len=cfg.episode_len,
            p_detect=cfg.p_detect,
            exploit_success_prob=cfg.exploit_success_prob,
            seed=int(reset_rng.integers(2**31 - 1)),
        )
        for _ in range(cfg.n_envs)
    ]
    obs_graph = envs[0].obs_graph() if agent.kind == "mpnn" else None
    adam_state = AdamState()
    n_updates = cfg.total_steps // cfg.buffer_size
    curve: list = []
    all_stats: list = []
    for u in range(n_updates):
        buffer = collect_rollouts(envs, agent, cfg, reset_rng, action_rng)
        compute_gae(buffer, cfg.gamma, cfg.gae_lambda)
        stats = ppo_update(agent, buffer, cfg, adam_state, shuffle_rng, obs_graph)
        all_stats.extend(stats)
        mean_ret = (
            float(np.mean(buffer.episode_returns)) if buffer.episode_returns else float("nan")
        )
        curve.append((u, (u + 1) * cfg.buffer_size, mean_ret))
    return TrainResult(curve=curve, stats=all_stats, agent=agent)


def write_curve_csv(path, curve: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["update", "env_steps", "mean_episode_return"])
        for row in curve:
            writer.writerow(row)


def config_snapshot(cfg: PpoConfig) -> dict:
    doc = asdict(cfg)
    doc["red_kind"] = cfg.red_kind.value
    return doc
