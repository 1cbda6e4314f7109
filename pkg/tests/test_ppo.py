"""Tests for rollout collection, advantage estimation, and the clipped
surrogate update.

The advantage recursion is checked against a brute-force discounted sum,
the loss arithmetic against an independent numpy transcription, and the
training loop for bitwise determinism.
"""

import csv
from dataclasses import replace

import numpy as np
import pytest

from graphshield import autodiff as ad
from graphshield.agents import ActStep, MlpAgent, MpnnAgent
from graphshield.autodiff import AdamState, Tensor
from graphshield.env import BlueEnv
from graphshield.errors import NonFinite
from graphshield.policy import MpnnConfig, RepVariant
from graphshield.ppo import (
    PpoConfig,
    RolloutBuffer,
    collect_rollouts,
    compute_gae,
    config_snapshot,
    ppo_update,
    train,
    write_curve_csv,
)
from graphshield.simulator import BlueAction, RedKind


def random_buffer(rng, n, t_len):
    """Synthetic buffer with random boundaries for exercising the GAE math."""
    boundary = rng.random((n, t_len)) < 0.3
    return RolloutBuffer(
        obs=np.zeros((n, t_len, 4)),
        natives=np.zeros((n, t_len, 1), dtype=np.int64),
        logprobs=np.zeros((n, t_len)),
        values=rng.normal(size=(n, t_len)),
        rewards=rng.normal(size=(n, t_len)),
        boundary=boundary,
        bootstrap=rng.normal(size=(n, t_len)) * boundary,
        tail_values=rng.normal(size=n),
    )


def gae_reference(buf, gamma, lam):
    """Brute force: A_t = sum_j (gamma*lam)^(j-t) * delta_j, stopping at the
    first episode boundary at or after t (the boundary step itself included,
    with its stored bootstrap value as the successor)."""
    n, t_len = buf.rewards.shape
    adv = np.zeros((n, t_len))
    for k in range(n):
        nxt = np.zeros(t_len)
        for t in range(t_len):
            if buf.boundary[k, t]:
                nxt[t] = buf.bootstrap[k, t]
            elif t == t_len - 1:
                nxt[t] = buf.tail_values[k]
            else:
                nxt[t] = buf.values[k, t + 1]
        delta = buf.rewards[k] + gamma * nxt - buf.values[k]
        for t in range(t_len):
            acc, disc = 0.0, 1.0
            for j in range(t, t_len):
                acc += disc * delta[j]
                disc *= gamma * lam
                if buf.boundary[k, j]:
                    break
            adv[k, t] = acc
    return adv


class TestGae:
    def test_matches_brute_force_on_random_sequences(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            t_len = int(rng.integers(1, 13))
            gamma, lam = rng.random(), rng.random()
            buf = random_buffer(rng, 1, t_len)
            compute_gae(buf, gamma, lam)
            expect = gae_reference(buf, gamma, lam)
            assert np.allclose(buf.advantages, expect, atol=1e-10)
            assert np.array_equal(buf.returns, buf.advantages + buf.values)

    def test_lambda_zero_reduces_to_td_residual(self):
        rng = np.random.default_rng(1)
        buf = random_buffer(rng, 3, 8)
        compute_gae(buf, 0.97, 0.0)
        expect = gae_reference(buf, 0.97, 0.0)
        for k in range(3):
            for t in range(8):
                # With lam = 0 the advantage is the one-step TD error.
                assert buf.advantages[k, t] == pytest.approx(expect[k, t], abs=1e-12)

    def test_lambda_one_telescopes_to_discounted_return(self):
        rng = np.random.default_rng(2)
        buf = random_buffer(rng, 1, 6)
        buf.boundary[:] = False
        buf.bootstrap[:] = 0.0
        compute_gae(buf, 0.9, 1.0)
        for t in range(6):
            tail = sum(0.9 ** (j - t) * buf.rewards[0, j] for j in range(t, 6))
            tail += 0.9 ** (6 - t) * buf.tail_values[0]
            assert buf.advantages[0, t] == pytest.approx(tail - buf.values[0, t], abs=1e-10)

    def test_single_transition_closed_form(self):
        buf = random_buffer(np.random.default_rng(3), 1, 1)
        buf.rewards[:] = -1.0
        buf.values[:] = 0.0
        buf.boundary[:] = True
        buf.bootstrap[:] = 0.0
        compute_gae(buf, 0.99, 0.95)
        assert buf.advantages[0, 0] == -1.0
        assert buf.returns[0, 0] == -1.0

    def test_boundary_advantage_uses_bootstrap_value(self):
        buf = random_buffer(np.random.default_rng(4), 1, 5)
        buf.boundary[:] = False
        buf.boundary[0, 2] = True
        buf.bootstrap[0, 2] = 4.0
        compute_gae(buf, 0.9, 0.8)
        expect = buf.rewards[0, 2] + 0.9 * 4.0 - buf.values[0, 2]
        assert buf.advantages[0, 2] == pytest.approx(expect, abs=1e-12)

    def test_boundary_isolates_segments(self):
        # Changing rewards after a boundary must not touch advantages before it.
        rng = np.random.default_rng(5)
        buf = random_buffer(rng, 1, 8)
        buf.boundary[:] = False
        buf.boundary[0, 3] = True
        compute_gae(buf, 0.99, 0.95)
        before = buf.advantages[0, :4].copy()
        buf.rewards[0, 4:] += 100.0
        compute_gae(buf, 0.99, 0.95)
        assert np.array_equal(buf.advantages[0, :4], before)


class SumValueStub:
    """Sleep-only agent whose value function is the observation sum, making
    bootstrap values recomputable from outside the rollout loop."""

    kind = "mlp"

    def encode_obs(self, env):
        return env.obs_vector()

    def values_batch(self, obs_matrix):
        return obs_matrix.sum(axis=1)

    def act_batch(self, envs, rng, greedy=False):
        return [
            ActStep(
                blue=BlueAction.sleep(),
                native=(0,),
                logprob=0.0,
                value=float(e.obs_vector().sum()),
            )
            for e in envs
        ]


def meander_envs(topo, n, episode_len, seed0=100):
    return [
        BlueEnv(topo, RedKind.MEANDER, episode_len=episode_len, seed=seed0 + k)
        for k in range(n)
    ]


class TestRolloutCollection:
    def cfg(self, n, t_len, **kw):
        base = dict(
            total_steps=n * t_len,
            n_envs=n,
            steps_per_env=t_len,
            minibatch=n * t_len,
            epochs=1,
            advantage_norm=False,
        )
        base.update(kw)
        return PpoConfig(**base)

    def test_layout_and_boundary_pattern(self, base_topo):
        agent = MlpAgent.for_topology(base_topo, seed=0, hidden=16)
        envs = meander_envs(base_topo, 2, episode_len=4)
        buf = collect_rollouts(
            envs, agent, self.cfg(2, 10), np.random.default_rng(1), np.random.default_rng(2)
        )
        assert buf.obs.shape == (2, 10, 4 * base_topo.n_hosts)
        assert buf.natives.shape == (2, 10, 1) and buf.natives.dtype == np.int64
        assert buf.n_transitions == 20
        # Episodes truncate every 4 steps; the last partial one never does.
        expect = np.zeros((2, 10), dtype=bool)
        expect[:, [3, 7]] = True
        assert np.array_equal(buf.boundary, expect)
        assert np.all(buf.bootstrap[~buf.boundary] == 0.0)
        assert len(buf.episode_returns) == 4

    def test_episode_returns_are_reward_sums(self, base_topo):
        agent = MlpAgent.for_topology(base_topo, seed=0, hidden=16)
        envs = meander_envs(base_topo, 2, episode_len=4)
        buf = collect_rollouts(
            envs, agent, self.cfg(2, 10), np.random.default_rng(1), np.random.default_rng(2)
        )
        # Truncations land in lockstep, so returns interleave env-by-env.
        expect = [
            buf.rewards[0, :4].sum(),
            buf.rewards[1, :4].sum(),
            buf.rewards[0, 4:8].sum(),
            buf.rewards[1, 4:8].sum(),
        ]
        assert buf.episode_returns == pytest.approx(expect, abs=1e-12)

    def test_bootstrap_is_the_stopped_state_value(self, base_topo):
        # The truncation bootstrap must evaluate the state the episode ended
        # in, not the freshly reset one. Twin envs replay the same episode to
        # recover that state independently.
        stub = SumValueStub()
        envs = meander_envs(base_topo, 2, episode_len=3, seed0=7)
        buf = collect_rollouts(
            envs, stub, self.cfg(2, 3), np.random.default_rng(1), np.random.default_rng(2)
        )
        for k in range(2):
            twin = BlueEnv(base_topo, RedKind.MEANDER, episode_len=3, seed=7 + k)
            for _ in range(3):
                twin.step(BlueAction.sleep())
            assert buf.boundary[k, 2]
            assert buf.bootstrap[k, 2] == twin.obs_vector().sum()
            assert buf.episode_returns[k] == twin.episode_reward

    def test_envs_reset_after_final_truncation(self, base_topo):
        agent = MlpAgent.for_topology(base_topo, seed=0, hidden=16)
        envs = meander_envs(base_topo, 2, episode_len=3)
        collect_rollouts(
            envs, agent, self.cfg(2, 3), np.random.default_rng(1), np.random.default_rng(2)
        )
        for env in envs:
            assert env.state.step == 0
            assert env.episode_reward == 0.0

    def test_collection_is_deterministic(self, base_topo):
        buffers = []
        for _ in range(2):
            agent = MlpAgent.for_topology(base_topo, seed=3, hidden=16)
            envs = meander_envs(base_topo, 2, episode_len=5)
            buffers.append(
                collect_rollouts(
                    envs,
                    agent,
                    self.cfg(2, 10),
                    np.random.default_rng(1),
                    np.random.default_rng(2),
                )
            )
        a, b = buffers
        for field_name in ("obs", "natives", "logprobs", "values", "rewards", "boundary", "bootstrap", "tail_values"):
            assert np.array_equal(getattr(a, field_name), getattr(b, field_name))
        assert a.episode_returns == b.episode_returns


class TestPpoUpdate:
    def collected(self, topo, agent, **cfg_kw):
        base = dict(
            total_steps=12,
            n_envs=2,
            steps_per_env=6,
            minibatch=12,
            epochs=1,
            episode_len=3,
            advantage_norm=False,
        )
        base.update(cfg_kw)
        cfg = PpoConfig(**base)
        envs = meander_envs(topo, 2, episode_len=cfg.episode_len)
        buf = collect_rollouts(envs, agent, cfg, np.random.default_rng(1), np.random.default_rng(2))
        compute_gae(buf, cfg.gamma, cfg.gae_lambda)
        return cfg, buf

    def test_first_epoch_ratio_is_one(self, train_topo):
        agent = MlpAgent.for_topology(train_topo, seed=0, hidden=16)
        cfg, buf = self.collected(train_topo, agent)
        stats = ppo_update(agent, buf, cfg, AdamState(), np.random.default_rng(0))
        assert stats[0].ratio_max == pytest.approx(1.0, abs=1e-9)

    def test_first_epoch_policy_loss_is_minus_mean_advantage(self, train_topo):
        # At ratio 1 the clipped surrogate collapses to the raw advantage.
        agent = MlpAgent.for_topology(train_topo, seed=0, hidden=16)
        cfg, buf = self.collected(train_topo, agent)
        stats = ppo_update(agent, buf, cfg, AdamState(), np.random.default_rng(0))
        assert stats[0].policy_loss == pytest.approx(-buf.advantages.mean(), abs=1e-9)

    def test_advantage_norm_zeroes_first_policy_loss(self, train_topo):
        agent = MlpAgent.for_topology(train_topo, seed=0, hidden=16)
        cfg, buf = self.collected(train_topo, agent, advantage_norm=True)
        stats = ppo_update(agent, buf, cfg, AdamState(), np.random.default_rng(0))
        assert stats[0].policy_loss == pytest.approx(0.0, abs=1e-9)

    def test_loss_terms_match_manual_computation(self, train_topo):
        agent = MlpAgent.for_topology(train_topo, seed=2, hidden=8)
        width = agent.cfg.input_width
        rng = np.random.default_rng(6)
        obs = rng.integers(0, 2, size=(1, 3, width)).astype(float)
        natives = np.array([[[0], [1], [2]]], dtype=np.int64)
        with ad.no_grad():
            lp0, ent0, val0 = agent.evaluate_actions(obs.reshape(3, width), natives.reshape(3, 1))
        # Offsets push one ratio below and one above the clip range.
        old = lp0.data[:, 0] + np.array([-0.5, 0.0, 0.5])
        buf = RolloutBuffer(
            obs=obs,
            natives=natives,
            logprobs=old.reshape(1, 3),
            values=np.zeros((1, 3)),
            rewards=np.zeros((1, 3)),
            boundary=np.zeros((1, 3), dtype=bool),
            bootstrap=np.zeros((1, 3)),
            tail_values=np.zeros(1),
        )
        buf.advantages = np.array([[2.0, -1.0, 0.5]])
        buf.returns = np.array([[0.3, -1.2, 0.8]])
        cfg = PpoConfig(
            total_steps=3,
            n_envs=1,
            steps_per_env=3,
            minibatch=3,
            epochs=1,
            clip=0.3,
            c_value=0.5,
            c_entropy=0.01,
            advantage_norm=False,
        )
        stats = ppo_update(agent, buf, cfg, AdamState(), np.random.default_rng(0))

        ratio = np.exp(lp0.data - old[:, None])
        adv = buf.advantages.reshape(3, 1)
        surr = np.minimum(ratio * adv, np.clip(ratio, 0.7, 1.3) * adv)
        assert stats[0].policy_loss == pytest.approx(-surr.mean(), abs=1e-12)
        expect_value = ((val0.data - buf.returns.reshape(3, 1)) ** 2).mean()
        assert stats[0].value_loss == pytest.approx(expect_value, abs=1e-12)
        assert stats[0].entropy == pytest.approx(ent0.data.mean(), abs=1e-12)
        assert stats[0].ratio_max == pytest.approx(np.exp(0.5), abs=1e-12)

    def test_surrogate_gradient_matches_vanilla_pg_at_old_params(self, train_topo):
        # With the clip range wide open and ratios at 1, the surrogate's
        # gradient must point along the plain policy-gradient direction.
        agent = MlpAgent.for_topology(train_topo, seed=4, hidden=16)
        _, buf = self.collected(train_topo, agent)
        total = buf.n_transitions
        flat_obs = buf.obs.reshape(total, -1)
        natives = buf.natives.reshape(total, 1)
        adv_t = Tensor(buf.advantages.reshape(total, 1))
        old_t = Tensor(buf.logprobs.reshape(total, 1))

        def grad_vector():
            vec = agent.params.collect_grads()
            return np.concatenate([vec[name].ravel() for name in sorted(vec)])

        lp, _, _ = agent.evaluate_actions(flat_obs, natives)
        ratio = ad.exp(ad.sub(lp, old_t))
        surr = ad.minimum(
            ad.mul(ratio, adv_t), ad.mul(ad.clip(ratio, 1.0 - 1e9, 1.0 + 1e9), adv_t)
        )
        agent.params.zero_grad()
        ad.neg(ad.tmean(surr)).backward()
        g_clip = grad_vector()

        lp, _, _ = agent.evaluate_actions(flat_obs, natives)
        agent.params.zero_grad()
        ad.neg(ad.tmean(ad.mul(lp, adv_t))).backward()
        g_pg = grad_vector()

        cosine = g_clip @ g_pg / (np.linalg.norm(g_clip) * np.linalg.norm(g_pg))
        assert cosine > 0.999

    def test_nonfinite_advantages_abort(self, train_topo):
        agent = MlpAgent.for_topology(train_topo, seed=0, hidden=8)
        cfg, buf = self.collected(train_topo, agent)
        buf.advantages[0, 0] = np.nan
        with pytest.raises(NonFinite):
            ppo_update(agent, buf, cfg, AdamState(), np.random.default_rng(0))

    def test_minibatch_slicing_counts(self, train_topo):
        agent = MlpAgent.for_topology(train_topo, seed=0, hidden=8)
        cfg, buf = self.collected(train_topo, agent, minibatch=6, epochs=3)
        stats = ppo_update(agent, buf, cfg, AdamState(), np.random.default_rng(0))
        assert len(stats) == 6  # two shuffled slices per epoch
        cfg, buf = self.collected(train_topo, agent, minibatch=12, epochs=3)
        stats = ppo_update(agent, buf, cfg, AdamState(), np.random.default_rng(0))
        assert len(stats) == 3  # full-batch path: one step per epoch

    def test_update_moves_parameters(self, train_topo):
        agent = MlpAgent.for_topology(train_topo, seed=0, hidden=8)
        cfg, buf = self.collected(train_topo, agent)
        before = {n: t.data.copy() for n, t in agent.params.tensors()}
        ppo_update(agent, buf, cfg, AdamState(), np.random.default_rng(0))
        assert any(
            not np.array_equal(before[n], t.data) for n, t in agent.params.tensors()
        )

    def test_stats_are_finite(self, train_topo):
        agent = MlpAgent.for_topology(train_topo, seed=0, hidden=8)
        cfg, buf = self.collected(train_topo, agent, epochs=4)
        for s in ppo_update(agent, buf, cfg, AdamState(), np.random.default_rng(0)):
            assert np.isfinite([s.policy_loss, s.value_loss, s.entropy, s.grad_norm, s.ratio_max]).all()
            assert s.grad_norm >= 0.0


class TestTrainLoop:
    def test_training_is_bitwise_deterministic(self, train_topo):
        results = []
        for _ in range(2):
            agent = MlpAgent.for_topology(train_topo, seed=7, hidden=16)
            cfg = PpoConfig(
                total_steps=100,
                n_envs=2,
                steps_per_env=25,
                minibatch=50,
                epochs=2,
                episode_len=25,
                seed=7,
            )
            results.append(train(cfg, agent, train_topo))
        a, b = results
        assert a.curve == b.curve
        tensors_b = dict(b.agent.params.tensors())
        for name, t in a.agent.params.tensors():
            assert np.array_equal(t.data, tensors_b[name].data)

    def test_curve_rows_count_env_steps(self, train_topo):
        agent = MlpAgent.for_topology(train_topo, seed=1, hidden=16)
        cfg = PpoConfig(
            total_steps=100,
            n_envs=2,
            steps_per_env=25,
            minibatch=50,
            epochs=1,
            episode_len=25,
            seed=1,
        )
        result = train(cfg, agent, train_topo)
        assert [(r[0], r[1]) for r in result.curve] == [(0, 50), (1, 100)]
        for r in result.curve:
            assert np.isfinite(r[2])  # episodes complete, so the mean exists

    def test_mpnn_training_smoke(self, train_topo):
        # Covers the graph-batched evaluation path, including minibatch
        # row gathering, on a deliberately tiny model.
        agent = MpnnAgent(
            MpnnConfig(layers=2, embedding=8, variant=RepVariant.LOCAL), seed=0
        )
        cfg = PpoConfig(
            total_steps=20,
            n_envs=2,
            steps_per_env=10,
            minibatch=10,
            epochs=2,
            episode_len=5,
            seed=0,
        )
        result = train(cfg, agent, train_topo)
        assert len(result.curve) == 1
        assert len(result.stats) == 4
        assert all(np.isfinite(s.policy_loss) for s in result.stats)

    def test_learning_improves_the_flat_baseline(self, train_topo):
        # Short desk-scale run: the score trend over updates must point up.
        agent = MlpAgent.for_topology(train_topo, seed=3, hidden=64)
        cfg = PpoConfig(total_steps=15 * 1920, seed=3)
        result = train(cfg, agent, train_topo)
        returns = [row[2] for row in result.curve]
        assert np.mean(returns[-5:]) > np.mean(returns[:5])


class TestConfig:
    def test_defaults_validate(self):
        cfg = PpoConfig()
        cfg.validate()
        assert cfg.buffer_size == 1920

    def test_rejects_empty_rollout(self):
        with pytest.raises(ValueError, match="at least one environment"):
            PpoConfig(n_envs=0).validate()

    def test_rejects_oversized_minibatch(self):
        with pytest.raises(ValueError, match="minibatch"):
            PpoConfig(minibatch=1921).validate()
        with pytest.raises(ValueError, match="minibatch"):
            PpoConfig(minibatch=0).validate()

    def test_rejects_budget_below_one_buffer(self):
        with pytest.raises(ValueError, match="at least one buffer"):
            PpoConfig(total_steps=1919).validate()

    def test_rejects_degenerate_clip(self):
        with pytest.raises(ValueError, match="clip range"):
            PpoConfig(clip=0.0).validate()

    def test_rejects_discounts_outside_unit_interval(self):
        with pytest.raises(ValueError, match="gamma and lambda"):
            PpoConfig(gamma=1.5).validate()
        with pytest.raises(ValueError, match="gamma and lambda"):
            PpoConfig(gae_lambda=-0.1).validate()

    def test_snapshot_serializes_red_kind(self):
        doc = config_snapshot(PpoConfig(seed=9))
        assert doc["red_kind"] == "meander"
        assert doc["seed"] == 9
        assert RedKind(doc["red_kind"]) is RedKind.MEANDER

    def test_curve_csv_round_trip(self, tmp_path):
        curve = [(0, 1920, -200.5), (1, 3840, -150.25)]
        path = tmp_path / "curve.csv"
        write_curve_csv(path, curve)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["update", "env_steps", "mean_episode_return"]
        assert rows[1] == ["0", "1920", "-200.5"]
        assert rows[2] == ["1", "3840", "-150.25"]
