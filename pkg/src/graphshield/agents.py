"""Agents: trainable policies and scripted references behind one interface.

Every agent can `select` a game action for one environment. Trainable
agents additionally batch their forward passes across environments during
rollouts and re-evaluate stored actions differentiably during updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import policy as pol
from .autodiff import ParamSet, Tensor, load_checkpoint, save_checkpoint
from .env import BlueEnv
from .observation import ObsGraph, decode_flat_action, flat_action_dim
from .simulator import COMMAND_SET, BlueAction, BlueCommand
from .topology import NetworkTopology


@dataclass
class ActStep:
    """One sampled decision: game action, native action, log-prob, value."""

    blue: BlueAction
    native: tuple
    logprob: float
    value: float


class SleepPolicy:
    """Does nothing, forever. The floor any defense must beat."""

    def select(self, env: BlueEnv, rng, greedy: bool = False) -> BlueAction:
        return BlueAction.sleep()


class PivotRestorePolicy:
    """Restores any host whose exploit was just detected.

    With perfect detection this keeps the direct attacker stuck re-taking
    its pivot and never concedes an impact; a strong scripted reference.
    """

    def select(self, env: BlueEnv, rng, greedy: bool = False) -> BlueAction:
        hits = env.state.last_events.detected_exploits
        actionable = [h for h in env.topo.actionable_hosts if h in hits]
        if actionable:
            return BlueAction.restore(actionable[0])
        return BlueAction.sleep()


def _structure_key(obs: ObsGraph) -> tuple:
    return (obs.n_nodes, obs.edges, obs.action_mask.tobytes())


class MpnnAgent:
    """The relational defender. Runs on any topology it is handed."""

    kind = "mpnn"

    def __init__(self, cfg: pol.MpnnConfig, params: ParamSet | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else pol.init_mpnn_params(cfg, seed)
        self._layouts: dict = {}

    # -- observation plumbing -------------------------------------------

    def encode_obs(self, env: BlueEnv) -> np.ndarray:
        return env.obs_graph().node_features

    def _layout(self, obs: ObsGraph, copies: int) -> pol.GraphBatch:
        key = (_structure_key(obs), copies)
        layout = self._layouts.get(key)
        if layout is None:
            layout = pol.replicate_batch(obs, copies)
            self._layouts[key] = layout
        return layout

    def batch_for(
        self, obs: ObsGraph, features: np.ndarray, copies: int
    ) -> pol.GraphBatch:
        """Batch of `copies` graphs sharing obs's structure, with the given
        stacked features (copies * n_nodes, 4)."""
        return self._layout(obs, copies).with_features(features)

    # -- acting ----------------------------------------------------------

    def act_batch(
        self, envs: list, rng: np.random.Generator, greedy: bool = False
    ) -> list:
        obs0 = envs[0].obs_graph()
        feats = np.concatenate([self.encode_obs(e) for e in envs], axis=0)
        batch = self.batch_for(obs0, feats, len(envs))
        with ad.no_grad():
            out = pol.policy_output_batch(self.params, self.cfg, batch)
        actions, logps = pol.sample_actions(out, rng, greedy=greedy)
        steps = []
        for k, env in enumerate(envs):
            a = actions[k]
            steps.append(
                ActStep(
                    blue=self._to_blue(env.topo, a),
                    native=(a.node, a.command),
                    logprob=float(logps[k]),
                    value=float(out.value.data[k, 0]),
                )
            )
        return steps

    def select(self, env: BlueEnv, rng, greedy: bool = False) -> BlueAction:
        return self.act_batch([env], rng, greedy=greedy)[0].blue

    def values_batch(self, obs: ObsGraph, features: np.ndarray, copies: int) -> np.ndarray:
        batch = self.batch_for(obs, features, copies)
        with ad.no_grad():
            _, g = pol.mpnn_forward_batch(self.params, self.cfg, batch)
            val = ad.linear(g, self.params["psi_val"])
        return val.data[:, 0].copy()

    @staticmethod
    def _to_blue(topo: NetworkTopology, action: pol.AgentAction) -> BlueAction:
        cmd = COMMAND_SET[action.command]
        if cmd is BlueCommand.SLEEP:
            return BlueAction.sleep()
        return BlueAction(cmd, topo.nodes[action.node].id)

    # -- training --------------------------------------------------------

    def evaluate_actions(
        self, batch: pol.GraphBatch, natives: np.ndarray
    ) -> tuple[Tensor, Tensor, Tensor]:
        """Differentiable (log-prob, entropy, value), each (B, 1)."""
        out = pol.policy_output_batch(self.params, self.cfg, batch)
        acts = [pol.AgentAction(int(n), int(c)) for n, c in natives]
        return pol.joint_log_prob(out, acts), pol.entropy(out), out.value

    # -- persistence -----------------------------------------------------

    def config_dict(self) -> dict:
        return {
            "agent": self.kind,
            "variant": self.cfg.variant.value,
            "layers": self.cfg.layers,
            "embedding": self.cfg.embedding,
            "command_set": [c.value for c in COMMAND_SET],
        }

    def save(self, path) -> None:
        save_checkpoint(path, self.params, self.config_dict())

    @classmethod
    def from_config(cls, config: dict, params: ParamSet) -> "MpnnAgent":
        cfg = pol.MpnnConfig(
            layers=int(config["layers"]),
            embedding=int(config["embedding"]),
            variant=pol.RepVariant(config["variant"]),
        )
        return cls(cfg, params=params)


class MlpAgent:
    """Flat baseline, welded to one observation and action width."""

    kind = "mlp"

    def __init__(self, cfg: pol.MlpConfig, params: ParamSet | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else pol.init_mlp_params(cfg, seed)

    @classmethod
    def for_topology(cls, topo: NetworkTopology, seed: int = 0, hidden: int = 256) -> "MlpAgent":
        cfg = pol.MlpConfig(
            input_width=4 * topo.n_hosts,
            n_actions=flat_action_dim(topo),
            hidden=hidden,
        )
        return cls(cfg, seed=seed)

    def encode_obs(self, env: BlueEnv) -> np.ndarray:
        return env.obs_vector()

    def act_batch(
        self, envs: list, rng: np.random.Generator, greedy: bool = False
    ) -> list:
        obs = np.stack([self.encode_obs(e) for e in envs], axis=0)
        with ad.no_grad():
            log_probs, val = pol.mlp_policy(self.params, self.cfg, obs)
        steps = []
        for k, env in enumerate(envs):
            lp = log_probs.data[k]
            p = np.exp(lp)
            p /= p.sum()
            a = int(np.argmax(p)) if greedy else int(rng.choice(p.size, p=p))
            steps.append(
                ActStep(
                    blue=decode_flat_action(a, env.topo),
                    native=(a,),
                    logprob=float(lp[a]),
                    value=float(val.data[k, 0]),
                )
            )
        return steps

    def select(self, env: BlueEnv, rng, greedy: bool = False) -> BlueAction:
        return self.act_batch([env], rng, greedy=greedy)[0].blue

    def values_batch(self, obs_matrix: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            _, val = pol.mlp_policy(self.params, self.cfg, obs_matrix)
        return val.data[:, 0].copy()

    def evaluate_actions(
        self, obs_matrix: np.ndarray, natives: np.ndarray
    ) -> tuple[Tensor, Tensor, Tensor]:
        log_probs, val = pol.mlp_policy(self.params, self.cfg, obs_matrix)
        n = obs_matrix.shape[0]
        onehot = np.zeros((n, self.cfg.n_actions))
        onehot[np.arange(n), natives[:, 0]] = 1.0
        lp = ad.tsum(ad.mul(log_probs, Tensor(onehot)), axis=1, keepdims=True)
        p = ad.exp(log_probs)
        ent = ad.neg(ad.tsum(ad.mul(p, log_probs), axis=1, keepdims=True))
        return lp, ent, val

    def config_dict(self) -> dict:
        return {
            "agent": self.kind,
            "input_width": self.cfg.input_width,
            "n_actions": self.cfg.n_actions,
            "hidden": self.cfg.hidden,
            "n_layers": self.cfg.n_layers,
        }

    def save(self, path) -> None:
        save_checkpoint(path, self.params, self.config_dict())

    @classmethod
    def from_config(cls, config: dict, params: ParamSet) -> "MlpAgent":
        cfg = pol.MlpConfig(
            input_width=int(config["input_width"]),
            n_actions=int(config["n_actions"]),
            hidden=int(config["hidden"]),
            n_layers=int(config["n_layers"]),
        )
        return cls(cfg, params=params)


def load_agent(path):
    """Load a checkpoint as the right agent class."""
    params, config = load_checkpoint(path)
    if config.get("agent") == MpnnAgent.kind:
        return MpnnAgent.from_config(config, params)
    if config.get("agent") == MlpAgent.kind:
        return MlpAgent.from_config(config, params)
    raise ValueError(f"checkpoint {path} has unknown agent kind {config.get('agent')}")
