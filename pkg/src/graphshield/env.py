"""Blue-side episode wrapper: simulator plus the defender's belief.

Keeps the bookkeeping every training and evaluation loop needs in one
place: step the game, fold detector events into the belief, accumulate the
episode score, and expose both observation encodings.
"""

from __future__ import annotations

import numpy as np

from . import simulator as sim
from .observation import (
    ObsGraph,
    encode_graph,
    encode_vector,
    initial_belief,
    update_belief,
)
from .simulator import BlueAction, RedKind, RewardTable, StepOutcome
from .topology import NetworkTopology


class BlueEnv:
    def __init__(
        self,
        topo: NetworkTopology,
        red_kind: RedKind,
        *,
        reward_table: RewardTable | None = None,
        episode_len: int = 100,
        p_detect: float = 0.9,
        exploit_success_prob: float = 1.0,
        seed: int = 0,
    ):
        self.topo = topo
        self.red_kind = red_kind
        self.reward_table = reward_table
        self.episode_len = episode_len
        self.p_detect = p_detect
        self.exploit_success_prob = exploit_success_prob
        self.state: sim.SimState
        self.belief: dict
        self.episode_reward = 0.0
        self.reset(seed)

    def reset(self, seed: int) -> "BlueEnv":
        self.state = sim.reset(
            self.topo,
            self.red_kind,
            self.reward_table,
            seed,
            episode_len=self.episode_len,
            p_detect=self.p_detect,
            exploit_success_prob=self.exploit_success_prob,
        )
        self.belief = initial_belief(self.topo)
        self.episode_reward = 0.0
        return self

    def step(self, action: BlueAction) -> StepOutcome:
        self.state, outcome = sim.step(self.state, action)
        self.belief = update_belief(self.belief, self.state.last_events)
        self.episode_reward += outcome.reward
        return outcome

    @property
    def done(self) -> bool:
        return self.state.step >= self.episode_len

    def obs_graph(self) -> ObsGraph:
        return encode_graph(self.belief, self.topo)

    def obs_vector(self) -> np.ndarray:
        return encode_vector(self.belief, self.topo)
