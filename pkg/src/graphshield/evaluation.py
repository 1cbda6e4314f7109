"""Evaluation harness: scored episodes, the six-cell challenge battery, and
the cross-topology generalization suite.

An episode's score is its summed reward; zero is unimprovable, so the rate
of exactly-zero episodes is reported alongside the mean. Every cell runs
with per-episode seeds derived from one base seed, which makes whole
reports reproducible and comparable across policies.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agents import load_agent
from .env import BlueEnv
from .errors import InputWidthMismatch
from .simulator import RedKind, RewardTable
from .topology import NetworkTopology, VariantSpec, apply_variant, build_cage2_topology

CHALLENGE_LENGTHS = (30, 50, 100)


@dataclass(frozen=True)
class EvalCell:
    red: RedKind
    episode_len: int
    n_episodes: int
    mean_reward: float
    std_reward: float
    perfect_rate: float


@dataclass
class EvalReport:
    cells: list

    @property
    def total_score(self) -> float:
        return float(sum(c.mean_reward for c in self.cells))

    @property
    def perfect_rate(self) -> float:
        if not self.cells:
            return 0.0
        return float(np.mean([c.perfect_rate for c in self.cells]))


def _run_episodes(args) -> list:
    (policy, topo, red, episode_len, seeds, greedy, table, p_detect, succ) = args
    totals = []
    for s in seeds:
        env = BlueEnv(
            topo,
            red,
            reward_table=table,
            episode_len=episode_len,
            p_detect=p_detect,
            exploit_success_prob=succ,
            seed=s,
        )
        rng = np.random.default_rng([s, 0x5EED])
        total = 0.0
        for _ in range(episode_len):
            total += env.step(policy.select(env, rng, greedy=greedy)).reward
        totals.append(total)
    return totals


def evaluate(
    policy,
    topo: NetworkTopology,
    red: RedKind,
    episode_len: int,
    n_episodes: int,
    seed: int,
    *,
    reward_table: RewardTable | None = None,
    p_detect: float = 0.9,
    exploit_success_prob: float = 1.0,
    greedy: bool = False,
    jobs: int = 1,
) -> EvalCell:
    """Score a policy over n_episodes episodes with seeds seed..seed+n-1."""
    seeds = list(range(seed, seed + n_episodes))
    if jobs > 1 and n_episodes > 1:
        chunks = np.array_split(np.asarray(seeds), jobs)
        work = [
            (policy, topo, red, episode_len, chunk.tolist(), greedy, reward_table, p_detect, exploit_success_prob)
            for chunk in chunks
            if chunk.size
        ]
        totals: list = []
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for part in pool.map(_run_episodes, work):
                totals.extend(part)
    else:
        totals = _run_episodes(
            (policy, topo, red, episode_len, seeds, greedy, reward_table, p_detect, exploit_success_prob)
        )
    arr = np.asarray(totals, dtype=np.float64)
    if arr.size == 0:
        return EvalCell(red, episode_len, 0, 0.0, 0.0, 0.0)
    return EvalCell(
        red=red,
        episode_len=episode_len,
        n_episodes=n_episodes,
        mean_reward=float(arr.mean()),
        std_reward=float(arr.std()),
        perfect_rate=float(np.mean(arr == 0.0)),
    )


def challenge_score(
    policy,
    topo: NetworkTopology,
    seed: int,
    *,
    n_episodes: int = 200,
    episode_lens: tuple = CHALLENGE_LENGTHS,
    greedy: bool = False,
    jobs: int = 1,
    reward_table: RewardTable | None = None,
    p_detect: float = 0.9,
    exploit_success_prob: float = 1.0,
) -> EvalReport:
    """The six-cell battery: both attackers at each episode length."""
    cells = []
    cell_index = 0
    for red in (RedKind.BLINE, RedKind.MEANDER):
        for length in episode_lens:
            cells.append(
                evaluate(
                    policy,
                    topo,
                    red,
                    length,
                    n_episodes,
                    seed + cell_index * max(n_episodes, 1),
                    reward_table=reward_table,
                    p_detect=p_detect,
                    exploit_success_prob=exploit_success_prob,
                    greedy=greedy,
                    jobs=jobs,
                )
            )
            cell_index += 1
    return EvalReport(cells=cells)


@dataclass
class SuiteRow:
    variant: VariantSpec
    n_nodes: int
    mpnn: EvalReport
    mlp: EvalReport | None = None
    mlp_error: str | None = None


@dataclass
class SuiteReport:
    rows: list


def generalization_suite(
    mpnn_checkpoint,
    variants: list,
    seed: int,
    *,
    base_topo: NetworkTopology | None = None,
    mlp_checkpoints: list | None = None,
    n_episodes: int = 200,
    episode_lens: tuple = CHALLENGE_LENGTHS,
    greedy: bool = False,
    jobs: int = 1,
) -> SuiteReport:
    """Run one relational checkpoint zero-shot across every variant, with an
    optional per-variant baseline checkpoint alongside.

    A baseline that cannot run a variant (wrong input width) is recorded as
    a failure for that variant, not an error of the suite.
    """
    base = base_topo if base_topo is not None else build_cage2_topology()
    agent = load_agent(mpnn_checkpoint)
    rows = []
    for k, variant in enumerate(variants):
        topo = apply_variant(base, variant)
        mpnn_report = challenge_score(
            agent, topo, seed, n_episodes=n_episodes, episode_lens=episode_lens,
            greedy=greedy, jobs=jobs,
        )
        mlp_report = None
        mlp_error = None
        if mlp_checkpoints is not None and mlp_checkpoints[k] is not None:
            baseline = load_agent(mlp_checkpoints[k])
            try:
                mlp_report = challenge_score(
                    baseline, topo, seed, n_episodes=n_episodes,
                    episode_lens=episode_lens, greedy=greedy, jobs=jobs,
                )
            except InputWidthMismatch as exc:
                mlp_error = str(exc)
        rows.append(
            SuiteRow(
                variant=variant,
                n_nodes=len(topo.nodes),
                mpnn=mpnn_report,
                mlp=mlp_report,
                mlp_error=mlp_error,
            )
        )
    return SuiteReport(rows=rows)


# -- report files --------------------------------------------------------


def _cell_columns(report: EvalReport) -> dict:
    out = {}
    for cell in report.cells:
        key = f"{cell.red.value}_{cell.episode_len}"
        out[f"{key}_mean"] = cell.mean_reward
        out[f"{key}_perfect"] = cell.perfect_rate
    out["total"] = report.total_score
    out["perfect_rate"] = report.perfect_rate
    return out


def write_report_csv(path, agent_name: str, report: EvalReport) -> None:
    cols = _cell_columns(report)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agent", *cols.keys()])
        writer.writerow([agent_name, *cols.values()])


def write_cell_csvs(outdir, agent_name: str, variant_idx: int, report: EvalReport) -> list:
    """One small file per cell, named {agent}_{variant}_{red}_{len}.csv."""
    outdir = Path(outdir)
    written = []
    for cell in report.cells:
        path = outdir / f"{agent_name}_v{variant_idx}_{cell.red.value}_{cell.episode_len}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["agent", "variant", "red", "episode_len", "episodes", "mean", "std", "perfect_rate"]
            )
            writer.writerow(
                [
                    agent_name,
                    variant_idx,
                    cell.red.value,
                    cell.episode_len,
                    cell.n_episodes,
                    cell.mean_reward,
                    cell.std_reward,
                    cell.perfect_rate,
                ]
            )
        written.append(path)
    return written


def write_suite_csv(path, suite: SuiteReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header_done = False
        for k, row in enumerate(suite.rows):
            cols = _cell_columns(row.mpnn)
            if not header_done:
                writer.writerow(
                    ["variant", "n_nodes", "removed", *cols.keys(), "mlp_total", "mlp_note"]
                )
                header_done = True
            if row.mlp is not None:
                mlp_total, note = row.mlp.total_score, ""
            elif row.mlp_error is not None:
                mlp_total, note = "", row.mlp_error
            else:
                mlp_total, note = "", "not run"
            writer.writerow(
                [k, row.n_nodes, "+".join(row.variant.removed) or "none", *cols.values(), mlp_total, note]
            )


def suite_to_json(suite: SuiteReport) -> dict:
    def cell_doc(c: EvalCell) -> dict:
        return {
            "red": c.red.value,
            "episode_len": c.episode_len,
            "n_episodes": c.n_episodes,
            "mean_reward": c.mean_reward,
            "std_reward": c.std_reward,
            "perfect_rate": c.perfect_rate,
        }

    return {
        "rows": [
            {
                "removed": list(row.variant.removed),
                "n_nodes": row.n_nodes,
                "mpnn": {
                    "cells": [cell_doc(c) for c in row.mpnn.cells],
                    "total": row.mpnn.total_score,
                    "perfect_rate": row.mpnn.perfect_rate,
                },
                "mlp": None
                if row.mlp is None
                else {
                    "cells": [cell_doc(c) for c in row.mlp.cells],
                    "total": row.mlp.total_score,
                    "perfect_rate": row.mlp.perfect_rate,
                },
                "mlp_error": row.mlp_error,
            }
            for row in suite.rows
        ]
    }


def write_suite_json(path, suite: SuiteReport) -> None:
    Path(path).write_text(json.dumps(suite_to_json(suite), indent=2))
