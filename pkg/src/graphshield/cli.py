"""Command line entry points: variants, trace, train, eval, gradcheck."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .agents import MlpAgent, MpnnAgent, PivotRestorePolicy, SleepPolicy, load_agent
from .env import BlueEnv
from .errors import GraphShieldError
from .evaluation import (
    challenge_score,
    generalization_suite,
    write_cell_csvs,
    write_report_csv,
    write_suite_csv,
    write_suite_json,
)
from .observation import encode_graph
from .policy import (
    MpnnConfig,
    RepVariant,
    build_batch,
    init_mpnn_params,
    joint_log_prob,
    policy_output_batch,
)
from .ppo import PpoConfig, config_snapshot, train, write_curve_csv
from .simulator import Importance, RedKind, RewardTable
from .topology import (
    NetworkTopology,
    VariantSpec,
    apply_variant,
    build_cage2_topology,
    generate_variants,
    paper_variants,
)

_PPO_KEYS = {
    "total_steps", "n_envs", "steps_per_env", "minibatch", "epochs", "clip",
    "gamma", "gae_lambda", "c_value", "c_entropy", "max_grad_norm", "lr",
    "episode_len", "red_kind", "seed", "advantage_norm", "p_detect",
    "exploit_success_prob",
}
_MODEL_KEYS = {"embedding", "hidden"}
_REWARD_KEYS = {"low", "high", "critical", "impact", "restore"}


def _load_config(path: str | None) -> dict:
    """Read and validate a run-config JSON file; unknown keys are errors."""
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    allowed = _PPO_KEYS | _MODEL_KEYS | {"reward"}
    for key in doc:
        if key not in allowed:
            raise GraphShieldError(f"unknown config key: {key}")
    reward = doc.get("reward", {})
    for key in reward:
        if key not in _REWARD_KEYS:
            raise GraphShieldError(f"unknown reward key: {key}")
    return doc


def _reward_table(config: dict) -> RewardTable | None:
    reward = config.get("reward")
    if not reward:
        return None
    base = RewardTable()
    per_turn = dict(base.per_turn_privileged)
    if "low" in reward:
        per_turn[Importance.LOW] = float(reward["low"])
    if "high" in reward:
        per_turn[Importance.HIGH] = float(reward["high"])
    if "critical" in reward:
        per_turn[Importance.CRITICAL] = float(reward["critical"])
    return RewardTable(
        per_turn_privileged=per_turn,
        impact_penalty=float(reward.get("impact", base.impact_penalty)),
        restore_penalty=float(reward.get("restore", base.restore_penalty)),
    )


def _variant_topo(index: int) -> NetworkTopology:
    variants = paper_variants()
    if not 0 <= index < len(variants):
        raise GraphShieldError(f"variant index {index} outside 0..{len(variants) - 1}")
    return apply_variant(build_cage2_topology(), variants[index])


def _parse_agent(spec: str):
    """Agent spec: 'mlp', or 'mpnn-l-3' / 'mpnn-g-2' style."""
    spec = spec.lower()
    if spec == "mlp":
        return ("mlp", None, None)
    parts = spec.split("-")
    if len(parts) == 3 and parts[0] == "mpnn" and parts[1] in ("l", "g"):
        variant = RepVariant.LOCAL if parts[1] == "l" else RepVariant.GLOBAL
        try:
            layers = int(parts[2])
        except ValueError:
            raise GraphShieldError(f"bad agent spec: {spec}") from None
        return ("mpnn", variant, layers)
    raise GraphShieldError(f"bad agent spec: {spec} (want mlp or mpnn-[lg]-<layers>)")


def _out_dir(arg: str | None) -> Path:
    out = Path(arg) if arg else Path(os.environ.get("GRAPHSHIELD_OUT", "runs"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_variants(args) -> int:
    if args.count is not None:
        variants = generate_variants(build_cage2_topology(), args.count, args.seed)
    else:
        variants = paper_variants()
    base = build_cage2_topology()
    doc = [
        {
            "removed": list(v.removed),
            "n_nodes": len(apply_variant(base, v).nodes),
        }
        for v in variants
    ]
    print(json.dumps(doc, indent=2))
    return 0


def cmd_trace(args) -> int:
    topo = _variant_topo(args.variant)
    config = _load_config(args.config)
    env = BlueEnv(
        topo,
        RedKind(args.red),
        reward_table=_reward_table(config),
        episode_len=args.len,
        p_detect=config.get("p_detect", 0.9),
        exploit_success_prob=config.get("exploit_success_prob", 1.0),
        seed=args.seed,
    )
    policy = SleepPolicy() if args.blue == "sleep" else PivotRestorePolicy()
    rng = np.random.default_rng(args.seed)
    lines = []
    for _ in range(args.len):
        action = policy.select(env, rng)
        outcome = env.step(action)
        state = env.state
        lines.append(
            json.dumps(
                {
                    "step": state.step,
                    "red_action": state.last_red_action.to_json(),
                    "blue_action": {
                        "command": action.command.value,
                        "host": action.host,
                    },
                    "reward": outcome.reward,
                    "events": state.last_events.to_json(),
                    "levels": {h: int(lvl) for h, lvl in state.level.items()},
                }
            )
        )
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_train(args) -> int:
    config = _load_config(args.config)
    kind, variant, layers = _parse_agent(args.agent)
    topo = _variant_topo(args.variant)
    ppo_kwargs = {k: config[k] for k in _PPO_KEYS if k in config}
    if "red_kind" in ppo_kwargs:
        ppo_kwargs["red_kind"] = RedKind(ppo_kwargs["red_kind"])
    ppo_kwargs["total_steps"] = args.steps
    ppo_kwargs["seed"] = args.seed
    cfg = PpoConfig(**ppo_kwargs)
    cfg.validate()
    if kind == "mlp":
        agent = MlpAgent.for_topology(
            topo, seed=args.seed, hidden=int(config.get("hidden", 256))
        )
        name = f"mlp_v{args.variant}"
    else:
        agent = MpnnAgent(
            MpnnConfig(
                layers=layers,
                embedding=int(config.get("embedding", 128)),
                variant=variant,
            ),
            seed=args.seed,
        )
        name = f"{args.agent}_v{args.variant}"
    result = train(cfg, agent, topo)
    out = _out_dir(args.out)
    stem = f"{name}_seed{args.seed}"
    agent.save(out / f"{stem}.ckpt.json")
    write_curve_csv(out / f"{stem}_curve.csv", result.curve)
    snapshot = {
        "command": "train",
        "agent": args.agent,
        "variant": args.variant,
        "ppo": config_snapshot(cfg),
        "model": agent.config_dict(),
    }
    (out / f"{stem}_config.json").write_text(json.dumps(snapshot, indent=2))
    final = result.curve[-1][2] if result.curve else float("nan")
    print(f"trained {stem}: {len(result.curve)} updates, final mean return {final:.2f}")
    print(f"checkpoint: {out / (stem + '.ckpt.json')}")
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    episodes = 1000 if args.full else args.episodes
    out = _out_dir(args.out)
    agent = load_agent(args.checkpoint)
    name = Path(args.checkpoint).stem.replace(".ckpt", "")
    common = dict(
        n_episodes=episodes,
        greedy=args.greedy,
        jobs=args.jobs,
    )
    if args.all_variants:
        mlp_paths = None
        if args.mlp_dir:
            mlp_paths = []
            for k in range(len(paper_variants())):
                hits = sorted(Path(args.mlp_dir).glob(f"mlp_v{k}_*.ckpt.json"))
                mlp_paths.append(hits[0] if hits else None)
        suite = generalization_suite(
            args.checkpoint,
            paper_variants(),
            args.seed,
            mlp_checkpoints=mlp_paths,
            **common,
        )
        write_suite_csv(out / f"{name}_suite.csv", suite)
        write_suite_json(out / f"{name}_suite.json", suite)
        for k, row in enumerate(suite.rows):
            write_cell_csvs(out, name, k, row.mpnn)
        print(f"suite written to {out / (name + '_suite.csv')}")
        for k, row in enumerate(suite.rows):
            note = f" baseline total {row.mlp.total_score:.1f}" if row.mlp else ""
            if row.mlp_error:
                note = f" baseline failed: {row.mlp_error}"
            print(
                f"variant {k} ({row.n_nodes} nodes): total {row.mpnn.total_score:.1f},"
                f" perfect {row.mpnn.perfect_rate:.1%}{note}"
            )
        return 0
    topo = _variant_topo(args.variant)
    report = challenge_score(
        agent,
        topo,
        args.seed,
        reward_table=_reward_table(config),
        p_detect=config.get("p_detect", 0.9),
        exploit_success_prob=config.get("exploit_success_prob", 1.0),
        **common,
    )
    write_report_csv(out / f"{name}_v{args.variant}.csv", name, report)
    write_cell_csvs(out, name, args.variant, report)
    snapshot = {
        "command": "eval",
        "checkpoint": str(args.checkpoint),
        "variant": args.variant,
        "seed": args.seed,
        "episodes": episodes,
        "greedy": args.greedy,
    }
    (out / f"{name}_v{args.variant}_eval_config.json").write_text(
        json.dumps(snapshot, indent=2)
    )
    for cell in report.cells:
        print(
            f"{cell.red.value:8s} len {cell.episode_len:3d}: "
            f"mean {cell.mean_reward:8.1f}  std {cell.std_reward:6.1f}  "
            f"perfect {cell.perfect_rate:.1%}"
        )
    print(f"total {report.total_score:.1f}")
    return 0


def _gradcheck_rows() -> list:
    """Finite-difference checks for each primitive and the full model."""
    rng = np.random.default_rng(7)
    rows = []

    def check(name, f, x):
        rows.append((name, ad.grad_check(f, x)))

    # Constants are drawn once, outside the closures: grad_check perturbs
    # and re-evaluates f, so f must be deterministic.
    a = ad.Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    w = ad.Tensor(rng.standard_normal((4, 3)))
    check("matmul", lambda t: ad.tsum(ad.matmul(t, w)), a)
    w_add = ad.Tensor(rng.standard_normal((5, 4)))
    check("add", lambda t: ad.tsum(ad.mul(ad.add(t, w_add), w_add)), ad.Tensor(rng.standard_normal((5, 4)), requires_grad=True))
    w_mul = ad.Tensor(rng.standard_normal((5, 4)))
    check("mul", lambda t: ad.tsum(ad.mul(t, w_mul)), ad.Tensor(rng.standard_normal((5, 4)), requires_grad=True))
    w_div = ad.Tensor(rng.uniform(1.0, 2.0, (5, 4)))
    check("div", lambda t: ad.tsum(ad.div(t, w_div)), ad.Tensor(rng.standard_normal((5, 4)), requires_grad=True))
    check("tanh", lambda t: ad.tsum(ad.tanh(t)), ad.Tensor(rng.standard_normal((4, 4)), requires_grad=True))
    check("exp", lambda t: ad.tsum(ad.exp(t)), ad.Tensor(rng.standard_normal((4, 4)), requires_grad=True))
    check("log", lambda t: ad.tsum(ad.log(t)), ad.Tensor(rng.uniform(0.5, 2.0, (4, 4)), requires_grad=True))
    check("square", lambda t: ad.tsum(ad.square(t)), ad.Tensor(rng.standard_normal((4, 4)), requires_grad=True))
    w_soft = ad.Tensor(rng.standard_normal((4, 5)))
    check("softmax", lambda t: ad.tsum(ad.mul(ad.softmax(t), w_soft)), ad.Tensor(rng.standard_normal((4, 5)), requires_grad=True))
    ids = np.asarray([0, 0, 1, 1, 1, 3])
    w_seg = ad.Tensor(rng.standard_normal((4, 3)))
    check("segment_sum", lambda t: ad.tsum(ad.mul(ad.segment_sum(t, ids, 4), w_seg)), ad.Tensor(rng.standard_normal((6, 3)), requires_grad=True))
    w_pool = ad.Tensor(rng.standard_normal((4, 3)))
    check("row_max_pool", lambda t: ad.tsum(ad.mul(ad.row_max_pool(t, ids, 4), w_pool)), ad.Tensor(rng.standard_normal((6, 3)), requires_grad=True))
    w_gather = ad.Tensor(rng.standard_normal((4, 3)))
    check("gather_rows", lambda t: ad.tsum(ad.mul(ad.gather_rows(t, np.asarray([0, 2, 2, 1])), w_gather)), ad.Tensor(rng.standard_normal((3, 3)), requires_grad=True))
    w_cat = ad.Tensor(rng.standard_normal((3, 2)))
    check("concat", lambda t: ad.tsum(ad.square(ad.concat([t, w_cat], axis=1))), ad.Tensor(rng.standard_normal((3, 2)), requires_grad=True))

    for variant in (RepVariant.LOCAL, RepVariant.GLOBAL):
        cfg = MpnnConfig(layers=3, embedding=8, variant=variant)
        params = init_mpnn_params(cfg, seed=11)
        from .observation import ObsGraph  # local import to keep the top tidy

        feats = (rng.random((6, 4)) < 0.4).astype(np.float64)
        obs = ObsGraph(
            node_features=feats,
            edges=((0, 1), (1, 2), (2, 3), (3, 4), (2, 5)),
            action_mask=np.asarray([True, True, False, True, True, True]),
            host_index={f"n{i}": i for i in range(6)},
        )
        batch = build_batch([obs])
        from .policy import AgentAction

        action = [AgentAction(node=1, command=2)]

        for pname, tensor in list(params.tensors()):
            def f(t, _params=params, _cfg=cfg, _batch=batch, _action=action):
                out = policy_output_batch(_params, _cfg, _batch)
                return ad.add(ad.tsum(joint_log_prob(out, _action)), ad.tsum(out.value))

            rows.append((f"model-{variant.value}:{pname}", ad.grad_check(f, tensor)))
    return rows


def cmd_gradcheck(args) -> int:
    rows = _gradcheck_rows()
    worst = 0.0
    for name, err in rows:
        status = "ok" if err < 1e-4 else "FAIL"
        worst = max(worst, err)
        print(f"{name:40s} {err:10.3e}  {status}")
    print(f"worst relative error: {worst:.3e}")
    return 0 if worst < 1e-4 else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="graphshield",
        description="Incident-response training range with a relational defender",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("variants", help="list benchmark or sampled variants")
    p.add_argument("--count", type=int, default=None, help="sample a nested chain instead")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_variants)

    p = sub.add_parser("trace", help="dump one scripted episode as JSON lines")
    p.add_argument("--red", choices=[r.value for r in RedKind], default="bline")
    p.add_argument("--blue", choices=["sleep", "restore-pivot"], default="sleep")
    p.add_argument("--variant", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--len", type=int, default=30)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_trace)

    p = sub.add_parser("train", help="train an agent")
    p.add_argument("--agent", required=True, help="mlp or mpnn-[lg]-<layers>")
    p.add_argument("--variant", type=int, default=0)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--variant", type=int, default=0)
    p.add_argument("--all-variants", action="store_true")
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--full", action="store_true", help="1000 episodes per cell")
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=10_000)
    p.add_argument("--mlp-dir", default=None, help="directory of baseline checkpoints")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive")
    p.set_defaults(fn=cmd_gradcheck)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (GraphShieldError, FileNotFoundError, ValueError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
