"""Command-line entry point.

Subcommands: gen-cases, collect, train, evaluate, bench. Every command is
reproducible from (config file, root seed) alone; outputs carry the
effective-config echo. See FORMATS.md for the file formats.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import evaluate as ev
from . import sim
from .config import Config, echo_config, load_config
from .planner import DcpPlanner
from .rate import RolloutConfig
from .seeds import derive_seed, rng_from
from .transition import TrainConfig, TransitionEnsemble

_LOG_TS = time.monotonic()


def _log(msg):
    print(f"[{time.monotonic() - _LOG_TS:8.1f}s] {msg}", flush=True)


def cmd_gen_cases(args, cfg: Config) -> int:
    os.makedirs(args.out, exist_ok=True)
    seed = cfg.root_seed if args.seed is None else args.seed
    case_set = sim.generate_cases(args.count, seed, cfg.sim)
    out_file = os.path.join(args.out, "cases.jsonl")
    sim.save_cases(case_set, out_file)
    hist = os.path.join(args.out, "budget_histogram.csv")
    with open(hist, "w", encoding="utf-8") as fh:
        fh.write("rank,case_id,budget,n_agents\n")
        for i, case in enumerate(case_set.cases):
            fh.write(f"{i + 1},{case.case_id},{case.train_episode_budget},"
                     f"{len(case.agent_inits)}\n")
    echo_config(cfg, args.out)
    _log(f"wrote {len(case_set.cases)} cases to {out_file}")
    return 0


def cmd_collect(args, cfg: Config) -> int:
    os.makedirs(args.out, exist_ok=True)
    seed = cfg.root_seed if args.seed is None else args.seed
    cases = sim.load_cases(args.cases)
    total_budget = sum(c.train_episode_budget for c in cases)
    if total_budget == 0:
        print("warning: every case has a zero episode budget; dataset is empty",
              file=sys.stderr)
    units, counts = ev.collect_training_data(
        cases, seed, eval_cfg=cfg.eval, sim_cfg=cfg.sim, reward_cfg=cfg.reward,
        preview_cfg=cfg.preview, rollout_cfg=cfg.rollout, train_cfg=cfg.train,
        log=_log)
    data_file = os.path.join(args.out, "dataset.npz")
    ev.save_units(units, data_file)
    with open(os.path.join(args.out, "collect_log.json"), "w", encoding="utf-8") as fh:
        json.dump({"seed": seed, "total_units": len(units),
                   "episode_counts": counts}, fh, indent=1, sort_keys=True)
    echo_config(cfg, args.out)
    _log(f"collected {len(units)} units over {total_budget} episodes -> {data_file}")
    return 0


def cmd_train(args, cfg: Config) -> int:
    os.makedirs(args.out, exist_ok=True)
    seed = cfg.root_seed if args.seed is None else args.seed
    units = ev.load_units(args.data)
    if not units:
        print("error: dataset is empty", file=sys.stderr)
        return 2
    train_cfg = cfg.train
    if args.epochs is not None:
        import dataclasses
        train_cfg = dataclasses.replace(train_cfg, epochs=args.epochs)
    _log(f"training {args.n} members on {len(units)} units "
         f"({train_cfg.epochs} epochs each)")
    ensemble, curves = TransitionEnsemble.fit(
        units, args.n, train_cfg, derive_seed(seed, "ensemble"),
        progress=lambda i, n: _log(f"member {i + 1}/{n} trained"))
    ensemble.save(args.out)
    with open(os.path.join(args.out, "loss_curves.csv"), "w", encoding="utf-8") as fh:
        fh.write("member,epoch,loss\n")
        for mi, curve in enumerate(curves):
            for ep, loss in enumerate(curve):
                fh.write(f"{mi},{ep},{loss!r}\n")
    for mi, curve in enumerate(curves):
        if curve[-1] > curve[0]:
            print(f"warning: member {mi} final loss above initial", file=sys.stderr)
    echo_config(cfg, args.out)
    _log(f"saved {args.n} member checkpoints to {args.out}")
    return 0


def cmd_evaluate(args, cfg: Config) -> int:
    os.makedirs(args.out, exist_ok=True)
    seed = cfg.root_seed if args.seed is None else args.seed
    cases = sim.load_cases(args.cases)
    import dataclasses
    eval_cfg = cfg.eval
    if args.episodes is not None:
        eval_cfg = dataclasses.replace(eval_cfg, episodes_per_case=args.episodes)
    if args.jobs is not None:
        eval_cfg = dataclasses.replace(eval_cfg, jobs=args.jobs)
    planner_specs = [p.strip() for p in args.planners.split(",") if p.strip()]
    trend_n = [int(n) for n in args.trend_n.split(",")] if args.trend_n else []
    summary = ev.run_experiment(
        cases, planner_specs, args.ensemble, args.out,
        eval_cfg=eval_cfg, rollout_cfg=cfg.rollout, reward_cfg=cfg.reward,
        preview_cfg=cfg.preview, sim_cfg=cfg.sim, root_seed=seed,
        trend_n=trend_n, trend_episodes=args.trend_episodes,
        trend_rollouts_per_member=args.trend_rollouts,
        group_reference=args.group_reference, episode_logs=args.episode_logs,
        log=_log)
    echo_config(cfg, args.out)
    _log("evaluation complete; tables in "
         f"{os.path.join(args.out, 'tables')}")
    for name, agg in sorted(summary.get("planners", {}).items()):
        _log(f"  {name}: P_s={agg['p_s']:.4f} P_e={agg['p_e']:.3f} m/s")
    return 0


def cmd_bench(args, cfg: Config) -> int:
    ensemble = TransitionEnsemble.load(args.ensemble, n=args.n)
    if len(ensemble) < args.n:
        print(f"error: ensemble has {len(ensemble)} members, need {args.n}",
              file=sys.stderr)
        return 2
    import dataclasses
    rollout_cfg = cfg.rollout
    if args.rollouts is not None:
        rollout_cfg = dataclasses.replace(rollout_cfg,
                                          rollouts_per_member=args.rollouts)
    planner = DcpPlanner(ensemble, rollout_cfg, cfg.reward, cfg.preview, cfg.lattice)
    state = _bench_state(args.agents, cfg)
    for _ in range(3):
        planner(state)
    times = []
    for _ in range(args.steps):
        t0 = time.perf_counter()
        planner(state)
        times.append(time.perf_counter() - t0)
    times = np.array(times)
    report = {
        "n_members": args.n,
        "candidates": cfg.lattice.n_actions,
        "rollouts_per_member": rollout_cfg.rollouts_per_member,
        "horizon_steps": rollout_cfg.horizon_steps,
        "steps_timed": args.steps,
        "p50_ms": float(np.percentile(times, 50) * 1e3),
        "p95_ms": float(np.percentile(times, 95) * 1e3),
        "max_ms": float(np.max(times) * 1e3),
        "mean_ms": float(np.mean(times) * 1e3),
    }
    print(json.dumps(report, indent=1, sort_keys=True))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "bench.json"), "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
        echo_config(cfg, args.out)
    return 0


def _bench_state(n_agents: int, cfg: Config):
    from .sim import AgentInit, Intention, WorldState, initial_ego
    rng = rng_from(cfg.root_seed, "bench")
    approaches = ("S", "E", "W", "N")
    agents = tuple(
        AgentInit(approaches[i % 4],
                  Intention(("straight", "turn_left", "turn_right")[i % 3]),
                  float(rng.uniform(6.0, 16.0)), float(rng.uniform(1.0, 5.0))).to_state()
        for i in range(n_agents))
    return WorldState(time=0.0, ego=initial_ego(), agents=agents)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dcplan",
        description="Dynamically conservative planner workbench")
    parser.add_argument("--config", default=None,
                        help="YAML config path (or DCPLAN_CONFIG env var)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-cases", help="generate the driving case set")
    p.add_argument("--count", type=int, default=300)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_cases)

    p = sub.add_parser("collect", help="collect budgeted training data")
    p.add_argument("--cases", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="bootstrap and train the ensemble")
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="run the planner experiment")
    p.add_argument("--cases", required=True)
    p.add_argument("--ensemble", required=True)
    p.add_argument("--planners", default="dcp:5,efficient:5,conservative")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--trend-n", default="")
    p.add_argument("--trend-episodes", type=int, default=6)
    p.add_argument("--trend-rollouts", type=int, default=None)
    p.add_argument("--group-reference", default="dcp_n5")
    p.add_argument("--episode-logs", action="store_true")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="latency percentiles of one planning step")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--agents", type=int, default=3)
    p.add_argument("--rollouts", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args, cfg)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
