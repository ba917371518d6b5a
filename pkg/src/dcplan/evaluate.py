"""Experiment harness: data collection, Monte Carlo evaluation, reports.

Training data follows the per-case episode budgets (a random-action
bootstrap on the head case warm-starts a single pooled model, then the
efficient planner collects the rest). Evaluation runs Y fresh episodes per
case per planner with shared episode seeds, records per-case safety,
efficiency, the planner's long-tail rate at the start state and the Monte
Carlo return, and folds everything into the report tables. Case work is
embarrassingly parallel; reductions are ordered so reruns are bit
identical.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import controller as ctrl
from . import intersection as world
from . import reward as rw
from .planner import ConservativePlanner, DcpPlanner, EfficientPlanner, generate_candidates
from .rate import RolloutConfig, discounted_return
from .seeds import derive_seed, rng_from
from .sim import Case, CaseSet, Outcome, SimConfig, run_episode, save_episode_log
from .transition import (
    DataUnit,
    TrainConfig,
    TransitionEnsemble,
    TransitionModel,
    encode_action,
    encode_state,
    encode_target,
)

__all__ = [
    "EvalConfig", "CaseResult", "PlannerSpec",
    "collect_training_data", "monte_carlo_true_q", "lower_bound_accuracy",
    "run_experiment", "units_from_trajectory", "save_units", "load_units",
]


@dataclass(frozen=True)
class EvalConfig:
    episodes_per_case: int = 50              # Y
    group_percentile: float = 20.0           # long-tail share of cases
    bootstrap_episodes: int = 20             # random-action head-case episodes
    return_horizon_steps: int = 30           # H for the Monte Carlo return
    jobs: int = 1


@dataclass
class CaseResult:
    case_id: int
    budget: int
    p_s: float                               # non-collision rate
    p_e: float                               # mean ego speed (m/s)
    rate_estimate: float | None              # planner long-tail rate at s0
    true_q: float                            # Monte Carlo mean return
    group: str = ""                          # "long_tail" | "typical"
    episodes: list = field(default_factory=list)
    latency: dict = field(default_factory=dict)

    @property
    def q_lower(self):
        return None if self.rate_estimate is None else -self.rate_estimate


@dataclass(frozen=True)
class PlannerSpec:
    kind: str                                # dcp | efficient | conservative
    n_members: int = 0

    @property
    def name(self) -> str:
        if self.kind == "conservative":
            return "conservative"
        return f"{self.kind}_n{self.n_members}"

    @classmethod
    def parse(cls, text: str) -> "PlannerSpec":
        if ":" in text:
            kind, n = text.split(":", 1)
            return cls(kind=kind.strip(), n_members=int(n))
        kind = text.strip()
        return cls(kind=kind, n_members=0 if kind == "conservative" else 5)


def build_planner(spec: PlannerSpec, ensemble_dir, rollout_cfg: RolloutConfig,
                  reward_cfg: rw.RewardConfig, preview_cfg: ctrl.PreviewConfig):
    if spec.kind == "conservative":
        return ConservativePlanner(rollout_cfg=rollout_cfg, reward_cfg=reward_cfg,
                                   preview_cfg=preview_cfg)
    ensemble = TransitionEnsemble.load(ensemble_dir, n=spec.n_members)
    if len(ensemble) < spec.n_members:
        raise ValueError(f"ensemble has {len(ensemble)} members, need {spec.n_members}")
    cls = DcpPlanner if spec.kind == "dcp" else EfficientPlanner
    return cls(ensemble, rollout_cfg=rollout_cfg, reward_cfg=reward_cfg,
               preview_cfg=preview_cfg)


# -- training-data collection ---------------------------------------------------


class RandomActionPlanner:
    """Uniform candidate choice per step; the cold-start behavior policy."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def __call__(self, state):
        cands = generate_candidates(state)
        idx = int(self.rng.integers(0, len(cands)))
        c = cands.candidates[idx]
        from .planner import Decision
        return Decision(action_id=c.action_id, curve=c.curve, planner_kind="random",
                        evaluations=None, chosen_eval=None)


def units_from_trajectory(traj, actions_meta=None) -> list:
    """Truncate an episode into supervised units from consecutive records."""
    units = []
    for r1, r2 in zip(traj.records, traj.records[1:]):
        feats, slots = encode_state(r1.state)
        target = encode_target(r1.state, r2.state.agents, slots)
        if actions_meta is not None and r1.action_id in actions_meta:
            offset, speed = actions_meta[r1.action_id]
        else:
            offset, speed = 0.0, 0.0
        units.append(DataUnit(feats, encode_action(r1.action_id, offset, speed), target))
    return units


def collect_training_data(cases: CaseSet, rng_seed: int,
                          eval_cfg: EvalConfig = EvalConfig(),
                          sim_cfg: SimConfig = SimConfig(),
                          reward_cfg: rw.RewardConfig = rw.RewardConfig(),
                          preview_cfg: ctrl.PreviewConfig = ctrl.PreviewConfig(),
                          rollout_cfg: RolloutConfig = RolloutConfig(),
                          train_cfg: TrainConfig = TrainConfig(),
                          log=print):
    """Run the budgeted episodes per case and truncate them into units.

    The first ``bootstrap_episodes`` episodes of the head case use random
    actions; a single pooled model trained on them drives the efficient
    behavior planner for everything else.

    Returns:
        (units, per_case_episode_counts)
    """
    ordered = sorted(cases.cases, key=lambda c: c.case_id)
    units: list = []
    counts = {}
    behavior = None

    def run_one(case, ep_idx, planner):
        seed = derive_seed(rng_seed, "collect", case.case_id, ep_idx)
        traj = run_episode(case, planner, episode_seed=seed, sim_cfg=sim_cfg,
                           reward_cfg=reward_cfg, preview_cfg=preview_cfg)
        return units_from_trajectory(traj)

    for case in ordered:
        budget = case.train_episode_budget
        counts[case.case_id] = budget
        if budget == 0:
            continue
        start_ep = 0
        if behavior is None:
            n_boot = min(eval_cfg.bootstrap_episodes, budget)
            for ep in range(n_boot):
                rng = rng_from(rng_seed, "collect-random", case.case_id, ep)
                units.extend(run_one(case, ep, RandomActionPlanner(rng)))
            start_ep = n_boot
            if not units:
                raise RuntimeError("bootstrap produced no units")
            pooled = TransitionModel(seed=derive_seed(rng_seed, "pooled"), cfg=train_cfg)
            pooled.train(units, train_cfg)
            behavior = EfficientPlanner(
                TransitionEnsemble([pooled], [pooled.seed]),
                rollout_cfg=rollout_cfg, reward_cfg=reward_cfg, preview_cfg=preview_cfg)
            log(f"pooled behavior model trained on {len(units)} bootstrap units")
        for ep in range(start_ep, budget):
            units.extend(run_one(case, ep, behavior))
        log(f"case {case.case_id}: {budget} episodes, {len(units)} units total")
    return units, counts


def save_units(units, path) -> None:
    X = np.stack([u.features for u in units]) if units else np.zeros((0, 32))
    A = np.stack([u.action for u in units]) if units else np.zeros((0, 12))
    Y = np.stack([u.target for u in units]) if units else np.zeros((0, 16))
    np.savez_compressed(path, features=X, actions=A, targets=Y)


def load_units(path) -> list:
    data = np.load(path)
    return [DataUnit(f, a, t) for f, a, t in
            zip(data["features"], data["actions"], data["targets"])]


# -- Monte Carlo evaluation -------------------------------------------------------


def monte_carlo_true_q(planner, case: Case, episodes: int, root_seed: int,
                       *, sim_cfg: SimConfig = SimConfig(),
                       reward_cfg: rw.RewardConfig = rw.RewardConfig(),
                       preview_cfg: ctrl.PreviewConfig = ctrl.PreviewConfig(),
                       return_horizon_steps: int = 30,
                       episode_log_dir=None):
    """Y fresh simulator episodes; the Monte Carlo return is the discounted
    sum over the first H steps of each episode.

    Returns:
        (true_q, episode_records, latency_summary)
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    returns = []
    records = []
    lats: list = []
    for ep in range(episodes):
        seed = derive_seed(root_seed, "episode", case.case_id, ep)
        traj = run_episode(case, planner, episode_seed=seed, sim_cfg=sim_cfg,
                           reward_cfg=reward_cfg, preview_cfg=preview_cfg,
                           latencies=lats)
        g = discounted_return(traj.rewards[:return_horizon_steps], reward_cfg.gamma)
        returns.append(g)
        records.append({
            "episode": ep,
            "outcome": traj.outcome.value,
            "return": g,
            "mean_speed": float(np.mean(traj.ego_speeds)),
            "steps": len(traj.records),
        })
        if episode_log_dir is not None and ep == 0:
            os.makedirs(episode_log_dir, exist_ok=True)
            save_episode_log(traj, os.path.join(
                episode_log_dir, f"case_{case.case_id:04d}_ep{ep:03d}.jsonl"), case.case_id)
    latency = {
        "count": len(lats),
        "mean": float(np.mean(lats)) if lats else 0.0,
        "p50": float(np.percentile(lats, 50)) if lats else 0.0,
        "p95": float(np.percentile(lats, 95)) if lats else 0.0,
        "max": float(np.max(lats)) if lats else 0.0,
    }
    return float(np.mean(returns)), records, latency


def evaluate_case(planner, spec: PlannerSpec, case: Case, episodes: int,
                  root_seed: int, *, sim_cfg=SimConfig(), reward_cfg=rw.RewardConfig(),
                  preview_cfg=ctrl.PreviewConfig(), return_horizon_steps=30,
                  episode_log_dir=None) -> CaseResult:
    from .sim import initial_state
    s0 = initial_state(case)
    decision = planner(s0)
    rate = None
    if decision.chosen_eval is not None:
        rate = float(decision.chosen_eval.rate)
    true_q, records, latency = monte_carlo_true_q(
        planner, case, episodes, root_seed, sim_cfg=sim_cfg, reward_cfg=reward_cfg,
        preview_cfg=preview_cfg, return_horizon_steps=return_horizon_steps,
        episode_log_dir=episode_log_dir)
    outcomes = [r["outcome"] for r in records]
    p_s = float(np.mean([o != Outcome.COLLISION.value for o in outcomes]))
    p_e = float(np.mean([r["mean_speed"] for r in records]))
    return CaseResult(case_id=case.case_id, budget=case.train_episode_budget,
                      p_s=p_s, p_e=p_e, rate_estimate=rate, true_q=true_q,
                      episodes=records, latency=latency)


def lower_bound_accuracy(results) -> tuple:
    """Fraction of cases with true_q >= q_lower, plus the sorted series.

    The series is ordered by descending rate (most long-tail first) with
    the Monte Carlo return and the bound per case.
    """
    usable = [r for r in results if r.rate_estimate is not None]
    if not usable:
        return float("nan"), []
    ok = [r.true_q >= r.q_lower for r in usable]
    series = sorted(usable, key=lambda r: (-r.rate_estimate, r.case_id))
    rows = [{"case_id": r.case_id, "rate": r.rate_estimate, "q_lower": r.q_lower,
             "true_q": r.true_q, "holds": bool(r.true_q >= r.q_lower)} for r in series]
    return float(np.mean(ok)), rows


def assign_groups(results_by_planner: dict, reference: str,
                  percentile: float = 20.0) -> dict:
    """Label each case long_tail/typical from the reference planner's
    q_lower (bottom percentile = long tail); applied to every planner."""
    ref = results_by_planner[reference]
    qs = np.array([r.q_lower for r in ref])
    threshold = float(np.percentile(qs, percentile))
    groups = {r.case_id: ("long_tail" if r.q_lower <= threshold else "typical")
              for r in ref}
    for results in results_by_planner.values():
        for r in results:
            r.group = groups.get(r.case_id, "typical")
    return groups


# -- experiment driver -------------------------------------------------------------


_WORKER = {}


def _worker_init(ensemble_dir, cfg_blobs):
    _WORKER["ensemble_dir"] = ensemble_dir
    _WORKER["cfgs"] = cfg_blobs
    _WORKER["planners"] = {}


def _worker_eval(task):
    spec_text, case, episodes, root_seed, return_h, log_dir = task
    spec = PlannerSpec.parse(spec_text)
    cfgs = _WORKER["cfgs"]
    key = (spec_text,)
    if key not in _WORKER["planners"]:
        _WORKER["planners"][key] = build_planner(
            spec, _WORKER["ensemble_dir"], cfgs["rollout"], cfgs["reward"], cfgs["preview"])
    planner = _WORKER["planners"][key]
    result = evaluate_case(planner, spec, case, episodes, root_seed,
                           sim_cfg=cfgs["sim"], reward_cfg=cfgs["reward"],
                           preview_cfg=cfgs["preview"], return_horizon_steps=return_h,
                           episode_log_dir=log_dir)
    return spec_text, _result_to_json(result)


def _result_to_json(r: CaseResult) -> dict:
    return {
        "case_id": r.case_id, "budget": r.budget, "p_s": r.p_s, "p_e": r.p_e,
        "rate_estimate": r.rate_estimate, "true_q": r.true_q,
        "episodes": r.episodes, "latency": r.latency,
    }


def _result_from_json(d: dict) -> CaseResult:
    return CaseResult(case_id=d["case_id"], budget=d["budget"], p_s=d["p_s"],
                      p_e=d["p_e"], rate_estimate=d["rate_estimate"],
                      true_q=d["true_q"], episodes=d.get("episodes", []),
                      latency=d.get("latency", {}))


def run_planner_suite(spec_text: str, cases: CaseSet, episodes: int, root_seed: int,
                      out_dir, ensemble_dir, *, rollout_cfg=RolloutConfig(),
                      reward_cfg=rw.RewardConfig(), preview_cfg=ctrl.PreviewConfig(),
                      sim_cfg=SimConfig(), return_horizon_steps=30, jobs=1,
                      episode_log_dir=None, log=print):
    """Evaluate one planner over every case, resumably.

    Appends one JSON line per finished case to results_<name>.jsonl in
    out_dir and skips cases already present, so interrupted runs restart
    where they stopped. Returns the full ordered result list.
    """
    spec = PlannerSpec.parse(spec_text)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"results_{spec.name}.jsonl")
    done = {}
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    done[d["case_id"]] = d
    todo = [c for c in sorted(cases.cases, key=lambda c: c.case_id)
            if c.case_id not in done]
    log(f"{spec.name}: {len(done)} cases cached, {len(todo)} to run "
        f"(Y={episodes}, jobs={jobs})")
    cfg_blobs = dict(rollout=rollout_cfg, reward=reward_cfg, preview=preview_cfg,
                     sim=sim_cfg)
    t0 = time.time()
    if todo:
        tasks = [(spec_text, c, episodes, root_seed, return_horizon_steps,
                  episode_log_dir) for c in todo]
        with open(path, "a", encoding="utf-8") as sink:
            if jobs <= 1:
                _worker_init(ensemble_dir, cfg_blobs)
                for i, task in enumerate(tasks):
                    _, rec = _worker_eval(task)
                    sink.write(json.dumps(rec, sort_keys=True) + "\n")
                    sink.flush()
                    done[rec["case_id"]] = rec
                    if (i + 1) % 20 == 0:
                        rate = (time.time() - t0) / (i + 1)
                        log(f"  {spec.name}: {i + 1}/{len(tasks)} cases "
                            f"({rate:.1f} s/case)")
            else:
                with ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init,
                                         initargs=(ensemble_dir, cfg_blobs)) as pool:
                    for i, (_, rec) in enumerate(pool.map(_worker_eval, tasks,
                                                          chunksize=1)):
                        sink.write(json.dumps(rec, sort_keys=True) + "\n")
                        sink.flush()
                        done[rec["case_id"]] = rec
                        if (i + 1) % 20 == 0:
                            rate = (time.time() - t0) / (i + 1)
                            log(f"  {spec.name}: {i + 1}/{len(tasks)} cases "
                                f"({rate:.1f} s/case)")
    results = [_result_from_json(done[cid]) for cid in sorted(done)]
    return results


def summarize(results, group: str | None = None) -> dict:
    rows = results if group is None else [r for r in results if r.group == group]
    if not rows:
        return {"p_s": float("nan"), "p_e": float("nan"), "cases": 0}
    return {"p_s": float(np.mean([r.p_s for r in rows])),
            "p_e": float(np.mean([r.p_e for r in rows])),
            "cases": len(rows)}


def write_planner_table(results_by_planner: dict, path) -> None:
    """Table II analogue: per planner, overall / long-tail / typical."""
    cols = ["planner", "p_s_overall", "p_s_long_tail", "p_s_typical",
            "p_e_overall", "p_e_long_tail", "p_e_typical", "cases"]
    lines = [",".join(cols)]
    for name in sorted(results_by_planner):
        res = results_by_planner[name]
        overall = summarize(res)
        lt = summarize(res, "long_tail")
        ty = summarize(res, "typical")
        lines.append(",".join([name] + [
            _fmt(overall["p_s"]), _fmt(lt["p_s"]), _fmt(ty["p_s"]),
            _fmt(overall["p_e"]), _fmt(lt["p_e"]), _fmt(ty["p_e"]),
            str(overall["cases"])]))
    _write_text(path, "\n".join(lines) + "\n")


def write_trend_table(trend_results: dict, path) -> None:
    """Table III analogue: DCP safety/efficiency across ensemble sizes."""
    lines = ["n_members,p_s,p_e,cases"]
    for n in sorted(trend_results):
        s = summarize(trend_results[n])
        lines.append(f"{n},{_fmt(s['p_s'])},{_fmt(s['p_e'])},{s['cases']}")
    _write_text(path, "\n".join(lines) + "\n")


def write_lower_bound_series(rows, fraction, path) -> None:
    lines = [f"# fraction_holding,{_fmt(fraction)}",
             "case_id,rate,q_lower,true_q,holds"]
    for r in rows:
        lines.append(f"{r['case_id']},{_fmt(r['rate'])},{_fmt(r['q_lower'])},"
                     f"{_fmt(r['true_q'])},{int(r['holds'])}")
    _write_text(path, "\n".join(lines) + "\n")


def write_latency_table(results_by_planner: dict, path) -> None:
    lines = ["planner,steps,mean_s,p50_s,p95_s,max_s"]
    for name in sorted(results_by_planner):
        res = results_by_planner[name]
        counts = np.array([r.latency.get("count", 0) for r in res], dtype=float)
        if counts.sum() == 0:
            continue
        w = counts / counts.sum()
        mean = float(np.array([r.latency.get("mean", 0.0) for r in res]) @ w)
        p50 = float(np.median([r.latency.get("p50", 0.0) for r in res]))
        p95 = float(np.percentile([r.latency.get("p95", 0.0) for r in res], 95))
        mx = float(np.max([r.latency.get("max", 0.0) for r in res]))
        lines.append(f"{name},{int(counts.sum())},{_fmt(mean)},{_fmt(p50)},"
                     f"{_fmt(p95)},{_fmt(mx)}")
    _write_text(path, "\n".join(lines) + "\n")


def run_experiment(cases: CaseSet, planner_specs, ensemble_dir, out_dir, *,
                   eval_cfg: EvalConfig = EvalConfig(),
                   rollout_cfg: RolloutConfig = RolloutConfig(),
                   reward_cfg: rw.RewardConfig = rw.RewardConfig(),
                   preview_cfg: ctrl.PreviewConfig = ctrl.PreviewConfig(),
                   sim_cfg: SimConfig = SimConfig(),
                   root_seed: int = 0,
                   trend_n=(), trend_episodes: int = 6,
                   trend_rollouts_per_member: int | None = None,
                   group_reference: str = "dcp_n5",
                   episode_logs: bool = False, log=print) -> dict:
    """Full evaluation: every planner over every case, plus the ensemble
    size trend, folded into the report tables and plots.

    Returns a summary dict with the headline aggregates.
    """
    os.makedirs(out_dir, exist_ok=True)
    tables = os.path.join(out_dir, "tables")
    results_by_planner = {}
    for spec_text in planner_specs:
        spec = PlannerSpec.parse(spec_text)
        log_dir = os.path.join(out_dir, "episodes", spec.name) if episode_logs else None
        results_by_planner[spec.name] = run_planner_suite(
            spec_text, cases, eval_cfg.episodes_per_case, root_seed, out_dir,
            ensemble_dir, rollout_cfg=rollout_cfg, reward_cfg=reward_cfg,
            preview_cfg=preview_cfg, sim_cfg=sim_cfg,
            return_horizon_steps=eval_cfg.return_horizon_steps,
            jobs=eval_cfg.jobs, episode_log_dir=log_dir, log=log)

    if group_reference in results_by_planner:
        assign_groups(results_by_planner, group_reference, eval_cfg.group_percentile)
    write_planner_table(results_by_planner, os.path.join(tables, "planners.csv"))

    summary = {"planners": {name: summarize(res)
                            for name, res in results_by_planner.items()},
               "groups": {name: {g: summarize(res, g)
                                 for g in ("long_tail", "typical")}
                          for name, res in results_by_planner.items()}}

    if group_reference in results_by_planner:
        frac, rows = lower_bound_accuracy(results_by_planner[group_reference])
        write_lower_bound_series(rows, frac, os.path.join(tables, "lower_bound.csv"))
        summary["lower_bound_fraction"] = frac
        ref = results_by_planner[group_reference]
        zero_budget = [r for r in ref if r.budget == 0]
        lt = [r for r in ref if r.group == "long_tail"]
        summary["group_validation"] = {
            "long_tail_cases": len(lt),
            "zero_budget_cases": len(zero_budget),
            "long_tail_that_are_zero_budget":
                float(np.mean([r.budget == 0 for r in lt])) if lt else float("nan"),
            "zero_budget_in_long_tail":
                float(np.mean([r.group == "long_tail" for r in zero_budget]))
                if zero_budget else float("nan"),
        }

    # ensemble-size trend with shared episode seeds at a reduced budget
    trend_results = {}
    if trend_n:
        trend_rc = rollout_cfg if trend_rollouts_per_member is None else \
            RolloutConfig(horizon_steps=rollout_cfg.horizon_steps,
                          rollouts_per_member=trend_rollouts_per_member,
                          base_seed=rollout_cfg.base_seed, dt=rollout_cfg.dt)
        for n in trend_n:
            res = run_planner_suite(
                f"dcp:{n}", cases, trend_episodes, derive_seed(root_seed, "trend"),
                os.path.join(out_dir, "trend"), ensemble_dir,
                rollout_cfg=trend_rc, reward_cfg=reward_cfg,
                preview_cfg=preview_cfg, sim_cfg=sim_cfg,
                return_horizon_steps=eval_cfg.return_horizon_steps,
                jobs=eval_cfg.jobs, log=log)
            trend_results[n] = res
        write_trend_table(trend_results, os.path.join(tables, "n_trend.csv"))
        summary["trend"] = {n: summarize(res) for n, res in trend_results.items()}

    write_latency_table(results_by_planner, os.path.join(tables, "latency.csv"))
    write_series_plots(results_by_planner, group_reference,
                       os.path.join(out_dir, "plots"))
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    return summary


def write_series_plots(results_by_planner: dict, reference: str, out_dir) -> None:
    """Static SVG sorted-series plots (rate-sorted speed and bound series)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    ref = results_by_planner.get(reference)
    if ref is None:
        return
    order = [r.case_id for r in sorted(ref, key=lambda r: (-(r.rate_estimate or 0.0),
                                                           r.case_id))]
    rank = {cid: i for i, cid in enumerate(order)}
    fig, ax = plt.subplots(figsize=(8, 3.2))
    xs = [rank[r.case_id] for r in ref]
    ax.plot(xs, [r.q_lower for r in ref], ".", ms=3, label="confidence lower bound")
    ax.plot(xs, [r.true_q for r in ref], ".", ms=3, label="Monte Carlo return")
    ax.set_xlabel("cases sorted by long-tail rate (descending)")
    ax.set_ylabel("return")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "lower_bound_series.svg"))
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(8, 3.2))
    for name, res in sorted(results_by_planner.items()):
        xs = [rank.get(r.case_id) for r in res]
        ax.plot(xs, [r.p_e for r in res], ".", ms=3, label=name)
    ax.set_xlabel("cases sorted by long-tail rate (descending)")
    ax.set_ylabel("mean ego speed (m/s)")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "speed_series.svg"))
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(8, 3.2))
    for name, res in sorted(results_by_planner.items()):
        xs = [rank.get(r.case_id) for r in res]
        ax.plot(xs, [r.p_s for r in res], ".", ms=3, label=name)
    ax.set_xlabel("cases sorted by long-tail rate (descending)")
    ax.set_ylabel("non-collision rate")
    ax.legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "safety_series.svg"))
    plt.close(fig)


def _fmt(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".9g")


def _write_text(path, text) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
