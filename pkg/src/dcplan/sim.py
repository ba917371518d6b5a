"""Deterministic seeded 2D intersection simulator.

Ego: kinematic bicycle with clamped commands. Surrounding agents: follow a
route fixed by their driving intention, with an IDM longitudinal law that
reacts to the nearest leading object (other agents or the ego) plus small
seeded speed noise. Episodes end on task completion, collision, stall or
timeout.

Agent motion is kept strictly inside the shared per-step reachability
bounds (REACH_*), which the transition-model clamp and the conservative
baseline's reachable cones rely on.
"""

from __future__ import annotations

import json
import math
import time as _time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import controller as ctrl
from . import intersection as world
from . import reward as rw
from .errors import SamplingExhausted
from .frenet import ReferencePath, jerk_integral
from .seeds import derive_seed, rng_from

__all__ = [
    "EgoState", "AgentState", "WorldState", "Case", "CaseSet",
    "EpisodeTrajectory", "Outcome", "SimConfig",
    "step_ego", "step_agents", "detect_collision", "generate_cases",
    "run_episode", "initial_state", "rect_corners", "rects_overlap_batch",
    "EGO_DIMS", "AGENT_DIMS", "REACH_DV", "REACH_DV_GAIN", "REACH_OMEGA",
    "AGENT_SPEED_MAX",
]

EGO_DIMS = (4.5, 2.0)                # length, width (m)
AGENT_DIMS = (4.5, 2.0)
AGENT_SPEED_MAX = 20.0               # hard state bound (m/s)

# shared one-step reachability bounds for surrounding agents (dt = 0.1 s):
# speed may rise at most 2.5 m/s^2 and fall at most 4.5 m/s^2, heading may
# slew at most 1.5 rad/s. The simulator clamps agents to these, the learned
# transition model clamps its samples to them, and the reachable cones of
# the conservative baseline grow with them.
REACH_DV_GAIN = 0.25                 # max speed gain per 0.1 s step
REACH_DV_LOSS = 0.45                 # max speed loss per 0.1 s step
REACH_DV = 0.45                      # symmetric bound used by the model clamp
REACH_OMEGA = 1.5                    # rad/s
REACH_ACCEL_GAIN = 2.5               # m/s^2, feeds the reachable-cone radius


class Intention(str, Enum):
    STRAIGHT = "straight"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"

    @property
    def one_hot(self) -> np.ndarray:
        vec = np.zeros(3)
        vec[list(Intention).index(self)] = 1.0
        return vec


class Outcome(str, Enum):
    TASK_COMPLETE = "task_complete"
    COLLISION = "collision"
    STALL = "stall"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class EgoState:
    x: float
    y: float
    heading: float
    speed: float
    accel: float = 0.0


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    heading: float
    speed: float
    intention: Intention


@dataclass(frozen=True)
class WorldState:
    time: float
    ego: EgoState
    agents: tuple


@dataclass(frozen=True)
class AgentInit:
    approach: str
    intention: Intention
    spawn_arclen: float
    speed: float

    def to_state(self) -> AgentState:
        path = world.agent_path(self.approach, self.intention.value)
        pos = path.point_at(self.spawn_arclen)
        heading = float(path.heading_at(self.spawn_arclen))
        return AgentState(float(pos[0]), float(pos[1]), heading, self.speed, self.intention)


@dataclass(frozen=True)
class Case:
    case_id: int
    seed: int
    agent_inits: tuple
    train_episode_budget: int


@dataclass
class CaseSet:
    seed: int
    cases: list

    def __iter__(self):
        return iter(self.cases)

    def __len__(self):
        return len(self.cases)


@dataclass
class StepRecord:
    state: WorldState
    action_id: int
    reward: float


@dataclass
class EpisodeTrajectory:
    records: list
    outcome: Outcome

    @property
    def rewards(self) -> np.ndarray:
        return np.array([r.reward for r in self.records])

    @property
    def ego_speeds(self) -> np.ndarray:
        return np.array([r.state.ego.speed for r in self.records])


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    max_sim_time: float = 60.0
    stall_speed: float = 0.1
    stall_window: float = 10.0
    goal_margin: float = 1.0         # task complete once b > length - margin
    max_agents: int = 4
    # IDM parameters; desired speed is each agent's initial speed
    idm_time_headway: float = 1.0
    idm_min_gap: float = 2.0
    idm_accel: float = 2.0
    idm_decel: float = 3.0
    idm_exponent: float = 4.0
    leader_corridor: float = 2.6     # half-width for leading-object detection
    speed_noise_sigma: float = 0.1
    curvature_lookahead: float = 6.0
    # case generation
    n_cases: int = 300
    agents_min: int = 1
    agents_max: int = 3
    agent_speed_max_init: float = 20.0 / 3.6
    min_pair_distance: float = 5.0
    min_ego_clearance: float = 8.0
    spawn_min: float = 2.0
    spawn_max: float = 18.0
    head_budget: int = 218
    budget_exponent: float = 1.2
    forced_zero_fraction: float = 0.2
    max_rejections: int = 100_000


# -- ego dynamics --------------------------------------------------------


def step_ego(ego: EgoState, control, dt: float = 0.1,
             cfg: ctrl.PreviewConfig = ctrl.PreviewConfig()) -> EgoState:
    """Kinematic bicycle step with command clamping; brakes saturate at rest."""
    accel_cmd, steer_cmd = control
    accel = float(np.clip(accel_cmd, cfg.accel_min, cfg.accel_max))
    steer = float(np.clip(steer_cmd, -cfg.steer_max, cfg.steer_max))
    v = ego.speed
    yaw_rate = v / cfg.wheelbase * math.tan(steer)
    yaw_rate = float(np.clip(yaw_rate, -cfg.yaw_rate_max, cfg.yaw_rate_max))
    x = ego.x + v * math.cos(ego.heading) * dt
    y = ego.y + v * math.sin(ego.heading) * dt
    heading = ego.heading + yaw_rate * dt
    speed = max(0.0, v + accel * dt)
    if speed == 0.0 and v > 0.0:
        accel = -v / dt                          # realized accel when saturating
    return EgoState(x, y, heading, speed, accel)


def step_ego_arrays(x, y, heading, speed, accel_cmd, steer_cmd, dt, cfg):
    """Vectorized :func:`step_ego` used by the rollout engine."""
    accel = np.clip(accel_cmd, cfg.accel_min, cfg.accel_max)
    steer = np.clip(steer_cmd, -cfg.steer_max, cfg.steer_max)
    yaw_rate = np.clip(speed / cfg.wheelbase * np.tan(steer),
                       -cfg.yaw_rate_max, cfg.yaw_rate_max)
    nx = x + speed * np.cos(heading) * dt
    ny = y + speed * np.sin(heading) * dt
    nh = heading + yaw_rate * dt
    nv = np.maximum(0.0, speed + accel * dt)
    return nx, ny, nh, nv


# -- surrounding agents ---------------------------------------------------


def _infer_route(agent: AgentState):
    """Best-matching route for an agent given its fixed intention.

    Returns (path, arclen) or (None, None) once the agent has left the map.
    """
    best = None
    pos = np.array([agent.x, agent.y])
    for approach in world.APPROACHES:
        path = world.agent_path(approach, agent.intention.value)
        b, d, dist = path.project(pos)
        h_err = abs(_wrap(agent.heading - float(path.heading_at(min(float(b), path.length - 1e-9)))))
        if dist > 3.0 or h_err > 1.2:
            continue
        score = float(dist) + 0.5 * h_err
        if best is None or score < best[0]:
            best = (score, path, float(b), float(d))
    if best is None:
        return None, None, 0.0
    return best[1], best[2], best[3]


def _wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def _max_curvature_ahead(path: ReferencePath, b: float, window: float) -> float:
    i0 = int(np.searchsorted(path.cum_arclen, b, side="right") - 1)
    i1 = int(np.searchsorted(path.cum_arclen, b + window, side="right"))
    i0 = max(0, min(i0, len(path.curvatures) - 1))
    i1 = max(i0 + 1, min(i1, len(path.curvatures)))
    return float(np.max(np.abs(path.curvatures[i0:i1])))


def _idm_accel(v, v_desired, gap, dv, cfg: SimConfig) -> float:
    v0 = max(v_desired, 0.01)
    free = 1.0 - (max(v, 0.0) / v0) ** cfg.idm_exponent
    if gap is None:
        return cfg.idm_accel * free
    s_star = cfg.idm_min_gap + max(
        0.0, v * cfg.idm_time_headway + v * dv / (2.0 * math.sqrt(cfg.idm_accel * cfg.idm_decel)))
    return cfg.idm_accel * (free - (s_star / max(gap, 0.1)) ** 2)


def step_agents(state: WorldState, dt: float, rng: np.random.Generator,
                cfg: SimConfig = SimConfig(), desired_speeds=None) -> tuple:
    """Advance every surrounding agent one step.

    Each agent follows its intention route with an IDM law against the
    nearest leading object (including the ego) plus seeded speed noise.
    ``desired_speeds`` holds per-agent IDM target speeds; the agent's
    current speed is used when absent.
    """
    agents = state.agents
    out = []
    obstacles = [(state.ego.x, state.ego.y, state.ego.heading, state.ego.speed)] + [
        (a.x, a.y, a.heading, a.speed) for a in agents]
    for i, agent in enumerate(agents):
        v_des = agent.speed if desired_speeds is None else desired_speeds[i]
        path, b, d_off = _infer_route(agent)
        noise = cfg.speed_noise_sigma * float(rng.standard_normal())
        if path is None:
            # off-map: coast straight, slowly braking
            dv = float(np.clip(-1.0 * dt + noise, -REACH_DV_LOSS, REACH_DV_GAIN))
            speed = float(np.clip(agent.speed + dv, 0.0, AGENT_SPEED_MAX))
            out.append(AgentState(agent.x + agent.speed * math.cos(agent.heading) * dt,
                                  agent.y + agent.speed * math.sin(agent.heading) * dt,
                                  agent.heading, speed, agent.intention))
            continue
        # nearest leading object inside the corridor
        gap = None
        dv_lead = 0.0
        for j, (ox, oy, oh, ov) in enumerate(obstacles):
            if j == i + 1:
                continue
            ob, od, odist = path.project(np.array([ox, oy]))
            if odist > cfg.leader_corridor or ob <= b + 0.1:
                continue
            g = float(ob) - b - AGENT_DIMS[0]
            if gap is None or g < gap:
                seg_h = float(path.heading_at(min(float(ob), path.length - 1e-9)))
                gap = g
                dv_lead = agent.speed - ov * math.cos(oh - seg_h)
        kappa = _max_curvature_ahead(path, b, cfg.curvature_lookahead)
        v_cap = REACH_OMEGA / kappa if kappa > 1e-6 else float("inf")
        accel = _idm_accel(agent.speed, min(v_des, v_cap), gap, dv_lead, cfg)
        dv = float(np.clip(accel * dt + noise, -REACH_DV_LOSS, REACH_DV_GAIN))
        speed = float(np.clip(agent.speed + dv, 0.0, AGENT_SPEED_MAX))
        b_next = b + agent.speed * dt
        if b_next >= path.length - 1e-9:
            out.append(AgentState(agent.x + agent.speed * math.cos(agent.heading) * dt,
                                  agent.y + agent.speed * math.sin(agent.heading) * dt,
                                  agent.heading, speed, agent.intention))
            continue
        d_next = 0.9 * d_off
        pos = path.point_at(b_next, d_next)
        heading_raw = float(path.heading_at(b_next))
        dh = float(np.clip(_wrap(heading_raw - agent.heading), -REACH_OMEGA * dt, REACH_OMEGA * dt))
        out.append(AgentState(float(pos[0]), float(pos[1]), agent.heading + dh,
                              speed, agent.intention))
    return tuple(out)


# -- collision detection ---------------------------------------------------


def rect_corners(cx, cy, heading, dims):
    """Corners of oriented rectangles; broadcasts, returns (..., 4, 2)."""
    cx = np.asarray(cx, float)
    cy = np.asarray(cy, float)
    heading = np.asarray(heading, float)
    half_l, half_w = dims[0] / 2.0, dims[1] / 2.0
    cos = np.cos(heading)
    sin = np.sin(heading)
    lx = np.stack([half_l, half_l, -half_l, -half_l])
    wy = np.stack([half_w, -half_w, -half_w, half_w])
    x = cx[..., None] + lx * cos[..., None] - wy * sin[..., None]
    y = cy[..., None] + lx * sin[..., None] + wy * cos[..., None]
    return np.stack([x, y], axis=-1)


def rects_overlap_batch(c1, h1, dims1, c2, h2, dims2, eps: float = 1e-9):
    """Separating-axis overlap test for oriented rectangle pairs.

    All arguments broadcast; boundary contact counts as overlap.
    """
    c1 = np.asarray(c1, float)
    c2 = np.asarray(c2, float)
    h1 = np.asarray(h1, float)
    h2 = np.asarray(h2, float)
    delta = c2 - c1
    separated = np.zeros(np.broadcast_shapes(h1.shape, h2.shape), dtype=bool)
    axes = []
    for h in (h1, h2):
        cos, sin = np.cos(h), np.sin(h)
        axes.append((cos, sin))            # long axis
        axes.append((-sin, cos))           # short axis
    u1 = axes[0]
    n1 = axes[1]
    u2 = axes[2]
    n2 = axes[3]
    for ax, ay in axes:
        dist = np.abs(delta[..., 0] * ax + delta[..., 1] * ay)
        r1 = dims1[0] / 2 * np.abs(u1[0] * ax + u1[1] * ay) \
            + dims1[1] / 2 * np.abs(n1[0] * ax + n1[1] * ay)
        r2 = dims2[0] / 2 * np.abs(u2[0] * ax + u2[1] * ay) \
            + dims2[1] / 2 * np.abs(n2[0] * ax + n2[1] * ay)
        separated |= dist > r1 + r2 + eps
    return ~separated


def detect_collision(state: WorldState, ego_dims=EGO_DIMS, agent_dims=AGENT_DIMS) -> bool:
    """True iff the ego overlaps any agent or leaves the drivable area."""
    ego = state.ego
    if state.agents:
        ax = np.array([a.x for a in state.agents])
        ay = np.array([a.y for a in state.agents])
        ah = np.array([a.heading for a in state.agents])
        hit = rects_overlap_batch(
            np.array([ego.x, ego.y]), np.array(ego.heading), ego_dims,
            np.stack([ax, ay], axis=-1), ah, agent_dims)
        if bool(np.any(hit)):
            return True
    corners = rect_corners(np.array(ego.x), np.array(ego.y), np.array(ego.heading), ego_dims)
    return not bool(np.all(world.is_drivable(corners)))


# -- case generation -------------------------------------------------------


def episode_budget(rank: int, cfg: SimConfig = SimConfig(), n_cases: int | None = None) -> int:
    """Training-episode budget for the case of a given 1-based rank.

    Zipf-like decay anchored at the head budget; the floor reproduces the
    218 / 17 / 0 anchors (ranks 1, 8 and the tail). The lowest 20 % of
    ranks are forced to zero regardless.
    """
    n = cfg.n_cases if n_cases is None else n_cases
    if rank > (1.0 - cfg.forced_zero_fraction) * n:
        return 0
    return int(math.floor(cfg.head_budget * rank ** (-cfg.budget_exponent)))


def generate_cases(count: int = 300, rng_seed: int = 0,
                   cfg: SimConfig = SimConfig()) -> CaseSet:
    """Rejection-sample a deterministic case set with long-tail budgets."""
    if count < 1:
        raise ValueError("count must be >= 1")
    ego0 = initial_ego()
    ego_pos = np.array([ego0.x, ego0.y])
    cases = []
    for cid in range(count):
        rng = rng_from(rng_seed, "case", cid)
        for attempt in range(cfg.max_rejections + 1):
            if attempt == cfg.max_rejections:
                raise SamplingExhausted(f"case {cid}: no valid layout in {cfg.max_rejections} draws")
            k = int(rng.integers(cfg.agents_min, cfg.agents_max + 1))
            inits = []
            for _ in range(k):
                approach = world.APPROACHES[int(rng.integers(0, 4))]
                intention = Intention(world.INTENTIONS[int(rng.integers(0, 3))])
                spawn = float(rng.uniform(cfg.spawn_min, cfg.spawn_max))
                speed = float(rng.uniform(0.0, cfg.agent_speed_max_init))
                inits.append(AgentInit(approach, intention, spawn, speed))
            states = [ai.to_state() for ai in inits]
            pos = np.array([[s.x, s.y] for s in states])
            ok = bool(np.all(world.is_drivable(pos)))
            if ok and k > 1:
                diff = pos[:, None, :] - pos[None, :, :]
                dist = np.hypot(diff[..., 0], diff[..., 1])
                iu = np.triu_indices(k, 1)
                ok = bool(np.all(dist[iu] > cfg.min_pair_distance))
            if ok:
                ok = bool(np.all(np.hypot(pos[:, 0] - ego_pos[0], pos[:, 1] - ego_pos[1])
                                 >= cfg.min_ego_clearance))
            if ok:
                cases.append(Case(
                    case_id=cid,
                    seed=derive_seed(rng_seed, "case", cid),
                    agent_inits=tuple(inits),
                    train_episode_budget=episode_budget(cid + 1, cfg, count),
                ))
                break
    return CaseSet(seed=rng_seed, cases=cases)


# -- episode loop -----------------------------------------------------------


def initial_ego() -> EgoState:
    path = world.ego_path()
    pos = path.point_at(0.0)
    return EgoState(float(pos[0]), float(pos[1]), float(path.heading_at(0.0)), 0.0, 0.0)


def initial_state(case: Case) -> WorldState:
    return WorldState(time=0.0, ego=initial_ego(),
                      agents=tuple(ai.to_state() for ai in case.agent_inits))


def run_episode(case: Case, planner, *, episode_seed: int | None = None,
                sim_cfg: SimConfig = SimConfig(),
                reward_cfg: rw.RewardConfig = rw.RewardConfig(),
                preview_cfg: ctrl.PreviewConfig = ctrl.PreviewConfig(),
                max_sim_time: float | None = None,
                on_decision=None, latencies=None) -> EpisodeTrajectory:
    """Run one closed-loop episode.

    Args:
        planner: callable WorldState -> object with ``action_id`` and
            ``curve`` attributes (curve None means the brake action).
        episode_seed: seed for the agent-noise stream (defaults to the
            case seed).
        on_decision: optional callback (state, decision) per step.
        latencies: optional list collecting per-step planning seconds.

    Returns:
        EpisodeTrajectory whose outcome is exactly one of the four kinds.
    """
    path = world.ego_path()
    dt = sim_cfg.dt
    horizon_time = sim_cfg.max_sim_time if max_sim_time is None else max_sim_time
    goal_b = path.length - sim_cfg.goal_margin
    rng = rng_from(case.seed if episode_seed is None else episode_seed, "agents")
    desired = [ai.speed for ai in case.agent_inits]
    state = initial_state(case)
    records = []
    stall_steps = 0
    stall_limit = int(round(sim_cfg.stall_window / dt))
    outcome = None
    while True:
        t0 = _time.perf_counter()
        decision = planner(state)
        if latencies is not None:
            latencies.append(_time.perf_counter() - t0)
        if on_decision is not None:
            on_decision(state, decision)
        curve = decision.curve
        if curve is None:
            control = ctrl.brake_policy(state.ego, preview_cfg)
            jerk_step = 0.0
        else:
            control = ctrl.track(curve, path, state.ego, 0.0, preview_cfg)
            jerk_step = jerk_integral(curve, "b", 0.0, dt) + jerk_integral(curve, "d", 0.0, dt)
        ego_next = step_ego(state.ego, control, dt, preview_cfg)
        agents_next = step_agents(state, dt, rng, sim_cfg, desired)
        next_state = WorldState(time=round(state.time + dt, 9), ego=ego_next, agents=agents_next)
        collided = detect_collision(next_state)
        r = rw.total_reward(next_state, jerk_step, collided, path, reward_cfg)
        records.append(StepRecord(state=state, action_id=decision.action_id, reward=r))
        state = next_state
        if collided:
            outcome = Outcome.COLLISION
        else:
            b, _, _ = path.project(np.array([ego_next.x, ego_next.y]))
            if float(b) >= goal_b:
                outcome = Outcome.TASK_COMPLETE
            else:
                stall_steps = stall_steps + 1 if ego_next.speed < sim_cfg.stall_speed else 0
                if stall_steps >= stall_limit:
                    outcome = Outcome.STALL
                elif state.time >= horizon_time - 1e-9:
                    outcome = Outcome.TIMEOUT
        if outcome is not None:
            return EpisodeTrajectory(records=records, outcome=outcome)


# -- persistence -------------------------------------------------------------

CASES_FORMAT = {"format": "dcplan-cases", "version": 1}
EPISODE_FORMAT = {"format": "dcplan-episode", "version": 1}


def save_cases(case_set: CaseSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = dict(CASES_FORMAT)
        header.update(seed=case_set.seed, count=len(case_set.cases))
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for c in case_set.cases:
            rec = {
                "case_id": c.case_id,
                "seed": c.seed,
                "budget": c.train_episode_budget,
                "agents": [
                    {"approach": ai.approach, "intention": ai.intention.value,
                     "spawn_arclen": ai.spawn_arclen, "speed": ai.speed}
                    for ai in c.agent_inits
                ],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_cases(path) -> CaseSet:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != CASES_FORMAT["format"]:
            raise ValueError(f"{path}: not a case-set file")
        cases = []
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            cases.append(Case(
                case_id=rec["case_id"], seed=rec["seed"],
                agent_inits=tuple(
                    AgentInit(a["approach"], Intention(a["intention"]),
                              a["spawn_arclen"], a["speed"])
                    for a in rec["agents"]),
                train_episode_budget=rec["budget"],
            ))
    return CaseSet(seed=header.get("seed", 0), cases=cases)


def save_episode_log(traj: EpisodeTrajectory, path, case_id: int) -> None:
    """Line-delimited episode log with a versioned header.

    Field order per record: t, ego x/y/heading/speed/accel, agents as
    [x, y, heading, speed, intention], action_id, reward, outcome flag
    (empty except on the final record).
    """
    with open(path, "w", encoding="utf-8") as fh:
        header = dict(EPISODE_FORMAT)
        header.update(case_id=case_id,
                      fields="t ego(x y heading speed accel) agents[(x y heading speed intention)] action_id reward outcome")
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        last = len(traj.records) - 1
        for i, rec in enumerate(traj.records):
            s = rec.state
            row = {
                "t": round(s.time, 6),
                "ego": [s.ego.x, s.ego.y, s.ego.heading, s.ego.speed, s.ego.accel],
                "agents": [[a.x, a.y, a.heading, a.speed, a.intention.value] for a in s.agents],
                "action_id": rec.action_id,
                "reward": rec.reward,
                "outcome": traj.outcome.value if i == last else "",
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")
