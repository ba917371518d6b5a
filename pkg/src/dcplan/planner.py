"""Candidate policy generation and the three selectors.

Candidates: nine boundary-matched quintic curves over a grid of terminal
lateral offsets and target speeds, plus the brake action, ordered by a
conservatism rank (brake first, then ascending target speed, then
|offset|). Selection:

  * max-min: pick the candidate whose worst-case Q over the ensemble is
    largest (ties fall toward the more conservative rank),
  * efficient baseline: argmax of the ensemble-mean Q,
  * conservative baseline: avoid every agent's reachable cone over the
    horizon and take the most efficient feasible candidate, braking when
    nothing qualifies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import controller as ctrl
from . import intersection as world
from . import reward as rw
from .errors import FarFromPath
from .frenet import QuinticCurve, fit_quintic_batch, to_frenet
from .rate import PolicyEvaluation, RolloutConfig, RolloutEngine
from .sim import (
    AGENT_DIMS,
    EGO_DIMS,
    REACH_ACCEL_GAIN,
    REACH_OMEGA,
    AgentState,
    WorldState,
)
from .transition import TransitionEnsemble

__all__ = [
    "LatticeConfig", "Candidate", "CandidateSet", "Decision",
    "generate_candidates", "select_from_table",
    "DcpPlanner", "EfficientPlanner", "ConservativePlanner",
    "dcp_select", "efficient_select", "conservative_select",
    "reachable_set",
]


@dataclass(frozen=True)
class LatticeConfig:
    # offset grid: lane half-width minus the footprint half-width
    lateral_offsets: tuple = (-0.75, 0.0, 0.75)
    target_speeds: tuple = (15.0 / 3.6, 22.5 / 3.6, 30.0 / 3.6)
    horizon: float = 3.0

    @property
    def n_actions(self) -> int:
        return 1 + len(self.lateral_offsets) * len(self.target_speeds)


@dataclass(frozen=True)
class Candidate:
    action_id: int
    conservatism_rank: int
    curve: QuinticCurve
    target_offset: float
    target_speed: float
    is_brake: bool = False


@dataclass
class CandidateSet:
    candidates: list
    coeffs_b: np.ndarray                # (m, 6), zeros on the brake row
    coeffs_d: np.ndarray
    brake_mask: np.ndarray
    horizon: float

    def __len__(self):
        return len(self.candidates)


def generate_candidates(state: WorldState, path=None,
                        cfg: LatticeConfig = LatticeConfig()) -> CandidateSet:
    """Lattice expansion from the current ego state.

    Nine quintic curves to (offset, speed) targets with terminal lateral
    and longitudinal rest derivatives, plus the brake action: a
    maximal-deceleration stop curve that holds the lane (a locked-straight
    hard stop mid-turn would leave the pavement, so braking steers). All
    candidates are ordered by conservatism rank, most conservative first,
    and the action id equals the rank.

    Raises:
        FarFromPath: if the ego cannot be projected onto the path.
    """
    if path is None:
        path = world.ego_path()
    ego = state.ego
    pose = to_frenet(path, (ego.x, ego.y),
                     velocity=(ego.speed * np.cos(ego.heading),
                               ego.speed * np.sin(ego.heading)),
                     acceleration=(ego.accel * np.cos(ego.heading),
                                   ego.accel * np.sin(ego.heading)))
    # rank order: brake, then ascending target speed, |offset|, offset
    grid = [(0.0, 0.0)] + sorted(
        ((v_t, d_t) for v_t in cfg.target_speeds for d_t in cfg.lateral_offsets),
        key=lambda g: (g[0], abs(g[1]), g[1]))
    H = cfg.horizon
    starts_b = np.tile(pose.state_b(), (len(grid), 1))
    starts_d = np.tile(pose.state_d(), (len(grid), 1))
    ends_b = np.array([[pose.b + 0.5 * (pose.b_dot + v_t) * H, v_t, 0.0]
                       for v_t, _ in grid])
    ends_d = np.array([[d_t, 0.0, 0.0] for _, d_t in grid])
    cb = fit_quintic_batch(starts_b, ends_b, H)
    cd = fit_quintic_batch(starts_d, ends_d, H)

    candidates = [
        Candidate(action_id=i, conservatism_rank=i,
                  curve=QuinticCurve(coeffs_b=cb[i], coeffs_d=cd[i], horizon=H),
                  target_offset=d_t, target_speed=v_t, is_brake=(i == 0))
        for i, (v_t, d_t) in enumerate(grid)
    ]
    return CandidateSet(candidates=candidates, coeffs_b=cb, coeffs_d=cd,
                        brake_mask=np.zeros(len(grid), dtype=bool), horizon=H)


@dataclass
class Decision:
    action_id: int
    curve: QuinticCurve | None
    planner_kind: str
    evaluations: list | None            # per-candidate PolicyEvaluation
    chosen_eval: PolicyEvaluation | None
    q_table: np.ndarray | None = None
    info: dict = field(default_factory=dict)


def select_from_table(q_table, ranks, mode: str) -> int:
    """Candidate choice from an (m, n_members) Q table.

    mode "dcp": max over candidates of the min over members; mode
    "efficient": max of the member mean. Ties fall to the lowest
    conservatism rank.
    """
    q = np.asarray(q_table, float)
    if mode == "dcp":
        score = q.min(axis=1)
    elif mode == "efficient":
        score = q.mean(axis=1)
    else:
        raise ValueError(f"unknown selection mode {mode!r}")
    ranks = np.asarray(ranks)
    best = np.flatnonzero(score == score.max())
    return int(best[np.argmin(ranks[best])])


class _EnsemblePlanner:
    """Shared machinery for the max-min and efficient selectors."""

    kind = "dcp"
    mode = "dcp"

    def __init__(self, ensemble: TransitionEnsemble,
                 rollout_cfg: RolloutConfig = RolloutConfig(),
                 reward_cfg: rw.RewardConfig = rw.RewardConfig(),
                 preview_cfg: ctrl.PreviewConfig = ctrl.PreviewConfig(),
                 lattice_cfg: LatticeConfig = LatticeConfig(),
                 path=None):
        self.path = world.ego_path() if path is None else path
        self.lattice_cfg = lattice_cfg
        self.engine = RolloutEngine(ensemble, rollout_cfg, reward_cfg,
                                    preview_cfg, path=self.path)

    def __call__(self, state: WorldState) -> Decision:
        cands = generate_candidates(state, self.path, self.lattice_cfg)
        q_table, info = self.engine.evaluate(cands.coeffs_b, cands.coeffs_d,
                                             cands.brake_mask, cands.horizon, state)
        ranks = np.array([c.conservatism_rank for c in cands.candidates])
        idx = select_from_table(q_table, ranks, self.mode)
        evals = [PolicyEvaluation.from_member_qs(q_table[k]) for k in range(len(cands))]
        return Decision(action_id=cands.candidates[idx].action_id,
                        curve=cands.candidates[idx].curve,
                        planner_kind=self.kind,
                        evaluations=evals, chosen_eval=evals[idx],
                        q_table=q_table,
                        info=dict(collision_fraction=info["collision_fraction"]))


class DcpPlanner(_EnsemblePlanner):
    kind = "dcp"
    mode = "dcp"


class EfficientPlanner(_EnsemblePlanner):
    """Baseline: highest expected performance over the ensemble mean.

    ``single_member=True`` evaluates only the first member, which makes it
    literally the same computation as a one-member max-min selection.
    """

    kind = "efficient"
    mode = "efficient"

    def __init__(self, ensemble: TransitionEnsemble, single_member: bool = False,
                 **kwargs):
        if single_member:
            ensemble = TransitionEnsemble(ensemble.members[:1], ensemble.member_seeds[:1])
        super().__init__(ensemble, **kwargs)


# -- conservative baseline ---------------------------------------------------


def reachable_set(agent: AgentState, t: float,
                  accel_gain: float = REACH_ACCEL_GAIN,
                  omega_max: float = REACH_OMEGA,
                  footprint=AGENT_DIMS, n_arc: int = 9) -> np.ndarray:
    """Over-approximating convex polygon of positions occupied within t.

    Minkowski sum of the agent footprint with a circumscribed wedge of
    travel directions (heading slews at most omega_max, travel distance at
    most v t + accel_gain t^2 / 2, speed never negative). Returns (V, 2)
    hull vertices; exactly the footprint rectangle at t = 0.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    from scipy.spatial import ConvexHull

    corners = _rect_corners_single(agent.x, agent.y, agent.heading, footprint)
    if t == 0.0:
        return corners
    reach = agent.speed * t + 0.5 * accel_gain * t * t
    phi = min(omega_max * t, np.pi)
    ang = agent.heading + np.linspace(-phi, phi, n_arc)
    # circumscribe the arc so the polygon contains the true disk sector
    r_out = reach / max(np.cos((ang[1] - ang[0]) / 2.0), 0.2)
    disp = np.concatenate([[[0.0, 0.0]],
                           np.stack([r_out * np.cos(ang), r_out * np.sin(ang)], axis=1)])
    pts = (corners[None, :, :] + disp[:, None, :]).reshape(-1, 2)
    hull = ConvexHull(pts)
    return pts[hull.vertices]


def _rect_corners_single(cx, cy, heading, dims):
    hl, hw = dims[0] / 2.0, dims[1] / 2.0
    cos, sin = np.cos(heading), np.sin(heading)
    lx = np.array([hl, hl, -hl, -hl])
    wy = np.array([hw, -hw, -hw, hw])
    return np.stack([cx + lx * cos - wy * sin, cy + lx * sin + wy * cos], axis=1)


def _rects_intersect_poly(corners, poly) -> np.ndarray:
    """Exact SAT between m oriented rectangles and one convex polygon.

    Args:
        corners: (m, 4, 2) rectangle corners.
        poly: (V, 2) convex hull vertices.

    Returns:
        (m,) bool, True where the rectangle touches the polygon.
    """
    m = corners.shape[0]
    edges = np.roll(poly, -1, axis=0) - poly
    normals = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
    norms = np.linalg.norm(normals, axis=1)
    normals = normals[norms > 1e-12] / norms[norms > 1e-12][:, None]
    # polygon axes
    rect_proj = corners @ normals.T                       # (m, 4, V)
    poly_proj = poly @ normals.T                          # (V_pts, V)
    sep = (rect_proj.max(axis=1) < poly_proj.min(axis=0) - 1e-9) | \
          (rect_proj.min(axis=1) > poly_proj.max(axis=0) + 1e-9)
    separated = sep.any(axis=1)
    # rectangle axes (two per rectangle)
    u = corners[:, 0, :] - corners[:, 3, :]
    v = corners[:, 0, :] - corners[:, 1, :]
    for axis in (u, v):
        a = axis / np.maximum(np.linalg.norm(axis, axis=1, keepdims=True), 1e-12)
        rp = np.einsum("mck,mk->mc", corners, a)
        pp = poly @ a.T                                   # (V_pts, m)
        sep = (rp.max(axis=1) < pp.min(axis=0) - 1e-9) | \
              (rp.min(axis=1) > pp.max(axis=0) + 1e-9)
        separated |= sep
    return ~separated


class ConservativePlanner:
    """Fixed most-conservative baseline: avoid all reachable cones.

    A candidate is feasible when its tracked footprint clears every
    agent's reachable set at each rollout step; among feasible candidates
    the one with the highest deterministic efficiency return wins, and the
    brake action is the fallback when none qualify. No ensemble involved.
    """

    kind = "conservative"

    def __init__(self, rollout_cfg: RolloutConfig = RolloutConfig(),
                 reward_cfg: rw.RewardConfig = rw.RewardConfig(),
                 preview_cfg: ctrl.PreviewConfig = ctrl.PreviewConfig(),
                 lattice_cfg: LatticeConfig = LatticeConfig(),
                 margin: float = 0.0, path=None):
        self.rollout_cfg = rollout_cfg
        self.reward_cfg = reward_cfg
        self.preview_cfg = preview_cfg
        self.lattice_cfg = lattice_cfg
        self.margin = margin
        self.path = world.ego_path() if path is None else path
        self._ego_dims = (EGO_DIMS[0] + 2 * margin, EGO_DIMS[1] + 2 * margin)

    def __call__(self, state: WorldState) -> Decision:
        from .rate import imagine_ego

        cands = generate_candidates(state, self.path, self.lattice_cfg)
        ego = imagine_ego(cands.coeffs_b, cands.coeffs_d, cands.brake_mask,
                          cands.horizon, state.ego, self.rollout_cfg,
                          self.reward_cfg, self.preview_cfg, self.path)
        H = self.rollout_cfg.horizon_steps
        dt = self.rollout_cfg.dt
        gamma_pow = self.reward_cfg.gamma ** np.arange(H)
        returns = (ego["eff"] * gamma_pow[None, :]).sum(axis=1)
        # off-road candidates are never feasible (except the brake fallback)
        feasible = ego["offroad_step"] >= H
        feasible[0] = True

        if self.margin > 0.0:
            corners = _corners_with_margin(ego, self._ego_dims)
        else:
            corners = ego["corners"]

        ex = ego["x"]
        ey = ego["y"]
        for agent in state.agents:
            if not np.any(feasible[1:]) :
                break
            # steps whose cone could touch any candidate footprint; the
            # 1.2 factor covers the circumscribed polygon overshoot
            dist = np.hypot(ex[:, 1:] - agent.x, ey[:, 1:] - agent.y)   # (m, H)
            horizon_t = np.arange(1, H + 1) * dt
            reach = 1.2 * (agent.speed * horizon_t
                           + 0.5 * REACH_ACCEL_GAIN * horizon_t ** 2) \
                + 0.5 * np.hypot(*AGENT_DIMS) + 0.5 * np.hypot(*self._ego_dims) + 0.1
            threat = dist <= reach[None, :]
            if not threat.any():
                continue
            for t in range(H):
                active = feasible & threat[:, t]
                active[0] = False
                if not active.any():
                    continue
                poly = reachable_set(agent, (t + 1) * dt)
                idx = np.flatnonzero(active)
                hit = _rects_intersect_poly(corners[idx, t], poly)
                feasible[idx[hit]] = False
        feasible[0] = True                                 # brake always allowed
        scores = np.where(feasible, returns, -np.inf)
        # brake is the fallback, not a competitor: pick the best moving
        # candidate if any non-brake candidate is feasible
        moving = scores.copy()
        moving[0] = -np.inf
        if np.isfinite(moving).any():
            order = np.argsort([c.conservatism_rank for c in cands.candidates])
            best = np.flatnonzero(moving == moving.max())
            idx = int(best[np.argmin(np.asarray(order)[best])])
        else:
            idx = 0
        chosen = cands.candidates[idx]
        return Decision(action_id=chosen.action_id, curve=chosen.curve,
                        planner_kind=self.kind, evaluations=None, chosen_eval=None,
                        info=dict(feasible=feasible.copy(),
                                  deterministic_returns=returns))


def _corners_with_margin(ego, dims):
    from .sim import rect_corners
    return rect_corners(ego["x"][:, 1:], ego["y"][:, 1:], ego["h"][:, 1:], dims)


# -- functional wrappers matching the operation signatures ---------------------


def dcp_select(state: WorldState, ensemble: TransitionEnsemble, **kwargs) -> Decision:
    return DcpPlanner(ensemble, **kwargs)(state)


def efficient_select(state: WorldState, ensemble: TransitionEnsemble,
                     single_member: bool = False, **kwargs) -> Decision:
    return EfficientPlanner(ensemble, single_member=single_member, **kwargs)(state)


def conservative_select(state: WorldState, **kwargs) -> Decision:
    return ConservativePlanner(**kwargs)(state)
