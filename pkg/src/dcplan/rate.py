"""Policy evaluation by imaginary rollouts and the long-tail rate.

Each candidate curve is rolled out H steps inside every ensemble member's
imagined world: the ego advances with the known controller + dynamics, the
agents by sampling the member's predictive Gaussian (clamped to the shared
reachable bounds), and an imagined collision absorbs the rollout with one
penalty. Per-member Monte Carlo Q estimates are reduced by an ordered min
into the confidence lower bound; the long-tail rate is its negation.

Rollout noise comes from a fixed tableau derived from (base seed, member,
curve, rollout), so the whole evaluation is a pure deterministic function
of (ensemble, candidates, state, config).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import controller as ctrl
from . import intersection as world
from . import reward as rw
from .frenet import poly_derivative, poly_eval
from .seeds import derive_seed, rng_from
from .sim import (
    AGENT_DIMS,
    EGO_DIMS,
    REACH_DV,
    REACH_OMEGA,
    EgoState,
    Intention,
    WorldState,
    detect_collision,
    rect_corners,
    rects_overlap_batch,
    step_ego,
)
from .transition import (
    AGENT_FEATS,
    AGENT_SLOTS,
    BLANK_REL,
    EGO_FEATS,
    N_FEATURES,
    N_TARGETS,
    SLOT_TARGET,
    EnsembleRollout,
    TransitionEnsemble,
    encode_state,
)

__all__ = [
    "RolloutConfig", "PolicyEvaluation", "ImaginedRollout",
    "discounted_return", "imagine_rollout", "estimate_q", "q_lower_bound",
    "RolloutEngine",
]


@dataclass(frozen=True)
class RolloutConfig:
    horizon_steps: int = 30          # H
    rollouts_per_member: int = 5     # j
    base_seed: int = 202_401
    dt: float = 0.1

    def __post_init__(self):
        if self.horizon_steps < 1 or self.rollouts_per_member < 1:
            raise ValueError("horizon and rollouts per member must be >= 1")


@dataclass(frozen=True)
class PolicyEvaluation:
    """Per-member Q estimates with their ordered-min lower bound."""

    per_member_q: np.ndarray
    q_lower: float
    rate: float
    member_argmin: int

    @classmethod
    def from_member_qs(cls, qs) -> "PolicyEvaluation":
        qs = np.asarray(qs, float)
        idx = int(np.argmin(qs))
        q_lower = float(qs[idx])
        return cls(per_member_q=qs, q_lower=q_lower, rate=-q_lower, member_argmin=idx)


def discounted_return(rewards, gamma: float) -> float:
    """Sum of gamma^t * r_t via plain sequential accumulation."""
    acc = 0.0
    g = 1.0
    for r in rewards:
        acc += g * float(r)
        g *= gamma
    return acc


# -- single-lane reference rollout (readable, used for cross-checks) ----------


@dataclass
class ImaginedRollout:
    rewards: list
    collided: bool
    collision_step: int      # H if no collision
    states: list


def imagine_rollout(member, curve, s0: WorldState, config: RolloutConfig,
                    rng: np.random.Generator,
                    reward_cfg: rw.RewardConfig = rw.RewardConfig(),
                    preview_cfg: ctrl.PreviewConfig = ctrl.PreviewConfig(),
                    path=None) -> ImaginedRollout:
    """One imaginary trajectory under one ensemble member.

    The ego tracks the candidate curve with the known controller and
    dynamics; agents evolve by sampling the member. The rollout truncates
    at an imagined collision (absorbing, one penalty).
    """
    if path is None:
        path = world.ego_path()
    from .frenet import jerk_integral

    state = s0
    rewards = []
    states = [s0]
    for t in range(config.horizon_steps):
        t_along = t * config.dt
        if curve is None:
            control = ctrl.brake_policy(state.ego, preview_cfg)
            jerk_step = 0.0
        else:
            control = ctrl.track(curve, path, state.ego, min(t_along, curve.horizon), preview_cfg)
            jerk_step = jerk_integral(curve, "b", t_along, t_along + config.dt) \
                + jerk_integral(curve, "d", t_along, t_along + config.dt)
        ego_next = step_ego(state.ego, control, config.dt, preview_cfg)
        agents_next = member.sample_next(state, None, rng, path=path)
        nxt = WorldState(time=state.time + config.dt, ego=ego_next, agents=agents_next)
        collided = detect_collision(nxt)
        rewards.append(rw.total_reward(nxt, jerk_step, collided, path, reward_cfg))
        states.append(nxt)
        state = nxt
        if collided:
            return ImaginedRollout(rewards, True, t, states)
    return ImaginedRollout(rewards, False, config.horizon_steps, states)


def estimate_q(member, curve, s0: WorldState, config: RolloutConfig,
               member_index: int = 0, curve_index: int = 0,
               reward_cfg: rw.RewardConfig = rw.RewardConfig(),
               preview_cfg: ctrl.PreviewConfig = ctrl.PreviewConfig(),
               path=None, rollouts: int | None = None) -> float:
    """Mean discounted return over j seeded imaginary rollouts."""
    j = config.rollouts_per_member if rollouts is None else rollouts
    total = 0.0
    for r in range(j):
        rng = rng_from(config.base_seed, "rollout", member_index, curve_index, r)
        roll = imagine_rollout(member, curve, s0, config, rng, reward_cfg,
                               preview_cfg, path)
        total += discounted_return(roll.rewards, reward_cfg.gamma)
    return total / j


def q_lower_bound(ensemble: TransitionEnsemble, curve, s0: WorldState,
                  config: RolloutConfig,
                  curve_index: int = 0,
                  reward_cfg: rw.RewardConfig = rw.RewardConfig(),
                  preview_cfg: ctrl.PreviewConfig = ctrl.PreviewConfig(),
                  path=None) -> PolicyEvaluation:
    """Ordered min over per-member Q estimates; rate is its negation."""
    qs = [
        estimate_q(member, curve, s0, config, member_index=i, curve_index=curve_index,
                   reward_cfg=reward_cfg, preview_cfg=preview_cfg, path=path)
        for i, member in enumerate(ensemble.members)
    ]
    return PolicyEvaluation.from_member_qs(qs)


# -- vectorized rollout engine -------------------------------------------------


class RolloutEngine:
    """Evaluates every (member, candidate, rollout) lane in batched numpy.

    The engine is what the planners call at 10 Hz; the single-lane
    reference path above exists for clarity and cross-checking.
    """

    def __init__(self, ensemble: TransitionEnsemble,
                 config: RolloutConfig = RolloutConfig(),
                 reward_cfg: rw.RewardConfig = rw.RewardConfig(),
                 preview_cfg: ctrl.PreviewConfig = ctrl.PreviewConfig(),
                 path=None, dtype=np.float32):
        self.ensemble = ensemble
        self.stack = EnsembleRollout(ensemble)
        self.config = config
        self.reward_cfg = reward_cfg
        self.preview_cfg = preview_cfg
        self.path = world.ego_path() if path is None else path
        self.dtype = dtype
        self.n = len(ensemble)
        self._noise_cache = {}
        self._buf_cache = {}
        self._gamma_pow = reward_cfg.gamma ** np.arange(config.horizon_steps)
        if dtype == np.float32:
            self._cast = lambda a: a.astype(np.float32)
        else:
            self._cast = lambda a: a.astype(np.float64)
        self._x_mean = self._cast(self.stack.x_mean.astype(np.float64))
        self._x_std = self._cast(self.stack.x_std.astype(np.float64))
        self._y_mean = self._cast(self.stack.y_mean.astype(np.float64))
        self._y_std = self._cast(self.stack.y_std.astype(np.float64))
        if dtype == np.float64:
            # rebuild the weight stack at full precision for cross-checks
            nets = [m.net for m in ensemble.members]
            for key in ("W1", "b1", "W2", "b2", "Wm", "bm", "Ws", "bs"):
                arr = np.stack([n.params[key] for n in nets])
                if arr.ndim == 2:
                    arr = arr[:, None, :]
                setattr(self.stack, key, arr)
            self.stack.sigma_min = np.float64(nets[0].sigma_min)

    # noise tableau ---------------------------------------------------------

    def _noise(self, m: int):
        """(H, n, m*j, targets) standard normals, fixed by derived seeds.

        Per (member, curve, rollout) the draws match a fresh generator
        seeded from (base_seed, "rollout", member, curve, rollout) read in
        time order, which is exactly what the single-lane reference does.
        """
        key = m
        if key not in self._noise_cache:
            cfg = self.config
            j = cfg.rollouts_per_member
            out = np.empty((self.n, m, j, cfg.horizon_steps, N_TARGETS))
            for mi in range(self.n):
                for ci in range(m):
                    for r in range(j):
                        rng = rng_from(cfg.base_seed, "rollout", mi, ci, r)
                        out[mi, ci, r] = rng.standard_normal(
                            (cfg.horizon_steps, N_TARGETS))
            out = np.ascontiguousarray(out.transpose(3, 0, 1, 2, 4).reshape(
                cfg.horizon_steps, self.n, m * j, N_TARGETS))
            self._noise_cache[key] = self._cast(out)
        return self._noise_cache[key]

    # ego imagination ---------------------------------------------------------

    def _ego_rollout(self, coeffs_b, coeffs_d, brake_mask, horizon, ego: EgoState):
        return imagine_ego(coeffs_b, coeffs_d, brake_mask, horizon, ego,
                           self.config, self.reward_cfg, self.preview_cfg, self.path)

    # full evaluation -----------------------------------------------------------

    def evaluate(self, coeffs_b, coeffs_d, brake_mask, horizon, state: WorldState):
        """Q table for all candidates under all members.

        Args:
            coeffs_b, coeffs_d: (m, 6) candidate curve coefficients (brake
                lanes may hold zeros).
            brake_mask: (m,) bool.
            state: current world state.

        Returns:
            (q_table (m, n_members), info dict).
        """
        cfg = self.config
        H = cfg.horizon_steps
        m = coeffs_b.shape[0]
        n = self.n
        j = cfg.rollouts_per_member
        ego = self._ego_rollout(np.asarray(coeffs_b, float),
                                np.asarray(coeffs_d, float),
                                np.asarray(brake_mask, bool), horizon, state.ego)
        gamma_pow = self._gamma_pow
        eff_prefix = np.cumsum(ego["eff"] * gamma_pow[None, :], axis=1)

        agents = state.agents
        A = len(agents)
        if A == 0:
            # deterministic: only the ego efficiency terms and off-road cut
            q = np.empty((m, n))
            for k in range(m):
                t_off = ego["offroad_step"][k]
                if t_off >= H:
                    q[k, :] = eff_prefix[k, -1]
                else:
                    q[k, :] = eff_prefix[k, t_off] + gamma_pow[t_off] * self.reward_cfg.r_c
            info = dict(collision_fraction=np.zeros((m, n)), ego=ego)
            return q, info

        dt = self.dtype
        cast = self._cast
        noise = self._noise(m)                       # (H, n, m*j, targets)
        L = n * m * j
        buf = self._buffers(m, A)

        # lane agent arrays (L, A), kept physically sorted into slot order
        # every step so slot k is column k (no gather/scatter per field)
        ax = np.broadcast_to(cast(np.array([a.x for a in agents])), (L, A)).copy()
        ay = np.broadcast_to(cast(np.array([a.y for a in agents])), (L, A)).copy()
        ah = np.broadcast_to(cast(np.array([a.heading for a in agents])), (L, A)).copy()
        av = np.broadcast_to(cast(np.array([a.speed for a in agents])), (L, A)).copy()
        ai = np.broadcast_to(np.array([list(Intention).index(a.intention) for a in agents],
                                      dtype=np.int8), (L, A)).copy()

        alive = np.ones(L, dtype=bool)
        t_col = np.full(L, H, dtype=np.int64)

        ego_x = cast(ego["x"])
        ego_y = cast(ego["y"])
        ego_cos = np.cos(cast(ego["h"]))
        ego_sin = np.sin(cast(ego["h"]))
        ego_feat = cast(np.stack([ego["b"], ego["d"], ego["he"], ego["v"]], axis=-1))
        offroad = ego["offroad_step"]
        cand = buf["cand_of_lane"]                  # (L,) candidate index per lane
        rows = buf["rows"]
        feats = buf["feats"]                        # (n, m*j, N_FEATURES)
        featsL = feats.reshape(L, N_FEATURES)
        one_hot_table = cast(np.eye(3))
        max_disp_acc = 0.5 * (REACH_DV / cfg.dt) * cfg.dt * cfg.dt
        dh_max = REACH_OMEGA * cfg.dt
        half_le, half_we = EGO_DIMS[0] / 2, EGO_DIMS[1] / 2
        half_la, half_wa = AGENT_DIMS[0] / 2, AGENT_DIMS[1] / 2

        for k in range(A, AGENT_SLOTS):              # constant blank slots
            off = EGO_FEATS + k * AGENT_FEATS
            featsL[:, off + 0] = BLANK_REL
            featsL[:, off + 1] = BLANK_REL
            featsL[:, off + 2] = 0.0
            featsL[:, off + 3] = 0.0
            featsL[:, off + 4] = 1.0
            featsL[:, off + 5] = 0.0
            featsL[:, off + 6] = 0.0

        for t in range(H):
            exk = ego_x[cand, t]
            eyk = ego_y[cand, t]
            rel_x = ax - exk[:, None]
            rel_y = ay - eyk[:, None]
            if A > 1:
                order = np.argsort(rel_x * rel_x + rel_y * rel_y, axis=-1, kind="stable")
                ax = ax[rows, order]
                ay = ay[rows, order]
                ah = ah[rows, order]
                av = av[rows, order]
                ai = ai[rows, order]
                rel_x = rel_x[rows, order]
                rel_y = rel_y[rows, order]
            featsL[:, :EGO_FEATS] = ego_feat[cand, t, :]
            for k in range(A):
                off = EGO_FEATS + k * AGENT_FEATS
                featsL[:, off + 0] = rel_x[:, k]
                featsL[:, off + 1] = rel_y[:, k]
                featsL[:, off + 2] = ah[:, k]
                featsL[:, off + 3] = av[:, k]
                featsL[:, off + 4:off + 7] = one_hot_table[ai[:, k]]
            Xs = buf["Xs"]
            np.subtract(feats, self._x_mean, out=Xs)
            Xs /= self._x_std

            mu = self._forward_inplace(Xs, buf)
            np.multiply(buf["sigma"], noise[t], out=buf["zt"])
            mu += buf["zt"]
            mu *= self._y_std
            mu += self._y_mean
            deltas = mu.reshape(L, N_TARGETS)

            for k in range(A):
                off = k * SLOT_TARGET
                dx = deltas[:, off + 0]
                dy = deltas[:, off + 1]
                dh = np.minimum(np.maximum(deltas[:, off + 2], -dh_max), dh_max)
                dv = np.minimum(np.maximum(deltas[:, off + 3], -REACH_DV), REACH_DV)
                max_disp = av[:, k] * cfg.dt + max_disp_acc
                norm = np.sqrt(dx * dx + dy * dy)
                scale = np.minimum(max_disp / np.maximum(norm, 1e-9), 1.0)
                ax[:, k] += dx * scale
                ay[:, k] += dy * scale
                ah[:, k] += dh
                av[:, k] = np.maximum(av[:, k] + dv, 0.0)

            # inlined separating-axis test, post-step ego vs post-step agents
            ce = ego_cos[cand, t + 1][:, None]
            se = ego_sin[cand, t + 1][:, None]
            ca = np.cos(ah)
            sa = np.sin(ah)
            dx = ax - ego_x[cand, t + 1][:, None]
            dy = ay - ego_y[cand, t + 1][:, None]
            dot_cs = np.abs(ce * ca + se * sa)       # |u_e . u_a|
            dot_sn = np.abs(ce * sa - se * ca)       # |u_e . n_a|
            sep = np.abs(dx * ce + dy * se) > half_le + half_la * dot_cs + half_wa * dot_sn + 1e-9
            sep |= np.abs(dy * ce - dx * se) > half_we + half_la * dot_sn + half_wa * dot_cs + 1e-9
            sep |= np.abs(dx * ca + dy * sa) > half_la + half_le * dot_cs + half_we * dot_sn + 1e-9
            sep |= np.abs(dy * ca - dx * sa) > half_wa + half_le * dot_sn + half_we * dot_cs + 1e-9
            hit_any = (~sep).any(axis=-1)
            newly = alive & (hit_any | (offroad[cand] == t))
            t_col[newly] = t
            alive &= ~newly

        collided = t_col < H
        t_idx = np.minimum(t_col, H - 1)
        G = eff_prefix[cand, t_idx]
        G = G + np.where(collided, gamma_pow[t_idx] * self.reward_cfg.r_c, 0.0)
        G = G.reshape(n, m, j)
        q_table = G.mean(axis=2).T                       # (m, n)
        info = dict(collision_fraction=collided.reshape(n, m, j).mean(axis=2).T, ego=ego)
        return q_table, info

    def _buffers(self, m: int, A: int):
        key = (m, A)
        if key not in self._buf_cache:
            n, j = self.n, self.config.rollouts_per_member
            L = n * m * j
            B = m * j
            hid = self.stack.W1.shape[2]
            dt = self.dtype
            lane = np.arange(L)
            cand = (lane // j) % m
            self._buf_cache[key] = dict(
                rows=lane[:, None],
                cand_of_lane=cand,
                feats=np.empty((n, B, N_FEATURES), dtype=dt),
                Xs=np.empty((n, B, N_FEATURES), dtype=dt),
                h1=np.empty((n, B, hid), dtype=dt),
                h2=np.empty((n, B, hid), dtype=dt),
                mu=np.empty((n, B, N_TARGETS), dtype=dt),
                sraw=np.empty((n, B, N_TARGETS), dtype=dt),
                sigma=np.empty((n, B, N_TARGETS), dtype=dt),
                zt=np.empty((n, B, N_TARGETS), dtype=dt),
            )
        return self._buf_cache[key]

    def _forward_inplace(self, Xs, buf):
        """Stacked forward pass into preallocated buffers; returns mu."""
        st = self.stack
        h1 = buf["h1"]
        h2 = buf["h2"]
        mu = buf["mu"]
        sraw = buf["sraw"]
        sigma = buf["sigma"]
        np.matmul(Xs, st.W1, out=h1)
        h1 += st.b1
        np.tanh(h1, out=h1)
        np.matmul(h1, st.W2, out=h2)
        h2 += st.b2
        np.tanh(h2, out=h2)
        np.matmul(h2, st.Wm, out=mu)
        mu += st.bm
        np.matmul(h2, st.Ws, out=sraw)
        sraw += st.bs
        # softplus floor without temporaries
        np.abs(sraw, out=sigma)
        np.negative(sigma, out=sigma)
        np.exp(sigma, out=sigma)
        np.log1p(sigma, out=sigma)
        np.maximum(sraw, 0.0, out=sraw)
        sigma += sraw
        sigma += st.sigma_min
        return mu


def imagine_ego(coeffs_b, coeffs_d, brake_mask, horizon, ego: EgoState,
                config: RolloutConfig = RolloutConfig(),
                reward_cfg: rw.RewardConfig = rw.RewardConfig(),
                preview_cfg: ctrl.PreviewConfig = ctrl.PreviewConfig(),
                path=None):
    """Closed-loop ego trajectories for all m candidates (agents ignored).

    Returns a dict of (m, H+1) state arrays plus per-step efficiency
    rewards (m, H), post-step footprint corners (m, H, 4, 2) and the first
    off-road step per candidate (H when none). Deterministic: the ego
    imagination does not depend on the ensemble.
    """
    cfg = config
    pv = preview_cfg
    path = world.ego_path() if path is None else path
    coeffs_b = np.asarray(coeffs_b, float)
    coeffs_d = np.asarray(coeffs_d, float)
    brake_mask = np.asarray(brake_mask, bool)
    H = cfg.horizon_steps
    m = coeffs_b.shape[0]
    x = np.full(m, ego.x)
    y = np.full(m, ego.y)
    h = np.full(m, ego.heading)
    v = np.full(m, ego.speed)
    xs = np.empty((m, H + 1))
    ys = np.empty((m, H + 1))
    hs = np.empty((m, H + 1))
    vs = np.empty((m, H + 1))
    bs = np.empty((m, H + 1))
    ds = np.empty((m, H + 1))
    he = np.empty((m, H + 1))
    xs[:, 0], ys[:, 0], hs[:, 0], vs[:, 0] = x, y, h, v
    b, d, _ = path.project(np.stack([x, y], axis=-1))
    seg = path.segment_at(np.minimum(b, path.length - 1e-9))
    bs[:, 0], ds[:, 0] = b, d
    he[:, 0] = _wrap_arr(h - path.headings[seg])
    # curve references for every step at once: (m, H) tables
    t_grid = np.minimum(np.arange(H) * cfg.dt, horizon)[None, :]
    refs_all = ctrl.preview_refs(coeffs_b[:, None, :], coeffs_d[:, None, :],
                                 horizon, t_grid, pv)
    any_brake = bool(brake_mask.any())
    for t in range(H):
        u = path.tangents[seg]
        nrm = path.normals[seg]
        vx = v * np.cos(h)
        vy = v * np.sin(h)
        refs_t = tuple(r[:, t] for r in refs_all)
        accel, steer = ctrl.commands_from_refs(
            refs_t, b, d,
            vx * u[:, 0] + vy * u[:, 1], vx * nrm[:, 0] + vy * nrm[:, 1],
            path.curvatures[seg], v, pv)
        if any_brake:
            brake_acc = np.where(v > 1e-3, pv.accel_min, 0.0)
            accel = np.where(brake_mask, brake_acc, accel)
            steer = np.where(brake_mask, 0.0, steer)
        x, y, h, v = step_ego_arrays_local(x, y, h, v, accel, steer, cfg.dt, pv)
        xs[:, t + 1], ys[:, t + 1], hs[:, t + 1], vs[:, t + 1] = x, y, h, v
        b, d, _ = path.project(np.stack([x, y], axis=-1))
        seg = path.segment_at(np.minimum(b, path.length - 1e-9))
        bs[:, t + 1], ds[:, t + 1] = b, d
        he[:, t + 1] = _wrap_arr(h - path.headings[seg])

    # per-step squared-jerk integrals of the planned curve (brake: 0)
    jeran = _jerk_steps(coeffs_b, H, cfg.dt, horizon) \
        + _jerk_steps(coeffs_d, H, cfg.dt, horizon)
    jeran[brake_mask] = 0.0
    rcfg = reward_cfg
    eff = -(rcfg.k_j * jeran
            + rcfg.k_p * np.abs(ds[:, 1:])
            + rcfg.k_v * np.abs(vs[:, 1:] - rcfg.v_target))

    corners = rect_corners(xs[:, 1:], ys[:, 1:], hs[:, 1:], EGO_DIMS)
    drivable = world.is_drivable(corners).all(axis=-1)        # (m, H)
    offroad_step = np.where(drivable.all(axis=1), H, np.argmin(drivable, axis=1))
    return dict(x=xs, y=ys, h=hs, v=vs, b=bs, d=ds, he=he,
                eff=eff, corners=corners, offroad_step=offroad_step)


def step_ego_arrays_local(x, y, h, v, accel, steer, dt, cfg):
    accel = np.minimum(np.maximum(accel, cfg.accel_min), cfg.accel_max)
    steer = np.minimum(np.maximum(steer, -cfg.steer_max), cfg.steer_max)
    yaw_rate = v / cfg.wheelbase * np.tan(steer)
    yaw_rate = np.minimum(np.maximum(yaw_rate, -cfg.yaw_rate_max), cfg.yaw_rate_max)
    nx = x + v * np.cos(h) * dt
    ny = y + v * np.sin(h) * dt
    nh = h + yaw_rate * dt
    nv = np.maximum(0.0, v + accel * dt)
    return nx, ny, nh, nv


def _jerk_steps(coeffs, H, dt, horizon):
    """Integral of squared jerk over each [t, t+dt] window, (m, H)."""
    c = poly_derivative(poly_derivative(poly_derivative(np.asarray(coeffs, float))))
    c0 = c[:, 0:1]
    c1 = c[:, 1:2]
    c2 = c[:, 2:3]
    edges = np.minimum(np.arange(H + 1) * dt, horizon)[None, :]
    anti = (c0 * c0 * edges + c0 * c1 * edges ** 2
            + (c1 * c1 + 2 * c0 * c2) * edges ** 3 / 3.0
            + c1 * c2 * edges ** 4 / 2.0 + c2 * c2 * edges ** 5 / 5.0)
    return np.diff(anti, axis=1)


def _wrap_arr(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def _scatter_add(arr, idx, val):
    cur = np.take_along_axis(arr, idx[..., None], -1)[..., 0]
    np.put_along_axis(arr, idx[..., None], (cur + val)[..., None], -1)


def _scatter_update_speed(arr, idx, dv):
    cur = np.take_along_axis(arr, idx[..., None], -1)[..., 0]
    np.put_along_axis(arr, idx[..., None], np.maximum(cur + dv, 0.0)[..., None], -1)
