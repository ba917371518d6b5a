"""Step reward: driving-efficiency term plus collision penalty.

The same function scores simulator steps and imagined rollout steps, so the
planner's value estimates and the measured returns share one definition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frenet import ReferencePath

__all__ = ["RewardConfig", "efficiency_terms", "efficiency_reward", "safety_reward", "total_reward"]


@dataclass(frozen=True)
class RewardConfig:
    k_j: float = 0.1                 # jerk weight
    k_p: float = 1.0                 # lateral-offset weight
    k_v: float = 0.5                 # speed-deficit weight
    r_c: float = -500.0              # collision penalty
    v_target: float = 30.0 / 3.6     # 30 km/h
    gamma: float = 0.99

    def __post_init__(self):
        if min(self.k_j, self.k_p, self.k_v) <= 0:
            raise ValueError("reward weights must be positive")
        if self.r_c >= 0:
            raise ValueError("collision penalty must be negative")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")


def efficiency_terms(d_e, v_e, jerk_sq_integral, cfg: RewardConfig):
    """Vectorized efficiency reward from already-projected quantities."""
    return -(cfg.k_j * np.asarray(jerk_sq_integral)
             + cfg.k_p * np.abs(d_e)
             + cfg.k_v * np.abs(np.asarray(v_e) - cfg.v_target))


def efficiency_reward(state, jerk_sq_integral_over_step: float,
                      path: ReferencePath, cfg: RewardConfig) -> float:
    """r_e for one world state; raises FarFromPath if the ego cannot project."""
    ego = state.ego
    _, d, dist = path.project(np.array([ego.x, ego.y]))
    from .frenet import MAX_PROJECTION_DISTANCE
    if dist > MAX_PROJECTION_DISTANCE:
        from .errors import FarFromPath
        raise FarFromPath(f"ego at ({ego.x:.1f}, {ego.y:.1f}) is off the reference path")
    return float(efficiency_terms(d, ego.speed, jerk_sq_integral_over_step, cfg))


def safety_reward(collision: bool, cfg: RewardConfig) -> float:
    return cfg.r_c if collision else 0.0


def total_reward(state, jerk_sq_integral_over_step: float, collision: bool,
                 path: ReferencePath, cfg: RewardConfig) -> float:
    return efficiency_reward(state, jerk_sq_integral_over_step, path, cfg) \
        + safety_reward(collision, cfg)
