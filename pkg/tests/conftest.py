import types

import numpy as np
import pytest

from dcplan import intersection as world
from dcplan.frenet import QuinticCurve, to_frenet


class ScriptedPlanner:
    """Fits one on-path curve toward a fixed target speed every step.

    Ignores agents entirely; used to exercise the simulator without the
    real planner stack.
    """

    def __init__(self, target_speed=6.0, horizon=3.0, action_id=0, offset=0.0):
        self.path = world.ego_path()
        self.target_speed = target_speed
        self.horizon = horizon
        self.action_id = action_id
        self.offset = offset

    def __call__(self, state):
        ego = state.ego
        pose = to_frenet(
            self.path, (ego.x, ego.y),
            velocity=(ego.speed * np.cos(ego.heading), ego.speed * np.sin(ego.heading)),
            acceleration=(ego.accel * np.cos(ego.heading), ego.accel * np.sin(ego.heading)),
        )
        b_end = pose.b + 0.5 * (pose.b_dot + self.target_speed) * self.horizon
        curve = QuinticCurve(
            coeffs_b=_fit(pose.state_b(), [b_end, self.target_speed, 0.0], self.horizon),
            coeffs_d=_fit(pose.state_d(), [self.offset, 0.0, 0.0], self.horizon),
            horizon=self.horizon,
        )
        return types.SimpleNamespace(action_id=self.action_id, curve=curve)


class BrakePlanner:
    def __call__(self, state):
        return types.SimpleNamespace(action_id=0, curve=None)


def _fit(start, end, horizon):
    from dcplan.frenet import fit_quintic
    return fit_quintic(start, end, horizon)


@pytest.fixture
def scripted_planner():
    return ScriptedPlanner()


@pytest.fixture
def brake_planner():
    return BrakePlanner()


def make_case(agent_inits, case_id=0, seed=12345, budget=0):
    from dcplan.sim import Case
    return Case(case_id=case_id, seed=seed, agent_inits=tuple(agent_inits),
                train_episode_budget=budget)
