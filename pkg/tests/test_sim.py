import dataclasses
import math

import numpy as np
import pytest

from dcplan import intersection as world
from dcplan.errors import SamplingExhausted
from dcplan.seeds import rng_from
from dcplan.sim import (
    AGENT_SPEED_MAX,
    REACH_DV_GAIN,
    REACH_DV_LOSS,
    REACH_OMEGA,
    AgentInit,
    AgentState,
    Case,
    EgoState,
    Intention,
    Outcome,
    SimConfig,
    WorldState,
    detect_collision,
    episode_budget,
    generate_cases,
    initial_state,
    load_cases,
    rect_corners,
    run_episode,
    save_cases,
    step_agents,
    step_ego,
)
from conftest import make_case

CFG = SimConfig()


class TestStepEgo:
    def test_at_rest_zero_commands(self):
        ego = EgoState(1.0, 2.0, 0.3, 0.0, 0.0)
        out = step_ego(ego, (0.0, 0.0))
        assert out == ego

    def test_constant_speed_advance(self):
        ego = EgoState(0.0, 0.0, 0.0, 10.0)
        out = step_ego(ego, (0.0, 0.0), dt=0.1)
        assert out.x == pytest.approx(1.0)
        assert out.y == pytest.approx(0.0)
        assert out.speed == pytest.approx(10.0)

    def test_brake_saturates_at_rest(self):
        # hand Euler: 1.0 -> 0.6 -> 0.2 -> 0.0
        ego = EgoState(0.0, 0.0, 0.0, 1.0)
        speeds = []
        for _ in range(3):
            ego = step_ego(ego, (-4.0, 0.0), dt=0.1)
            speeds.append(round(ego.speed, 9))
        assert speeds == [0.6, 0.2, 0.0]

    def test_command_clamping(self):
        ego = EgoState(0.0, 0.0, 0.0, 5.0)
        out = step_ego(ego, (99.0, -99.0), dt=0.1)
        assert out.speed == pytest.approx(5.0 + 3.0 * 0.1)   # accel clamped to +3
        # steering clamped, heading rate bounded
        assert abs(out.heading - 0.0) <= 2.5 * 0.1 + 1e-12


class TestStepAgents:
    def _world_with(self, agents):
        ego = EgoState(-1.75, 11.5, -np.pi / 2, 0.0)
        return WorldState(time=0.0, ego=ego, agents=tuple(agents))

    def test_equilibrium_speed_noise_band(self):
        # single agent on an empty straight, already at desired speed
        a = AgentInit("S", Intention.STRAIGHT, 5.0, 4.0).to_state()
        state = self._world_with([a])
        dvs = []
        for seed in range(100):
            out = step_agents(state, 0.1, rng_from(seed), CFG, desired_speeds=[4.0])
            dvs.append(out[0].speed - 4.0)
        dvs = np.array(dvs)
        assert np.all(np.abs(dvs) <= REACH_DV_LOSS + 1e-12)
        assert abs(float(np.mean(dvs))) < 0.05
        assert 0.05 < float(np.std(dvs)) < 0.2

    def test_never_accelerates_into_stopped_leader(self):
        follower = AgentInit("S", Intention.STRAIGHT, 5.0, 3.0).to_state()
        leader_state = AgentInit("S", Intention.STRAIGHT, 11.5, 0.0).to_state()
        state = self._world_with([follower, leader_state])
        for seed in range(20):
            out = step_agents(state, 0.1, rng_from(seed), CFG, desired_speeds=[3.0, 0.0])
            # gap ~2 m: commanded speed change must be a deceleration
            assert out[0].speed < follower.speed

    def test_deterministic_per_seed(self):
        a = AgentInit("E", Intention.TURN_LEFT, 8.0, 3.0).to_state()
        state = self._world_with([a])
        out1 = step_agents(state, 0.1, rng_from(7), CFG, desired_speeds=[3.0])
        out2 = step_agents(state, 0.1, rng_from(7), CFG, desired_speeds=[3.0])
        assert out1 == out2

    def test_follows_route_heading(self):
        a = AgentInit("W", Intention.STRAIGHT, 6.0, 4.0).to_state()
        assert a.heading == pytest.approx(0.0)
        state = self._world_with([a])
        out = step_agents(state, 0.1, rng_from(3), CFG, desired_speeds=[4.0])
        assert out[0].x > a.x
        assert abs(out[0].y - a.y) < 1e-6

    def test_parked_agent_stays_near_rest(self):
        a = AgentInit("S", Intention.STRAIGHT, 5.0, 0.0).to_state()
        state = self._world_with([a])
        agent = a
        for seed in range(50):
            out = step_agents(dataclasses.replace(state, agents=(agent,)), 0.1,
                              rng_from(seed), CFG, desired_speeds=[0.0])
            agent = out[0]
        assert agent.speed < 0.5
        assert math.hypot(agent.x - a.x, agent.y - a.y) < 1.0


class TestDetectCollision:
    def _state(self, ego, agents):
        return WorldState(time=0.0, ego=ego, agents=tuple(agents))

    def test_far_apart_false(self):
        ego = EgoState(-1.75, 10.0, -np.pi / 2, 0.0)
        agent = AgentState(-1.75, 20.0, -np.pi / 2, 0.0, Intention.STRAIGHT)
        assert detect_collision(self._state(ego, [agent])) is False

    def test_colocated_true(self):
        ego = EgoState(0.0, 0.0, 0.3, 0.0)
        agent = AgentState(0.0, 0.0, 1.0, 0.0, Intention.STRAIGHT)
        assert detect_collision(self._state(ego, [agent])) is True

    def test_corner_tangency_inclusive(self):
        # agent rotated 45 deg, its corner exactly touching the ego's right
        # side: the corner of a 4.5 x 2.0 rectangle at 45 deg extends
        # (l + w) / (2 sqrt(2)) laterally from its center
        ego = EgoState(0.0, 0.0, 0.0, 0.0)
        reach = (4.5 + 2.0) / (2.0 * np.sqrt(2.0))
        agent_y = 1.0 + reach           # ego half-width + corner reach
        agent = AgentState(0.0, agent_y, np.pi / 4, 0.0, Intention.STRAIGHT)
        assert detect_collision(self._state(ego, [agent])) is True
        # 0.5 mm of overlap is definitely a hit
        agent = AgentState(0.0, agent_y - 0.0005, np.pi / 4, 0.0, Intention.STRAIGHT)
        assert detect_collision(self._state(ego, [agent])) is True
        # 5 mm of clearance is not
        agent = AgentState(0.0, agent_y + 0.005, np.pi / 4, 0.0, Intention.STRAIGHT)
        assert detect_collision(self._state(ego, [agent])) is False

    def test_off_road_is_collision(self):
        ego = EgoState(10.0, 10.0, 0.0, 0.0)         # corner region, off the cross
        assert detect_collision(self._state(ego, [])) is True


class TestCaseGeneration:
    def test_budget_anchors(self):
        assert episode_budget(1) == 218
        assert episode_budget(8) == 17
        assert episode_budget(250) == 0
        assert episode_budget(295) == 0

    def test_budget_monotone_nonincreasing(self):
        budgets = [episode_budget(r) for r in range(1, 301)]
        assert all(b1 >= b2 for b1, b2 in zip(budgets, budgets[1:]))

    def test_forced_zero_tail(self):
        n = 300
        forced = [episode_budget(r, n_cases=n) for r in range(241, 301)]
        assert all(b == 0 for b in forced)

    def test_generate_cases_invariants(self):
        cases = generate_cases(count=300, rng_seed=99)
        assert len(cases) == 300
        ego0 = initial_state(cases.cases[0]).ego
        for case in cases:
            states = [ai.to_state() for ai in case.agent_inits]
            assert 1 <= len(states) <= 3
            pos = np.array([[s.x, s.y] for s in states])
            assert bool(np.all(world.is_drivable(pos)))
            for s in states:
                assert 0.0 <= s.speed <= 20.0 / 3.6 + 1e-9
            for i in range(len(states)):
                for j in range(i + 1, len(states)):
                    d = math.hypot(states[i].x - states[j].x, states[i].y - states[j].y)
                    assert d > 5.0
                d_ego = math.hypot(states[i].x - ego0.x, states[i].y - ego0.y)
                assert d_ego >= 8.0

    def test_deterministic(self):
        c1 = generate_cases(count=20, rng_seed=5)
        c2 = generate_cases(count=20, rng_seed=5)
        assert c1.cases == c2.cases

    def test_case_file_round_trip(self, tmp_path):
        cases = generate_cases(count=12, rng_seed=3)
        f = tmp_path / "cases.jsonl"
        save_cases(cases, f)
        loaded = load_cases(f)
        assert loaded.cases == cases.cases

    def test_sampling_exhausted(self):
        cfg = dataclasses.replace(CFG, min_pair_distance=1e9, agents_min=2,
                                  max_rejections=50)
        with pytest.raises(SamplingExhausted):
            generate_cases(count=1, rng_seed=0, cfg=cfg)


class TestRunEpisode:
    def test_empty_road_task_complete(self, scripted_planner):
        case = make_case([AgentInit("E", Intention.STRAIGHT, 2.0, 1.0)])
        case = dataclasses.replace(case, agent_inits=())
        traj = run_episode(case, scripted_planner)
        assert traj.outcome == Outcome.TASK_COMPLETE

    def test_always_brake_stalls(self, brake_planner):
        case = make_case([AgentInit("E", Intention.STRAIGHT, 2.0, 1.0)])
        traj = run_episode(case, brake_planner)
        assert traj.outcome == Outcome.STALL
        # ~100 stall steps from a standing start
        assert 95 <= len(traj.records) <= 110

    def test_guaranteed_conflict_collision(self, scripted_planner):
        # northbound straight agent timed to occupy the ego's left-turn exit
        # crossing while a planner that ignores agents drives through
        case = make_case([AgentInit("S", Intention.STRAIGHT, 14.0, 10.0 / 3.6)])
        traj = run_episode(case, scripted_planner)
        assert traj.outcome == Outcome.COLLISION

    def test_determinism_bit_identical(self, scripted_planner):
        case = make_case([AgentInit("S", Intention.STRAIGHT, 6.0, 4.0),
                          AgentInit("E", Intention.TURN_RIGHT, 12.0, 3.0)])
        t1 = run_episode(case, scripted_planner, episode_seed=42)
        t2 = run_episode(case, scripted_planner, episode_seed=42)
        assert t1.outcome == t2.outcome
        assert len(t1.records) == len(t2.records)
        for r1, r2 in zip(t1.records, t2.records):
            assert r1.state == r2.state
            assert r1.reward == r2.reward

    def test_outcome_partition(self, scripted_planner, brake_planner):
        # every episode ends with exactly one outcome value
        for planner in (scripted_planner, brake_planner):
            for seed in range(3):
                case = make_case([AgentInit("W", Intention.STRAIGHT, 10.0, 3.0)], seed=seed)
                traj = run_episode(case, planner)
                assert traj.outcome in set(Outcome)

    def test_no_teleportation_property(self, scripted_planner):
        case = make_case([AgentInit("S", Intention.TURN_LEFT, 8.0, 5.0),
                          AgentInit("N", Intention.STRAIGHT, 20.5, 4.0)])
        traj = run_episode(case, scripted_planner)
        bound = AGENT_SPEED_MAX * 0.1 + 0.5 * (REACH_DV_GAIN / 0.1) * 0.01
        for r1, r2 in zip(traj.records, traj.records[1:]):
            for a1, a2 in zip(r1.state.agents, r2.state.agents):
                disp = math.hypot(a2.x - a1.x, a2.y - a1.y)
                assert disp <= bound + 1e-9
                assert a2.speed - a1.speed <= REACH_DV_GAIN + 1e-9
                assert a1.speed - a2.speed <= REACH_DV_LOSS + 1e-9
                assert abs(a2.heading - a1.heading) <= REACH_OMEGA * 0.1 + 1e-9

    def test_timestamps_increase_by_dt(self, scripted_planner):
        case = make_case([AgentInit("W", Intention.STRAIGHT, 4.0, 2.0)])
        traj = run_episode(case, scripted_planner)
        times = [r.state.time for r in traj.records]
        assert all(abs((t2 - t1) - 0.1) < 1e-9 for t1, t2 in zip(times, times[1:]))

    def test_collision_outcome_iff_last_reward_has_penalty(self, scripted_planner):
        case = make_case([AgentInit("S", Intention.STRAIGHT, 14.0, 10.0 / 3.6)])
        traj = run_episode(case, scripted_planner)
        assert traj.outcome == Outcome.COLLISION
        assert traj.records[-1].reward <= -500.0
        clean = make_case([], case_id=1)
        traj2 = run_episode(clean, scripted_planner)
        assert traj2.outcome != Outcome.COLLISION
        assert all(r.reward > -500.0 for r in traj2.records)
