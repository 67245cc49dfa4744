"""Policy tests: action-space order, epsilon-greedy selection against a
brute-force re-enumeration, and the avoidance baseline's entry/stall/deviate
behaviors."""

import math

import numpy as np
import pytest

from elevnav.core import (Action, ContractViolationError, Outcome,
                          STAY_INDEX, step_discount)
from elevnav.env import ElevatorEnv, WorldConfig
from elevnav.navformer import ValueNet, forward
from elevnav.policy import (enumerate_actions, greedy_action,
                            orca_robot_policy)


def zero_net():
    net = ValueNet(seed=0)
    for k in net.params:
        net.params[k][...] = 0.0
    return net


def test_enumerate_counts():
    assert len(enumerate_actions(1.0, False)) == 17
    assert len(enumerate_actions(1.0, True)) == 34
    with pytest.raises(ValueError):
        enumerate_actions(0.0, False)


def test_enumerate_order_heading_major_beep_minor():
    space = enumerate_actions(1.0, True)
    for k in range(17):
        assert space[2 * k] == Action(k, beep=False)
        assert space[2 * k + 1] == Action(k, beep=True)
    flat = enumerate_actions(1.0, False)
    assert [a.heading_index for a in flat] == list(range(17))
    assert not any(a.beep for a in flat)


def test_enumerate_heading_velocities():
    space = enumerate_actions(1.0, False)
    np.testing.assert_allclose(space[0].velocity(1.0), [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(space[4].velocity(1.0), [0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(space[16].velocity(1.0), [0.0, 0.0])


def test_epsilon_one_is_uniform():
    cfg = WorldConfig(n_humans=2)
    env = ElevatorEnv(cfg)
    world, state = env.reset(seed=0)
    net = zero_net()
    rng = np.random.default_rng(42)
    counts = {}
    n = 10000
    for _ in range(n):
        d = greedy_action(net, env, state, world, 1.0, rng)
        assert d.exploratory and d.q_values == []
        key = (d.action.heading_index, d.action.beep)
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 34
    for c in counts.values():
        assert abs(c / n - 1 / 34) < 0.02


def test_zero_net_prefers_entering_step():
    cfg = WorldConfig(n_humans=0)
    env = ElevatorEnv(cfg)
    world, _ = env.reset(seed=0)
    world.robot_pos[:] = (0.0, 0.76)  # only the straight +y step crosses
    state = env.observe(world)
    rng = np.random.default_rng(0)
    d = greedy_action(zero_net(), env, state, world, 0.0, rng)
    assert not d.exploratory
    assert d.action == Action(4, beep=False)
    q = dict(((a.heading_index, a.beep), s) for a, s in d.q_values)
    # entering beats every alternative; its beep twin costs exactly 0.1 more
    assert q[(4, False)] > 10.0
    assert abs(q[(4, False)] - q[(4, True)] - 0.1) < 1e-12
    # a non-event move costs the living penalty, stay costs nothing
    assert abs(q[(12, False)] + 0.01) < 1e-12
    assert abs(q[(STAY_INDEX, False)]) < 1e-12


def test_beep_twin_scores_without_blockers():
    cfg = WorldConfig(n_humans=1)
    env = ElevatorEnv(cfg)
    world, state = env.reset_with_humans([(2.5, 9.0)])  # far from any path
    rng = np.random.default_rng(1)
    d = greedy_action(ValueNet(seed=3), env, state, world, 0.0, rng)
    q = dict(((a.heading_index, a.beep), s) for a, s in d.q_values)
    for k in range(17):
        assert abs(q[(k, False)] - q[(k, True)] - 0.1) < 1e-9


def test_greedy_matches_bruteforce():
    for seed in (0, 1, 2):
        cfg = WorldConfig(n_humans=4)
        env = ElevatorEnv(cfg)
        net = ValueNet(seed=100 + seed)
        world, _ = env.reset(seed=seed)
        env.step(world, Action(4))
        assert world.outcome is Outcome.RUNNING
        state = env.observe(world)
        rng = np.random.default_rng(0)
        d = greedy_action(net, env, state, world, 0.0, rng)

        disc = step_discount(0.9, cfg.dt, cfg.v_pref)
        best_a, best_q = None, -math.inf
        oracle = {}
        for a in enumerate_actions(cfg.v_pref, True):
            clone = world.copy()
            res = env.step(clone, a)
            q = res.reward
            if not res.done:
                v, _ = forward(net, res.observation)
                q += disc * v
            oracle[(a.heading_index, a.beep)] = q
            if q > best_q:
                best_q, best_a = q, a
        assert d.action == best_a
        for a, s in d.q_values:
            assert abs(s - oracle[(a.heading_index, a.beep)]) < 1e-9


def test_greedy_deterministic():
    cfg = WorldConfig(n_humans=3)
    env = ElevatorEnv(cfg)
    world, state = env.reset(seed=7)
    net = ValueNet(seed=7)
    d1 = greedy_action(net, env, state, world, 0.0, np.random.default_rng(0))
    d2 = greedy_action(net, env, state, world, 0.0, np.random.default_rng(5))
    assert d1.action == d2.action
    assert [s for _, s in d1.q_values] == [s for _, s in d2.q_values]


def test_greedy_rejects_terminal_state():
    cfg = WorldConfig(n_humans=0)
    env = ElevatorEnv(cfg)
    world, state = env.reset(seed=0)
    for _ in range(16):
        env.step(world, Action(4))
    assert world.outcome is Outcome.SUCCESS
    with pytest.raises(ContractViolationError):
        greedy_action(ValueNet(), env, state, world, 0.0,
                      np.random.default_rng(0))
    with pytest.raises(ValueError):
        greedy_action(ValueNet(), env, state, world, 1.5,
                      np.random.default_rng(0))


def test_orca_empty_elevator_enters_straight():
    cfg = WorldConfig(n_humans=0)
    env = ElevatorEnv(cfg)
    world, _ = env.reset(seed=0)
    headings = []
    while world.outcome is Outcome.RUNNING:
        a = orca_robot_policy(world, cfg)
        assert not a.beep
        headings.append(a.heading_index)
        env.step(world, a)
    assert world.outcome is Outcome.SUCCESS
    assert world.step_count == 16
    assert set(headings) == {4}


def test_orca_blocked_door_stalls_to_timeout():
    cfg = WorldConfig(n_humans=3)
    env = ElevatorEnv(cfg)
    world, _ = env.reset_with_humans([(-2.2, 1.3), (0.0, 1.3), (2.2, 1.3)])
    stays = 0
    while world.outcome is Outcome.RUNNING:
        a = orca_robot_policy(world, cfg)
        stays += a.heading_index == STAY_INDEX
        env.step(world, a)
    assert world.outcome is Outcome.TIMEOUT
    assert stays > 0


def test_orca_deviates_toward_free_side():
    cfg = WorldConfig(n_humans=1)
    env = ElevatorEnv(cfg)
    world, _ = env.reset_with_humans([(0.9, 1.3)])
    v = orca_robot_policy(world, cfg).velocity(cfg.v_pref)
    assert v[0] < 0 and v[1] > 0


def test_orca_at_goal_point_stays():
    cfg = WorldConfig(n_humans=0)
    env = ElevatorEnv(cfg)
    world, _ = env.reset(seed=0)
    world.robot_pos[:] = (0.0, cfg.goal_y)
    assert orca_robot_policy(world, cfg) == Action(STAY_INDEX)
