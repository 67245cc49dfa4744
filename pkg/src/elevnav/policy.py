"""Action enumeration, value-lookahead action selection, and the ORCA
baseline controller.

The greedy policy scores every candidate action by simulating it one step
through a cloned environment (humans react there, including the beep
response) and picking argmax of r + step_discount * V(s').  Candidate
rollouts only read the value net, so they are safe to run concurrently.
"""

import math

import numpy as np

from .core import (Action, ContractViolationError, N_HEADINGS, Outcome,
                   STAY_INDEX, Vec2, step_discount)
from .navformer import forward_batch
from .orca import AgentParams, compute_velocity

STAY_SPEED_FRACTION = 0.1
DEFAULT_GAMMA = 0.9


class ActionSpace:
    """Ordered candidate actions plus the speed they are built for."""

    __slots__ = ("actions", "v_pref")

    def __init__(self, actions, v_pref):
        self.actions = list(actions)
        self.v_pref = float(v_pref)

    def __len__(self):
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    def __getitem__(self, i):
        return self.actions[i]


class PolicyDecision:
    """Chosen action, the per-candidate scores behind it (empty when the
    choice was an exploration draw), and the exploration flag."""

    __slots__ = ("action", "q_values", "exploratory")

    def __init__(self, action, q_values, exploratory):
        self.action = action
        self.q_values = list(q_values)
        self.exploratory = bool(exploratory)


def enumerate_actions(v_pref, beep_enabled):
    """17 discrete actions (16 headings at v_pref plus stay), doubled to 34
    when every heading also gets a beep twin.  Heading index major, beep
    flag minor; order is identical across runs."""
    if v_pref <= 0:
        raise ValueError(f"v_pref must be positive, got {v_pref}")
    actions = []
    for k in range(STAY_INDEX + 1):
        actions.append(Action(k, beep=False))
        if beep_enabled:
            actions.append(Action(k, beep=True))
    return ActionSpace(actions, v_pref)


def greedy_action(value_net, env_model, state, world, epsilon, rng,
                  beep_enabled=True, gamma=DEFAULT_GAMMA):
    """Epsilon-greedy one-step lookahead over the discrete action space.

    With probability epsilon a uniform action is returned untried.
    Otherwise each candidate is stepped through a copy of `world`; its score
    is the immediate reward plus the discounted value of the resulting
    state (terminal steps contribute reward only).
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if world.outcome is not Outcome.RUNNING:
        raise ContractViolationError("greedy_action on a terminal state")
    cfg = env_model.config
    space = enumerate_actions(state.robot.v_pref, beep_enabled)

    if epsilon > 0.0 and rng.random() < epsilon:
        idx = int(rng.integers(len(space)))
        return PolicyDecision(space[idx], [], exploratory=True)

    rewards = np.empty(len(space))
    rows, robots, open_slots = [], [], []
    for i, action in enumerate(space):
        clone = world.copy()
        result = env_model.step(clone, action)
        rewards[i] = result.reward
        if not result.done:
            rows.append(result.observation.rows())
            robots.append(result.observation.robot_vec())
            open_slots.append(i)

    scores = rewards.copy()
    if open_slots:
        values, _ = forward_batch(value_net, np.stack(rows), np.stack(robots))
        disc = step_discount(gamma, cfg.dt, cfg.v_pref)
        scores[open_slots] += disc * values
    best = int(np.argmax(scores))
    q_values = list(zip(space.actions, scores.tolist()))
    return PolicyDecision(space[best], q_values, exploratory=False)


def _snap_heading(vx, vy):
    best, best_dot = 0, -math.inf
    for k in range(N_HEADINGS):
        theta = 2.0 * math.pi * k / N_HEADINGS
        dot = vx * math.cos(theta) + vy * math.sin(theta)
        if dot > best_dot:
            best, best_dot = k, dot
    return best


def orca_robot_policy(world, config, stay_fraction=STAY_SPEED_FRACTION):
    """Reciprocal-avoidance baseline: head for the door point, yield fully
    to humans (reciprocity 1), snap to the nearest discrete heading, stay
    when the avoidance velocity collapses.  Never beeps."""
    rx, ry = world.robot_pos
    dx, dy = 0.0 - rx, config.goal_y - ry
    dist = math.hypot(dx, dy)
    if dist < 1e-12:
        return Action(STAY_INDEX)
    speed = min(config.v_pref, dist / config.dt)
    preferred = Vec2(dx / dist * speed, dy / dist * speed)

    positions = [Vec2(rx, ry)] + [Vec2(p[0], p[1]) for p in world.h_pos]
    velocities = ([Vec2(*world.robot_vel)]
                  + [Vec2(v[0], v[1]) for v in world.h_vel])
    params = [AgentParams(config.robot_radius, config.v_pref,
                          config.neighbor_dist, config.time_horizon,
                          config.time_horizon_obst, config.safety_space)]
    params += [AgentParams(config.agent_radius, config.human_max_speed,
                           config.neighbor_dist, config.time_horizon,
                           config.time_horizon_obst, config.safety_space)
               for _ in range(world.n_humans)]
    vel = compute_velocity(0, positions, velocities, params, [], preferred,
                           config.dt, reciprocity=1.0)

    if math.hypot(vel.x, vel.y) < stay_fraction * config.v_pref:
        return Action(STAY_INDEX)
    k = _snap_heading(vel.x, vel.y)
    # snapping can rotate the velocity into a human the continuous solution
    # skirted; hold position rather than take that step
    step = Action(k).velocity(config.v_pref)
    nx, ny = rx + step[0] * config.dt, ry + step[1] * config.dt
    for i in range(world.n_humans):
        limit = config.robot_radius + config.agent_radius
        if math.hypot(nx - world.h_pos[i, 0], ny - world.h_pos[i, 1]) < limit:
            return Action(STAY_INDEX)
    return Action(k)
