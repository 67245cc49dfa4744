"""Reciprocal collision avoidance: constraint construction and the 2-D solve.

Used three ways downstream: as the human transition model, as the baseline
robot policy, and for the yielding motion after a beep.  compute_velocity is
a pure function of its inputs; callers may evaluate all agents for one step
in parallel and then apply updates synchronously.
"""

import math

import numpy as np

from . import _kernels as K
from .core import Vec2


class AgentParams:
    """Per-agent avoidance parameters.

    safety_space widens agent-agent constraints only (half per participant);
    wall constraints use the raw radius, since wall contact is harmless and
    agents may legitimately stand against a wall.
    """

    __slots__ = ("radius", "max_speed", "neighbor_dist", "time_horizon",
                 "time_horizon_obst", "safety_space")

    def __init__(self, radius, max_speed, neighbor_dist=15.0, time_horizon=5.0,
                 time_horizon_obst=2.0, safety_space=0.2):
        for name, v in (("radius", radius), ("max_speed", max_speed),
                        ("neighbor_dist", neighbor_dist),
                        ("time_horizon", time_horizon),
                        ("time_horizon_obst", time_horizon_obst),
                        ("safety_space", safety_space)):
            if v <= 0:
                raise ValueError(f"AgentParams.{name} must be positive, got {v}")
        self.radius = float(radius)
        self.max_speed = float(max_speed)
        self.neighbor_dist = float(neighbor_dist)
        self.time_horizon = float(time_horizon)
        self.time_horizon_obst = float(time_horizon_obst)
        self.safety_space = float(safety_space)

    def pair_radius(self):
        return self.radius + 0.5 * self.safety_space


class HalfPlane:
    """Velocity constraint {u : (u - point) . normal >= 0} with unit normal."""

    __slots__ = ("point", "normal")

    def __init__(self, point, normal):
        n = normal.norm()
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"normal must be unit length, got |n| = {n}")
        self.point = point
        self.normal = normal

    def violation(self, v):
        """Positive when v is on the excluded side."""
        return -((v.x - self.point.x) * self.normal.x
                 + (v.y - self.point.y) * self.normal.y)

    def satisfied(self, v, tol=1e-9):
        return self.violation(v) <= tol

    def as_line(self):
        """[px, py, dx, dy] row with the feasible side left of the direction."""
        return [self.point.x, self.point.y, self.normal.y, -self.normal.x]

    def __repr__(self):
        return f"HalfPlane(point={self.point!r}, normal={self.normal!r})"


class LineObstacle:
    """Impassable wall segment from a to b."""

    __slots__ = ("a", "b")

    def __init__(self, a, b):
        if a.x == b.x and a.y == b.y:
            raise ValueError("obstacle endpoints must differ")
        self.a = a
        self.b = b

    def as_row(self):
        return [self.a.x, self.a.y, self.b.x, self.b.y]


class LPSolution:
    """Result of solve_lp2d.

    When infeasible, velocity holds the partial result satisfying constraints
    before fail_index, which the max-violation fallback continues from.
    """

    __slots__ = ("velocity", "feasible", "fail_index")

    def __init__(self, velocity, feasible, fail_index):
        self.velocity = velocity
        self.feasible = feasible
        self.fail_index = fail_index


def orca_halfplane(self_pos, self_vel, other_pos, other_vel, combined_radius,
                   time_horizon, dt, reciprocity):
    """Half-plane of velocities keeping self clear of other for time_horizon.

    combined_radius must already include any safety margin.  reciprocity is
    the share of the correction this agent takes: 0.5 between mutually
    yielding peers, 1.0 when only this agent gives way.
    """
    if combined_radius <= 0:
        raise ValueError(f"combined_radius must be positive, got {combined_radius}")
    if time_horizon <= 0:
        raise ValueError(f"time_horizon must be positive, got {time_horizon}")
    px, py, dx, dy = K.avoidance_line(self_pos.x, self_pos.y, self_vel.x,
                                      self_vel.y, other_pos.x, other_pos.y,
                                      other_vel.x, other_vel.y,
                                      float(combined_radius),
                                      float(time_horizon), float(dt),
                                      float(reciprocity))
    return HalfPlane(Vec2(px, py), Vec2(-dy, dx))


def solve_lp2d(constraints, preferred, max_speed):
    """Velocity of norm <= max_speed closest to preferred satisfying all
    constraints; infeasible results carry the failing index so the caller can
    run the max-violation fallback.
    """
    if max_speed <= 0:
        raise ValueError(f"max_speed must be positive, got {max_speed}")
    n = len(constraints)
    lines = np.empty((max(n, 1), 4), dtype=np.float64)
    for i, c in enumerate(constraints):
        lines[i, :] = c.as_line()
    fail, x, y = K.lp2(lines, n, float(max_speed), preferred.x, preferred.y,
                       False)
    return LPSolution(Vec2(x, y), fail == n, int(fail))


def compute_velocity(agent_index, positions, velocities, params, obstacles,
                     preferred, dt, reciprocity=0.5):
    """Avoidance velocity for one agent among all agents and wall segments.

    positions/velocities are sequences of Vec2 over every agent; params a
    matching sequence of AgentParams.  Neighbor constraints are ordered by
    agent index and obstacle constraints (built first) stay hard if the
    fallback runs.  Returned speed never exceeds the agent's max_speed.
    """
    n = len(positions)
    if not 0 <= agent_index < n:
        raise ValueError(f"agent_index {agent_index} outside [0, {n})")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    pos = np.array([[p.x, p.y] for p in positions], dtype=np.float64)
    vel = np.array([[v.x, v.y] for v in velocities], dtype=np.float64)
    pair_radii = np.array([p.pair_radius() for p in params], dtype=np.float64)
    if obstacles:
        obs = np.array([o.as_row() for o in obstacles], dtype=np.float64)
    else:
        obs = np.zeros((0, 4), dtype=np.float64)
    me = params[agent_index]
    x, y = K.compute_velocity_arrays(agent_index, pos, vel, pair_radii,
                                     me.radius, me.max_speed,
                                     me.neighbor_dist, me.time_horizon,
                                     me.time_horizon_obst, float(reciprocity),
                                     obs, obs.shape[0], preferred.x,
                                     preferred.y, float(dt))
    speed = math.hypot(x, y)
    if speed > me.max_speed:
        x *= me.max_speed / speed
        y *= me.max_speed / speed
    return Vec2(x, y)
