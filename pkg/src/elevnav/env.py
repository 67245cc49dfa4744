"""The elevator world: geometry, crowd placement, clock, beep response,
termination, and reward emission.

Door-centered coordinates: the door line is y = 0, the elevator interior is
y in (0, cell_depth] with x in [-cell_width/2, cell_width/2], and the robot
approaches from y < 0.  The robot counts as entered once its disc is fully
inside (center y >= robot_radius).

Humans do not react to the robot's presence; they hold their start positions
(goal = start) and give way only through the beep response.  The robot alone
carries the avoidance burden, which is what makes a blocked door a genuine
deadlock for a silent policy.
"""

import math
from dataclasses import dataclass, fields

import numpy as np

from . import _kernels as K
from . import core
from .core import (Action, ConfigError, ContractViolationError, HumanState,
                   JointState, Outcome, RobotState, Vec2)

# Far wall segments extend well past the cell so the robot cannot slip around
# the front wall's outer ends.
_WALL_EXTENT = 100.0


@dataclass
class WorldConfig:
    """Scene and episode parameters.  Defaults describe the reference cell:
    radius-1 agents in an 8 x 12 rectangle, 0.25 s steps, 9 s limit."""

    cell_width: float = 8.0
    cell_depth: float = 12.0
    door_width: float = 4.0
    agent_radius: float = 1.0
    robot_radius: float = 1.0
    robot_start_dist: float = 3.0
    v_pref: float = 1.0
    human_max_speed: float = 1.0
    dt: float = 0.25
    time_limit: float = 9.0
    n_humans: int = 6
    safety_space: float = 0.2
    seed: int = 0
    neighbor_dist: float = 15.0
    time_horizon: float = 5.0
    time_horizon_obst: float = 2.0

    def validate(self):
        positives = ("cell_width", "cell_depth", "door_width", "agent_radius",
                     "robot_radius", "robot_start_dist", "v_pref",
                     "human_max_speed", "dt", "time_limit", "safety_space",
                     "neighbor_dist", "time_horizon", "time_horizon_obst")
        for name in positives:
            if getattr(self, name) <= 0:
                raise ConfigError(f"world.{name} must be positive, got {getattr(self, name)}")
        if self.n_humans < 0:
            raise ConfigError(f"world.n_humans must be >= 0, got {self.n_humans}")
        if self.door_width < 2.0 * self.robot_radius:
            raise ConfigError(
                f"world.door_width {self.door_width} cannot pass a robot of "
                f"radius {self.robot_radius}")
        if self.n_humans > self.placement_capacity():
            raise ConfigError(
                f"world.n_humans {self.n_humans} exceeds the cell's packing "
                f"capacity {self.placement_capacity()}")
        if self.dt > self.time_limit:
            raise ConfigError("world.dt larger than world.time_limit")
        return self

    def placement_capacity(self):
        """Upper bound on how many humans fit with the required gaps."""
        pitch = 2.0 * self.agent_radius + self.safety_space
        nx = int((self.cell_width - 2 * self.agent_radius) / pitch) + 1
        ny = int((self.cell_depth - 2 * self.agent_radius) / pitch) + 1
        return nx * ny

    @property
    def half_width(self):
        return self.cell_width / 2.0

    @property
    def goal_y(self):
        """Entry line: center height at which the robot disc is fully inside."""
        return self.robot_radius

    @property
    def max_steps(self):
        return int(self.time_limit / self.dt + 1e-9)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown world config key(s): {sorted(unknown)}")
        cfg = cls(**d)
        cfg.n_humans = int(cfg.n_humans)
        cfg.seed = int(cfg.seed)
        return cfg.validate()


class WorldState:
    """Mutable simulation state; one logical owner at a time.

    Human arrays are row-per-human: positions, velocities, current goals, and
    the yielding flags set by a beep.
    """

    __slots__ = ("t", "step_count", "robot_pos", "robot_vel", "h_pos", "h_vel",
                 "h_goal", "h_yield", "outcome", "beep_count")

    def __init__(self, t, step_count, robot_pos, robot_vel, h_pos, h_vel,
                 h_goal, h_yield, outcome, beep_count):
        self.t = t
        self.step_count = step_count
        self.robot_pos = robot_pos
        self.robot_vel = robot_vel
        self.h_pos = h_pos
        self.h_vel = h_vel
        self.h_goal = h_goal
        self.h_yield = h_yield
        self.outcome = outcome
        self.beep_count = beep_count

    @property
    def n_humans(self):
        return self.h_pos.shape[0]

    @property
    def humans(self):
        """(pos, vel, goal, yielding) tuples, for inspection."""
        return [(Vec2(*self.h_pos[i]), Vec2(*self.h_vel[i]),
                 Vec2(*self.h_goal[i]), bool(self.h_yield[i]))
                for i in range(self.n_humans)]

    def copy(self):
        return WorldState(self.t, self.step_count, self.robot_pos.copy(),
                          self.robot_vel.copy(), self.h_pos.copy(),
                          self.h_vel.copy(), self.h_goal.copy(),
                          self.h_yield.copy(), self.outcome, self.beep_count)


class StepResult:
    __slots__ = ("observation", "reward", "done", "outcome", "info")

    def __init__(self, observation, reward, done, outcome, info):
        self.observation = observation
        self.reward = reward
        self.done = done
        self.outcome = outcome
        self.info = info


class ElevatorEnv:
    """Owns the immutable scene geometry; states are passed in and out.

    step() advances the given WorldState in place and reports the result.
    Distinct instances (or distinct states under one instance) are fully
    independent, so episodes may run in parallel.
    """

    def __init__(self, config):
        self.config = config.validate()
        hw = config.half_width
        g = config.door_width / 2.0
        d = config.cell_depth
        # the robot sees the front wall with its door gap; side and back walls
        # matter once inside
        self.robot_walls = np.array([
            [-_WALL_EXTENT, 0.0, -g, 0.0],
            [g, 0.0, _WALL_EXTENT, 0.0],
            [-hw, 0.0, -hw, d],
            [hw, 0.0, hw, d],
            [-hw, d, hw, d],
        ], dtype=np.float64)
        # humans are confined to the interior: the full door line is a wall
        # for them (nobody wanders into the lobby)
        self.human_walls = np.array([
            [-hw, 0.0, hw, 0.0],
            [-hw, 0.0, -hw, d],
            [hw, 0.0, hw, d],
            [-hw, d, hw, d],
        ], dtype=np.float64)

    # ------------------------------------------------------------ creation

    def reset(self, seed):
        """Fresh world: humans rejection-sampled inside the cell with pairwise
        surface gaps >= safety_space, parked (goal = start), robot at the door
        centerline.  Same (config, seed) gives a bit-identical state."""
        cfg = self.config
        rng = np.random.default_rng(seed)
        n = cfg.n_humans
        r = cfg.agent_radius
        lo_x, hi_x = -cfg.half_width + r, cfg.half_width - r
        lo_y, hi_y = r, cfg.cell_depth - r
        placed = np.empty((n, 2), dtype=np.float64)
        count = 0
        attempts = 0
        while count < n:
            attempts += 1
            if attempts > 10000:
                raise ConfigError(
                    f"could not place {n} humans after 10000 attempts; "
                    f"cell too crowded")
            cand = np.array([rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)])
            ok = True
            for j in range(count):
                gap = math.hypot(cand[0] - placed[j, 0], cand[1] - placed[j, 1]) - 2 * r
                if gap < cfg.safety_space:
                    ok = False
                    break
            if ok:
                placed[count] = cand
                count += 1
        return self._make_state(placed)

    def reset_with_humans(self, positions, goals=None):
        """World with scripted human placements (goals default to positions)."""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        return self._make_state(positions, goals)

    def _make_state(self, positions, goals=None):
        cfg = self.config
        n = positions.shape[0]
        state = WorldState(
            t=0.0,
            step_count=0,
            robot_pos=np.array([0.0, -cfg.robot_start_dist]),
            robot_vel=np.zeros(2),
            h_pos=positions.copy(),
            h_vel=np.zeros((n, 2)),
            h_goal=positions.copy() if goals is None else
                   np.asarray(goals, dtype=np.float64).reshape(n, 2).copy(),
            h_yield=np.zeros(n, dtype=bool),
            outcome=Outcome.RUNNING,
            beep_count=0,
        )
        return state, self.observe(state)

    # ------------------------------------------------------------ observation

    def entered(self, state):
        return state.robot_pos[1] >= self.config.goal_y

    def d_goal(self, state):
        return max(0.0, self.config.goal_y - state.robot_pos[1])

    def _human_radii(self, n):
        return np.full(n, self.config.agent_radius, dtype=np.float64)

    def observe_arrays(self, state):
        """(rows, robot_vec) without building per-human objects."""
        cfg = self.config
        robot = np.array([self.d_goal(state), state.robot_vel[0],
                          state.robot_vel[1], cfg.v_pref, cfg.robot_radius])
        n = state.n_humans
        if n == 0:
            return np.zeros((0, 12)), robot
        rows = np.empty((n, 12), dtype=np.float64)
        rows[:, :5] = robot
        rows[:, 5:7] = state.h_pos
        rows[:, 7:9] = state.h_vel
        radii = self._human_radii(n)
        rows[:, 9] = radii
        rows[:, 10] = np.hypot(state.h_pos[:, 0] - state.robot_pos[0],
                               state.h_pos[:, 1] - state.robot_pos[1])
        rows[:, 11] = radii + cfg.robot_radius
        return rows, robot

    def observe(self, state):
        rows, robot = self.observe_arrays(state)
        rb = RobotState(robot[0], Vec2(robot[1], robot[2]), robot[3], robot[4])
        humans = [HumanState(Vec2(r[5], r[6]), Vec2(r[7], r[8]), r[9], r[10], r[11])
                  for r in rows]
        return JointState(rb, humans)

    # ------------------------------------------------------------ beep

    def apply_beep(self, state, robot_heading):
        """Pure form of the beep response: returns the updated copy."""
        out = state.copy()
        self._apply_beep_inplace(out, robot_heading)
        return out

    def _apply_beep_inplace(self, state, heading):
        cfg = self.config
        hn = math.hypot(heading.x, heading.y)
        if hn == 0.0:
            raise ValueError("beep heading must be non-zero")
        hx, hy = heading.x / hn, heading.y / hn
        nx, ny = -hy, hx  # left of heading
        state.beep_count += 1
        n = state.n_humans
        if n == 0:
            return
        r = cfg.agent_radius
        rel = state.h_pos - state.robot_pos
        along = rel[:, 0] * hx + rel[:, 1] * hy
        lat = rel[:, 0] * nx + rel[:, 1] * ny
        corridor_half = cfg.robot_radius + r + cfg.safety_space
        lo_x, hi_x = -cfg.half_width + r, cfg.half_width - r
        lo_y, hi_y = r, cfg.cell_depth - r
        for i in range(n):
            if along[i] <= 0.0 or abs(lat[i]) >= corridor_half:
                continue
            side = 1.0 if lat[i] == 0.0 else math.copysign(1.0, lat[i])
            shift = (corridor_half + cfg.safety_space - abs(lat[i])) * side
            gx = state.h_pos[i, 0] + shift * nx
            gy = state.h_pos[i, 1] + shift * ny
            state.h_goal[i, 0] = min(max(gx, lo_x), hi_x)
            state.h_goal[i, 1] = min(max(gy, lo_y), hi_y)
            state.h_yield[i] = True

    # ------------------------------------------------------------ stepping

    def step(self, state, action):
        """Advance one step in place: beep response, human avoidance, motion
        integration, termination (collision > entered > timeout), reward."""
        reward, done, info, rows, robot = self.step_arrays(state, action)
        rb = RobotState(robot[0], Vec2(robot[1], robot[2]), robot[3], robot[4])
        humans = [HumanState(Vec2(r[5], r[6]), Vec2(r[7], r[8]), r[9], r[10], r[11])
                  for r in rows]
        obs = JointState(rb, humans)
        return StepResult(obs, reward, done, state.outcome, info)

    def step_arrays(self, state, action):
        """step() without observation objects: (reward, done, info, rows, robot)."""
        if state.outcome is not Outcome.RUNNING:
            raise ContractViolationError("step() called on a terminal state")
        cfg = self.config
        n = state.n_humans

        rvel = action.velocity(cfg.v_pref)
        if action.beep:
            if action.heading_index == core.STAY_INDEX:
                heading = Vec2(0.0, 1.0)  # stay+beep clears the door-ward corridor
            else:
                heading = Vec2(rvel[0], rvel[1])
            self._apply_beep_inplace(state, heading)

        # humans: avoidance toward goals; skipped when provably parked
        if n > 0:
            radii = self._human_radii(n)
            pair_radii = radii + 0.5 * cfg.safety_space
            if not K.statics_undisturbed(state.h_pos, state.h_vel, state.h_goal,
                                         pair_radii, radii, self.human_walls):
                newv = K.humans_velocities(state.h_pos, state.h_vel,
                                           state.h_goal, pair_radii, radii,
                                           cfg.human_max_speed,
                                           cfg.neighbor_dist, cfg.time_horizon,
                                           cfg.time_horizon_obst,
                                           self.human_walls, cfg.dt)
                state.h_pos += newv * cfg.dt
                state.h_vel = newv
                # confinement guard: avoidance already respects the walls, so
                # this clip is a no-op except for last-ulp excursions
                r = radii[0]
                np.clip(state.h_pos[:, 0], -cfg.half_width + r,
                        cfg.half_width - r, out=state.h_pos[:, 0])
                np.clip(state.h_pos[:, 1], r, cfg.cell_depth - r,
                        out=state.h_pos[:, 1])
                # snap arrivals so parked crowds are detected exactly
                d = state.h_pos - state.h_goal
                arrived = (d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]) < 1e-24
                if arrived.any():
                    state.h_pos[arrived] = state.h_goal[arrived]

        # robot: commanded velocity, wall contact slides (never terminal)
        prev = state.robot_pos.copy()
        nx = state.robot_pos[0] + rvel[0] * cfg.dt
        ny = state.robot_pos[1] + rvel[1] * cfg.dt
        px, py = K.pushout_circle(nx, ny, cfg.robot_radius, self.robot_walls,
                                  self.robot_walls.shape[0], prev[0], prev[1])
        state.robot_pos[0] = px
        state.robot_pos[1] = py
        state.robot_vel = rvel

        state.t += cfg.dt
        state.step_count += 1

        d_min = K.min_robot_human_dist(px, py, cfg.robot_radius, state.h_pos,
                                       self._human_radii(n))
        is_in = self.entered(state)
        if d_min < 0.0:
            state.outcome = Outcome.COLLISION
        elif is_in:
            state.outcome = Outcome.SUCCESS
        elif state.step_count >= cfg.max_steps:
            state.outcome = Outcome.TIMEOUT

        # the reward clock: a timeout means no further step fits inside the
        # limit, which the reward sees as the next instant being past it
        t_eval = state.t + cfg.dt if state.outcome is Outcome.TIMEOUT else state.t
        speed = 0.0 if action.heading_index == core.STAY_INDEX else cfg.v_pref
        reward = core.reward(d_min, t_eval, cfg.time_limit, is_in, speed,
                             action.beep)
        done = state.outcome is not Outcome.RUNNING
        info = {"min_dist": d_min, "beeped": action.beep,
                "entered_depth": max(0.0, state.robot_pos[1] - cfg.goal_y)}
        rows, robot = self.observe_arrays(state)
        return reward, done, info, rows, robot
