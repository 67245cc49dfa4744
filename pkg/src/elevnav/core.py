"""Shared geometry, state vectors, reward, and discounting.

Everything downstream (simulation, policies, training, evaluation) builds on
the types and scalar functions in this module.  All functions here are pure
and safe to call from any thread.
"""

import hashlib
import math
import warnings
from enum import Enum

import numpy as np

# Number of evenly spaced move headings; index HEADINGS == stay.
N_HEADINGS = 16
STAY_INDEX = 16

# Sentinel separation used when no human is present: large but finite so the
# reward contract (finite inputs) holds.
NO_HUMAN_DIST = 1e9


class ConfigError(ValueError):
    """Invalid or inconsistent configuration value."""


class ContractViolationError(RuntimeError):
    """An operation was called outside its stated precondition."""


class TrainingFaultError(RuntimeError):
    """Optimization produced non-finite values; the run cannot continue as-is."""


class FormatError(ValueError):
    """A serialized artifact (weights file, trace) is malformed."""


class Vec2:
    """2-D vector with finite components."""

    __slots__ = ("x", "y")

    def __init__(self, x, y):
        self.x = float(x)
        self.y = float(y)

    def norm(self):
        return math.hypot(self.x, self.y)

    def as_array(self):
        return np.array([self.x, self.y], dtype=np.float64)

    def __iter__(self):
        yield self.x
        yield self.y

    def __eq__(self, other):
        return isinstance(other, Vec2) and self.x == other.x and self.y == other.y

    def __repr__(self):
        return f"Vec2({self.x!r}, {self.y!r})"


class RobotState:
    """Robot's own state: [d_g, v_x, v_y, v_pref, r], flattened dimension 5.

    d_g is the vertical distance from the robot to the goal line just inside
    the door (0 once the robot disc is fully inside).
    """

    __slots__ = ("d_g", "v", "v_pref", "r")

    def __init__(self, d_g, v, v_pref, r):
        self.d_g = float(d_g)
        self.v = v
        self.v_pref = float(v_pref)
        self.r = float(r)

    def flatten(self):
        return np.array([self.d_g, self.v.x, self.v.y, self.v_pref, self.r],
                        dtype=np.float64)


class HumanState:
    """Observable state of one human: [p_x, p_y, v_x, v_y, r_i, d_i, r_sum].

    d_i is the center distance from the robot to this human and r_sum the sum
    of the two radii, so d_i - r_sum is the surface-to-surface separation.
    """

    __slots__ = ("p", "v", "r_i", "d_i", "r_sum")

    def __init__(self, p, v, r_i, d_i, r_sum):
        self.p = p
        self.v = v
        self.r_i = float(r_i)
        self.d_i = float(d_i)
        self.r_sum = float(r_sum)

    def flatten(self):
        return np.array([self.p.x, self.p.y, self.v.x, self.v.y,
                         self.r_i, self.d_i, self.r_sum], dtype=np.float64)


class JointState:
    """Robot state plus the ordered list of human states.

    rows() stacks one 12-scalar row per human: the robot 5-vector concatenated
    with that human's 7-vector.  With no humans it is an empty (0, 12) array.
    """

    __slots__ = ("robot", "humans")

    def __init__(self, robot, humans):
        self.robot = robot
        self.humans = list(humans)

    def robot_vec(self):
        return self.robot.flatten()

    def rows(self):
        if not self.humans:
            return np.zeros((0, 12), dtype=np.float64)
        rv = self.robot.flatten()
        return np.stack([np.concatenate([rv, h.flatten()]) for h in self.humans])


class Action:
    """Discrete action: heading index 0..15 at preferred speed, 16 = stay.

    The beep flag is orthogonal to the heading and asks corridor-blocking
    humans to make room.
    """

    __slots__ = ("heading_index", "beep")

    def __init__(self, heading_index, beep=False):
        heading_index = int(heading_index)
        if not 0 <= heading_index <= STAY_INDEX:
            raise ValueError(f"heading_index must be in [0, {STAY_INDEX}], got {heading_index}")
        self.heading_index = heading_index
        self.beep = bool(beep)

    def velocity(self, v_pref):
        if self.heading_index == STAY_INDEX:
            return np.zeros(2, dtype=np.float64)
        theta = 2.0 * math.pi * self.heading_index / N_HEADINGS
        return np.array([v_pref * math.cos(theta), v_pref * math.sin(theta)],
                        dtype=np.float64)

    def __eq__(self, other):
        return (isinstance(other, Action)
                and self.heading_index == other.heading_index
                and self.beep == other.beep)

    def __hash__(self):
        return hash((self.heading_index, self.beep))

    def __repr__(self):
        return f"Action({self.heading_index}, beep={self.beep})"


class Outcome(Enum):
    RUNNING = "Running"
    SUCCESS = "Success"
    COLLISION = "Collision"
    TIMEOUT = "Timeout"


def reward(min_human_dist, t, T, entered, robot_speed, beep):
    """Per-step reward; branches evaluated top to bottom.

    min_human_dist is the closest surface-to-surface robot-human separation at
    the end of the step (negative on overlap).  robot_speed is the commanded
    speed for the step, so the stopped branch fires exactly on the stay
    action.  The beep price (-0.1) is added after branch selection.
    """
    vals = (min_human_dist, t, T, robot_speed)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"non-finite reward input: {vals}")
    if T <= 0:
        raise ValueError(f"T must be positive, got {T}")
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")

    if min_human_dist < 0.0:
        r = -0.25
    elif t > T:
        r = -2.0
    elif entered:
        r = 10.0 + (T - t) * 0.15
    elif robot_speed == 0.0:
        r = 0.0
    elif min_human_dist < 0.2:
        r = -0.1 + min_human_dist / 2.0
    else:
        r = -0.01

    if beep:
        r -= 0.1
    return r


def step_discount(gamma, dt, v_pref):
    """One-step discount factor gamma**(dt * v_pref), strictly in (0, 1)."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if v_pref <= 0.0:
        raise ValueError(f"v_pref must be positive, got {v_pref}")
    return gamma ** (dt * v_pref)


def discounted_return(rewards, gamma, dt, v_pref, from_index=0):
    """Sum of rewards from from_index, discounted per elapsed step.

    The exponent is relative to from_index: rewards[from_index + k] is scaled
    by step_discount(gamma, dt, v_pref) ** k.
    """
    n = len(rewards)
    if not 0 <= from_index <= n:
        raise ValueError(f"from_index {from_index} outside [0, {n}]")
    if from_index == n:
        warnings.warn("discounted_return over an empty reward slice", stacklevel=2)
        return 0.0
    sd = step_discount(gamma, dt, v_pref)
    total = 0.0
    factor = 1.0
    for k in range(from_index, n):
        total += factor * rewards[k]
        factor *= sd
    return total


def derive_seed(*components):
    """Stable 63-bit seed from a tuple of ints/strings.

    Uses blake2b over a tagged encoding, so derived seeds are identical across
    processes and platforms (unlike hash()).
    """
    h = hashlib.blake2b(digest_size=8)
    for c in components:
        if isinstance(c, (int, np.integer)):
            h.update(b"i" + str(int(c)).encode())
        elif isinstance(c, str):
            h.update(b"s" + c.encode())
        else:
            raise TypeError(f"seed component must be int or str, got {type(c)!r}")
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little") & (2**63 - 1)
