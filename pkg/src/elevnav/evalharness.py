"""Batch evaluation over seeded or scripted worlds plus report rendering.

A policy handle is a callable (env, world, obs) -> Action; factories below
wrap the avoidance baseline and the learned value net.  Cases run
independently (optionally across threads) and are always reduced in case
order, so metrics do not depend on scheduling.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import Outcome, derive_seed
from .env import ElevatorEnv
from .policy import greedy_action, orca_robot_policy


@dataclass(frozen=True)
class Metrics:
    success_rate: float
    collision_rate: float
    timeout_rate: float
    avg_nav_time_success: float
    avg_return: float
    beep_rate: float
    n_cases: int

    @classmethod
    def from_cases(cls, outcomes, returns, nav_times, beeps):
        n = len(outcomes)
        if n == 0:
            raise ValueError("metrics need at least one case")
        n_success = sum(o is Outcome.SUCCESS for o in outcomes)
        n_collision = sum(o is Outcome.COLLISION for o in outcomes)
        success = n_success / n
        collision = n_collision / n
        # evaluated left to right this keeps the three rates summing to 1
        # exactly, not just within float tolerance
        timeout = 1.0 - (success + collision)
        times = [t for o, t in zip(outcomes, nav_times) if o is Outcome.SUCCESS]
        return cls(
            success_rate=success,
            collision_rate=collision,
            timeout_rate=timeout,
            avg_nav_time_success=float(np.mean(times)) if times else math.nan,
            avg_return=float(np.mean(returns)),
            beep_rate=float(np.mean(beeps)),
            n_cases=n,
        )


def make_orca_policy():
    def policy(env, world, obs):
        return orca_robot_policy(world, env.config)
    return policy


def make_value_policy(net, beep_enabled=True, gamma=0.9):
    """Greedy one-step-lookahead wrapper; epsilon 0, so the rng is inert."""
    rng = np.random.default_rng(0)

    def policy(env, world, obs):
        return greedy_action(net, env, obs, world, 0.0, rng,
                             beep_enabled=beep_enabled, gamma=gamma).action
    return policy


def run_episode(env, policy, world, obs):
    """(outcome, undiscounted return, nav time, beep count, steps)."""
    ep_return = 0.0
    while world.outcome is Outcome.RUNNING:
        action = policy(env, world, obs)
        result = env.step(world, action)
        ep_return += result.reward
        obs = result.observation
    return world.outcome, ep_return, world.t, world.beep_count, world.step_count


def _run_cases(policy, world_config, starters, threads):
    """starters: list of callables building (world, obs) on a private env."""
    def one(start):
        env = ElevatorEnv(world_config)
        world, obs = start(env)
        outcome, ret, t, beeps, _ = run_episode(env, policy, world, obs)
        return outcome, ret, t, beeps

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, starters))
    else:
        results = [one(s) for s in starters]
    outcomes, returns, times, beeps = zip(*results)
    return Metrics.from_cases(outcomes, returns, times, beeps)


def evaluate(policy, world_config, n_cases, seed, case_offset=0, threads=1):
    """n_cases seeded random worlds; the per-case seed depends only on
    (seed, absolute case index), so methods sharing a seed see paired
    worlds and disjoint index ranges merge cleanly."""
    if n_cases < 1:
        raise ValueError(f"n_cases must be >= 1, got {n_cases}")
    starters = [
        (lambda env, s=derive_seed(seed, "case", case_offset + i):
         env.reset(seed=s))
        for i in range(n_cases)]
    return _run_cases(policy, world_config, starters, threads)


def evaluate_scripted(policy, world_config, scenarios, threads=1):
    """Fixed human placements instead of seeded sampling; one case per
    scenario (a sequence of (x, y) positions, possibly empty)."""
    if not scenarios:
        raise ValueError("need at least one scenario")
    starters = [
        (lambda env, pos=np.asarray(s, dtype=np.float64).reshape(-1, 2):
         env.reset_with_humans(pos))
        for s in scenarios]
    return _run_cases(policy, world_config, starters, threads)


# ---------------------------------------------------------------- suites

def door_blocked_suite(n_scenarios, seed=0):
    """Two humans shoulder to shoulder across the doorway, interior empty.

    The surface gap between them stays under half a robot width and the
    door walls close off any route around, so entry requires asking them
    to move; their jittered offsets keep the pair a valid placement."""
    scenarios = []
    for i in range(n_scenarios):
        rng = np.random.default_rng(derive_seed(seed, "blocked", i))
        # offsets keep the pair strictly beyond the parked-separation bound
        # (2 radii + safety_space) so neither ever drifts un-beeped
        a, b = rng.uniform(0.06, 0.15, 2)
        y_l, y_r = rng.uniform(1.1, 1.6, 2)
        scenarios.append([(-1.05 - a, y_l), (1.05 + b, y_r)])
    return scenarios


def side_parked_suite(n_scenarios, n_humans=2, seed=0):
    """Humans hugging the side walls, well clear of any door approach."""
    scenarios = []
    for i in range(n_scenarios):
        rng = np.random.default_rng(derive_seed(seed, "parked", i))
        pts = []
        for j in range(n_humans):
            side = 1.0 if j % 2 == 0 else -1.0
            x = side * rng.uniform(2.7, 3.0)
            y = 1.5 + (j // 2) * 2.6 + rng.uniform(0.0, 0.5)
            pts.append((x, y))
        scenarios.append(pts)
    return scenarios


def empty_suite(n_scenarios):
    return [[] for _ in range(n_scenarios)]


# ---------------------------------------------------------------- reports

def _fmt_time(t):
    return "-" if math.isnan(t) else f"{t:.2f}"


class Report:
    """Comparison rows rendered as the two result tables (rates and times
    in one, collisions and returns in the other) plus a CSV twin."""

    def __init__(self, rows):
        if not rows:
            raise ValueError("empty report")
        n_cases = {m.n_cases for _, _, m in rows}
        if len(n_cases) != 1:
            raise ValueError(f"mismatched n_cases across rows: {sorted(n_cases)}")
        self.rows = [(str(name), int(crowd), m) for name, crowd, m in rows]

    def table1_rows(self):
        return [(name, crowd, f"{m.success_rate:.2f}", f"{m.timeout_rate:.2f}",
                 _fmt_time(m.avg_nav_time_success))
                for name, crowd, m in self.rows]

    def table2_rows(self):
        return [(name, crowd, f"{m.collision_rate:.2f}", f"{m.avg_return:.4f}")
                for name, crowd, m in self.rows]

    def render_text(self):
        out = ["| Method | Crowd | Success | Timeout | Time(s) |",
               "|--------|-------|---------|---------|---------|"]
        for name, crowd, s, to, t in self.table1_rows():
            out.append(f"| {name} | {crowd} | {s} | {to} | {t} |")
        out.append("")
        out.append("| Method | Crowd | Collision | Reward |")
        out.append("|--------|-------|-----------|--------|")
        for name, crowd, c, r in self.table2_rows():
            out.append(f"| {name} | {crowd} | {c} | {r} |")
        return "\n".join(out) + "\n"

    def render_csv(self):
        cols = ("method,crowd,n_cases,success_rate,collision_rate,"
                "timeout_rate,avg_nav_time_success,avg_return,beep_rate")
        lines = [cols]
        for name, crowd, m in self.rows:
            lines.append(",".join([
                name, str(crowd), str(m.n_cases),
                repr(m.success_rate), repr(m.collision_rate),
                repr(m.timeout_rate), repr(m.avg_nav_time_success),
                repr(m.avg_return), repr(m.beep_rate)]))
        return "\n".join(lines) + "\n"


def compare_report(rows):
    return Report(rows)
