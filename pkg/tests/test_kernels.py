"""The compiled kernels and their pure-Python fallbacks must agree bitwise.

Every kernel is the same source compiled two ways (numba vs CPython), so
outputs are required to be exactly equal, not merely close.
"""

import numpy as np
import pytest

from elevnav import _kernels as K


def _random_lines(rng, k):
    lines = np.empty((k, 4))
    for i in range(k):
        ang = rng.uniform(0, 2 * np.pi)
        nx, ny = np.cos(ang), np.sin(ang)
        anchor = rng.uniform(-0.5, 0.5, size=2)
        s = rng.uniform(0.0, 0.8)
        px, py = anchor[0] - s * nx, anchor[1] - s * ny
        lines[i] = [px, py, ny, -nx]
    return lines


def test_lp2_jit_matches_python():
    rng = np.random.default_rng(101)
    for _ in range(300):
        k = int(rng.integers(0, 8))
        lines = _random_lines(rng, k)
        opt = rng.uniform(-1.5, 1.5, size=2)
        args = (lines, k, 1.0, float(opt[0]), float(opt[1]), False)
        assert K.lp2(*args) == K.lp2.py_func(*args)


def test_lp3_jit_matches_python():
    rng = np.random.default_rng(102)
    hits = 0
    for _ in range(300):
        k = int(rng.integers(2, 9))
        lines = _random_lines(rng, k)
        opt = rng.uniform(-1.5, 1.5, size=2)
        fail, x, y = K.lp2(lines, k, 1.0, float(opt[0]), float(opt[1]), False)
        if fail == k:
            continue
        hits += 1
        got = K.lp3(lines, k, 0, fail, 1.0, x, y)
        want = K.lp3.py_func(lines, k, 0, fail, 1.0, x, y)
        assert got == want
    assert hits > 0  # the generator must actually exercise the fallback


def test_avoidance_line_jit_matches_python():
    rng = np.random.default_rng(103)
    for _ in range(500):
        args = tuple(float(v) for v in rng.uniform(-3, 3, size=8))
        rest = (float(rng.uniform(0.3, 2.5)), 5.0, 0.25,
                float(rng.choice([0.5, 1.0])))
        assert K.avoidance_line(*args, *rest) == K.avoidance_line.py_func(*args, *rest)


def test_obstacle_line_jit_matches_python():
    rng = np.random.default_rng(104)
    for _ in range(500):
        px, py = rng.uniform(-5, 5, size=2)
        seg = rng.uniform(-5, 5, size=4)
        if abs(seg[0] - seg[2]) + abs(seg[1] - seg[3]) < 1e-6:
            continue
        args = (float(px), float(py), 1.0, float(seg[0]), float(seg[1]),
                float(seg[2]), float(seg[3]), 2.0, 0.25)
        assert K.obstacle_line(*args) == K.obstacle_line.py_func(*args)


def test_humans_velocities_jit_matches_python():
    rng = np.random.default_rng(105)
    obstacles = np.array([[-4.0, 0.0, 4.0, 0.0], [-4.0, 0.0, -4.0, 12.0],
                          [4.0, 0.0, 4.0, 12.0], [-4.0, 12.0, 4.0, 12.0]])
    for _ in range(50):
        n = int(rng.integers(1, 7))
        pos = np.column_stack([rng.uniform(-3, 3, n), rng.uniform(1, 11, n)])
        vel = rng.uniform(-1, 1, (n, 2))
        goal = np.column_stack([rng.uniform(-3, 3, n), rng.uniform(1, 11, n)])
        pr = np.full(n, 1.1)
        wr = np.full(n, 1.0)
        a = K.humans_velocities(pos, vel, goal, pr, wr, 1.0, 15.0, 5.0, 2.0,
                                obstacles, 0.25)
        b = K.humans_velocities.py_func(pos, vel, goal, pr, wr, 1.0, 15.0, 5.0,
                                        2.0, obstacles, 0.25)
        assert np.array_equal(a, b)


def test_pushout_jit_matches_python():
    rng = np.random.default_rng(106)
    segs = np.array([[-100.0, 0.0, -2.0, 0.0], [2.0, 0.0, 100.0, 0.0],
                     [-4.0, 0.0, -4.0, 12.0], [4.0, 0.0, 4.0, 12.0]])
    for _ in range(300):
        px, py = rng.uniform(-6, 6), rng.uniform(-4, 13)
        args = (float(px), float(py), 1.0, segs, 4, float(px), float(py - 1))
        assert K.pushout_circle(*args) == K.pushout_circle.py_func(*args)


def test_distance_helpers_jit_match_python():
    rng = np.random.default_rng(107)
    for _ in range(100):
        n = int(rng.integers(0, 6))
        pos = rng.uniform(-4, 4, (n, 2))
        radii = rng.uniform(0.3, 1.0, n)
        a = K.min_robot_human_dist(0.0, -3.0, 1.0, pos, radii)
        b = K.min_robot_human_dist.py_func(0.0, -3.0, 1.0, pos, radii)
        assert a == b
        assert K.min_pairwise_gap(pos, radii) == K.min_pairwise_gap.py_func(pos, radii)


def test_no_humans_sentinel():
    empty = np.zeros((0, 2))
    assert K.min_robot_human_dist(0.0, 0.0, 1.0, empty, np.zeros(0)) == 1e9
    assert K.min_pairwise_gap(np.zeros((1, 2)), np.ones(1)) == 1e9


@pytest.mark.skipif(not K.USE_NUMBA, reason="fallback already active")
def test_numba_path_is_active_by_default():
    assert hasattr(K.lp2, "py_func")
    assert K.lp2.py_func is not K.lp2
