"""Numerical kernels for collision avoidance and world integration.

Hot loops live here as plain scalar/array code.  When numba is importable
(and ELEVNAV_NUMBA is not "0") every kernel is compiled with @njit; otherwise
the same functions run as pure Python/numpy.  Both paths execute identical
IEEE-754 operation sequences, so results are bit-equal (asserted in tests).

Constraint representation ("lines"): rows of [px, py, dx, dy] where (px, py)
is a point on the boundary and (dx, dy) the unit direction along it.  The
feasible side is the left of the direction: det(d, v - p) >= 0.  The outward
unit normal is (-dy, dx).
"""

import math
import os

import numpy as np

try:
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency, flag only
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("ELEVNAV_NUMBA", "1") != "0"

if USE_NUMBA:
    def kernel(fn):
        return _njit(cache=True, nogil=True)(fn)
else:
    def kernel(fn):
        fn.py_func = fn  # mirror numba's attribute so tests treat both alike
        return fn

_EPS = 1e-10


@kernel
def _det(ax, ay, bx, by):
    return ax * by - ay * bx


@kernel
def lp1(lines, n_lines, line_no, radius, opt_x, opt_y, dir_opt):
    """1-D program on the boundary of constraint line_no.

    Clamps the parameter range by the speed disc and constraints < line_no,
    then optimizes either the direction (dir_opt) or distance to (opt_x,
    opt_y).  Returns (ok, x, y); on ok == False the caller keeps its result.
    """
    px = lines[line_no, 0]
    py = lines[line_no, 1]
    dx = lines[line_no, 2]
    dy = lines[line_no, 3]
    dot = px * dx + py * dy
    disc = dot * dot + radius * radius - (px * px + py * py)
    if disc < 0.0:
        # speed disc entirely on the infeasible side of this line
        return False, 0.0, 0.0
    sq = math.sqrt(disc)
    t_left = -dot - sq
    t_right = -dot + sq

    for i in range(line_no):
        qx = lines[i, 0]
        qy = lines[i, 1]
        ex = lines[i, 2]
        ey = lines[i, 3]
        denom = _det(dx, dy, ex, ey)
        numer = _det(ex, ey, px - qx, py - qy)
        if abs(denom) <= _EPS:
            # parallel: either redundant or mutually exclusive
            if numer < 0.0:
                return False, 0.0, 0.0
            continue
        t = numer / denom
        if denom >= 0.0:
            if t < t_right:
                t_right = t
        else:
            if t > t_left:
                t_left = t
        if t_left > t_right:
            return False, 0.0, 0.0

    if dir_opt:
        if opt_x * dx + opt_y * dy > 0.0:
            t = t_right
        else:
            t = t_left
    else:
        t = dx * (opt_x - px) + dy * (opt_y - py)
        if t < t_left:
            t = t_left
        elif t > t_right:
            t = t_right
    return True, px + t * dx, py + t * dy


@kernel
def lp2(lines, n_lines, radius, opt_x, opt_y, dir_opt):
    """Incremental 2-D program over half-plane constraints inside a disc.

    Returns (fail_index, x, y).  fail_index == n_lines means feasible; a
    smaller value is the first irreconcilable constraint and (x, y) is the
    result satisfying constraints before it.
    """
    if dir_opt:
        x = opt_x * radius
        y = opt_y * radius
    elif opt_x * opt_x + opt_y * opt_y > radius * radius:
        nrm = math.sqrt(opt_x * opt_x + opt_y * opt_y)
        x = opt_x / nrm * radius
        y = opt_y / nrm * radius
    else:
        x = opt_x
        y = opt_y

    for i in range(n_lines):
        if _det(lines[i, 2], lines[i, 3], lines[i, 0] - x, lines[i, 1] - y) > 0.0:
            ok, nx, ny = lp1(lines, n_lines, i, radius, opt_x, opt_y, dir_opt)
            if not ok:
                return i, x, y
            x = nx
            y = ny
    return n_lines, x, y


@kernel
def lp3(lines, n_lines, num_obst, begin_line, radius, x, y):
    """Fallback: minimize the maximum violation over the relaxable lines.

    Obstacle lines (the first num_obst) stay hard; the rest are relaxed
    together, starting from the first failed line.  Returns the safest
    achievable (x, y).
    """
    dist = 0.0
    proj = np.empty((n_lines, 4))
    for i in range(begin_line, n_lines):
        if _det(lines[i, 2], lines[i, 3], lines[i, 0] - x, lines[i, 1] - y) > dist:
            n_proj = num_obst
            for k in range(num_obst):
                proj[k, 0] = lines[k, 0]
                proj[k, 1] = lines[k, 1]
                proj[k, 2] = lines[k, 2]
                proj[k, 3] = lines[k, 3]
            for j in range(num_obst, i):
                denom = _det(lines[i, 2], lines[i, 3], lines[j, 2], lines[j, 3])
                if abs(denom) <= _EPS:
                    if lines[i, 2] * lines[j, 2] + lines[i, 3] * lines[j, 3] > 0.0:
                        continue  # same direction: j is redundant with i
                    ppx = 0.5 * (lines[i, 0] + lines[j, 0])
                    ppy = 0.5 * (lines[i, 1] + lines[j, 1])
                else:
                    t = _det(lines[j, 2], lines[j, 3],
                             lines[i, 0] - lines[j, 0],
                             lines[i, 1] - lines[j, 1]) / denom
                    ppx = lines[i, 0] + t * lines[i, 2]
                    ppy = lines[i, 1] + t * lines[i, 3]
                ddx = lines[j, 2] - lines[i, 2]
                ddy = lines[j, 3] - lines[i, 3]
                nrm = math.sqrt(ddx * ddx + ddy * ddy)
                proj[n_proj, 0] = ppx
                proj[n_proj, 1] = ppy
                proj[n_proj, 2] = ddx / nrm
                proj[n_proj, 3] = ddy / nrm
                n_proj += 1
            tx = x
            ty = y
            fail, nx, ny = lp2(proj, n_proj, radius,
                               -lines[i, 3], lines[i, 2], True)
            if fail < n_proj:
                # numerically impossible in exact arithmetic; keep previous
                x = tx
                y = ty
            else:
                x = nx
                y = ny
            dist = _det(lines[i, 2], lines[i, 3], lines[i, 0] - x, lines[i, 1] - y)
    return x, y


@kernel
def avoidance_line(px, py, vx, vy, qx, qy, ux, uy, combined_r, tau, dt,
                   reciprocity):
    """Velocity constraint keeping (p, v) clear of agent (q, u) for tau.

    The plane passes through v + reciprocity*w where w is the smallest change
    of relative velocity escaping the truncated velocity obstacle; already
    overlapping discs use the dt horizon instead (escape, no failure).
    Returns the line as (point_x, point_y, dir_x, dir_y).
    """
    rel_px = qx - px
    rel_py = qy - py
    rel_vx = vx - ux
    rel_vy = vy - uy
    dist_sq = rel_px * rel_px + rel_py * rel_py
    r_sq = combined_r * combined_r

    if dist_sq > r_sq:
        inv_tau = 1.0 / tau
        # vector from truncation-disc center to relative velocity
        wx = rel_vx - inv_tau * rel_px
        wy = rel_vy - inv_tau * rel_py
        w_sq = wx * wx + wy * wy
        dot1 = wx * rel_px + wy * rel_py
        if dot1 < 0.0 and dot1 * dot1 > r_sq * w_sq:
            # project on the truncation disc
            w_len = math.sqrt(w_sq)
            if w_len < 1e-12:
                unit_wx = -rel_px / math.sqrt(dist_sq)
                unit_wy = -rel_py / math.sqrt(dist_sq)
            else:
                unit_wx = wx / w_len
                unit_wy = wy / w_len
            dir_x = unit_wy
            dir_y = -unit_wx
            cx = (combined_r * inv_tau - w_len) * unit_wx
            cy = (combined_r * inv_tau - w_len) * unit_wy
        else:
            # project on the nearer leg of the cone
            leg = math.sqrt(dist_sq - r_sq)
            if _det(rel_px, rel_py, wx, wy) > 0.0:
                dir_x = (rel_px * leg - rel_py * combined_r) / dist_sq
                dir_y = (rel_px * combined_r + rel_py * leg) / dist_sq
            else:
                dir_x = -(rel_px * leg + rel_py * combined_r) / dist_sq
                dir_y = -(-rel_px * combined_r + rel_py * leg) / dist_sq
            dot2 = rel_vx * dir_x + rel_vy * dir_y
            cx = dot2 * dir_x - rel_vx
            cy = dot2 * dir_y - rel_vy
    else:
        # overlap: escape within one time step
        inv_dt = 1.0 / dt
        wx = rel_vx - inv_dt * rel_px
        wy = rel_vy - inv_dt * rel_py
        w_len = math.sqrt(wx * wx + wy * wy)
        if w_len < 1e-12:
            if dist_sq > 1e-24:
                d = math.sqrt(dist_sq)
                unit_wx = -rel_px / d
                unit_wy = -rel_py / d
            else:
                unit_wx = 1.0
                unit_wy = 0.0
        else:
            unit_wx = wx / w_len
            unit_wy = wy / w_len
        dir_x = unit_wy
        dir_y = -unit_wx
        cx = (combined_r * inv_dt - w_len) * unit_wx
        cy = (combined_r * inv_dt - w_len) * unit_wy

    return vx + reciprocity * cx, vy + reciprocity * cy, dir_x, dir_y


@kernel
def _closest_on_segment(px, py, ax, ay, bx, by):
    abx = bx - ax
    aby = by - ay
    denom = abx * abx + aby * aby
    if denom < 1e-24:
        return ax, ay
    t = ((px - ax) * abx + (py - ay) * aby) / denom
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    return ax + t * abx, ay + t * aby


@kernel
def obstacle_line(px, py, radius, ax, ay, bx, by, tau_obst, dt):
    """Half-plane keeping an agent at (px, py) off a wall segment.

    Approach speed toward the wall is limited so contact cannot happen within
    tau_obst; an agent already overlapping the wall must retreat within dt.
    Returns the line as (point_x, point_y, dir_x, dir_y).
    """
    cx, cy = _closest_on_segment(px, py, ax, ay, bx, by)
    dx = px - cx
    dy = py - cy
    dist = math.sqrt(dx * dx + dy * dy)
    if dist > 1e-12:
        nx = dx / dist
        ny = dy / dist
    else:
        # center exactly on the wall: use the segment's left normal
        abx = bx - ax
        aby = by - ay
        nrm = math.sqrt(abx * abx + aby * aby)
        nx = -aby / nrm
        ny = abx / nrm
    surf = dist - radius
    if surf > 0.0:
        rhs = -surf / tau_obst
    else:
        rhs = -surf / dt
    # v . n >= rhs  as point + direction
    return rhs * nx, rhs * ny, ny, -nx


@kernel
def compute_velocity_arrays(idx, pos, vel, pair_radii, wall_radius, max_speed,
                            neighbor_dist, tau, tau_obst, reciprocity,
                            obstacles, n_obst, pref_x, pref_y, dt):
    """Full avoidance velocity for agent idx among all agents and walls.

    pair_radii enter agent-agent constraints (combined radius = sum of the
    pair's entries); wall_radius is the raw disc radius used against
    obstacles.  Obstacle constraints come first and stay hard in the
    fallback.  Returns (vx, vy) with speed <= max_speed.
    """
    n_agents = pos.shape[0]
    lines = np.empty((n_obst + n_agents, 4))
    n_lines = 0
    for k in range(n_obst):
        lx, ly, ldx, ldy = obstacle_line(pos[idx, 0], pos[idx, 1], wall_radius,
                                         obstacles[k, 0], obstacles[k, 1],
                                         obstacles[k, 2], obstacles[k, 3],
                                         tau_obst, dt)
        lines[n_lines, 0] = lx
        lines[n_lines, 1] = ly
        lines[n_lines, 2] = ldx
        lines[n_lines, 3] = ldy
        n_lines += 1
    num_obst = n_lines

    nd_sq = neighbor_dist * neighbor_dist
    for j in range(n_agents):
        if j == idx:
            continue
        dx = pos[j, 0] - pos[idx, 0]
        dy = pos[j, 1] - pos[idx, 1]
        if dx * dx + dy * dy >= nd_sq:
            continue
        lx, ly, ldx, ldy = avoidance_line(pos[idx, 0], pos[idx, 1],
                                          vel[idx, 0], vel[idx, 1],
                                          pos[j, 0], pos[j, 1],
                                          vel[j, 0], vel[j, 1],
                                          pair_radii[idx] + pair_radii[j],
                                          tau, dt, reciprocity)
        lines[n_lines, 0] = lx
        lines[n_lines, 1] = ly
        lines[n_lines, 2] = ldx
        lines[n_lines, 3] = ldy
        n_lines += 1

    fail, x, y = lp2(lines, n_lines, max_speed, pref_x, pref_y, False)
    if fail < n_lines:
        x, y = lp3(lines, n_lines, num_obst, fail, max_speed, x, y)
    return x, y


@kernel
def humans_velocities(h_pos, h_vel, h_goal, pair_radii, wall_radii, max_speed,
                      neighbor_dist, tau, tau_obst, obstacles, dt):
    """New velocities for every human: avoid each other (shared responsibility)
    and the walls while heading to their goals.  The robot is not in their
    neighbor set; humans give way only through the beep response upstream.
    """
    n = h_pos.shape[0]
    out = np.empty((n, 2))
    n_obst = obstacles.shape[0]
    for i in range(n):
        gx = h_goal[i, 0] - h_pos[i, 0]
        gy = h_goal[i, 1] - h_pos[i, 1]
        dist = math.sqrt(gx * gx + gy * gy)
        if dist < 1e-12:
            pref_x = 0.0
            pref_y = 0.0
        else:
            speed = min(max_speed, dist / dt)
            pref_x = gx / dist * speed
            pref_y = gy / dist * speed
        vx, vy = compute_velocity_arrays(i, h_pos, h_vel, pair_radii,
                                         wall_radii[i], max_speed,
                                         neighbor_dist, tau, tau_obst, 0.5,
                                         obstacles, n_obst, pref_x, pref_y, dt)
        out[i, 0] = vx
        out[i, 1] = vy
    return out


@kernel
def statics_undisturbed(h_pos, h_vel, h_goal, pair_radii, wall_radii,
                        obstacles):
    """True when every human is parked at its goal with zero velocity, clear
    of neighbors and walls, in which case the avoidance solve returns exactly
    zero for everyone and can be skipped.
    """
    n = h_pos.shape[0]
    for i in range(n):
        if h_vel[i, 0] != 0.0 or h_vel[i, 1] != 0.0:
            return False
        if h_pos[i, 0] != h_goal[i, 0] or h_pos[i, 1] != h_goal[i, 1]:
            return False
    for i in range(n):
        for j in range(i + 1, n):
            dx = h_pos[j, 0] - h_pos[i, 0]
            dy = h_pos[j, 1] - h_pos[i, 1]
            comb = pair_radii[i] + pair_radii[j]
            if dx * dx + dy * dy <= comb * comb:
                return False
    for i in range(n):
        for k in range(obstacles.shape[0]):
            cx, cy = _closest_on_segment(h_pos[i, 0], h_pos[i, 1],
                                         obstacles[k, 0], obstacles[k, 1],
                                         obstacles[k, 2], obstacles[k, 3])
            dx = h_pos[i, 0] - cx
            dy = h_pos[i, 1] - cy
            if dx * dx + dy * dy < wall_radii[i] * wall_radii[i]:
                return False
    return True


@kernel
def pushout_circle(px, py, radius, segments, n_seg, prev_x, prev_y):
    """Resolve disc-versus-wall overlap by radial pushout (slide on contact).

    Iterates a few passes so corners where two segments meet converge.  The
    previous position picks the side when the center lands exactly on a wall.
    """
    x = px
    y = py
    for _ in range(4):
        moved = False
        for k in range(n_seg):
            cx, cy = _closest_on_segment(x, y, segments[k, 0], segments[k, 1],
                                         segments[k, 2], segments[k, 3])
            dx = x - cx
            dy = y - cy
            dist = math.sqrt(dx * dx + dy * dy)
            if dist >= radius:
                continue
            if dist > 1e-12:
                nx = dx / dist
                ny = dy / dist
            else:
                abx = segments[k, 2] - segments[k, 0]
                aby = segments[k, 3] - segments[k, 1]
                nrm = math.sqrt(abx * abx + aby * aby)
                nx = -aby / nrm
                ny = abx / nrm
                side = (prev_x - cx) * nx + (prev_y - cy) * ny
                if side < 0.0:
                    nx = -nx
                    ny = -ny
            x = cx + nx * radius
            y = cy + ny * radius
            moved = True
        if not moved:
            break
    return x, y


@kernel
def min_robot_human_dist(rx, ry, r_radius, h_pos, h_radii):
    """Closest surface-to-surface robot-human separation (1e9 if no humans)."""
    best = 1e9
    for i in range(h_pos.shape[0]):
        dx = h_pos[i, 0] - rx
        dy = h_pos[i, 1] - ry
        d = math.sqrt(dx * dx + dy * dy) - r_radius - h_radii[i]
        if d < best:
            best = d
    return best


@kernel
def min_pairwise_gap(pos, radii):
    """Smallest surface-to-surface separation over all agent pairs (1e9 if < 2)."""
    best = 1e9
    n = pos.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            dx = pos[j, 0] - pos[i, 0]
            dy = pos[j, 1] - pos[i, 1]
            d = math.sqrt(dx * dx + dy * dy) - radii[i] - radii[j]
            if d < best:
                best = d
    return best
