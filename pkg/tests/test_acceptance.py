"""Acceptance gate: eleven behavioral criteria covering reward exactness,
baseline safety and crowding trends, the LP solver, network gradients,
smoke-scale training outcomes, beep efficacy and parsimony, end-to-end
determinism, and metric identities.

Each criterion prints one "ACCEPTANCE #k PASS/FAIL" line with capture
suspended so the verdicts reach the terminal even under pytest's fd-level
capture.  The expensive artifacts (the ORCA evaluation tables and the three
smoke training runs) are module-scoped and shared across criteria; #11
audits every Metrics value the others produced.
"""

import time

import numpy as np
import pytest

from elevnav.core import HumanState, JointState, RobotState, Vec2, derive_seed, reward
from elevnav.env import ElevatorEnv, WorldConfig
from elevnav.evalharness import (compare_report, door_blocked_suite,
                                 empty_suite, evaluate, evaluate_scripted,
                                 make_orca_policy, make_value_policy,
                                 side_parked_suite)
from elevnav.navformer import ValueNet, backward, forward, save_weights
from elevnav.orca import HalfPlane, solve_lp2d
from elevnav.trainer import (TrainConfig, collect_demonstrations,
                             imitation_fit, rl_train)
from elevnav.cli import run_traced_episode, serialize_trace

from oracles import lp_grid_oracle, reward_oracle

# Smoke-budget knobs shared by the training criteria (#7-#10).  The budget
# itself (demos, epochs, episodes, humans, seeds) is fixed; the remaining
# hyperparameters are tuned so the budget converges reliably on one core.
SMOKE_SEEDS = (1, 2, 3)
SMOKE_EVAL_CASES = 300
SMOKE_WORLD = WorldConfig(n_humans=6)
SMOKE_KNOBS = dict(
    il_demos=200,
    il_epochs=5,
    episodes=1500,
    eps_decay_episodes=750,
    max_batches_per_episode=8,
    target_sync_interval=25,
    checkpoint_interval=500,
)

ORCA_EVAL_CASES = 1000
ORCA_CROWDS = (6, 7, 8)

# Every Metrics produced by criteria #2-#9 lands here for the #11 audit.
TRACKED = []


def _track(label, metrics):
    TRACKED.append((label, metrics))
    return metrics


def _report(capsys, num, ok, detail):
    line = f"ACCEPTANCE #{num} {'PASS' if ok else 'FAIL'} - {detail}"
    with capsys.disabled():
        print(line, flush=True)
    assert ok, line


# --------------------------------------------------------------- fixtures


@pytest.fixture(scope="module")
def orca_tables():
    """ORCA baseline over 1,000 cases at each crowd size, plus wall time."""
    policy = make_orca_policy()
    start = time.perf_counter()
    table = {}
    for crowd in ORCA_CROWDS:
        world = WorldConfig(n_humans=crowd).validate()
        table[crowd] = _track(f"orca@{crowd}",
                              evaluate(policy, world, ORCA_EVAL_CASES, seed=0))
    return table, time.perf_counter() - start


def _smoke_pipeline(seed, out_dir):
    """Full demo -> IL -> RL -> eval pipeline for one seed.

    Returns the trained net, the Metrics pair, and the byte content of the
    weights / trace / metrics files so reruns can be compared byte for byte.
    """
    config = TrainConfig(seed=seed, **SMOKE_KNOBS).validate()
    demos = collect_demonstrations(config, SMOKE_WORLD, config.il_demos)
    net = ValueNet(seed=derive_seed(seed, "init"))
    imitation_fit(net, demos, config)
    rl_train(net, config, SMOKE_WORLD)

    weights_path = out_dir / f"weights_{seed}.navf"
    save_weights(net, weights_path)

    rl_policy = make_value_policy(net, beep_enabled=True)
    m_rl = evaluate(rl_policy, SMOKE_WORLD, SMOKE_EVAL_CASES, seed=seed)
    m_orca = evaluate(make_orca_policy(), SMOKE_WORLD, SMOKE_EVAL_CASES,
                      seed=seed)

    metrics_csv = compare_report([("rl-beep", SMOKE_WORLD.n_humans, m_rl),
                                  ("orca", SMOKE_WORLD.n_humans, m_orca)]
                                 ).render_csv()
    metrics_path = out_dir / f"metrics_{seed}.csv"
    metrics_path.write_text(metrics_csv)

    blocked = door_blocked_suite(1, seed=0)[0]
    env = ElevatorEnv(WorldConfig(n_humans=len(blocked)).validate())
    world, obs = env.reset_with_humans(np.asarray(blocked, dtype=np.float64))
    trace = run_traced_episode(env, rl_policy, world, obs, "rl-beep",
                               "0" * 16, seed)
    trace_text = serialize_trace(trace)
    trace_path = out_dir / f"trace_{seed}.jsonl"
    trace_path.write_text(trace_text)

    return {
        "seed": seed,
        "net": net,
        "m_rl": m_rl,
        "m_orca": m_orca,
        "weights": weights_path.read_bytes(),
        "metrics_csv": metrics_csv,
        "trace": trace_text,
    }


@pytest.fixture(scope="module")
def smoke_runs(tmp_path_factory):
    """The three smoke training runs plus their total wall time."""
    out_dir = tmp_path_factory.mktemp("smoke")
    start = time.perf_counter()
    runs = [_smoke_pipeline(seed, out_dir) for seed in SMOKE_SEEDS]
    elapsed = time.perf_counter() - start
    for run in runs:
        _track(f"rl-beep@smoke seed {run['seed']}", run["m_rl"])
        _track(f"orca@smoke seed {run['seed']}", run["m_orca"])
    return runs, elapsed


# -------------------------------------------------------------- criteria


def test_01_reward_branch_table(capsys):
    rng = np.random.default_rng(derive_seed("acceptance", "reward"))
    start = time.perf_counter()
    checked = 0

    def check(d, t, T, entered, speed, beep):
        nonlocal checked
        assert reward(d, t, T, entered, speed, beep) == \
            reward_oracle(d, t, T, entered, speed, beep)
        checked += 1

    for _ in range(100):  # 100 iterations x 2 beep values per branch
        T = float(rng.uniform(4.0, 15.0))
        speed = float(rng.uniform(0.01, 1.5))
        entered = bool(rng.integers(0, 2))
        for beep in (False, True):
            # overlap wins over everything else
            check(float(-rng.uniform(1e-9, 0.8)), float(rng.uniform(0, 1.3 * T)),
                  T, entered, speed, beep)
            # out of time
            check(float(rng.uniform(0, 3)), T + float(rng.uniform(1e-9, 5)),
                  T, entered, speed, beep)
            # entering the cell
            check(float(rng.uniform(0, 3)), float(rng.uniform(0, T)), T,
                  True, speed, beep)
            # stopped in place
            check(float(rng.uniform(0, 3)), float(rng.uniform(0, T)), T,
                  False, 0.0, beep)
            # uncomfortably close
            check(float(rng.uniform(0, 0.2 - 1e-12)), float(rng.uniform(0, T)),
                  T, False, speed, beep)
            # plain progress
            check(0.2 + float(rng.uniform(0, 3)), float(rng.uniform(0, T)),
                  T, False, speed, beep)
    # boundary values sit exactly on the branch edges
    for beep in (False, True):
        check(0.0, 5.0, 9.0, False, 1.0, beep)      # d == 0 is not overlap
        check(1.0, 9.0, 9.0, False, 1.0, beep)      # t == T is not timeout
        check(0.2, 5.0, 9.0, False, 1.0, beep)      # d == 0.2 is comfortable
        check(1.0, 5.0, 9.0, False, 0.0, beep)      # exact stay
    elapsed = time.perf_counter() - start
    _report(capsys, 1, elapsed < 1.0,
            f"{checked} randomized branch inputs matched the oracle exactly "
            f"in {elapsed:.2f}s")


def test_02_orca_collision_rate(capsys, orca_tables):
    table, elapsed = orca_tables
    rates = {crowd: table[crowd].collision_rate for crowd in ORCA_CROWDS}
    ok = all(rate <= 0.01 for rate in rates.values()) and elapsed < 120.0
    detail = ", ".join(f"crowd {c}: {r:.4f}" for c, r in rates.items())
    _report(capsys, 2, ok, f"collision rates {detail} over {ORCA_EVAL_CASES} cases "
                   f"each in {elapsed:.0f}s")


def test_03_orca_crowding_trend(capsys, orca_tables):
    table, _ = orca_tables
    succ = [table[c].success_rate for c in ORCA_CROWDS]
    tout = [table[c].timeout_rate for c in ORCA_CROWDS]
    ok = all(a >= b for a, b in zip(succ, succ[1:])) and \
        all(a <= b for a, b in zip(tout, tout[1:]))
    _report(capsys, 3, ok, f"success {succ} non-increasing, timeout {tout} "
                   f"non-decreasing over crowds {list(ORCA_CROWDS)}")


def _random_lp_case(rng):
    """Anchored-feasible constraint set inside the 0.3 speed disc.

    Normals stay within a quarter-turn sector so the feasible region around
    the anchor keeps a wide interior angle; otherwise a sliver region could
    leave no grid point within the comparison tolerance of the optimum.
    """
    max_speed = 0.3
    k = int(rng.integers(1, 9))
    theta0 = rng.uniform(0.0, 2.0 * np.pi)
    angles = theta0 + rng.uniform(0.0, np.pi / 2.0, size=k)
    normals = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    anchor_angle = rng.uniform(0.0, 2.0 * np.pi)
    anchor = rng.uniform(0.0, 0.15) * np.array([np.cos(anchor_angle),
                                                np.sin(anchor_angle)])
    points = anchor[None, :] - normals * rng.uniform(0.0, 0.1, size=(k, 1))
    pref_angle = rng.uniform(0.0, 2.0 * np.pi)
    pref_r = max_speed * np.sqrt(rng.uniform(0.0, 1.0))
    preferred = pref_r * np.array([np.cos(pref_angle), np.sin(pref_angle)])
    return points, normals, preferred, max_speed


def test_04_lp_grid_oracle(capsys):
    """The objective |v - preferred| is flat to second order along the
    active constraint, so at a 1e-3 grid the oracle's argmin can sit
    millimeters away from the true optimum at essentially equal cost.
    Agreement is therefore certified on the objective value (both
    directions: the solver may never be worse than a feasible grid point,
    and never better by more than the grid pitch allows), with an
    independent feasibility audit on the solver's answer."""
    rng = np.random.default_rng(derive_seed("acceptance", "lp"))
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        points, normals, preferred, max_speed = _random_lp_case(rng)
        constraints = [HalfPlane(Vec2(*p), Vec2(*n))
                       for p, n in zip(points, normals)]
        solution = solve_lp2d(constraints, Vec2(*preferred), max_speed)
        assert solution.feasible
        v = np.array([solution.velocity.x, solution.velocity.y])
        assert np.hypot(*v) <= max_speed + 1e-9
        assert all(float((v - p) @ n) >= -1e-9
                   for p, n in zip(points, normals))
        expected = lp_grid_oracle(points, normals, preferred, max_speed)
        assert expected is not None
        d_lp = float(np.hypot(*(v - preferred)))
        d_grid = float(np.hypot(*(expected - preferred)))
        assert d_lp <= d_grid + 1e-8, "solver worse than a feasible grid point"
        worst = max(worst, d_grid - d_lp)
    elapsed = time.perf_counter() - start
    _report(capsys, 4, worst <= 2e-3 and elapsed < 30.0,
            f"worst solver-vs-grid objective gap {worst:.2e} over 1000 "
            f"constraint sets in {elapsed:.1f}s")


def _random_joint_state(rng, n_humans):
    robot = RobotState(float(rng.uniform(0.5, 5.0)),
                       Vec2(*rng.uniform(-1.0, 1.0, 2)), 1.0, 1.0)
    humans = [HumanState(Vec2(*rng.uniform(-4.0, 4.0, 2)),
                         Vec2(*rng.uniform(-1.0, 1.0, 2)),
                         1.0, float(rng.uniform(0.5, 8.0)), 2.0)
              for _ in range(n_humans)]
    return JointState(robot, humans)


def test_05_gradient_check(capsys):
    rng = np.random.default_rng(derive_seed("acceptance", "grad"))
    start = time.perf_counter()
    crowd_cycle = (1, 5, 8)
    per_draw = 400
    h = 1e-5
    total = 0
    bad = 0
    for draw in range(100):
        net = ValueNet(seed=int(rng.integers(0, 2**31)))
        state = _random_joint_state(rng, crowd_cycle[draw % 3])
        grads = backward(net, state, 1.0)
        names = list(net.params)
        sizes = np.array([net.params[k].size for k in names])
        offsets = np.concatenate(([0], np.cumsum(sizes)))
        for flat in rng.choice(offsets[-1], size=per_draw, replace=False):
            ti = int(np.searchsorted(offsets, flat, side="right")) - 1
            name, idx = names[ti], int(flat - offsets[ti])
            view = net.params[name].reshape(-1)
            orig = view[idx]
            view[idx] = orig + h
            hi = forward(net, state)[0]
            view[idx] = orig - h
            lo = forward(net, state)[0]
            view[idx] = orig
            fd = (hi - lo) / (2.0 * h)
            analytic = grads[name].reshape(-1)[idx]
            err = abs(analytic - fd)
            denom = max(abs(analytic), abs(fd))
            total += 1
            if err >= 1e-9 and (denom == 0.0 or err / denom >= 1e-3):
                bad += 1
    elapsed = time.perf_counter() - start
    frac = 1.0 - bad / total
    _report(capsys, 5, frac >= 0.999 and elapsed < 120.0,
            f"{frac * 100:.3f}% of {total} sampled coordinates matched "
            f"central differences in {elapsed:.0f}s")


def test_06_permutation_invariance(capsys):
    rng = np.random.default_rng(derive_seed("acceptance", "perm"))
    worst = 0.0
    for _ in range(100):
        net = ValueNet(seed=int(rng.integers(0, 2**31)))
        state = _random_joint_state(rng, int(rng.integers(2, 9)))
        base = forward(net, state)[0]
        perm = rng.permutation(len(state.humans))
        shuffled = JointState(state.robot,
                              [state.humans[i] for i in perm])
        worst = max(worst, abs(forward(net, shuffled)[0] - base))
    _report(capsys, 6, worst <= 1e-12,
            f"worst value shift under 100 human permutations {worst:.2e}")


def test_07_smoke_training(capsys, smoke_runs):
    runs, elapsed = smoke_runs
    hits = sum(run["m_rl"].success_rate >= 0.60 for run in runs)
    beats = sum(run["m_rl"].success_rate > run["m_orca"].success_rate
                for run in runs)
    pairs = ", ".join(
        f"seed {run['seed']}: {run['m_rl'].success_rate:.3f} vs "
        f"{run['m_orca'].success_rate:.3f}" for run in runs)
    _report(capsys, 7, hits >= 2 and beats == len(runs) and elapsed < 1800.0,
            f"rl-beep vs orca success ({pairs}) in {elapsed:.0f}s")


def test_08_beep_efficacy(capsys, smoke_runs):
    runs, _ = smoke_runs
    net = runs[0]["net"]
    scenarios = door_blocked_suite(50, seed=0)
    world = WorldConfig(n_humans=2).validate()
    start = time.perf_counter()
    m_beep = _track("rl-beep@blocked",
                    evaluate_scripted(make_value_policy(net, beep_enabled=True),
                                      world, scenarios))
    m_mute = _track("rl-nobeep@blocked",
                    evaluate_scripted(make_value_policy(net, beep_enabled=False),
                                      world, scenarios))
    elapsed = time.perf_counter() - start
    gap = m_beep.success_rate - m_mute.success_rate
    _report(capsys, 8, gap >= 0.30 and elapsed < 60.0,
            f"door-blocked success {m_beep.success_rate:.2f} with beep vs "
            f"{m_mute.success_rate:.2f} without (gap {gap:.2f}) in {elapsed:.0f}s")


def test_09_beep_parsimony(capsys, smoke_runs):
    runs, _ = smoke_runs
    policy = make_value_policy(runs[0]["net"], beep_enabled=True)
    m_empty = _track("rl-beep@empty",
                     evaluate_scripted(policy,
                                       WorldConfig(n_humans=0).validate(),
                                       empty_suite(50)))
    m_parked = _track("rl-beep@parked",
                      evaluate_scripted(policy,
                                        WorldConfig(n_humans=2).validate(),
                                        side_parked_suite(50, 2, 0)))
    ok = m_empty.beep_rate <= 0.5 and m_parked.beep_rate <= 0.5
    _report(capsys, 9, ok, f"beeps per episode: empty {m_empty.beep_rate:.2f}, "
                   f"side-parked {m_parked.beep_rate:.2f} (bound 0.5)")


def test_10_determinism(capsys, smoke_runs, tmp_path_factory):
    runs, _ = smoke_runs
    first = runs[0]
    rerun = _smoke_pipeline(first["seed"], tmp_path_factory.mktemp("rerun"))
    same_weights = rerun["weights"] == first["weights"]
    same_trace = rerun["trace"] == first["trace"]
    same_metrics = rerun["metrics_csv"] == first["metrics_csv"]
    _report(capsys, 10, same_weights and same_trace and same_metrics,
            f"seed {first['seed']} rerun byte-identical: "
            f"weights {same_weights}, trace {same_trace}, "
            f"metrics {same_metrics}")


def test_11_rate_sum_identity(capsys, orca_tables, smoke_runs):
    assert len(TRACKED) >= 13
    bad = [label for label, m in TRACKED
           if m.success_rate + m.collision_rate + m.timeout_rate != 1.0]
    # the metrics files round-trip through repr, so the identity must
    # survive the text form as well
    for run in smoke_runs[0]:
        for line in run["metrics_csv"].splitlines()[1:]:
            cells = line.split(",")
            if float(cells[3]) + float(cells[4]) + float(cells[5]) != 1.0:
                bad.append(f"csv seed {run['seed']}: {cells[0]}")
    _report(capsys, 11, not bad,
            f"success+collision+timeout == 1.0 exactly for all "
            f"{len(TRACKED)} tracked Metrics and every csv row"
            + (f"; violations: {bad}" if bad else ""))
