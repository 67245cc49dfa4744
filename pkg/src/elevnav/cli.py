"""Command-line surface: train, eval, rollout, demo-collect.

Every invocation is seeded and every artifact (weights, traces, metrics,
SVGs) is byte-identical across repeated identical runs.  Traces are
line-delimited JSON with a header and footer so they stream and replay
statelessly; rendering reads only the trace.
"""

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .core import (ConfigError, FormatError, Outcome, TrainingFaultError,
                   derive_seed)
from .env import ElevatorEnv, WorldConfig
from .evalharness import (compare_report, door_blocked_suite, evaluate,
                          make_orca_policy, make_value_policy)
from .navformer import ValueNet, load_weights, save_weights
from .trainer import TrainConfig, collect_demonstrations, imitation_fit, rl_train

LEARNED_METHODS = ("rl-beep", "rl-nobeep")
ALL_METHODS = ("orca",) + LEARNED_METHODS


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class EvalConfig:
    n_cases: int = 1000
    crowd_sizes: tuple = (6, 7, 8)

    def validate(self):
        if self.n_cases < 1:
            raise ConfigError(f"eval n_cases must be >= 1, got {self.n_cases}")
        if not self.crowd_sizes:
            raise ConfigError("eval crowd_sizes must be non-empty")
        if any(int(c) < 0 for c in self.crowd_sizes):
            raise ConfigError(f"bad crowd sizes: {self.crowd_sizes}")
        self.crowd_sizes = tuple(int(c) for c in self.crowd_sizes)
        return self

    def as_dict(self):
        return {"n_cases": self.n_cases, "crowd_sizes": list(self.crowd_sizes)}

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown eval config keys: {', '.join(unknown)}")
        return cls(**data).validate()


@dataclass
class RunConfig:
    world: WorldConfig
    train: TrainConfig
    eval: EvalConfig
    out_dir: str = "out"
    seed: int = 0

    @classmethod
    def defaults(cls):
        return cls(world=WorldConfig(), train=TrainConfig().validate(),
                   eval=EvalConfig().validate())

    @classmethod
    def from_dict(cls, data):
        known = {"world", "train", "eval", "out_dir", "seed"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(
            world=WorldConfig.from_dict(data.get("world", {})),
            train=TrainConfig.from_dict(data.get("train", {})),
            eval=EvalConfig.from_dict(data.get("eval", {})),
            out_dir=str(data.get("out_dir", "out")),
            seed=int(data.get("seed", 0)),
        )

    def as_dict(self):
        return {"world": self.world.as_dict(), "train": self.train.as_dict(),
                "eval": self.eval.as_dict(), "out_dir": self.out_dir,
                "seed": self.seed}

    def config_hash(self):
        payload = dict(self.as_dict())
        payload.pop("out_dir")  # where artifacts land does not change them
        digest = hashlib.blake2b(_dumps(payload).encode(), digest_size=8)
        return digest.hexdigest()


def load_run_config(path):
    if path is None:
        return RunConfig.defaults()
    try:
        with open(path) as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return RunConfig.from_dict(data)


# ----------------------------------------------------------------- traces

def run_traced_episode(env, policy, world, obs, method, config_hash, seed):
    """Roll one episode and capture the full line-record trace."""
    header = {"type": "header", "config_hash": config_hash, "seed": int(seed),
              "method": method, "world": env.config.as_dict()}
    steps = []
    ep_return = 0.0
    while world.outcome is Outcome.RUNNING:
        action = policy(env, world, obs)
        result = env.step(world, action)
        ep_return += result.reward
        steps.append({
            "type": "step",
            "t": float(world.t),
            "robot_pos": [float(v) for v in world.robot_pos],
            "robot_vel": [float(v) for v in world.robot_vel],
            "humans": [[float(world.h_pos[i, 0]), float(world.h_pos[i, 1]),
                        float(world.h_vel[i, 0]), float(world.h_vel[i, 1])]
                       for i in range(world.n_humans)],
            "action": {"heading": int(action.heading_index),
                       "beep": bool(action.beep)},
            "reward": float(result.reward),
            "d_min": float(result.info["min_dist"]),
        })
        obs = result.observation
    footer = {"type": "footer", "outcome": world.outcome.value,
              "return": float(ep_return), "steps": len(steps)}
    return {"header": header, "steps": steps, "footer": footer}


def serialize_trace(trace):
    lines = [_dumps(trace["header"])]
    lines += [_dumps(s) for s in trace["steps"]]
    lines.append(_dumps(trace["footer"]))
    return "\n".join(lines) + "\n"


def parse_trace(text):
    rows = [json.loads(line) for line in text.splitlines() if line]
    if len(rows) < 2 or rows[0].get("type") != "header" \
            or rows[-1].get("type") != "footer":
        raise FormatError("trace must start with a header and end with a footer")
    steps = rows[1:-1]
    if any(s.get("type") != "step" for s in steps):
        raise FormatError("malformed step record in trace")
    if rows[-1]["steps"] != len(steps):
        raise FormatError(f"footer claims {rows[-1]['steps']} steps, "
                          f"trace has {len(steps)}")
    return {"header": rows[0], "steps": steps, "footer": rows[-1]}


# ----------------------------------------------------------------- render

_SCALE = 40.0


def _svg_xy(x, y, half_width, depth, start_dist):
    sx = (x + half_width + 0.5) * _SCALE
    sy = (depth + 0.5 - y) * _SCALE
    return sx, sy


def render_trace_svg(trace):
    """Deterministic scene drawing: walls with the door gap, each human's
    path and final disc, the robot path and final disc, and a red marker at
    every position where the robot beeped."""
    world = trace["header"]["world"]
    hw = world["cell_width"] / 2.0
    depth = world["cell_depth"]
    gap = world["door_width"] / 2.0
    start = world["robot_start_dist"]
    r_h = world["agent_radius"]
    r_r = world["robot_radius"]

    def pt(x, y):
        sx, sy = _svg_xy(x, y, hw, depth, start)
        return f"{sx:.2f},{sy:.2f}"

    width = (2 * hw + 1.0) * _SCALE
    height = (depth + start + 2.0) * _SCALE
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
           f'height="{height:.0f}" viewBox="0 0 {width:.2f} {height:.2f}">',
           f'<rect width="{width:.2f}" height="{height:.2f}" fill="white"/>']

    wall_style = 'stroke="black" stroke-width="3" fill="none"'
    for a, b in (((-hw, 0.0), (-gap, 0.0)), ((gap, 0.0), (hw, 0.0)),
                 ((-hw, 0.0), (-hw, depth)), ((hw, 0.0), (hw, depth)),
                 ((-hw, depth), (hw, depth))):
        out.append(f'<polyline points="{pt(*a)} {pt(*b)}" {wall_style}/>')

    steps = trace["steps"]
    n_humans = len(steps[0]["humans"]) if steps else 0
    for i in range(n_humans):
        pts = " ".join(pt(s["humans"][i][0], s["humans"][i][1]) for s in steps)
        out.append(f'<polyline points="{pts}" stroke="#999999" '
                   f'stroke-width="1" fill="none"/>')
    for i in range(n_humans):
        hx, hy = steps[-1]["humans"][i][0], steps[-1]["humans"][i][1]
        sx, sy = _svg_xy(hx, hy, hw, depth, start)
        out.append(f'<circle cx="{sx:.2f}" cy="{sy:.2f}" '
                   f'r="{r_h * _SCALE:.2f}" fill="#bbbbbb" stroke="#555555"/>')

    if steps:
        # the pre-episode pose is not a step record; anchor the path at the
        # door-centerline start the world always uses
        pts = " ".join([pt(0.0, -start)]
                       + [pt(s["robot_pos"][0], s["robot_pos"][1])
                          for s in steps])
        out.append(f'<polyline points="{pts}" stroke="#1f77b4" '
                   f'stroke-width="2" fill="none"/>')
        rx, ry = steps[-1]["robot_pos"]
        sx, sy = _svg_xy(rx, ry, hw, depth, start)
        out.append(f'<circle cx="{sx:.2f}" cy="{sy:.2f}" '
                   f'r="{r_r * _SCALE:.2f}" fill="#1f77b4" '
                   f'fill-opacity="0.6" stroke="#1f77b4"/>')
        for s in steps:
            if s["action"]["beep"]:
                bx, by = s["robot_pos"]
                sx, sy = _svg_xy(bx, by, hw, depth, start)
                out.append(f'<circle cx="{sx:.2f}" cy="{sy:.2f}" r="6.00" '
                           f'fill="red"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ------------------------------------------------------------- commands

def _effective(config, args):
    """--seed/--out override the config file; the seed feeds training."""
    if args.seed is not None:
        config.seed = args.seed
        config.train = replace(config.train, seed=args.seed)
    if args.out is not None:
        config.out_dir = args.out
    return config


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _build_policy(method, weights_path):
    if method == "orca":
        return make_orca_policy()
    if method not in LEARNED_METHODS:
        raise ConfigError(f"unknown method {method!r}; "
                          f"choose from {', '.join(ALL_METHODS)}")
    if weights_path is None or not Path(weights_path).exists():
        raise ConfigError(f"method {method} needs a weights file "
                          f"(got {weights_path})")
    net = load_weights(weights_path)
    return make_value_policy(net, beep_enabled=(method == "rl-beep"))


def cmd_train(args):
    config = _effective(load_run_config(args.config), args)
    if args.episodes is not None:
        if args.episodes < 0:
            raise ConfigError(f"--episodes must be >= 0, got {args.episodes}")
        config.train = replace(config.train, episodes=args.episodes)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tc, wc = config.train, config.world

    print(f"collecting {tc.il_demos} demonstrations", flush=True)
    demos = collect_demonstrations(tc, wc, tc.il_demos)
    net = ValueNet(seed=derive_seed(tc.seed, "init"))
    log = []
    imitation_fit(net, demos, tc, log=log)
    if log:
        print(f"imitation done, final loss {log[-1]['loss']:.6f}", flush=True)
    save_weights(net, out / "il_checkpoint.navf")

    def progress(rec):
        if (rec["episode"] + 1) % 100 == 0:
            print(f"episode {rec['episode'] + 1}/{tc.episodes} "
                  f"eps={rec['epsilon']:.3f} outcome={rec['outcome']} "
                  f"return={rec['return']:.3f}", flush=True)

    rl_train(net, tc, wc, out_dir=str(out), log=log, progress=progress)
    save_weights(net, out / "weights.navf")
    lines = [_dumps({"type": "header", "config_hash": config.config_hash(),
                     "seed": tc.seed, "method": "train"})]
    lines += [_dumps(rec) for rec in log]
    lines.append(_dumps({"type": "footer", "records": len(log)}))
    _write(out / "train_log.jsonl", "\n".join(lines) + "\n")
    print(f"wrote {out / 'weights.navf'}")
    return 0


def cmd_eval(args):
    config = _effective(load_run_config(args.config), args)
    out = Path(config.out_dir)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise ConfigError("--methods must name at least one method")
    crowds = ([int(c) for c in args.crowd.split(",")] if args.crowd
              else list(config.eval.crowd_sizes))
    n_cases = args.cases if args.cases is not None else config.eval.n_cases
    if n_cases < 1:
        raise ConfigError(f"--cases must be >= 1, got {n_cases}")

    weights = args.weights or str(out / "weights.navf")
    rows = []
    for method in methods:
        policy = _build_policy(method, weights)
        for crowd in crowds:
            wc = replace(config.world, n_humans=crowd).validate()
            m = evaluate(policy, wc, n_cases, config.seed,
                         threads=args.threads)
            rows.append((method, crowd, m))
            _write(out / f"metrics_{method}_{crowd}.csv",
                   compare_report([(method, crowd, m)]).render_csv())
    report = compare_report(rows)
    _write(out / "report.csv", report.render_csv())
    _write(out / "report.txt", report.render_text())
    print(report.render_text(), end="")
    return 0


def _scenario_world(env, scenario, seed):
    if scenario == "empty":
        return env.reset_with_humans(np.zeros((0, 2)))
    if scenario == "blocked":
        return env.reset_with_humans(door_blocked_suite(1, seed=seed)[0])
    if scenario == "random":
        return env.reset(seed=seed)
    raise ConfigError(f"unknown scenario {scenario!r}; "
                      f"choose empty, blocked, or random")


def cmd_rollout(args):
    config = _effective(load_run_config(args.config), args)
    out = Path(config.out_dir)
    policy = _build_policy(args.method,
                           args.weights or str(out / "weights.navf"))
    env = ElevatorEnv(config.world)
    world, obs = _scenario_world(env, args.scenario, config.seed)
    trace = run_traced_episode(env, policy, world, obs, args.method,
                               config.config_hash(), config.seed)
    name = f"trace_{args.method}_{args.scenario}_{config.seed}"
    _write(out / f"{name}.jsonl", serialize_trace(trace))
    print(f"outcome={trace['footer']['outcome']} "
          f"return={trace['footer']['return']:.4f} "
          f"steps={trace['footer']['steps']}")
    if args.render:
        _write(out / f"{name}.svg", render_trace_svg(trace))
        print(f"wrote {out / (name + '.svg')}")
    return 0


def cmd_demo_collect(args):
    config = _effective(load_run_config(args.config), args)
    out = Path(config.out_dir)
    count = args.count if args.count is not None else config.train.il_demos
    if count < 1:
        raise ConfigError(f"--count must be >= 1, got {count}")
    demos = collect_demonstrations(config.train, config.world, count)
    lines = [_dumps({"type": "header", "config_hash": config.config_hash(),
                     "seed": config.train.seed, "method": "demo-collect"})]
    for i, episode in enumerate(demos):
        lines.append(_dumps({
            "type": "episode", "index": i, "pairs": len(episode),
            "first_target": episode[0].target,
            "last_target": episode[-1].target}))
    lines.append(_dumps({"type": "footer", "episodes": len(demos)}))
    _write(out / "demos.jsonl", "\n".join(lines) + "\n")
    print(f"collected {len(demos)} demonstration episodes")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="elevnav",
        description="Train, evaluate, and render elevator-boarding policies.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run config path")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for evaluation")

    p = sub.add_parser("train", help="imitation then reinforcement training")
    common(p)
    p.add_argument("--episodes", type=int, help="override RL episode count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="batch evaluation and comparison report")
    common(p)
    p.add_argument("--weights", help="weights file for learned methods")
    p.add_argument("--methods", default="orca",
                   help="comma list from: " + ", ".join(ALL_METHODS))
    p.add_argument("--crowd", help="comma list of crowd sizes")
    p.add_argument("--cases", type=int, help="cases per method and crowd")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rollout", help="single traced episode (optional SVG)")
    common(p)
    p.add_argument("--weights", help="weights file for learned methods")
    p.add_argument("--method", default="orca",
                   help="one of: " + ", ".join(ALL_METHODS))
    p.add_argument("--scenario", default="random",
                   help="empty, blocked, or random")
    p.add_argument("--render", action="store_true", help="also write an SVG")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("demo-collect", help="collect baseline demonstrations")
    common(p)
    p.add_argument("--count", type=int, help="episodes to retain")
    p.set_defaults(func=cmd_demo_collect)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except TrainingFaultError as e:
        print(f"training fault: {e} (checkpoints preserved)", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
