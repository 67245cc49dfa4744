"""Two-phase value-net training: imitation on successful avoidance-baseline
episodes, then epsilon-greedy reinforcement with experience replay and a
periodically synced target network.

Rollout and minibatch updates alternate, so the parameters are only ever
mutated between episodes' greedy evaluations.
"""

import math
from dataclasses import dataclass, fields

import numpy as np

from . import navformer
from .core import (ConfigError, Outcome, TrainingFaultError, derive_seed,
                   discounted_return, step_discount)
from .env import ElevatorEnv
from .navformer import (backward_batch_cached, forward, forward_batch_cached,
                        save_weights)
from .policy import greedy_action, orca_robot_policy


@dataclass
class TrainConfig:
    il_lr: float = 0.01
    il_epochs: int = 50
    il_demos: int = 3000
    rl_lr: float = 0.001
    gamma: float = 0.9
    batch: int = 100
    episodes: int = 10000
    eps_start: float = 0.5
    eps_end: float = 0.1
    eps_decay_episodes: int = 5000
    target_sync_interval: int = 50
    seed: int = 0
    momentum: float = 0.9
    replay_capacity: int = 100000
    checkpoint_interval: int = 500
    # 0 means the full ceil(fill/batch) pass after every episode
    max_batches_per_episode: int = 0
    # global-norm gradient clip; raw-coordinate features make early minibatch
    # gradients heavy-tailed enough to diverge at the default lr (0 disables)
    grad_clip: float = 10.0
    use_replay: bool = True
    use_target_net: bool = True

    def validate(self):
        if not self.il_lr > 0 or not self.rl_lr > 0:
            raise ConfigError(f"learning rates must be positive, got "
                              f"il_lr={self.il_lr} rl_lr={self.rl_lr}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.il_demos < 1:
            raise ConfigError(f"il_demos must be >= 1, got {self.il_demos}")
        if self.il_epochs < 0 or self.episodes < 0:
            raise ConfigError("epoch and episode counts must be >= 0")
        if not (0.0 <= self.eps_end <= self.eps_start <= 1.0):
            raise ConfigError(f"need 0 <= eps_end <= eps_start <= 1, got "
                              f"{self.eps_end}, {self.eps_start}")
        if self.eps_decay_episodes < 1:
            raise ConfigError("eps_decay_episodes must be >= 1")
        if self.target_sync_interval < 1 or self.checkpoint_interval < 1:
            raise ConfigError("sync and checkpoint intervals must be >= 1")
        if self.replay_capacity < 1:
            raise ConfigError("replay_capacity must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.max_batches_per_episode < 0:
            raise ConfigError("max_batches_per_episode must be >= 0")
        if self.grad_clip < 0:
            raise ConfigError(f"grad_clip must be >= 0, got {self.grad_clip}")
        return self

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown train config keys: {', '.join(unknown)}")
        return cls(**data).validate()


class Transition:
    """One training pair; the flattened arrays are cached for batching."""

    __slots__ = ("state", "target", "rows", "robot")

    def __init__(self, state, target):
        target = float(target)
        if not math.isfinite(target):
            raise TrainingFaultError(f"non-finite training target {target}")
        self.state = state
        self.target = target
        self.rows = state.rows()
        self.robot = state.robot_vec()


class ReplayBuffer:
    """Fixed-capacity FIFO ring; minibatches sample uniformly without
    replacement."""

    def __init__(self, capacity=100000):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self._items = []
        self._cursor = 0

    def __len__(self):
        return len(self._items)

    def push(self, transition):
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._cursor] = transition
            self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size, rng):
        k = min(int(batch_size), len(self._items))
        idx = rng.choice(len(self._items), size=k, replace=False)
        return [self._items[i] for i in idx]

    def clear(self):
        self._items = []
        self._cursor = 0


def epsilon_schedule(episode, config):
    """Linear eps_start -> eps_end over the decay window, flat after."""
    frac = min(max(episode, 0), config.eps_decay_episodes) / config.eps_decay_episodes
    return config.eps_start - (config.eps_start - config.eps_end) * frac


def td_target(reward, next_state, done, target_net, gamma, dt, v_pref):
    if done:
        return float(reward)
    value, _ = forward(target_net, next_state)
    return float(reward) + step_discount(gamma, dt, v_pref) * value


def collect_demonstrations(config, world_config, count):
    """Successful baseline episodes as (state, return-to-go) pairs.

    Rolls seeded random worlds under orca_robot_policy and keeps episodes
    that enter; a sub-5% success yield across a 10000-episode probe means
    the crowd is too dense to demonstrate and raises ConfigError.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    env = ElevatorEnv(world_config)
    gamma, dt, v_pref = config.gamma, world_config.dt, world_config.v_pref
    episodes = []
    attempts = successes = 0
    while successes < count:
        if attempts >= 10000 and successes / attempts < 0.05:
            raise ConfigError(
                f"demonstration yield {successes}/{attempts} below 5%; "
                f"crowd too dense for the baseline to demonstrate")
        world, obs = env.reset(seed=derive_seed(config.seed, "demo", attempts))
        attempts += 1
        states, rewards = [], []
        while world.outcome is Outcome.RUNNING:
            action = orca_robot_policy(world, world_config)
            states.append(obs)
            result = env.step(world, action)
            rewards.append(result.reward)
            obs = result.observation
        if world.outcome is not Outcome.SUCCESS:
            continue
        successes += 1
        episodes.append([
            Transition(s, discounted_return(rewards, gamma, dt, v_pref, i))
            for i, s in enumerate(states)])
    return episodes


def _grouped_batch_update(net, batch, lr, momentum, grad_clip):
    """One SGD step on the MSE over a minibatch; states are grouped by crowd
    size so each group runs as one batched pass.  Returns the pre-update
    loss."""
    by_n = {}
    for tr in batch:
        by_n.setdefault(tr.rows.shape[0], []).append(tr)
    total = net.zero_grads()
    sq_err = 0.0
    b = len(batch)
    for group in by_n.values():
        X = np.stack([tr.rows for tr in group])
        R = np.stack([tr.robot for tr in group])
        y = np.array([tr.target for tr in group])
        values, cache = forward_batch_cached(net, X, R)
        err = values - y
        sq_err += float(err @ err)
        grads = backward_batch_cached(net, cache, 2.0 * err / b)
        for k in total:
            total[k] += grads[k]
    if grad_clip > 0:
        norm = math.sqrt(sum(float((g * g).sum()) for g in total.values()))
        if norm > grad_clip:
            scale = grad_clip / norm
            for g in total.values():
                g *= scale
    navformer.sgd_step(net, total, lr, momentum)
    return sq_err / b


def imitation_fit(net, demos, config, log=None):
    """Epochs of shuffled minibatch MSE regression onto the demo targets."""
    pairs = [tr for episode in demos for tr in episode]
    if not pairs:
        raise ValueError("imitation_fit needs a non-empty demo set")
    rng = np.random.default_rng(derive_seed(config.seed, "il"))
    for epoch in range(config.il_epochs):
        order = rng.permutation(len(pairs))
        losses = []
        for start in range(0, len(pairs), config.batch):
            batch = [pairs[i] for i in order[start:start + config.batch]]
            losses.append(_grouped_batch_update(net, batch, config.il_lr,
                                                config.momentum,
                                                config.grad_clip))
        epoch_loss = float(np.mean(losses))
        if epoch_loss > 1e6:
            raise TrainingFaultError(
                f"imitation loss diverged to {epoch_loss:.3e} at epoch {epoch}")
        if log is not None:
            log.append({"phase": "il", "epoch": epoch, "loss": epoch_loss})
    return net


def rl_train(net, config, world_config, out_dir=None, log=None, progress=None):
    """Epsilon-greedy value iteration with replay.

    Per episode: roll out greedy_action at the scheduled epsilon, push
    (state, one-step TD target) pairs frozen against the current target
    net, then run the minibatch pass.  Checkpoints land in out_dir every
    checkpoint_interval episodes so a training fault is resumable.
    progress, when given, receives each episode record as it is produced.
    """
    env = ElevatorEnv(world_config)
    target_net = net.copy() if config.use_target_net else net
    replay = ReplayBuffer(config.replay_capacity)
    dt, v_pref = world_config.dt, world_config.v_pref
    fault_count = 0

    for episode in range(config.episodes):
        eps = epsilon_schedule(episode, config)
        act_rng = np.random.default_rng(derive_seed(config.seed, "rl", episode, "act"))
        samp_rng = np.random.default_rng(derive_seed(config.seed, "rl", episode, "samp"))
        world, obs = env.reset(seed=derive_seed(config.seed, "rl", episode, "world"))
        if not config.use_replay:
            replay.clear()

        ep_return, steps = 0.0, 0
        while world.outcome is Outcome.RUNNING:
            decision = greedy_action(net, env, obs, world, eps, act_rng,
                                     beep_enabled=True, gamma=config.gamma)
            result = env.step(world, decision.action)
            target = td_target(result.reward, result.observation, result.done,
                               target_net, config.gamma, dt, v_pref)
            replay.push(Transition(obs, target))
            obs = result.observation
            ep_return += result.reward
            steps += 1

        n_batches = math.ceil(len(replay) / config.batch)
        if config.max_batches_per_episode:
            n_batches = min(n_batches, config.max_batches_per_episode)
        losses = []
        for _ in range(n_batches):
            batch = replay.sample(config.batch, samp_rng)
            try:
                losses.append(_grouped_batch_update(net, batch, config.rl_lr,
                                                    config.momentum,
                                                    config.grad_clip))
            except TrainingFaultError:
                fault_count += 1

        if config.use_target_net and (episode + 1) % config.target_sync_interval == 0:
            target_net = net.copy()
        if out_dir is not None and (episode + 1) % config.checkpoint_interval == 0:
            save_weights(net, f"{out_dir}/checkpoint_{episode + 1:06d}.navf")
        record = {
            "phase": "rl", "episode": episode,
            "outcome": world.outcome.value, "return": ep_return,
            "steps": steps, "epsilon": eps,
            "loss": float(np.mean(losses)) if losses else None,
            "faults": fault_count,
        }
        if log is not None:
            log.append(record)
        if progress is not None:
            progress(record)
    return net, log if log is not None else []
