"""Centralized-critic actor-critic training (MADDPG style) in plain numpy.

Each robot has a critic over the joint observation and joint action. Actors
map a robot's own observation to its command vector and are usually shared
between robots. Critics use Adam, actors plain SGD.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .allocation import PolicyCommand
from .harness import Episode, ScenarioConfig
from .nn import MlpParams, backward, forward, init_mlp, save_checkpoint, sigmoid
from .policy import action_size, build_observation, neighbor_objects, observation_size, random_policy
from .world import WorldState

log = logging.getLogger(__name__)

DELIVERY_REWARD = 10.0
SHAPING_WEIGHT = 0.1
STEP_PENALTY = 0.01


class TrainingDivergence(RuntimeError):
    """A loss or parameter became non-finite."""


@dataclass
class TrainConfig:
    episodes: int = 500
    steps_per_episode: int = 100
    batch_size: int = 128
    gamma: float = 0.95
    capacity: int = 100_000
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    tau: float = 0.01
    noise: float = 0.1
    hidden: int = 64
    hidden_layers: int = 4
    update_every: int = 5
    seed: int = 0
    shared_actor: bool = True

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        """Long-run settings: 300-step episodes, discount 0.99, batch 1024, 50k episodes."""
        base = dict(episodes=50_000, steps_per_episode=300, gamma=0.99, batch_size=1024,
                    hidden_layers=4)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        extra = set(doc) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown training keys: {sorted(extra)}")
        return cls(**doc)


@dataclass
class Transition:
    obs: np.ndarray        # (N, obs_dim)
    actions: np.ndarray    # (N, act_dim)
    rewards: np.ndarray    # (N,)
    next_obs: np.ndarray   # (N, obs_dim)
    done: bool


class ReplayBuffer:
    """Fixed-capacity FIFO ring of joint transitions."""

    def __init__(self, capacity: int, n_agents: int, obs_dim: int, act_dim: int):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, n_agents, obs_dim))
        self.actions = np.zeros((capacity, n_agents, act_dim))
        self.rewards = np.zeros((capacity, n_agents))
        self.next_obs = np.zeros((capacity, n_agents, obs_dim))
        self.done = np.zeros(capacity)
        self.head = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, t: Transition) -> None:
        k = self.head
        self.obs[k], self.actions[k], self.rewards[k] = t.obs, t.actions, t.rewards
        self.next_obs[k], self.done[k] = t.next_obs, float(t.done)
        self.head = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        """Uniform batch, without replacement within the batch."""
        if batch_size > self.size:
            raise ValueError(f"batch of {batch_size} from buffer holding {self.size}")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return {"obs": self.obs[idx], "actions": self.actions[idx], "rewards": self.rewards[idx],
                "next_obs": self.next_obs[idx], "done": self.done[idx]}


class Adam:
    def __init__(self, arrays, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays, grads) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def sgd_step(arrays, grads, lr: float) -> None:
    for a, g in zip(arrays, grads):
        a -= lr * g


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> None:
    for t, o in zip(target.arrays(), online.arrays()):
        t *= 1.0 - tau
        t += tau * o


def reward(world_before: WorldState, world_after: WorldState, robot_id: int,
           target: int | None = None) -> float:
    """Delivery bonus shared by all robots, progress toward the selected object, time cost."""
    new = np.count_nonzero(world_after.obj_delivered & ~world_before.obj_delivered)
    r = DELIVERY_REWARD * new - STEP_PENALTY
    if target is not None and target >= 0:
        d0 = np.linalg.norm(world_before.robot_pos[robot_id] - world_before.obj_pos[target])
        d1 = np.linalg.norm(world_after.robot_pos[robot_id] - world_after.obj_pos[target])
        r += SHAPING_WEIGHT * (d0 - d1)
    return float(r)


@dataclass
class Learner:
    actors: list
    critics: list
    target_actors: list
    target_critics: list
    critic_opts: list
    n_agents: int
    obs_dim: int
    act_dim: int
    shared_actor: bool = True

    @classmethod
    def create(cls, n_agents: int, obs_dim: int, act_dim: int, cfg: TrainConfig,
               rng: np.random.Generator) -> "Learner":
        hidden = [cfg.hidden] * cfg.hidden_layers
        n_actors = 1 if cfg.shared_actor else n_agents
        actors = [init_mlp([obs_dim, *hidden, act_dim], rng, "sigmoid") for _ in range(n_actors)]
        critic_in = n_agents * (obs_dim + act_dim)
        critics = [init_mlp([critic_in, *hidden, 1], rng, "linear", last_scale=np.sqrt(1.0 / cfg.hidden))
                   for _ in range(n_agents)]
        return cls(actors, critics, [a.copy() for a in actors], [c.copy() for c in critics],
                   [Adam(c.arrays(), cfg.critic_lr) for c in critics],
                   n_agents, obs_dim, act_dim, cfg.shared_actor)

    def actor_of(self, i: int, target: bool = False) -> MlpParams:
        pool = self.target_actors if target else self.actors
        return pool[0] if self.shared_actor else pool[i]


def _critic_input(obs, actions):
    b = obs.shape[0]
    return np.concatenate([obs.reshape(b, -1), actions.reshape(b, -1)], axis=1)


def maddpg_update(learner: Learner, batch: dict, cfg: TrainConfig) -> dict:
    """One critic and actor step per agent followed by soft target updates.

    Returns the mean critic TD loss and actor objective for diagnostics.
    """
    obs, act, rew = batch["obs"], batch["actions"], batch["rewards"]
    nxt, done = batch["next_obs"], batch["done"]
    b, n = obs.shape[0], learner.n_agents

    next_act = np.stack([forward(learner.actor_of(j, target=True), nxt[:, j]) for j in range(n)], axis=1)
    x_next = _critic_input(nxt, next_act)
    x = _critic_input(obs, act)
    critic_losses = []
    for i in range(n):
        q_next = forward(learner.target_critics[i], x_next)[:, 0]
        y = rew[:, i] + cfg.gamma * (1.0 - done) * q_next
        q, cache = forward(learner.critics[i], x, return_cache=True)
        err = q[:, 0] - y
        loss = float(np.mean(err ** 2))
        if not np.isfinite(loss):
            raise TrainingDivergence(f"critic {i} loss is {loss}; |y| max {np.abs(y).max()}")
        grads, _ = backward(learner.critics[i], cache, (2.0 * err / b)[:, None])
        learner.critic_opts[i].step(learner.critics[i].arrays(), grads)
        critic_losses.append(loss)

    obs_w = n * learner.obs_dim
    actor_objs = []
    actor_grads = [None] * len(learner.actors)
    for i in range(n):
        actor = learner.actor_of(i)
        a_i, a_cache = forward(actor, obs[:, i], return_cache=True)
        joint = act.copy()
        joint[:, i] = a_i
        xi = _critic_input(obs, joint)
        q, c_cache = forward(learner.critics[i], xi, return_cache=True)
        actor_objs.append(float(np.mean(q)))
        # ascend Q: minimize -mean(Q)
        _, g_in = backward(learner.critics[i], c_cache, np.full((b, 1), -1.0 / b))
        lo = obs_w + i * learner.act_dim
        g_a = g_in[:, lo:lo + learner.act_dim]
        grads, _ = backward(actor, a_cache, g_a)
        slot = 0 if learner.shared_actor else i
        if actor_grads[slot] is None:
            actor_grads[slot] = grads
        else:
            actor_grads[slot] = [g0 + g1 for g0, g1 in zip(actor_grads[slot], grads)]
    for actor, grads in zip(learner.actors, actor_grads):
        if learner.shared_actor:
            grads = [g / n for g in grads]
        sgd_step(actor.arrays(), grads, cfg.actor_lr)

    for a, ta in zip(learner.actors, learner.target_actors):
        soft_update(ta, a, cfg.tau)
    for c, tc in zip(learner.critics, learner.target_critics):
        soft_update(tc, c, cfg.tau)
    if not all(p.all_finite() for p in learner.actors + learner.critics):
        raise TrainingDivergence("non-finite network parameters after update")
    return {"critic_loss": float(np.mean(critic_losses)), "actor_q": float(np.mean(actor_objs))}


def _observe(ep: Episode):
    e = ep.ledger.values()
    if ep.scenario.ablation == "no_e":
        e = np.zeros_like(e)
    return [build_observation(ep.world, ep.state, e, i, ep.scenario.k)
            for i in range(ep.world.robot_pos.shape[0])]


def rollout(scenario: ScenarioConfig, seed: int, act: Callable, on_step: Callable | None = None):
    """Run one episode where ``act(step, observations)`` returns the joint action.

    Returns the per-robot cumulative rewards.
    """
    ep = Episode(scenario, seed, policy=None)
    totals = np.zeros(scenario.n_initial)
    obs = _observe(ep)
    while not ep.done:
        actions = act(ep.step_index, obs)
        cmds = [PolicyCommand.from_action(a, o.neighbor_object_ids) for a, o in zip(actions, obs)]
        before = ep.world
        ep.step(commands=cmds)
        rew = np.array([reward(before, ep.world, i, int(ep.state.target[i]))
                        for i in range(len(totals))])
        totals += rew
        nxt = _observe(ep)
        if on_step is not None:
            on_step(Transition(np.stack([o.vector for o in obs]), np.asarray(actions), rew,
                               np.stack([o.vector for o in nxt]), ep.done))
        obs = nxt
    return totals


def random_rewards(scenario: ScenarioConfig, episodes: int, seed: int = 0) -> np.ndarray:
    """Mean-over-robots cumulative reward of the random policy, one value per episode."""
    out = []
    k = scenario.k
    for e in range(episodes):
        ep_seed = seed + e

        def act(step, obs, ep_seed=ep_seed):
            return [random_policy(ep_seed, i, step, o.neighbor_object_ids).to_action()
                    for i, o in enumerate(obs)]
        out.append(rollout(scenario, ep_seed, act).mean())
    return np.array(out)


@dataclass
class TrainResult:
    learner: Learner
    curve: list = field(default_factory=list)
    losses: list = field(default_factory=list)


def write_curve(curve: list, path, n_robots: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = n_robots
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "cumulative_reward_mean"] + [f"robot_{i}" for i in range(n)])
        for row in curve:
            w.writerow([row["episode"], repr(row["mean"])] + [repr(v) for v in row["per_robot"]])
    return path


def train(cfg: TrainConfig, scenario: ScenarioConfig, out_dir=None) -> TrainResult:
    """Train on ``scenario``; deterministic for a given ``cfg.seed``.

    With ``out_dir`` the reward curve goes to ``reward_curve.csv`` and the
    actors to ``checkpoint.json``. On divergence the last checkpoint is still
    written before the error propagates.
    """
    if scenario.additions:
        raise ValueError("training scenarios must keep a fixed robot count")
    scenario = replace(scenario, steps=cfg.steps_per_episode, stop_when_done=True)
    rng = np.random.default_rng(cfg.seed)
    n, k = scenario.n_initial, scenario.k
    obs_dim, act_dim = observation_size(k), action_size(k)
    learner = Learner.create(n, obs_dim, act_dim, cfg, rng)
    buf = ReplayBuffer(cfg.capacity, n, obs_dim, act_dim)
    result = TrainResult(learner)
    steps_seen = 0

    def store(t):
        nonlocal steps_seen
        buf.add(t)
        steps_seen += 1
        if len(buf) >= cfg.batch_size and steps_seen % cfg.update_every == 0:
            result.losses.append(maddpg_update(learner, buf.sample(cfg.batch_size, rng), cfg))

    try:
        for e in range(cfg.episodes):
            sigma = cfg.noise * (1.0 - e / max(cfg.episodes, 1))

            def act(step, obs):
                out = []
                for i, o in enumerate(obs):
                    logits = forward(learner.actor_of(i), o.vector, pre_output=True)
                    out.append(sigmoid(logits + sigma * rng.standard_normal(act_dim)))
                return out

            totals = rollout(scenario, cfg.seed * 1_000_003 + e, act, store)
            result.curve.append({"episode": e, "mean": float(totals.mean()),
                                 "per_robot": [float(v) for v in totals]})
            if (e + 1) % 50 == 0:
                recent = np.mean([c["mean"] for c in result.curve[-50:]])
                log.info("episode %d: mean reward over last 50 = %.3f", e + 1, recent)
    finally:
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            write_curve(result.curve, out / "reward_curve.csv", n)
            save_checkpoint(out / "checkpoint.json", learner.actors,
                            {"k": k, "episodes_done": len(result.curve), "seed": cfg.seed})
    return result
