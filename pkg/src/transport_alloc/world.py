"""Discrete-time kinematic world: robots, transport objects and their goals.

Robots move in straight lines at constant speed. An object moves toward its
goal only while at least ``weight`` robots are connected to it, carrying
those robots along. Everything is plain numpy; ``step_world`` never mutates
its input.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

# speeds at or below this count as stationary
MOVING_EPS = 1e-9


@dataclass(frozen=True)
class KinematicsParams:
    delta: float = 0.1
    robot_speed: float = 0.05
    transport_speed: float = 0.05
    goal_tolerance: float = 0.05
    arena_half_width: float = 1.0
    dt: float = 1.0

    def __post_init__(self):
        for name in ("delta", "robot_speed", "transport_speed",
                     "goal_tolerance", "arena_half_width", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class RobotBody:
    id: int
    position: np.ndarray
    connected_to: Optional[int]
    active: bool


@dataclass(frozen=True)
class TransportObject:
    id: int
    position: np.ndarray
    goal: np.ndarray
    velocity: np.ndarray
    weight: int
    delivered: bool


@dataclass
class WorldState:
    """Array-backed world. Row ``i`` of every robot array is robot ``i``.

    ``robot_home`` is where a robot spawned; idle robots return there.
    ``robot_wait`` counts consecutive steps a robot has spent connected to a
    stationary object. ``robot_link`` is the object each robot was connected
    to after the last step (-1 for none).
    """

    robot_pos: np.ndarray
    robot_home: np.ndarray
    robot_active: np.ndarray
    robot_wait: np.ndarray
    robot_link: np.ndarray
    obj_pos: np.ndarray
    obj_goal: np.ndarray
    obj_vel: np.ndarray
    obj_weight: np.ndarray
    obj_delivered: np.ndarray
    params: KinematicsParams = field(default_factory=KinematicsParams)
    time: float = 0.0

    @property
    def n_robots(self) -> int:
        """Number of active robots (N)."""
        return int(self.robot_active.sum())

    @property
    def n_objects(self) -> int:
        return len(self.obj_weight)

    @property
    def robots(self) -> list[RobotBody]:
        links = attachments(self)
        return [RobotBody(i, self.robot_pos[i].copy(),
                          None if links[i] < 0 else int(links[i]),
                          bool(self.robot_active[i]))
                for i in range(len(self.robot_pos))]

    @property
    def objects(self) -> list[TransportObject]:
        return [TransportObject(l, self.obj_pos[l].copy(), self.obj_goal[l].copy(),
                                self.obj_vel[l].copy(), int(self.obj_weight[l]),
                                bool(self.obj_delivered[l]))
                for l in range(self.n_objects)]

    def copy(self) -> "WorldState":
        return replace(self, **{k: getattr(self, k).copy() for k in _ARRAY_FIELDS})


_ARRAY_FIELDS = ("robot_pos", "robot_home", "robot_active", "robot_wait", "robot_link", "obj_pos",
                 "obj_goal", "obj_vel", "obj_weight", "obj_delivered")


def make_world(robot_positions, object_positions, goals, weights,
               params: KinematicsParams | None = None) -> WorldState:
    """Build a world from explicit coordinates (all robots active, objects at rest)."""
    rpos = np.asarray(robot_positions, dtype=float).reshape(-1, 2)
    opos = np.asarray(object_positions, dtype=float).reshape(-1, 2)
    goals = np.asarray(goals, dtype=float).reshape(-1, 2)
    weights = np.asarray(weights, dtype=int).reshape(-1)
    if not (len(opos) == len(goals) == len(weights)):
        raise ValueError("object positions, goals and weights must have equal length")
    if np.any(weights < 1):
        raise ValueError("object weights must be >= 1")
    if not (np.all(np.isfinite(rpos)) and np.all(np.isfinite(opos)) and np.all(np.isfinite(goals))):
        raise ValueError("coordinates must be finite")
    return WorldState(
        robot_pos=rpos.copy(), robot_home=rpos.copy(),
        robot_active=np.ones(len(rpos), dtype=bool),
        robot_wait=np.zeros(len(rpos), dtype=int),
        robot_link=np.full(len(rpos), -1, dtype=int),
        obj_pos=opos.copy(), obj_goal=goals.copy(), obj_vel=np.zeros_like(opos),
        obj_weight=weights.copy(), obj_delivered=np.zeros(len(opos), dtype=bool),
        params=params or KinematicsParams(),
    )


def _uniform_points(rng: np.random.Generator, count: int, half: float,
                    avoid: np.ndarray | None = None, clearance: float = 0.0) -> np.ndarray:
    out = np.empty((count, 2))
    for k in range(count):
        while True:
            p = rng.uniform(-half, half, size=2)
            if avoid is None or len(avoid) == 0 or \
                    np.min(np.hypot(*(avoid - p).T)) > clearance:
                break
        out[k] = p
    return out


def random_world(n_robots: int, weights: Sequence[int], seed,
                 params: KinematicsParams | None = None) -> WorldState:
    """Objects, goals and robots drawn uniformly in the arena.

    Robots are rejected if they would spawn connected to an object.
    """
    params = params or KinematicsParams()
    rng = np.random.default_rng(seed)
    half = params.arena_half_width
    m = len(weights)
    opos = rng.uniform(-half, half, size=(m, 2))
    goals = rng.uniform(-half, half, size=(m, 2))
    rpos = _uniform_points(rng, n_robots, half, avoid=opos, clearance=params.delta)
    return make_world(rpos, opos, goals, weights, params)


def attachments(world: WorldState) -> np.ndarray:
    """Object each robot is connected to, or -1.

    A robot can hold only one object: the nearest undelivered object within
    ``delta`` (lowest id on ties). A robot being carried keeps its object
    even if the load passes close to another one.
    """
    n, m = len(world.robot_pos), world.n_objects
    out = np.full(n, -1, dtype=int)
    if n == 0 or m == 0:
        return out
    diff = world.robot_pos[:, None, :] - world.obj_pos[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    dist[:, world.obj_delivered] = np.inf
    dist[~world.robot_active, :] = np.inf
    nearest = np.argmin(dist, axis=1)
    rows = np.arange(n)
    ok = dist[rows, nearest] <= world.params.delta
    out[ok] = nearest[ok]
    prev = world.robot_link
    pv = world.obj_vel[np.maximum(prev, 0)]
    moving = np.hypot(pv[:, 0], pv[:, 1]) > MOVING_EPS
    keep = (prev >= 0) & moving & (dist[rows, np.maximum(prev, 0)] <= world.params.delta)
    out[keep] = prev[keep]
    return out


def connection_counts(world: WorldState, links: np.ndarray | None = None) -> np.ndarray:
    """|C_l| for every object."""
    if links is None:
        links = attachments(world)
    return np.bincount(links[links >= 0], minlength=world.n_objects)


def connection_set(world: WorldState, object_id: int) -> set[int]:
    """Ids of active robots connected to ``object_id``."""
    if not isinstance(object_id, (int, np.integer)) or not 0 <= object_id < world.n_objects:
        raise ValueError(f"unknown object id {object_id!r}")
    links = attachments(world)
    return {int(i) for i in np.flatnonzero(links == object_id)}


def transporting(world: WorldState, links: np.ndarray | None = None):
    """Return (links, counts, movable) where ``movable[l]`` means |C_l| >= w_l."""
    if links is None:
        links = attachments(world)
    counts = connection_counts(world, links)
    movable = (~world.obj_delivered) & (counts >= world.obj_weight)
    return links, counts, movable


def _advance(pos: np.ndarray, dest: np.ndarray, max_step: float) -> np.ndarray:
    """Straight-line move of each row toward ``dest`` without overshoot."""
    d = dest - pos
    dist = np.hypot(d[:, 0], d[:, 1])
    scale = np.where(dist > max_step, max_step / np.where(dist > 0, dist, 1.0), 1.0)
    return pos + d * scale[:, None]


def step_world(world: WorldState, targets: Sequence[Optional[int]],
               links: np.ndarray | None = None) -> WorldState:
    """Advance the world by one sampling period.

    ``targets[i]`` is the object robot ``i`` is heading for; ``None`` sends an
    idle robot back to its spawn point. Robots connected to a transportable
    object ignore their target and move with the object. ``links`` may pass
    in a precomputed ``attachments(world)``.
    """
    p = world.params
    n, m = len(world.robot_pos), world.n_objects
    if len(targets) != n:
        raise ValueError(f"expected {n} targets, got {len(targets)}")
    tgt = np.full(n, -1, dtype=int)
    for i, t in enumerate(targets):
        if t is None:
            continue
        if isinstance(t, (bool, np.bool_)) or not isinstance(t, (int, np.integer)) or not 0 <= t < m:
            raise ValueError(f"malformed target {t!r} for robot {i}")
        tgt[i] = t

    new = world.copy()
    links, _, movable = transporting(world, links)
    carried = (links >= 0) & movable[np.maximum(links, 0)] & world.robot_active

    # objects with enough robots head for their goal and drag their robots
    new.obj_vel[:] = 0.0
    if movable.any():
        idx = np.flatnonzero(movable)
        moved = _advance(world.obj_pos[idx], world.obj_goal[idx], p.transport_speed * p.dt)
        disp = moved - world.obj_pos[idx]
        new.obj_pos[idx] = moved
        new.obj_vel[idx] = disp / p.dt
        shift = np.zeros((m, 2))
        shift[idx] = disp
        new.robot_pos[carried] += shift[links[carried]]
        gap = moved - world.obj_goal[idx]
        done = idx[np.hypot(gap[:, 0], gap[:, 1]) <= p.goal_tolerance]
        new.obj_delivered[done] = True
        new.obj_vel[done] = 0.0

    free = world.robot_active & ~carried
    if free.any():
        fidx = np.flatnonzero(free)
        ft = tgt[fidx]
        dest = world.robot_home[fidx].copy()
        has = ft >= 0
        dest[has] = world.obj_pos[ft[has]]
        # a delivered target means hold position
        hold = has & world.obj_delivered[np.maximum(ft, 0)]
        dest[hold] = world.robot_pos[fidx[hold]]
        new.robot_pos[fidx] = _advance(world.robot_pos[fidx], dest, p.robot_speed * p.dt)

    new_links = attachments(new)
    new.robot_link = new_links
    speed = np.hypot(new.obj_vel[:, 0], new.obj_vel[:, 1])
    stuck = (new_links >= 0) & (speed[np.maximum(new_links, 0)] <= MOVING_EPS)
    new.robot_wait = np.where(stuck, world.robot_wait + 1, 0)
    new.time = world.time + p.dt
    return new


def add_robots(world: WorldState, count: int, seed) -> WorldState:
    """Append ``count`` active robots spawned uniformly in the arena.

    Spawn points avoid the connection range of undelivered objects. The
    same seed always yields the same spawn points.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    live = world.obj_pos[~world.obj_delivered]
    pts = _uniform_points(rng, count, world.params.arena_half_width,
                          avoid=live, clearance=world.params.delta)
    new = world.copy()
    new.robot_pos = np.vstack([world.robot_pos, pts])
    new.robot_home = np.vstack([world.robot_home, pts])
    new.robot_active = np.concatenate([world.robot_active, np.ones(count, dtype=bool)])
    new.robot_wait = np.concatenate([world.robot_wait, np.zeros(count, dtype=int)])
    new.robot_link = np.concatenate([world.robot_link, np.full(count, -1, dtype=int)])
    return new


def feasible_remaining(world: WorldState) -> set[int]:
    """Undelivered objects the current robot count could carry."""
    ok = (~world.obj_delivered) & (world.obj_weight <= world.n_robots)
    return {int(l) for l in np.flatnonzero(ok)}
