"""Observations and the three policy sources (network, scripted, random).

Observation layout for robot i with K neighbors::

    [ x_i (2) | phi_i over my K objects (K)
    | for each of K nearest robots j: x_j (2), phi_j over my K objects (K)
    | for each of my K nearest objects: position (2), goal (2), velocity (2)
    | E over my K objects (K) ]

Neighbor lists are sorted by distance, lowest id first on ties. Missing
neighbors are zero-padded.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .allocation import NO_OBJECT, AllocationState, PolicyCommand
from .nn import MlpParams, forward
from .world import WorldState, transporting

T_COOP = 5


def observation_size(k: int) -> int:
    return 2 + k + k * (2 + k) + 6 * k + k


def action_size(k: int) -> int:
    return 2 * k + 2


@dataclass(frozen=True)
class Observation:
    vector: np.ndarray
    neighbor_robot_ids: tuple
    neighbor_object_ids: tuple


def _nearest(origin, points, allowed, k):
    """Ids of the k nearest allowed points, padded with NO_OBJECT."""
    idx = np.flatnonzero(allowed)
    if len(idx):
        d = np.hypot(*(points[idx] - origin).T)
        idx = idx[np.lexsort((idx, d))][:k]
    return tuple(int(v) for v in idx) + (NO_OBJECT,) * (k - len(idx))


def neighbor_objects(world: WorldState, robot_id: int, k: int) -> tuple:
    """K nearest undelivered objects."""
    return _nearest(world.robot_pos[robot_id], world.obj_pos, ~world.obj_delivered, k)


def neighbor_robots(world: WorldState, robot_id: int, k: int) -> tuple:
    others = world.robot_active.copy()
    others[robot_id] = False
    return _nearest(world.robot_pos[robot_id], world.robot_pos, others, k)


def build_observation(world: WorldState, state: AllocationState, experiences,
                      robot_id: int, k: int = 2) -> Observation:
    e = np.asarray(experiences, dtype=float)
    objs = neighbor_objects(world, robot_id, k)
    bots = neighbor_robots(world, robot_id, k)
    ol = np.array([l for l in objs if l != NO_OBJECT], dtype=int)
    nobj = len(ol)

    def prios(r):
        out = np.zeros(k)
        out[:nobj] = state.phi[r, ol]
        return out

    parts = [world.robot_pos[robot_id], prios(robot_id)]
    for j in bots:
        if j == NO_OBJECT:
            parts += [np.zeros(2), np.zeros(k)]
        else:
            parts += [world.robot_pos[j], prios(j)]
    block = np.zeros((k, 6))
    block[:nobj, 0:2] = world.obj_pos[ol]
    block[:nobj, 2:4] = world.obj_goal[ol]
    block[:nobj, 4:6] = world.obj_vel[ol]
    ek = np.zeros(k)
    ek[:nobj] = e[ol]
    parts += [block.ravel(), ek]
    return Observation(np.concatenate(parts), bots, objs)


def policy_forward(params: MlpParams, obs: Observation) -> PolicyCommand:
    k = len(obs.neighbor_object_ids)
    if params.n_in != len(obs.vector) or params.n_out != action_size(k):
        raise ValueError(f"network {params.n_in}->{params.n_out} does not fit "
                         f"observation {len(obs.vector)} / action {action_size(k)}")
    return PolicyCommand.from_action(forward(params, obs.vector), obs.neighbor_object_ids)


def random_policy(seed: int, robot_id: int, step: int,
                  neighbor_object_ids=(NO_OBJECT, NO_OBJECT)) -> PolicyCommand:
    """Uniform outputs from a stream keyed by (seed, robot, step)."""
    rng = np.random.default_rng([int(seed), int(robot_id), int(step)])
    return PolicyCommand.from_action(rng.random(action_size(len(neighbor_object_ids))),
                                     neighbor_object_ids)


class ScriptedScene:
    """Facts shared by every robot's scripted decision in one step.

    Candidates of a robot are the undelivered objects that are neither
    carried by others nor excluded by its own gate. A robot that has waited
    at least ``t_coop`` steps at a stationary candidate asks for help; the
    requested object with the most connected robots (lowest id on ties)
    becomes the cooperation target for everyone who can still choose it.
    """

    def __init__(self, world: WorldState, state: AllocationState, experiences,
                 t_coop: int = T_COOP, links=None):
        self.world = world
        self.state = state
        self.e = np.asarray(experiences, dtype=float)
        self.links, self.counts, movable = transporting(world, links)
        n, m = len(world.robot_pos), world.n_objects
        closed = (state.zeta[:n] >= 0.5) & (self.e >= state.epsilon)[None, :]
        carried_by_others = movable[None, :] & (self.links[:, None] != np.arange(m)[None, :])
        self.candidates = ~world.obj_delivered[None, :] & ~carried_by_others & ~closed
        self.candidates &= world.robot_active[:, None]

        diff = world.robot_pos[:, None, :] - world.obj_pos[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        # stable sort on distance keeps the lowest id first on ties
        self.order = np.argsort(dist, axis=1, kind="stable")

        self.leader = NO_OBJECT
        best = -1
        for r in np.flatnonzero(world.robot_wait >= t_coop):
            l = self.links[r]
            if l < 0 or movable[l] or not self.candidates[r, l]:
                continue
            if self.counts[l] > best or (self.counts[l] == best and l < self.leader):
                best, self.leader = self.counts[l], int(l)

        tgt = state.target[:n]
        heading = world.robot_active & ~state.frozen[:n] & (tgt >= 0) & (tgt != self.links)
        self.en_route = np.zeros(m, dtype=bool)
        self.en_route[tgt[heading]] = True

    def command(self, robot_id: int, k: int = 2) -> PolicyCommand:
        w = self.world
        order = self.order[robot_id]
        ids = [int(l) for l in order[~w.obj_delivered[order]][:k]]
        ids += [NO_OBJECT] * (k - len(ids))
        cand = self.candidates[robot_id]
        cooperating = self.leader != NO_OBJECT and bool(cand[self.leader])
        if cooperating:
            focus = self.leader
        else:
            ranked = order[cand[order]]
            focus = int(ranked[0]) if len(ranked) else NO_OBJECT
        if focus != NO_OBJECT and focus not in ids:
            ids[-1] = focus
        tphi = np.zeros(k)
        tzeta = np.zeros(k)
        eps = self.state.epsilon
        for slot, l in enumerate(ids):
            if l == NO_OBJECT:
                continue
            tphi[slot] = float(l == focus)
            tzeta[slot] = float(self.e[l] >= eps and not self.en_route[l])
        beta = float(tzeta.any())
        return PolicyCommand(tphi, float(cooperating), tzeta, beta, tuple(ids))


def scripted_policy(world: WorldState, state: AllocationState, experiences, robot_id: int,
                    k: int = 2, t_coop: int = T_COOP) -> PolicyCommand:
    """Learning-free reference policy.

    Targets priority 1 on the nearest candidate (or on the cooperation
    target while one is requested, with alpha = 1), exclusion 1 on neighbor
    objects whose experience reached epsilon while no robot is on its way to
    them, and beta = 1 whenever some exclusion target is 1.
    """
    return ScriptedScene(world, state, experiences, t_coop).command(robot_id, k)


def scripted_commands(world, state, experiences, k: int = 2, t_coop: int = T_COOP, links=None):
    scene = ScriptedScene(world, state, experiences, t_coop, links)
    return [scene.command(i, k) for i in range(len(world.robot_pos))]
