"""Per-robot priorities and exclusion levels, the output gate, task selection.

Both consensus laws are integrated with forward Euler on a synchronous
snapshot: every robot reads the previous step's values of all other robots.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .world import WorldState, transporting

# padding id in neighbor lists
NO_OBJECT = -1


def step(x):
    """Step function with threshold 0.5."""
    return np.asarray(x) >= 0.5


@dataclass(frozen=True)
class PolicyCommand:
    """Output of one robot's policy for its K neighbor objects.

    Entries whose id is ``NO_OBJECT`` are padding and are ignored.
    """

    target_phi: np.ndarray
    alpha: float
    target_zeta: np.ndarray
    beta: float
    neighbor_object_ids: tuple

    def __post_init__(self):
        tp = np.clip(np.asarray(self.target_phi, dtype=float).reshape(-1), 0.0, 1.0)
        tz = np.clip(np.asarray(self.target_zeta, dtype=float).reshape(-1), 0.0, 1.0)
        ids = tuple(int(l) for l in self.neighbor_object_ids)
        if not (len(tp) == len(tz) == len(ids)):
            raise ValueError("target_phi, target_zeta and neighbor ids must have K entries each")
        object.__setattr__(self, "target_phi", tp)
        object.__setattr__(self, "target_zeta", tz)
        object.__setattr__(self, "alpha", min(max(float(self.alpha), 0.0), 1.0))
        object.__setattr__(self, "beta", min(max(float(self.beta), 0.0), 1.0))
        object.__setattr__(self, "neighbor_object_ids", ids)

    @property
    def k(self) -> int:
        return len(self.neighbor_object_ids)

    @classmethod
    def from_action(cls, action, neighbor_object_ids) -> "PolicyCommand":
        """Unpack ``[phi*_1..phi*_K, alpha, zeta*_1..zeta*_K, beta]``."""
        a = np.asarray(action, dtype=float).reshape(-1)
        k = len(neighbor_object_ids)
        if len(a) != 2 * k + 2:
            raise ValueError(f"action of length {len(a)} does not match K={k}")
        return cls(a[:k], a[k], a[k + 1:2 * k + 1], a[2 * k + 1], tuple(neighbor_object_ids))

    def to_action(self) -> np.ndarray:
        return np.concatenate([self.target_phi, [self.alpha], self.target_zeta, [self.beta]])


@dataclass
class AllocationState:
    phi: np.ndarray
    zeta: np.ndarray
    k_phi: float = 0.2
    k_zeta: float = 0.2
    epsilon: float = 1.0
    frozen: np.ndarray = None
    target: np.ndarray = None

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        self.zeta = np.asarray(self.zeta, dtype=float)
        if self.phi.shape != self.zeta.shape or self.phi.ndim != 2:
            raise ValueError("phi and zeta must be N x M arrays of equal shape")
        n = self.phi.shape[0]
        if self.frozen is None:
            self.frozen = np.zeros(n, dtype=bool)
        if self.target is None:
            self.target = np.full(n, NO_OBJECT, dtype=int)

    @classmethod
    def zeros(cls, n_robots: int, n_objects: int, **gains) -> "AllocationState":
        return cls(np.zeros((n_robots, n_objects)), np.zeros((n_robots, n_objects)), **gains)

    @property
    def n_robots(self) -> int:
        return self.phi.shape[0]

    @property
    def n_objects(self) -> int:
        return self.phi.shape[1]

    def copy(self) -> "AllocationState":
        return replace(self, phi=self.phi.copy(), zeta=self.zeta.copy(),
                       frozen=self.frozen.copy(), target=self.target.copy())


def build_targets(state: AllocationState, robot_id: int, cmd: PolicyCommand | None):
    """Per-object target priorities c_i and exclusion levels d_i.

    Neighbor objects take the commanded targets; every other object keeps its
    current value.
    """
    c = state.phi[robot_id].copy()
    d = state.zeta[robot_id].copy()
    if cmd is None:
        return c, d
    for slot, l in enumerate(cmd.neighbor_object_ids):
        if l == NO_OBJECT:
            continue
        if not 0 <= l < state.n_objects:
            raise ValueError(f"neighbor object id {l} out of range")
        c[l] = cmd.target_phi[slot]
        d[l] = cmd.target_zeta[slot]
    return c, d


def _targets_and_gates(state, commands, which):
    n = state.n_robots
    if len(commands) != n:
        raise ValueError(f"expected {n} commands, got {len(commands)}")
    tgt = np.empty_like(state.phi)
    gate = np.zeros(n, dtype=bool)
    for i, cmd in enumerate(commands):
        c, d = build_targets(state, i, cmd)
        tgt[i] = c if which == "phi" else d
        if cmd is not None:
            gate[i] = step(cmd.alpha if which == "phi" else cmd.beta)
    return tgt, gate


def update_priorities(state: AllocationState, commands: Sequence[PolicyCommand | None],
                      dt: float) -> AllocationState:
    """One Euler step of the priority consensus.

    ``phi_i += dt*k_phi*((c_i - phi_i) + [alpha_i>=0.5] * sum_j (phi_j - phi_i))``.
    Frozen (transporting) robots keep their priorities but still act as
    sources for the others.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    c, share = _targets_and_gates(state, commands, "phi")
    phi = state.phi
    n = state.n_robots
    coupling = phi.sum(axis=0, keepdims=True) - n * phi
    rate = state.k_phi * ((c - phi) + share[:, None] * coupling)
    new = state.copy()
    new.phi = np.where(state.frozen[:, None], phi, phi + dt * rate)
    return new


def update_exclusions(state: AllocationState, commands: Sequence[PolicyCommand | None],
                      dt: float) -> AllocationState:
    """One Euler step of the max-consensus on exclusion levels.

    ``zeta_i += dt*k_zeta*(d_i - zeta_i) + min(dt*k_zeta*[beta_i>=0.5]*N*(max_j zeta_j - zeta_i), max_j zeta_j - zeta_i)``,
    then clipped to [0, 1]. The coupling never carries a robot past the
    current maximum. Frozen robots keep their levels, like their priorities.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    d, share = _targets_and_gates(state, commands, "zeta")
    zeta = state.zeta
    n = state.n_robots
    gap = zeta.max(axis=0, keepdims=True) - zeta
    pull = np.minimum(dt * state.k_zeta * n * gap, gap) * share[:, None]
    new = state.copy()
    moved = np.clip(zeta + dt * state.k_zeta * (d - zeta) + pull, 0.0, 1.0)
    new.zeta = np.where(state.frozen[:, None], zeta, moved)
    return new


def gate_bits(state: AllocationState, experiences) -> np.ndarray:
    """N x M matrix of ``[zeta >= 0.5] * [E >= epsilon]``; 1 closes the gate."""
    e = np.asarray(experiences, dtype=float)
    return step(state.zeta) & (e >= state.epsilon)[None, :]


def gate(state: AllocationState, robot_id: int, experiences) -> np.ndarray:
    """Gated priorities of one robot: zero where the gate is closed, else phi."""
    closed = gate_bits(state, experiences)[robot_id]
    return np.where(closed, 0.0, state.phi[robot_id])


def select_task(state: AllocationState, robot_id: int, world: WorldState, experiences,
                use_gate: bool = True, links: np.ndarray | None = None) -> Optional[int]:
    """Index of the highest gated priority, lowest id on ties, or None.

    Delivered objects and objects already being carried without this robot
    count as priority 0.
    """
    links, _, movable = transporting(world, links)
    prio = gate(state, robot_id, experiences) if use_gate else state.phi[robot_id].copy()
    mine = links[robot_id] if robot_id < len(links) else NO_OBJECT
    busy = movable.copy()
    if mine >= 0:
        busy[mine] = False
    prio[world.obj_delivered | busy] = 0.0
    if prio.size == 0:
        return None
    best = int(np.argmax(prio))
    return best if prio[best] > 0 else None


def clear_delivered(state: AllocationState, world: WorldState) -> AllocationState:
    """Write zero priorities for delivered objects."""
    new = state.copy()
    new.phi[:, world.obj_delivered] = 0.0
    return new


def resize(state: AllocationState, new_n: int, new_m: int, init_value: float = 0.0) -> AllocationState:
    n, m = state.phi.shape
    if new_n < n or new_m < m:
        raise ValueError("allocation state can only grow")

    def grow(a, fill):
        out = np.full((new_n, new_m), fill, dtype=float)
        out[:n, :m] = a
        return out

    new = state.copy()
    new.phi = grow(state.phi, init_value)
    new.zeta = grow(state.zeta, init_value)
    new.frozen = np.concatenate([state.frozen, np.zeros(new_n - n, dtype=bool)])
    new.target = np.concatenate([state.target, np.full(new_n - n, NO_OBJECT, dtype=int)])
    return new
