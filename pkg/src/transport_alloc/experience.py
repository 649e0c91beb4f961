"""Cloud-side task experience.

The ledger keeps the N-free integral of ``|C_l|**kappa`` over time spent
stationary and divides by ``N**kappa`` on read. Changing the robot count
therefore rescales every stored experience at once, which is what releases
exclusions when robots join mid-episode.
"""
from __future__ import annotations

import numpy as np

from .world import MOVING_EPS, WorldState, connection_counts


class ExperienceLedger:
    def __init__(self, n_objects: int, n_robots: int, kappa: float = 10.0):
        if n_robots < 1:
            raise ValueError("robot count must be >= 1")
        self.raw = np.zeros(n_objects)
        self.kappa = float(kappa)
        self.current_n = int(n_robots)

    def copy(self) -> "ExperienceLedger":
        out = ExperienceLedger(len(self.raw), self.current_n, self.kappa)
        out.raw = self.raw.copy()
        return out

    def accumulate(self, world: WorldState, dt: float, links=None) -> "ExperienceLedger":
        """Add one left-endpoint rectangle of the stuck-time integrand."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        counts = connection_counts(world, links)
        speed = np.hypot(world.obj_vel[:, 0], world.obj_vel[:, 1])
        stuck = (speed <= MOVING_EPS) & ~world.obj_delivered
        self.raw += np.where(stuck, counts.astype(float) ** self.kappa, 0.0) * dt
        return self

    def query(self, object_id: int) -> float:
        if not isinstance(object_id, (int, np.integer)) or not 0 <= object_id < len(self.raw):
            raise ValueError(f"unknown object id {object_id!r}")
        return float(self.raw[object_id] / self.current_n ** self.kappa)

    def values(self) -> np.ndarray:
        """Normalized experience E_l for all objects."""
        return self.raw / float(self.current_n) ** self.kappa

    def set_robot_count(self, n_robots: int) -> "ExperienceLedger":
        if n_robots < 1:
            raise ValueError("robot count must be >= 1")
        self.current_n = int(n_robots)
        return self
