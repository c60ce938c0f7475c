"""User-centric amorphous cell formation.

Users are clustered greedily by distance to a running centroid, then LEDs
are associated to users by channel gain in two phases: each user first
takes its strongest remaining LED, then every leftover LED joins the cell
of the user that sees it best. Ties always go to the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InfeasibleAssociation(RuntimeError):
    """A user has no usable line-of-sight LED."""

    def __init__(self, user: int, message: str = ""):
        super().__init__(message or f"user {user} has no line-of-sight LED left")
        self.user = user


@dataclass(frozen=True)
class CellPartition:
    user_clusters: tuple[tuple[int, ...], ...]
    led_sets: tuple[tuple[int, ...], ...]
    centroids: np.ndarray
    # (user, led, phase) with phase 1 = one-to-one, 2 = multi-LED sweep
    pairs: tuple[tuple[int, int, int], ...] = ()
    # candidate LEDs with no line of sight to any user; they stay lit but serve nobody
    idle_leds: tuple[int, ...] = field(default=())

    @property
    def num_cells(self) -> int:
        return len(self.user_clusters)

    def user_cell(self, n_users: int | None = None) -> np.ndarray:
        n = n_users if n_users is not None else sum(len(c) for c in self.user_clusters)
        out = np.full(n, -1, dtype=int)
        for c, users in enumerate(self.user_clusters):
            out[list(users)] = c
        return out

    def led_cell(self, n_leds: int) -> np.ndarray:
        out = np.full(n_leds, -1, dtype=int)
        for c, leds in enumerate(self.led_sets):
            out[list(leds)] = c
        return out

    def table(self) -> list[tuple[str, int, int]]:
        """Rows ``(kind, index, cell)`` for plotting cell maps."""
        rows = [("user", u, c) for c, us in enumerate(self.user_clusters) for u in us]
        rows += [("led", j, c) for c, js in enumerate(self.led_sets) for j in js]
        return sorted(rows)


def cluster_users(user_positions, d0: float):
    """Greedy distance-threshold clustering.

    Returns ``(clusters, centroids)``; clusters are index tuples in recruitment order.
    """
    pts = np.asarray(user_positions, dtype=float)[:, :2]
    if len(pts) == 0:
        raise ValueError("no users to cluster")
    if d0 <= 0:
        raise ValueError("distance threshold must be positive")
    unassigned = list(range(len(pts)))
    clusters, centroids = [], []
    while unassigned:
        members = [unassigned.pop(0)]
        centroid = pts[members[0]].copy()
        grown = True
        while grown:
            grown = False
            for u in unassigned:
                if np.linalg.norm(pts[u] - centroid) < d0:
                    members.append(u)
                    unassigned.remove(u)
                    centroid = pts[members].mean(axis=0)
                    grown = True
                    break
        clusters.append(tuple(members))
        centroids.append(centroid)
    return tuple(clusters), np.array(centroids)


def associate_leds(gains: np.ndarray, user_clusters, centroids=None, leds=None) -> CellPartition:
    """Two-phase gain-based association over the candidate LED columns ``leds``."""
    n_users, n_leds = gains.shape
    cand = np.arange(n_leds) if leds is None else np.sort(np.asarray(list(leds), dtype=int))
    M = gains[:, cand].astype(float).copy()
    los = M.max(axis=0) > 0
    idle = tuple(int(j) for j in cand[~los])

    owner = {}
    pairs = []
    for i in range(n_users):
        if M[i].max() <= 0:
            raise InfeasibleAssociation(i)
        col = int(np.argmax(M[i]))
        owner[int(cand[col])] = i
        pairs.append((i, int(cand[col]), 1))
        M[:, col] = 0.0
    for col in np.flatnonzero(M.max(axis=0) > 0):
        n = int(np.argmax(M[:, col]))
        owner[int(cand[col])] = n
        pairs.append((n, int(cand[col]), 2))
        M[:, col] = 0.0

    user_cell = {u: c for c, us in enumerate(user_clusters) for u in us}
    led_sets = [[] for _ in user_clusters]
    for led, user in sorted(owner.items()):
        led_sets[user_cell[user]].append(led)
    if centroids is None:
        centroids = np.zeros((len(user_clusters), 2))
    return CellPartition(tuple(tuple(c) for c in user_clusters),
                         tuple(tuple(s) for s in led_sets),
                         np.asarray(centroids), tuple(pairs), idle)


def update_cells(active_leds, gains: np.ndarray, user_clusters, centroids=None) -> CellPartition:
    """Re-run the association over the active LEDs only; user clusters are kept."""
    return associate_leds(gains, user_clusters, centroids, leds=active_leds)
