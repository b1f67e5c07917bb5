"""Padded array batches of windows.

Every sample puts its ego in slot 0 followed by the other agents in episode
order; slots past a sample's agent count are zero-filled and masked out.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from advnav.core.types import Dataset, EpisodeRecord, Window
from advnav.core.windows import window_steps


@dataclass(frozen=True, eq=False)
class Batch:
    hist: np.ndarray  # (B, N, H, 2) history positions
    future: np.ndarray  # (B, N, T, 2) demonstrated future positions
    mask: np.ndarray  # (B, N) real agents
    adjacency: np.ndarray  # (B, N, N) neighbor relation, no self-edges
    radii: np.ndarray  # (B, N)
    goal: np.ndarray  # (B, 2) ego goal
    ids: np.ndarray  # (B, 3) episode seed, step, ego agent index
    dt: float

    @property
    def size(self) -> int:
        return self.hist.shape[0]

    @property
    def n_slots(self) -> int:
        return self.hist.shape[1]

    @property
    def H(self) -> int:
        return self.hist.shape[2]

    @property
    def T(self) -> int:
        return self.future.shape[2]

    @property
    def human_mask(self) -> np.ndarray:
        return self.mask[:, 1:]

    @property
    def robot_future(self) -> np.ndarray:
        return self.future[:, 0]

    @property
    def human_future(self) -> np.ndarray:
        return self.future[:, 1:]

    @property
    def last_position(self) -> np.ndarray:
        return self.hist[:, :, -1]

    def take(self, idx) -> "Batch":
        idx = np.asarray(idx)
        return Batch(self.hist[idx], self.future[idx], self.mask[idx], self.adjacency[idx], self.radii[idx],
                     self.goal[idx], self.ids[idx], self.dt)

    def sample_id(self, i: int) -> str:
        seed, step, ego = (int(x) for x in self.ids[i])
        return f"episode {seed} step {step} ego {ego}"

    def __len__(self) -> int:
        return self.size


def _empty(n: int, H: int, T: int, dt: float) -> Batch:
    return Batch(np.zeros((0, n, H, 2)), np.zeros((0, n, T, 2)), np.zeros((0, n), bool), np.zeros((0, n, n), bool),
                 np.zeros((0, n)), np.zeros((0, 2)), np.zeros((0, 3), np.int64), dt)


def collate_windows(windows: Sequence[Window], n_slots: int | None = None) -> Batch:
    """Stack windows into one padded batch."""
    if not windows:
        raise ValueError("no windows to collate")
    H = windows[0].context.history_length
    T = len(windows[0].robot_future)
    dt = windows[0].context.dt
    n = max(w.context.n_agents for w in windows)
    n = n if n_slots is None else n_slots
    B = len(windows)
    hist, fut = np.zeros((B, n, H, 2)), np.zeros((B, n, T, 2))
    mask, adj = np.zeros((B, n), bool), np.zeros((B, n, n), bool)
    radii, goal, ids = np.zeros((B, n)), np.zeros((B, 2)), np.zeros((B, 3), np.int64)
    for b, w in enumerate(windows):
        ctx = w.context
        if ctx.history_length != H or len(w.robot_future) != T:
            raise ValueError("windows differ in H or T")
        k = ctx.n_agents
        if k > n:
            raise ValueError(f"window has {k} agents, batch holds {n}")
        order = [ctx.robot_index] + [i for i in range(k) if i != ctx.robot_index]
        hist[b, :k] = ctx.positions[order]
        fut[b, 0] = w.robot_future.positions
        for j, h in enumerate(w.human_futures):
            fut[b, j + 1] = h.positions
        mask[b, :k] = True
        adj[b, :k, :k] = ctx.adjacency[np.ix_(order, order)]
        radii[b, :k] = ctx.radii[order]
        goal[b] = ctx.goals[ctx.robot_index]
        ids[b] = (w.episode_seed, w.step, w.ego)
    return Batch(hist, fut, mask, adj, radii, goal, ids, dt)


def _record_arrays(rec: EpisodeRecord, H: int, T: int, neighbor_radius: float):
    present = rec.present
    for t in window_steps(rec, H, T):
        span = present[t - H + 1 : t + T + 1].all(axis=0)
        agents = np.flatnonzero(span)
        for ego in rec.ego_agents:
            if not span[ego]:
                continue
            order = np.concatenate([[ego], agents[agents != ego]])
            hist = rec.positions[t - H + 1 : t + 1, order].transpose(1, 0, 2)
            fut = rec.positions[t + 1 : t + T + 1, order].transpose(1, 0, 2)
            last = hist[:, -1]
            adj = np.linalg.norm(last[:, None] - last[None], axis=-1) <= neighbor_radius
            np.fill_diagonal(adj, False)
            yield hist, fut, adj, rec.radii[order], rec.goals[ego], (rec.seed, t, ego)


def collate_dataset(ds: Dataset, neighbor_radius: float = 5.0, n_slots: int | None = None) -> Batch:
    """All windows of a dataset as one batch, in the same order as
    ``ds.windows()`` but without building per-window objects."""
    rows = [r for rec in ds.records for r in _record_arrays(rec, ds.H, ds.T, neighbor_radius)]
    n = max((len(r[3]) for r in rows), default=1)
    n = n if n_slots is None else n_slots
    if not rows:
        return _empty(n, ds.H, ds.T, ds.dt)
    B = len(rows)
    hist, fut = np.zeros((B, n, ds.H, 2)), np.zeros((B, n, ds.T, 2))
    mask, adj = np.zeros((B, n), bool), np.zeros((B, n, n), bool)
    radii, goal, ids = np.zeros((B, n)), np.zeros((B, 2)), np.zeros((B, 3), np.int64)
    for b, (h, f, a, r, g, i) in enumerate(rows):
        k = len(r)
        if k > n:
            raise ValueError(f"window has {k} agents, batch holds {n}")
        hist[b, :k], fut[b, :k], adj[b, :k, :k], radii[b, :k] = h, f, a, r
        mask[b, :k] = True
        goal[b], ids[b] = g, i
    return Batch(hist, fut, mask, adj, radii, goal, ids, ds.dt)
