"""Slicing episodes into (context, future) windows."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from advnav.core.types import EpisodeRecord, SceneContext, Trajectory, Window


def _window_agents(ep: EpisodeRecord, t: int, H: int, T: int) -> np.ndarray:
    span = ep.present[t - H + 1 : t + T + 1]
    return np.flatnonzero(span.all(axis=0))


def make_context(
    ep: EpisodeRecord,
    t: int,
    H: int,
    T: int,
    ego: int | None = None,
    neighbor_radius: float = 5.0,
) -> Window:
    """Cut the window whose history ends at step ``t``.

    History covers steps [t-H+1, t], futures cover [t+1, t+T]. Agents missing
    anywhere in that span are dropped. ``ego`` defaults to the episode's first
    ego agent.
    """
    if H < 1 or T < 1:
        raise ValueError("H and T must be >= 1")
    if t < H - 1 or t + T >= ep.n_steps:
        raise IndexError(f"step {t} has no full window (H={H}, T={T}, episode length {ep.n_steps})")
    ego = ep.ego_agents[0] if ego is None else ego
    agents = _window_agents(ep, t, H, T)
    if ego not in agents:
        raise ValueError(f"ego agent {ego} is not present over steps [{t - H + 1}, {t + T}]")
    robot_index = int(np.flatnonzero(agents == ego)[0])

    hist_p = ep.positions[t - H + 1 : t + 1, agents].transpose(1, 0, 2)
    hist_v = ep.velocities[t - H + 1 : t + 1, agents].transpose(1, 0, 2)
    last = hist_p[:, -1]
    dist = np.linalg.norm(last[:, None] - last[None], axis=-1)
    adjacency = dist <= neighbor_radius
    np.fill_diagonal(adjacency, False)
    visible = np.zeros(len(agents), bool)
    visible[robot_index] = True
    ctx = SceneContext(
        positions=hist_p,
        velocities=hist_v,
        radii=ep.radii[agents],
        robot_index=robot_index,
        goals=ep.goals[agents],
        goal_visible=visible,
        adjacency=adjacency,
        dt=ep.dt,
    )
    fut_p = ep.positions[t + 1 : t + T + 1, agents]
    fut_v = ep.velocities[t + 1 : t + T + 1, agents]
    futures = [Trajectory(fut_p[:, k], fut_v[:, k], float(ep.radii[a]), ep.dt) for k, a in enumerate(agents)]
    humans = tuple(f for k, f in enumerate(futures) if k != robot_index)
    return Window(ctx, futures[robot_index], humans, ep.seed, t, int(ego))


def window_steps(ep: EpisodeRecord, H: int, T: int) -> range:
    return range(H - 1, max(H - 1, ep.n_steps - T))


def iter_windows(ep: EpisodeRecord, H: int, T: int, neighbor_radius: float = 5.0) -> Iterator[Window]:
    present = ep.present
    for t in window_steps(ep, H, T):
        span = present[t - H + 1 : t + T + 1].all(axis=0)
        for ego in ep.ego_agents:
            if span[ego]:
                yield make_context(ep, t, H, T, ego=ego, neighbor_radius=neighbor_radius)
