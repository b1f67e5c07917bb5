"""Domain types shared across the pipeline.

All containers are frozen; array fields are copied on construction and marked
read-only so instances can be handed to worker processes without defensive
copies.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AgentState:
    position: tuple[float, float]
    velocity: tuple[float, float]
    radius: float

    def __post_init__(self):
        vals = (*self.position, *self.velocity, self.radius)
        if not all(np.isfinite(vals)):
            raise ValueError(f"non-finite agent state: {self}")
        if self.radius <= 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Timestamped 2D states stored column-wise.

    ``velocities[t]`` is the action taken at step ``t``, so simulator data
    satisfies ``positions[t + 1] == positions[t] + velocities[t] * dt``.
    """

    positions: np.ndarray
    velocities: np.ndarray
    radius: float
    dt: float

    def __post_init__(self):
        pos = _frozen(self.positions)
        vel = _frozen(self.velocities)
        if pos.ndim != 2 or pos.shape[1] != 2 or len(pos) < 1:
            raise ValueError(f"positions must have shape (T>=1, 2), got {pos.shape}")
        if vel.shape != pos.shape:
            raise ValueError(f"velocities shape {vel.shape} != positions shape {pos.shape}")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
            raise ValueError("trajectory contains non-finite values")
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.radius <= 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "velocities", vel)

    @classmethod
    def from_states(cls, states: Sequence[AgentState], dt: float) -> "Trajectory":
        if not states:
            raise ValueError("trajectory needs at least one state")
        return cls(
            positions=[s.position for s in states],
            velocities=[s.velocity for s in states],
            radius=states[0].radius,
            dt=dt,
        )

    @classmethod
    def from_positions(cls, positions, radius: float, dt: float, last_position=None) -> "Trajectory":
        """Build a trajectory whose velocities are backward differences.

        ``last_position`` is the state preceding ``positions[0]``; without it
        the first velocity repeats the second.
        """
        pos = np.asarray(positions, dtype=np.float64)
        prev = pos[:1] if last_position is None else np.asarray(last_position, dtype=np.float64)[None]
        vel = np.diff(np.concatenate([prev, pos]), axis=0) / dt
        if last_position is None and len(pos) > 1:
            vel[0] = vel[1]
        return cls(pos, vel, radius, dt)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def states(self) -> list[AgentState]:
        return [
            AgentState(tuple(p), tuple(v), self.radius)
            for p, v in zip(self.positions.tolist(), self.velocities.tolist())
        ]

    def integration_error(self) -> float:
        """Max |p[t+1] - (p[t] + v[t] dt)| over the trajectory (0 for length 1)."""
        if len(self) < 2:
            return 0.0
        pred = self.positions[:-1] + self.velocities[:-1] * self.dt
        return float(np.max(np.linalg.norm(self.positions[1:] - pred, axis=1)))

    def shifted(self, offset) -> "Trajectory":
        return Trajectory(self.positions + np.asarray(offset, float), self.velocities, self.radius, self.dt)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.radius == other.radius
            and self.dt == other.dt
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.velocities, other.velocities)
        )


@dataclass(frozen=True, eq=False)
class SceneContext:
    """Per-agent histories plus goals and adjacency at one decision time.

    ``positions``/``velocities`` have shape (N, H, 2). The ego's goal is the
    only visible one; forecasters must not consume goals at all.
    """

    positions: np.ndarray
    velocities: np.ndarray
    radii: np.ndarray
    robot_index: int
    goals: np.ndarray
    goal_visible: np.ndarray
    adjacency: np.ndarray
    dt: float

    def __post_init__(self):
        pos = _frozen(self.positions)
        vel = _frozen(self.velocities)
        radii = _frozen(self.radii)
        goals = _frozen(self.goals)
        vis = _frozen(self.goal_visible, bool)
        adj = _frozen(self.adjacency, bool)
        if pos.ndim != 3 or pos.shape[2] != 2 or pos.shape[1] < 1:
            raise ValueError(f"histories must have shape (N, H>=1, 2), got {pos.shape}")
        n = pos.shape[0]
        if vel.shape != pos.shape:
            raise ValueError("history velocity/position shapes differ")
        if radii.shape != (n,) or goals.shape != (n, 2) or vis.shape != (n,):
            raise ValueError("per-agent fields must match the number of histories")
        if adj.shape != (n, n) or np.any(adj != adj.T) or np.any(np.diag(adj)):
            raise ValueError("adjacency must be symmetric without self-edges")
        if not 0 <= self.robot_index < n:
            raise ValueError(f"robot_index {self.robot_index} out of range for {n} agents")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        for name, val in (("positions", pos), ("velocities", vel), ("radii", radii), ("adjacency", adj),
                          ("goals", goals), ("goal_visible", vis)):
            object.__setattr__(self, name, val)

    @property
    def n_agents(self) -> int:
        return self.positions.shape[0]

    @property
    def history_length(self) -> int:
        return self.positions.shape[1]

    @property
    def histories(self) -> list[Trajectory]:
        return [Trajectory(p, v, r, self.dt) for p, v, r in zip(self.positions, self.velocities, self.radii)]


@dataclass(frozen=True, eq=False)
class Window:
    """A context together with the demonstrated futures that follow it."""

    context: SceneContext
    robot_future: Trajectory
    human_futures: tuple[Trajectory, ...]
    episode_seed: int
    step: int
    ego: int = 0


@dataclass(frozen=True, eq=False)
class EpisodeRecord:
    """Raw per-step frames of one episode.

    ``positions``/``velocities`` have shape (L, N, 2) with NaN where an agent
    is absent. ``ego_agents`` lists agents that may play the robot: only the
    robot for simulated episodes, every agent for ingested pedestrian data.
    """

    seed: int
    positions: np.ndarray
    velocities: np.ndarray
    radii: np.ndarray
    goals: np.ndarray
    dt: float
    agent_ids: tuple = ()
    ego_agents: tuple = (0,)

    def __post_init__(self):
        pos = _frozen(self.positions)
        vel = _frozen(self.velocities)
        if pos.ndim != 3 or pos.shape[2] != 2:
            raise ValueError(f"frames must have shape (L, N, 2), got {pos.shape}")
        if vel.shape != pos.shape:
            raise ValueError("frame velocity/position shapes differ")
        n = pos.shape[1]
        radii = _frozen(self.radii)
        goals = _frozen(self.goals)
        if radii.shape != (n,) or goals.shape != (n, 2):
            raise ValueError("radii/goals must have one entry per agent")
        if np.any(radii <= 0):
            raise ValueError("radii must be > 0")
        if np.any(np.isnan(pos) != np.isnan(vel)):
            raise ValueError("position/velocity presence masks differ")
        ids = tuple(self.agent_ids) if self.agent_ids else tuple(str(i) for i in range(n))
        if len(ids) != n or len(set(ids)) != n:
            raise ValueError("agent ids must be unique, one per agent")
        egos = tuple(int(e) for e in self.ego_agents)
        if any(not 0 <= e < n for e in egos):
            raise ValueError("ego agent index out of range")
        for name, val in (("positions", pos), ("velocities", vel), ("radii", radii), ("goals", goals),
                          ("agent_ids", ids), ("ego_agents", egos)):
            object.__setattr__(self, name, val)

    @property
    def n_steps(self) -> int:
        return self.positions.shape[0]

    @property
    def n_agents(self) -> int:
        return self.positions.shape[1]

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.positions[..., 0])

    def windows(self, H: int, T: int, neighbor_radius: float = 5.0) -> Iterator[Window]:
        from advnav.core.windows import iter_windows

        return iter_windows(self, H, T, neighbor_radius)

    def __eq__(self, other):
        if not isinstance(other, EpisodeRecord):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.dt == other.dt
            and self.agent_ids == other.agent_ids
            and self.ego_agents == other.ego_agents
            and np.array_equal(self.positions, other.positions, equal_nan=True)
            and np.array_equal(self.velocities, other.velocities, equal_nan=True)
            and np.array_equal(self.radii, other.radii)
            and np.array_equal(self.goals, other.goals)
        )


@dataclass(frozen=True)
class Dataset:
    records: tuple[EpisodeRecord, ...]
    split_tag: str
    H: int
    T: int
    dt: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.split_tag not in ("train", "test", "all"):
            raise ValueError(f"split_tag must be train|test|all, got {self.split_tag!r}")
        if self.H < 1 or self.T < 1 or self.dt <= 0:
            raise ValueError("H, T must be >= 1 and dt > 0")
        for r in self.records:
            if abs(r.dt - self.dt) > 1e-12:
                raise ValueError(f"record {r.seed} has dt {r.dt}, dataset dt {self.dt}")

    def __len__(self) -> int:
        return len(self.records)

    def windows(self, neighbor_radius: float = 5.0) -> list[Window]:
        out: list[Window] = []
        for rec in self.records:
            out.extend(rec.windows(self.H, self.T, neighbor_radius))
        return out
