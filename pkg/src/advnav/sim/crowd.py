"""Circle-crossing crowd episodes with non-compliant ORCA humans.

Humans only react to each other, so their whole future can be simulated
before the robot moves; the demonstrator then plans against that privileged
future.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from advnav.core.types import AgentState, EpisodeRecord
from advnav.cost import col_cost_of_clearance
from advnav.sim.orca import orca_halfplane, solve_velocity


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n_humans: int = 5
    dt: float = 0.25
    arena_radius: float = 4.0
    v_max: float = 1.0
    robot_v_max: float = 1.0
    agent_radius: float = 0.3
    robot_radius: float = 0.3
    orca_tau: float = 5.0
    # humans plan with slightly inflated bodies so discrete steps keep contact-free
    orca_radius_buffer: float = 0.05
    episode_max_steps: int = 100
    goal_tolerance: float = 0.3
    goal_jitter: float = 0.2
    placement_margin: float = 0.2
    placement_attempts: int = 1000
    # demonstrator
    n_speeds: int = 5
    n_headings: int = 16
    safety_margin: float = 0.1
    rollout_steps: int = 12
    collision_weight: float = 10.0
    epsilon: float = 0.2

    def __post_init__(self):
        if self.n_humans < 1:
            raise ValueError("n_humans must be >= 1")
        for name in ("dt", "v_max", "robot_v_max", "orca_tau", "arena_radius", "agent_radius", "robot_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.episode_max_steps < 1 or self.rollout_steps < 1 or self.n_speeds < 1 or self.n_headings < 1:
            raise ValueError("step counts and grid sizes must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown sim config keys: {sorted(unknown)}")
        base = asdict(cls())
        return cls(**{k: type(base[k])(v) for k, v in d.items()})


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    robot_start: np.ndarray
    robot_goal: np.ndarray
    human_starts: np.ndarray
    human_goals: np.ndarray

    def __eq__(self, other):
        return isinstance(other, ScenarioSpec) and all(
            np.array_equal(getattr(self, f.name), getattr(other, f.name)) for f in fields(self)
        )


def sample_scenario(cfg: SimConfig, seed: int) -> ScenarioSpec:
    """Robot crosses the arena south to north; humans start at random angles on
    the circle and head for (jittered) antipodal points."""
    rng = np.random.default_rng(seed)
    R = cfg.arena_radius
    robot_start, robot_goal = np.array([0.0, -R]), np.array([0.0, R])
    starts, goals = [robot_start], [robot_goal]
    radii = [cfg.robot_radius]
    attempts = 0
    while len(starts) < cfg.n_humans + 1:
        if attempts >= cfg.placement_attempts:
            raise PlacementError(
                f"could not place {cfg.n_humans} humans in an arena of radius {R} after {attempts} attempts"
            )
        attempts += 1
        theta = rng.uniform(0.0, 2 * math.pi)
        delta = rng.uniform(-cfg.goal_jitter, cfg.goal_jitter)
        start = R * np.array([math.cos(theta), math.sin(theta)])
        goal = R * np.array([math.cos(theta + math.pi + delta), math.sin(theta + math.pi + delta)])
        sep = cfg.agent_radius + np.array(radii) + cfg.placement_margin
        if np.any(np.linalg.norm(np.array(starts) - start, axis=1) < sep):
            continue
        if np.any(np.linalg.norm(np.array(goals) - goal, axis=1) < sep):
            continue
        starts.append(start)
        goals.append(goal)
        radii.append(cfg.agent_radius)
    return ScenarioSpec(robot_start, robot_goal, np.array(starts[1:]), np.array(goals[1:]))


def preferred_velocities(positions: np.ndarray, goals: np.ndarray, v_max: float, dt: float) -> np.ndarray:
    delta = goals - positions
    dist = np.linalg.norm(delta, axis=-1, keepdims=True)
    speed = np.minimum(v_max, dist / dt)
    return np.where(dist > 0, delta / np.where(dist > 0, dist, 1.0) * speed, 0.0)


def step_humans(states: list[AgentState], goals, cfg: SimConfig) -> list[AgentState]:
    """One ORCA step among humans only; the robot is never a neighbor."""
    pos = np.array([s.position for s in states])
    vel = np.array([s.velocity for s in states])
    radii = np.array([s.radius for s in states])
    new_vel = orca_velocities(pos, vel, radii, np.asarray(goals, float), cfg)
    new_pos = pos + new_vel * cfg.dt
    return [AgentState(tuple(p), tuple(v), float(r)) for p, v, r in zip(new_pos.tolist(), new_vel.tolist(), radii)]


def orca_velocities(pos: np.ndarray, vel: np.ndarray, radii: np.ndarray, goals: np.ndarray,
                    cfg: SimConfig) -> np.ndarray:
    prefs = preferred_velocities(pos, goals, cfg.v_max, cfg.dt)
    plist, vlist, rlist = pos.tolist(), vel.tolist(), (radii + cfg.orca_radius_buffer).tolist()
    out = np.empty_like(pos)
    for i in range(len(plist)):
        lines = [
            orca_halfplane(plist[i], vlist[i], rlist[i], plist[j], vlist[j], rlist[j], cfg.orca_tau, cfg.dt)
            for j in range(len(plist))
            if j != i
        ]
        out[i] = solve_velocity(lines, prefs[i], cfg.v_max)
    return out


def simulate_humans(spec: ScenarioSpec, cfg: SimConfig, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Human positions and actions for steps 0..n_steps-1, each (n_steps, n, 2).

    ``velocities[t]`` is the action at ``t``: ``pos[t+1] = pos[t] + vel[t] dt``.
    """
    n = len(spec.human_starts)
    radii = np.full(n, cfg.agent_radius)
    pos = np.empty((n_steps, n, 2))
    vel = np.empty((n_steps, n, 2))
    p, v = spec.human_starts.astype(float), np.zeros((n, 2))
    for t in range(n_steps):
        v = orca_velocities(p, v, radii, spec.human_goals, cfg)
        pos[t], vel[t] = p, v
        p = p + v * cfg.dt
    return pos, vel


def action_grid(cfg: SimConfig, heading0: float, v_max: float) -> np.ndarray:
    """Candidate velocities: stop, then speeds x headings starting at ``heading0``."""
    speeds = v_max * np.arange(1, cfg.n_speeds + 1) / cfg.n_speeds
    offsets = 2 * math.pi * np.arange(cfg.n_headings) / cfg.n_headings
    offsets = np.where(offsets > math.pi, offsets - 2 * math.pi, offsets)
    sp, off = np.meshgrid(speeds, offsets, indexing="ij")
    ang = heading0 + off.ravel()
    vels = np.stack([sp.ravel() * np.cos(ang), sp.ravel() * np.sin(ang)], axis=1)
    return np.vstack([np.zeros((1, 2)), vels])


def demonstrate(robot: AgentState, goal, human_future: np.ndarray, human_radii, cfg: SimConfig) -> np.ndarray:
    """Privileged receding-horizon action choice for the robot.

    ``human_future`` holds true human positions for the next
    ``cfg.rollout_steps`` steps, shape (K, n, 2). Each candidate velocity is
    held constant over the rollout and scored as mean distance to goal plus
    ``collision_weight`` times the obstacle cost against humans inflated by
    ``safety_margin``. Candidates are ranked first by how many rollout steps
    stay contact-free, then by how many keep the safety margin, so a rollout
    that keeps the margin throughout always beats one that does not. Score
    ties go to the smaller heading change, then the lower speed.
    """
    p0 = np.asarray(robot.position, float)
    goal = np.asarray(goal, float)
    to_goal = goal - p0
    dist = float(np.hypot(*to_goal))
    goal_heading = math.atan2(to_goal[1], to_goal[0]) if dist > 0 else 0.0
    cands = action_grid(cfg, goal_heading, cfg.robot_v_max)
    cap = min(cfg.robot_v_max, dist / cfg.dt)
    if 0 < cap < cfg.robot_v_max:
        cands = np.vstack([cands, to_goal / dist * cap])
    speed = np.linalg.norm(cands, axis=1)

    vel0 = np.asarray(robot.velocity, float)
    ref = math.atan2(vel0[1], vel0[0]) if np.hypot(*vel0) > 1e-9 else goal_heading
    cand_heading = np.arctan2(cands[:, 1], cands[:, 0])
    turn = np.abs((cand_heading - ref + math.pi) % (2 * math.pi) - math.pi)
    turn[speed == 0] = 0.0

    K = len(human_future)
    radii = robot.radius + np.asarray(human_radii, float)
    ks = np.arange(1, K + 1)[None, :, None]
    roll = p0 + ks * cands[:, None, :] * cfg.dt  # (C, K, 2)
    contact_free, margin_free, score = _rate_rollouts(roll, goal, human_future, radii, cfg)
    if margin_free.max() < K and K > 1:
        # boxed in: let each first action be followed by its best held continuation
        cont = action_grid(cfg, goal_heading, cfg.robot_v_max)
        first = p0 + cands * cfg.dt
        steps = np.arange(K)[None, None, :, None]
        roll2 = first[:, None, None, :] + steps * cont[None, :, None, :] * cfg.dt  # (C, C2, K, 2)
        c2, m2, s2 = _rate_rollouts(roll2.reshape(-1, K, 2), goal, human_future, radii, cfg)
        c2, m2, s2 = (a.reshape(len(cands), len(cont)) for a in (c2, m2, s2))
        key = (c2 * (K + 1) + m2) * 1e6 - np.minimum(s2, 1e5)
        pick = key.argmax(axis=1)
        rows = np.arange(len(cands))
        contact_free, margin_free, score = c2[rows, pick], m2[rows, pick], s2[rows, pick]
    best = np.lexsort((speed, turn, score, -margin_free, -contact_free))[0]
    return cands[best].copy()


def _rate_rollouts(roll, goal, human_future, radii, cfg: SimConfig):
    """Contact-free steps, margin-keeping steps and score of rollouts (R, K, 2)."""
    K = roll.shape[1]
    goal_term = np.linalg.norm(roll - goal, axis=-1).mean(axis=1)
    if not human_future.shape[1]:
        full = np.full(len(roll), K)
        return full, full, goal_term
    gap = np.linalg.norm(roll[:, :, None, :] - human_future[None], axis=-1) - radii  # (R, K, n)
    col = col_cost_of_clearance(gap - cfg.safety_margin, cfg.epsilon)[0].sum(axis=1).max(axis=1)
    worst = gap.min(axis=2)
    return _steps_until(worst < 0.0), _steps_until(worst < cfg.safety_margin), goal_term + cfg.collision_weight * col


def _steps_until(bad: np.ndarray) -> np.ndarray:
    """Per row, the number of leading False entries."""
    return np.where(bad.any(axis=1), bad.argmax(axis=1), bad.shape[1])


def run_episode(cfg: SimConfig, seed: int) -> EpisodeRecord:
    """Simulate one episode until the robot reaches its goal or the step limit."""
    spec = sample_scenario(cfg, seed)
    horizon = cfg.episode_max_steps + cfg.rollout_steps + 1
    h_pos, h_vel = simulate_humans(spec, cfg, horizon)
    human_radii = np.full(cfg.n_humans, cfg.agent_radius)

    r_pos = [spec.robot_start.astype(float)]
    r_vel = []
    v = np.zeros(2)
    t = 0
    while True:
        if np.linalg.norm(r_pos[-1] - spec.robot_goal) < cfg.goal_tolerance:
            r_vel.append(np.zeros(2))
            break
        state = AgentState(tuple(r_pos[-1]), tuple(v), cfg.robot_radius)
        v = demonstrate(state, spec.robot_goal, h_pos[t + 1 : t + 1 + cfg.rollout_steps], human_radii, cfg)
        r_vel.append(v)
        if t >= cfg.episode_max_steps:
            break
        r_pos.append(r_pos[-1] + v * cfg.dt)
        t += 1

    L = len(r_pos)
    positions = np.concatenate([np.array(r_pos)[:, None], h_pos[:L]], axis=1)
    velocities = np.concatenate([np.array(r_vel)[:, None], h_vel[:L]], axis=1)
    return EpisodeRecord(
        seed=seed,
        positions=positions,
        velocities=velocities,
        radii=np.concatenate([[cfg.robot_radius], human_radii]),
        goals=np.vstack([spec.robot_goal, spec.human_goals]),
        dt=cfg.dt,
        agent_ids=tuple(["robot"] + [f"human{i}" for i in range(cfg.n_humans)]),
        ego_agents=(0,),
    )


def min_robot_clearance(rec: EpisodeRecord, robot: int = 0) -> float:
    """Smallest (center distance - summed radii) between the robot and any human."""
    others = [i for i in range(rec.n_agents) if i != robot]
    if not others:
        return math.inf
    d = np.linalg.norm(rec.positions[:, others] - rec.positions[:, [robot]], axis=-1)
    d = d - rec.radii[robot] - rec.radii[others]
    return float(np.nanmin(d))


def episode_collided(rec: EpisodeRecord, robot: int = 0) -> bool:
    return min_robot_clearance(rec, robot) < 0.0


def generate(cfg: SimConfig, seeds, jobs: int = 1) -> list[EpisodeRecord]:
    """Run episodes for ``seeds``; results are returned in seed order."""
    seeds = list(seeds)
    if jobs <= 1 or len(seeds) < 2:
        return [run_episode(cfg, s) for s in seeds]
    from concurrent.futures import ProcessPoolExecutor
    from functools import partial

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(partial(run_episode, cfg), seeds, chunksize=max(1, len(seeds) // (4 * jobs))))
