from advnav.sim.orca import HalfPlane, max_violation, orca_halfplanes, preferred_velocity, solve_velocity
from advnav.sim.crowd import (
    PlacementError,
    ScenarioSpec,
    SimConfig,
    demonstrate,
    episode_collided,
    generate,
    min_robot_clearance,
    run_episode,
    sample_scenario,
    simulate_humans,
    step_humans,
)

__all__ = [
    "HalfPlane", "max_violation", "orca_halfplanes", "preferred_velocity", "solve_velocity",
    "PlacementError", "ScenarioSpec", "SimConfig", "demonstrate", "episode_collided", "generate",
    "min_robot_clearance", "run_episode", "sample_scenario", "simulate_humans", "step_humans",
]
