"""Forecaster and planner networks on the diffkit tape."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from advnav.core.types import Trajectory, Window
from advnav.diffkit import ParamStore
from advnav.models.batch import Batch, collate_dataset, collate_windows
from advnav.models.net import (
    ModelConfig,
    attend,
    attention_mask,
    encode_history,
    forecast,
    forecast_positions,
    history_features,
    init_forecaster,
    init_planner,
    nll_graph,
    plan,
    plan_positions,
    trunk,
)


@dataclass(frozen=True)
class ForecastOutput:
    """Mean predicted trajectory of every non-ego agent, in context order."""

    trajectories: tuple[Trajectory, ...]

    def __post_init__(self):
        lengths = {len(t) for t in self.trajectories}
        if len(lengths) > 1:
            raise ValueError("forecast trajectories differ in length")
        for t in self.trajectories:
            if not np.all(np.isfinite(t.positions)):
                raise ValueError("non-finite forecast")


@dataclass(frozen=True)
class PlanOutput:
    trajectory: Trajectory

    def __post_init__(self):
        if not np.all(np.isfinite(self.trajectory.positions)):
            raise ValueError("non-finite plan")


def nll(pred: Trajectory, gt: Trajectory, sigma: float = 1.0) -> float:
    """Isotropic Gaussian negative log-likelihood of ``gt`` under mean ``pred``,
    constant dropped: sum over steps of |p_hat - p|^2 / (2 sigma^2)."""
    if len(pred) != len(gt):
        raise ValueError(f"length mismatch: {len(pred)} vs {len(gt)}")
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    return float(np.sum((pred.positions - gt.positions) ** 2) / (2.0 * sigma**2))


def _traj(positions: np.ndarray, start: np.ndarray, radius: float, dt: float) -> Trajectory:
    return Trajectory.from_positions(positions, radius, dt, last_position=start)


def predict_windows(forecaster: ParamStore, planner: ParamStore | None, windows: Sequence[Window],
                    cfg: ModelConfig) -> list[tuple[ForecastOutput, PlanOutput | None]]:
    """Forecasts (and plans, when a planner is given) for individual windows."""
    if not windows:
        return []
    batch = collate_windows(windows)
    fc = forecast_positions(forecaster, batch, cfg)
    pl = plan_positions(planner, batch, fc, cfg) if planner is not None else None
    out = []
    for b, w in enumerate(windows):
        k = w.context.n_agents
        trajs = tuple(
            _traj(fc[b, j], batch.hist[b, j, -1], float(batch.radii[b, j]), batch.dt) for j in range(1, k)
        )
        p = None
        if pl is not None:
            p = PlanOutput(_traj(pl[b], batch.hist[b, 0, -1], float(batch.radii[b, 0]), batch.dt))
        out.append((ForecastOutput(trajs), p))
    return out


__all__ = [
    "Batch", "collate_dataset", "collate_windows", "ModelConfig", "attend", "attention_mask", "encode_history",
    "forecast", "forecast_positions", "history_features", "init_forecaster", "init_planner", "nll_graph", "plan",
    "plan_positions", "trunk", "ForecastOutput", "PlanOutput", "nll", "predict_windows",
]
