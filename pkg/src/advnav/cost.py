"""Obstacle cost between robot and human trajectories.

The per-step cost is a function of the signed clearance
``d = |p_R - p_H| - r_R - r_H`` (negative when bodies overlap)::

    d < 0          ->  -d + eps/2
    0 <= d < eps   ->  (d - eps)^2 / (2 eps)
    d >= eps       ->  0

Pair costs sum over timesteps; a scene is scored by its worst human.
Plain-numpy versions serve evaluation and the demonstrator; the ``*_graph``
versions build differentiable nodes for training.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from advnav.core.types import AgentState, Trajectory
from advnav.diffkit import Node, ops


@dataclass(frozen=True)
class CostParams:
    epsilon: float = 0.2
    aggregation: str = "max"
    # added to the summed radii; the demonstrator inflates bodies by its margin
    inflation: float = 0.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.aggregation not in ("max", "sum"):
            raise ValueError(f"aggregation must be max|sum, got {self.aggregation!r}")
        if self.inflation < 0:
            raise ValueError("inflation must be >= 0")


def col_cost_of_clearance(d, eps: float):
    """Cost and dcost/dd for signed clearance ``d`` (scalar or array)."""
    d = np.asarray(d, dtype=np.float64)
    pen = d < 0
    near = (d >= 0) & (d < eps)
    value = np.where(pen, -d + 0.5 * eps, np.where(near, (d - eps) ** 2 / (2 * eps), 0.0))
    slope = np.where(pen, -1.0, np.where(near, (d - eps) / eps, 0.0))
    return value, slope


def col_cost(sR: AgentState, sH: AgentState, p: CostParams = CostParams()):
    """Cost of one robot/human state pair with its gradient w.r.t. both positions.

    Returns ``(value, grad_robot_position, grad_human_position)``. Coincident
    centers get a zero gradient.
    """
    diff = np.asarray(sR.position, float) - np.asarray(sH.position, float)
    dist = float(np.hypot(*diff))
    d = dist - sR.radius - sH.radius - p.inflation
    value, slope = col_cost_of_clearance(d, p.epsilon)
    unit = diff / dist if dist > 0 else np.zeros(2)
    g = float(slope) * unit
    return float(value), g, -g


def clearance(robot_pos, human_pos, r_robot, r_human, inflation: float = 0.0) -> np.ndarray:
    """Signed clearance, broadcasting over leading dims of the position arrays."""
    return (
        np.linalg.norm(np.asarray(robot_pos) - np.asarray(human_pos), axis=-1)
        - np.asarray(r_robot)
        - np.asarray(r_human)
        - inflation
    )


def pair_cost(xi_R: Trajectory, xi_H: Trajectory, p: CostParams = CostParams()) -> float:
    if len(xi_R) != len(xi_H):
        raise ValueError(f"horizon mismatch: robot {len(xi_R)} vs human {len(xi_H)}")
    d = clearance(xi_R.positions, xi_H.positions, xi_R.radius, xi_H.radius, p.inflation)
    return float(np.sum(col_cost_of_clearance(d, p.epsilon)[0]))


def scene_cost(xi_R: Trajectory, humans: Sequence[Trajectory], p: CostParams = CostParams()) -> tuple[float, int]:
    """Worst pair cost over humans and the index attaining it (lowest on ties).

    With ``aggregation="sum"`` the costs are summed and the index is that of
    the largest contributor.
    """
    if not humans:
        return 0.0, 0
    costs = np.array([pair_cost(xi_R, h, p) for h in humans])
    idx = int(np.argmax(costs))
    total = float(costs[idx]) if p.aggregation == "max" else float(np.sum(costs))
    return total, idx


def scene_costs_array(plans, humans, r_robot, r_humans, mask, p: CostParams = CostParams()) -> np.ndarray:
    """Vectorised scene cost.

    ``plans`` (B, T, 2), ``humans`` (B, M, T, 2), ``r_robot`` (B,),
    ``r_humans`` (B, M), ``mask`` (B, M) marks real humans. Returns (B,).
    """
    d = clearance(plans[:, None], humans, np.asarray(r_robot)[:, None, None], np.asarray(r_humans)[..., None],
                  p.inflation)
    pair = col_cost_of_clearance(d, p.epsilon)[0].sum(axis=-1) * mask
    if pair.shape[1] == 0:
        return np.zeros(len(plans))
    return pair.max(axis=1) if p.aggregation == "max" else pair.sum(axis=1)


def min_center_margin(plans, humans, r_robot, r_humans, mask) -> np.ndarray:
    """Min over humans and steps of (center distance - summed radii); +inf without humans."""
    d = clearance(plans[:, None], humans, np.asarray(r_robot)[:, None, None], np.asarray(r_humans)[..., None])
    d = np.where(np.asarray(mask, bool)[..., None], d, np.inf)
    if d.shape[1] == 0:
        return np.full(len(plans), np.inf)
    return d.min(axis=(1, 2))


def collision_rate(plans, human_sets, radii=None) -> float:
    """Fraction of scenes whose plan overlaps some human at some step.

    ``plans`` is a sequence of robot Trajectories and ``human_sets`` a
    sequence of human-Trajectory sequences; ``radii`` optionally overrides
    (robot, human) radii.
    """
    if len(plans) != len(human_sets):
        raise ValueError("plans and human_sets differ in length")
    if not plans:
        raise ValueError("no scenes")
    hits = 0
    for plan, humans in zip(plans, human_sets):
        r_r = plan.radius if radii is None else radii[0]
        for h in humans:
            r_h = h.radius if radii is None else radii[1]
            if np.min(np.linalg.norm(plan.positions - h.positions, axis=-1)) < r_r + r_h:
                hits += 1
                break
    return hits / len(plans)


def col_cost_graph(d: Node, eps: float) -> Node:
    """Differentiable per-step cost of a clearance node; branch masks are
    taken from the forward value."""
    pen = (d.value < 0).astype(np.float64)
    near = ((d.value >= 0) & (d.value < eps)).astype(np.float64)
    lin = ops.mul(ops.add(ops.neg(d), 0.5 * eps), pen)
    quad = ops.mul(ops.scale(ops.square(ops.sub(d, eps)), 1.0 / (2 * eps)), near)
    return ops.add(lin, quad)


def scene_cost_graph(plans, humans, r_robot, r_humans, mask, p: CostParams = CostParams()) -> Node:
    """Graph version of :func:`scene_costs_array`; either position argument may
    be a constant array. Gradient of the max flows only to the worst human."""
    if isinstance(plans, Node):
        rel = ops.sub(ops.reshape(plans, (plans.shape[0], 1) + plans.shape[1:]), humans)
    else:
        rel = ops.sub(np.asarray(plans)[:, None], humans)
    radius = np.asarray(r_robot)[:, None, None] + np.asarray(r_humans)[..., None] + p.inflation
    d = ops.sub(ops.norm(rel, axis=-1), radius)
    pair = ops.mul(ops.sum(col_cost_graph(d, p.epsilon), axis=-1), np.asarray(mask, np.float64))
    if pair.shape[1] == 0:
        return ops.scale(ops.sum(pair, axis=1), 0.0)
    return ops.max(pair, axis=1) if p.aggregation == "max" else ops.sum(pair, axis=1)
