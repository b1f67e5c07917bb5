"""Optimal reciprocal collision avoidance for disk agents.

A half-plane is ``(point, normal)`` with the permitted set
``{v : (v - point) . normal >= 0}``; ``normal`` is the unit outward normal of
the velocity obstacle at the point closest to the current relative velocity.
The solver is the incremental 2D linear program with the 3D fallback for
infeasible constraint sets, operating on plain floats for speed.
"""
from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

from advnav.core.types import AgentState

EPS = 1e-5


class HalfPlane(NamedTuple):
    point: tuple[float, float]
    normal: tuple[float, float]

    @property
    def direction(self) -> tuple[float, float]:
        # permitted side lies to the left of the direction
        return (self.normal[1], -self.normal[0])

    def violation(self, v) -> float:
        """Signed distance of ``v`` into the forbidden side (<= 0 when satisfied)."""
        return -((v[0] - self.point[0]) * self.normal[0] + (v[1] - self.point[1]) * self.normal[1])


def _det(ax, ay, bx, by):
    return ax * by - ay * bx


def preferred_velocity(state: AgentState, goal, v_max: float, dt: float) -> np.ndarray:
    """Head straight for the goal at ``min(v_max, distance / dt)``."""
    dx, dy = goal[0] - state.position[0], goal[1] - state.position[1]
    dist = math.hypot(dx, dy)
    if dist == 0.0:
        return np.zeros(2)
    speed = min(v_max, dist / dt)
    return np.array([dx / dist * speed, dy / dist * speed])


def orca_halfplane(pos, vel, radius, other_pos, other_vel, other_radius, tau: float, dt: float,
                   reciprocity: float = 0.5) -> HalfPlane:
    rpx, rpy = other_pos[0] - pos[0], other_pos[1] - pos[1]
    rvx, rvy = vel[0] - other_vel[0], vel[1] - other_vel[1]
    dist_sq = rpx * rpx + rpy * rpy
    r = radius + other_radius
    r_sq = r * r
    if dist_sq > r_sq:
        inv_tau = 1.0 / tau
        wx, wy = rvx - inv_tau * rpx, rvy - inv_tau * rpy
        w_len_sq = wx * wx + wy * wy
        dot1 = wx * rpx + wy * rpy
        if dot1 < 0.0 and dot1 * dot1 > r_sq * w_len_sq:
            # closest boundary point lies on the cut-off circle
            w_len = math.sqrt(w_len_sq)
            ux, uy = wx / w_len, wy / w_len
            dx, dy = uy, -ux
            s = r * inv_tau - w_len
            u = (s * ux, s * uy)
        else:
            leg = math.sqrt(dist_sq - r_sq)
            if _det(rpx, rpy, wx, wy) > 0.0:
                dx = (rpx * leg - rpy * r) / dist_sq
                dy = (rpx * r + rpy * leg) / dist_sq
            else:
                dx = -(rpx * leg + rpy * r) / dist_sq
                dy = -(-rpx * r + rpy * leg) / dist_sq
            dot2 = rvx * dx + rvy * dy
            u = (dot2 * dx - rvx, dot2 * dy - rvy)
    else:
        # already overlapping: resolve within one step
        inv_dt = 1.0 / dt
        wx, wy = rvx - inv_dt * rpx, rvy - inv_dt * rpy
        w_len = math.hypot(wx, wy)
        if w_len == 0.0:
            # no preferred escape direction: move directly apart
            d_len = math.sqrt(dist_sq)
            wx, wy, w_len = (-rpx / d_len, -rpy / d_len, 1.0) if d_len > 0 else (1.0, 0.0, 1.0)
        ux, uy = wx / w_len, wy / w_len
        dx, dy = uy, -ux
        s = r * inv_dt - w_len
        u = (s * ux, s * uy)
    point = (vel[0] + reciprocity * u[0], vel[1] + reciprocity * u[1])
    return HalfPlane(point, (-dy, dx))


def orca_halfplanes(ego: AgentState, neighbors: Sequence[AgentState], tau: float, dt: float,
                    reciprocity: float = 0.5) -> list[HalfPlane]:
    return [
        orca_halfplane(ego.position, ego.velocity, ego.radius, n.position, n.velocity, n.radius, tau, dt,
                       reciprocity)
        for n in neighbors
    ]


def _lp1(lines, i, radius, opt, direction_opt, result):
    (px, py), (dx, dy) = lines[i]
    dot = px * dx + py * dy
    disc = dot * dot + radius * radius - (px * px + py * py)
    if disc < 0.0:
        return False
    sq = math.sqrt(disc)
    t_left, t_right = -dot - sq, -dot + sq
    for j in range(i):
        (qx, qy), (ex, ey) = lines[j]
        denom = _det(dx, dy, ex, ey)
        numer = _det(ex, ey, px - qx, py - qy)
        if abs(denom) <= EPS:
            if numer < 0.0:
                return False
            continue
        t = numer / denom
        if denom >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return False
    if direction_opt:
        t = t_right if opt[0] * dx + opt[1] * dy > 0.0 else t_left
    else:
        t = (dx * (opt[0] - px) + dy * (opt[1] - py))
        t = min(max(t, t_left), t_right)
    result[0], result[1] = px + t * dx, py + t * dy
    return True


def _lp2(lines, radius, opt, direction_opt, result):
    if direction_opt:
        result[0], result[1] = opt[0] * radius, opt[1] * radius
    elif opt[0] * opt[0] + opt[1] * opt[1] > radius * radius:
        n = math.hypot(*opt)
        result[0], result[1] = opt[0] / n * radius, opt[1] / n * radius
    else:
        result[0], result[1] = opt[0], opt[1]
    for i, ((px, py), (dx, dy)) in enumerate(lines):
        if _det(dx, dy, px - result[0], py - result[1]) > 0.0:
            saved = (result[0], result[1])
            if not _lp1(lines, i, radius, opt, direction_opt, result):
                result[0], result[1] = saved
                return i
    return len(lines)


def _lp3(lines, begin, radius, result):
    distance = 0.0
    for i in range(begin, len(lines)):
        (px, py), (dx, dy) = lines[i]
        if _det(dx, dy, px - result[0], py - result[1]) > distance:
            proj = []
            for j in range(i):
                (qx, qy), (ex, ey) = lines[j]
                det = _det(dx, dy, ex, ey)
                if abs(det) <= EPS:
                    if dx * ex + dy * ey > 0.0:
                        continue  # same direction
                    point = (0.5 * (px + qx), 0.5 * (py + qy))
                else:
                    t = _det(ex, ey, px - qx, py - qy) / det
                    point = (px + t * dx, py + t * dy)
                nx, ny = ex - dx, ey - dy
                nn = math.hypot(nx, ny)
                proj.append((point, (nx / nn, ny / nn)))
            saved = (result[0], result[1])
            if _lp2(proj, radius, (-dy, dx), True, result) < len(proj):
                # only floating-point error can get here; keep the previous result
                result[0], result[1] = saved
            distance = _det(dx, dy, px - result[0], py - result[1])


def solve_velocity(constraints: Sequence[HalfPlane], v_pref, v_max: float) -> np.ndarray:
    """Velocity closest to ``v_pref`` inside every half-plane and the speed disk.

    When the half-planes have no common point inside the disk, returns a
    velocity minimising the largest constraint violation instead.
    """
    lines = [(tuple(map(float, c.point)), c.direction) for c in constraints]
    result = [0.0, 0.0]
    opt = (float(v_pref[0]), float(v_pref[1]))
    fail = _lp2(lines, v_max, opt, False, result)
    if fail < len(lines):
        _lp3(lines, fail, v_max, result)
    return np.array(result)


def max_violation(constraints: Sequence[HalfPlane], v) -> float:
    return max((c.violation(v) for c in constraints), default=-math.inf)
