"""Independent reference solvers used by the simulator tests and the
acceptance suite."""
import math

import numpy as np

from advnav.sim import HalfPlane


def _worst(constraints, v):
    pts = np.array([c.point for c in constraints], float).reshape(-1, 2)
    nrm = np.array([c.normal for c in constraints], float).reshape(-1, 2)
    if not len(pts):
        return np.full(len(v), -np.inf)
    return (-((v[:, None, :] - pts[None]) * nrm[None]).sum(-1)).max(axis=1)


def grid_oracle(constraints, v_pref, v_max, n=201, rounds=4):
    """Dense 2D search over the speed disk with local refinement.

    Returns (best point, feasible flag, objective): distance to v_pref when
    the constraints are feasible, otherwise the smallest worst violation."""

    def search(center, half, feasible):
        g = np.linspace(-half, half, n)
        v = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2) + center
        v = v[np.linalg.norm(v, axis=1) <= v_max]
        w = _worst(constraints, v)
        if feasible is None:
            feasible = w.min() <= 0
        obj = np.where(w <= 0, np.linalg.norm(v - v_pref, axis=1), np.inf) if feasible else w
        k = int(np.argmin(obj))
        return v[k], feasible, obj[k]

    best, feasible, obj = search(np.zeros(2), v_max, None)
    half = v_max
    for _ in range(rounds):
        half = 4 * half / (n - 1)
        cand, _, cobj = search(best, half, feasible)
        if cobj <= obj:
            best, obj = cand, cobj
    return best, feasible, obj


def boundary_oracle(constraints, v_pref, v_max, n=20001, rounds=3):
    """Closest feasible velocity by dense 1D search along every boundary curve.

    Along one line or the speed circle the distance to v_pref is unimodal on
    each feasible interval, so refining around the best sample is exact."""
    v_pref = np.asarray(v_pref, float)
    if np.linalg.norm(v_pref) <= v_max and _worst(constraints, v_pref[None])[0] <= 0:
        return v_pref
    curves = [lambda th: v_max * np.stack([np.cos(th), np.sin(th)], -1)]
    spans = [(-math.pi, math.pi)]
    for c in constraints:
        p, d = np.array(c.point, float), np.array(c.direction, float)
        b, q = p @ d, p @ p - v_max**2
        disc = b * b - q
        if disc < 0:
            continue
        curves.append(lambda t, p=p, d=d: p + t[:, None] * d)
        spans.append((-b - math.sqrt(disc), -b + math.sqrt(disc)))
    best, best_obj = None, np.inf
    for curve, (lo, hi) in zip(curves, spans):
        for _ in range(rounds + 1):
            t = np.linspace(lo, hi, n)
            v = curve(t)
            ok = (_worst(constraints, v) <= 1e-12) & (np.linalg.norm(v, axis=1) <= v_max + 1e-12)
            if not ok.any():
                break
            obj = np.where(ok, np.linalg.norm(v - v_pref, axis=1), np.inf)
            k = int(np.argmin(obj))
            if obj[k] < best_obj:
                best, best_obj = v[k], obj[k]
            h = (hi - lo) / (n - 1)
            lo, hi = t[k] - h, t[k] + h
    return best


def random_halfplanes(rng, k):
    out = []
    for _ in range(k):
        a = rng.uniform(0, 2 * math.pi)
        p = rng.uniform(-1.0, 1.0, 2)
        out.append(HalfPlane(tuple(p), (math.cos(a), math.sin(a))))
    return out
