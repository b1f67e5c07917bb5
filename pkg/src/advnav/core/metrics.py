from __future__ import annotations

import numpy as np

from advnav.core.types import Dataset, Trajectory


def _positions(x) -> np.ndarray:
    return x.positions if isinstance(x, Trajectory) else np.asarray(x, dtype=np.float64)


def ade(pred, gt) -> float:
    """Mean Euclidean position error over timesteps."""
    p, g = _positions(pred), _positions(gt)
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {g.shape}")
    if len(p) == 0:
        raise ValueError("empty trajectory")
    return float(np.mean(np.linalg.norm(p - g, axis=-1)))


def fde(pred, gt) -> float:
    """Euclidean position error at the last timestep."""
    p, g = _positions(pred), _positions(gt)
    if len(p) == 0 or len(g) == 0:
        raise ValueError("empty trajectory")
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {g.shape}")
    return float(np.linalg.norm(p[-1] - g[-1]))


def split_dataset(d: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Episode-level seeded shuffle; the train side gets floor(fraction * N)."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    if len(d) == 0:
        raise ValueError("cannot split an empty dataset")
    order = np.random.default_rng(seed).permutation(len(d))
    n_train = int(np.floor(fraction * len(d)))
    train = [d.records[i] for i in sorted(order[:n_train])]
    test = [d.records[i] for i in sorted(order[n_train:])]
    meta = dict(d.meta, split_seed=seed, split_fraction=fraction)
    return (
        Dataset(train, "train", d.H, d.T, d.dt, meta),
        Dataset(test, "test", d.H, d.T, d.dt, meta),
    )
