"""Small builders shared by the model, training and evaluation tests."""
import numpy as np

from advnav.core import Dataset
from advnav.core.types import EpisodeRecord
from advnav.models import Batch, ModelConfig

SMALL = ModelConfig(H=4, T=3, embed=8, hidden=8)


def random_batch(seed=0, B=3, N=4, H=4, T=3, dt=0.25, pad=True, spread=3.0):
    """Random scene batch; with ``pad`` the last slot of sample 0 is empty."""
    rng = np.random.default_rng(seed)
    start = rng.uniform(-spread, spread, (B, N, 1, 2))
    vel = rng.uniform(-1, 1, (B, N, 1, 2))
    steps = np.arange(H + T)[None, None, :, None] * dt
    traj = start + vel * steps + rng.normal(scale=0.02, size=(B, N, H + T, 2))
    mask = np.ones((B, N), bool)
    if pad and B > 0 and N > 2:
        mask[0, -1] = False
    traj = traj * mask[:, :, None, None]
    adj = np.ones((B, N, N), bool) & mask[:, :, None] & mask[:, None, :]
    adj &= ~np.eye(N, dtype=bool)[None]
    radii = np.where(mask, 0.3, 0.0)
    goal = rng.uniform(-4, 4, (B, 2))
    ids = np.stack([np.arange(B), np.full(B, H - 1), np.zeros(B, int)], axis=1)
    return Batch(traj[:, :, :H].copy(), traj[:, :, H:].copy(), mask, adj, radii, goal, ids, dt)


def cv_dataset(n_episodes=4, n_agents=3, length=30, dt=0.25, H=4, T=3, seed=0, split="all"):
    """Agents walking straight lines at constant velocity."""
    rng = np.random.default_rng(seed)
    recs = []
    for e in range(n_episodes):
        start = rng.uniform(-4, 4, (n_agents, 2))
        vel = rng.uniform(-1, 1, (n_agents, 2))
        t = np.arange(length)[:, None, None] * dt
        pos = start[None] + vel[None] * t
        recs.append(EpisodeRecord(seed + e, pos, np.broadcast_to(vel, pos.shape).copy(),
                                  np.full(n_agents, 0.3), start + vel * length * dt, dt))
    return Dataset(recs, split, H, T, dt)
