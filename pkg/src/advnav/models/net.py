"""Encoder, attention and the two decoder heads.

Both players own a full trunk (history encoder plus attention); the
forecaster adds a head that decodes every agent's embedding into future
positions, the planner adds a head that decodes the ego embedding together
with a pooled summary of the forecasts and the ego goal. Heads emit per-step
velocities; positions are the running sum of ``velocity * dt`` starting at
the last observed position.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from advnav.diffkit import Node, ParamStore, Tape, ops
from advnav.models.batch import Batch

N_FEATURES = 4
MASKED = -1e9


@dataclass(frozen=True)
class ModelConfig:
    H: int = 8
    T: int = 8
    embed: int = 32
    heads: int = 1
    encoder: str = "recurrent"
    hidden: int = 64
    sigma: float = 1.0
    neighbor_radius: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if min(self.H, self.T, self.embed, self.heads, self.hidden) < 1:
            raise ValueError("model dimensions must be > 0")
        if self.embed % self.heads:
            raise ValueError(f"embed {self.embed} is not divisible by heads {self.heads}")
        if self.encoder not in ("recurrent", "affine"):
            raise ValueError(f"encoder must be recurrent|affine, got {self.encoder!r}")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if not self.neighbor_radius > 0:
            raise ValueError("neighbor_radius must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def _init_trunk(store: ParamStore, cfg: ModelConfig) -> None:
    D = cfg.embed
    if cfg.encoder == "recurrent":
        store.add_affine("enc.in", N_FEATURES, 3 * D)
        store.add_affine("enc.hzr", D, 2 * D)
        store.add_affine("enc.hn", D, D)
    else:
        store.add_affine("enc.flat", N_FEATURES * cfg.H, D)
    for name in ("att.q", "att.k", "att.v", "att.o"):
        store.add_affine(name, D, D)


def init_forecaster(cfg: ModelConfig, seed: int | None = None) -> ParamStore:
    store = ParamStore(cfg.seed if seed is None else seed)
    _init_trunk(store, cfg)
    store.add_affine("fc.hidden", cfg.embed, cfg.hidden)
    store.add_affine("fc.out", cfg.hidden, 2 * cfg.T)
    return store


def init_planner(cfg: ModelConfig, seed: int | None = None) -> ParamStore:
    # offset the default seed so the two players never start from the same trunk
    store = ParamStore(cfg.seed + 1 if seed is None else seed)
    _init_trunk(store, cfg)
    store.add_affine("pl.fut", 2 * cfg.T, cfg.embed)
    store.add_affine("pl.hidden", 2 * cfg.embed + 2, cfg.hidden)
    store.add_affine("pl.out", cfg.hidden, 2 * cfg.T)
    return store


def history_features(batch: Batch) -> np.ndarray:
    """(B, N, H, 4): positions relative to the ego's last position and
    finite-difference velocities, zero on padded slots.

    Velocities come from history positions only; the stored per-step
    velocity is the action taken at that step and would leak the future.
    """
    hist = batch.hist
    rel = hist - hist[:, :1, -1:, :]
    vel = np.zeros_like(hist)
    if batch.H > 1:
        vel[:, :, 1:] = np.diff(hist, axis=2) / batch.dt
        vel[:, :, 0] = vel[:, :, 1]
    feats = np.concatenate([rel, vel], axis=-1)
    return feats * batch.mask[:, :, None, None]


def encode_history(p: dict, batch: Batch, cfg: ModelConfig) -> Node:
    """Per-agent embeddings (B, N, D) from the ego-centered history features."""
    if batch.H != cfg.H:
        raise ValueError(f"history length {batch.H} does not match model H={cfg.H}")
    x = history_features(batch)
    D = cfg.embed
    if cfg.encoder == "affine":
        flat = x.reshape(x.shape[0], x.shape[1], -1)
        return ops.tanh(ops.affine(flat, p["enc.flat.W"], p["enc.flat.b"]))
    xin = ops.affine(x, p["enc.in.W"], p["enc.in.b"])  # (B, N, H, 3D)
    h = None
    for k in range(cfg.H):
        xk = xin[:, :, k]
        if h is None:
            z = ops.sigmoid(ops.add(xk[..., :D], p["enc.hzr.b"][:D]))
            r = ops.sigmoid(ops.add(xk[..., D : 2 * D], p["enc.hzr.b"][D:]))
            n = ops.tanh(ops.add(xk[..., 2 * D :], p["enc.hn.b"]))
            h = ops.sub(n, ops.mul(z, n))
            continue
        hzr = ops.affine(h, p["enc.hzr.W"], p["enc.hzr.b"])
        z = ops.sigmoid(ops.add(xk[..., :D], hzr[..., :D]))
        r = ops.sigmoid(ops.add(xk[..., D : 2 * D], hzr[..., D:]))
        n = ops.tanh(ops.add(xk[..., 2 * D :], ops.affine(ops.mul(r, h), p["enc.hn.W"], p["enc.hn.b"])))
        h = ops.add(n, ops.mul(z, ops.sub(h, n)))
    return h


def attention_mask(adjacency: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Allowed (query, key) pairs: real neighbors plus the self-edge."""
    allowed = adjacency & mask[:, :, None] & mask[:, None, :]
    return allowed | np.eye(adjacency.shape[-1], dtype=bool)[None]


def attend(p: dict, emb: Node, adjacency: np.ndarray, mask: np.ndarray, cfg: ModelConfig) -> Node:
    """Masked scaled dot-product self-attention with a residual connection."""
    B, N, D = emb.shape
    h = cfg.heads
    dh = D // h

    def split(x):
        return ops.swapaxes(ops.reshape(x, (B, N, h, dh)), 1, 2)  # (B, h, N, dh)

    q = split(ops.affine(emb, p["att.q.W"], p["att.q.b"]))
    k = split(ops.affine(emb, p["att.k.W"], p["att.k.b"]))
    v = split(ops.affine(emb, p["att.v.W"], p["att.v.b"]))
    bias = np.where(attention_mask(adjacency, mask), 0.0, MASKED)[:, None]
    scores = ops.add(ops.scale(ops.matmul(q, ops.swapaxes(k, -1, -2)), 1.0 / math.sqrt(dh)), bias)
    mixed = ops.matmul(ops.softmax(scores, axis=-1), v)
    merged = ops.reshape(ops.swapaxes(mixed, 1, 2), (B, N, D))
    return ops.add(emb, ops.affine(merged, p["att.o.W"], p["att.o.b"]))


def trunk(p: dict, batch: Batch, cfg: ModelConfig) -> Node:
    return attend(p, encode_history(p, batch, cfg), batch.adjacency, batch.mask, cfg)


def _integrate(vel: Node, start: np.ndarray, dt: float, axis: int) -> Node:
    return ops.add(ops.cumsum(ops.scale(vel, dt), axis=axis), np.expand_dims(start, axis))


def forecast(p: dict, batch: Batch, cfg: ModelConfig) -> Node:
    """Predicted positions (B, N, T, 2) for every slot; slot 0 (the ego) and
    padded slots are computed but carry no meaning. Goals are never read."""
    ctx = trunk(p, batch, cfg)
    hid = ops.tanh(ops.affine(ctx, p["fc.hidden.W"], p["fc.hidden.b"]))
    out = ops.affine(hid, p["fc.out.W"], p["fc.out.b"])
    B, N = batch.size, batch.n_slots
    return _integrate(ops.reshape(out, (B, N, cfg.T, 2)), batch.last_position, batch.dt, axis=2)


def plan(p: dict, batch: Batch, forecasts, cfg: ModelConfig) -> Node:
    """Ego plan (B, T, 2) from the ego embedding, the forecasts of the other
    slots (node or array, (B, N, T, 2)) and the ego goal."""
    ctx = trunk(p, batch, cfg)
    B, N, T = batch.size, batch.n_slots, cfg.T
    ego_last = batch.last_position[:, 0]
    if isinstance(forecasts, Node):
        others = ops.getitem(forecasts, (slice(None), slice(1, None)))
    else:
        others = np.asarray(forecasts)[:, 1:]
    if N > 1:
        rel = ops.sub(others, ego_last[:, None, None, :]) if isinstance(others, Node) else \
            ctx.tape.constant(others - ego_last[:, None, None, :])
        enc = ops.tanh(ops.affine(ops.reshape(rel, (B, N - 1, 2 * T)), p["pl.fut.W"], p["pl.fut.b"]))
        pooled = ops.sum(ops.mul(enc, batch.human_mask[:, :, None].astype(np.float64)), axis=1)
    else:
        pooled = np.zeros((B, cfg.embed))
    ego = ops.getitem(ctx, (slice(None), 0))
    z = ops.concat([ego, pooled, batch.goal - ego_last], axis=-1)
    hid = ops.tanh(ops.affine(z, p["pl.hidden.W"], p["pl.hidden.b"]))
    out = ops.affine(hid, p["pl.out.W"], p["pl.out.b"])
    return _integrate(ops.reshape(out, (B, T, 2)), ego_last, batch.dt, axis=1)


def nll_graph(pred: Node, gt: np.ndarray, sigma: float) -> Node:
    """Gaussian negative log-likelihood without its constant, summed over the
    last two (time, coordinate) axes."""
    return ops.scale(ops.sum(ops.sum(ops.square(ops.sub(pred, gt)), axis=-1), axis=-1), 0.5 / sigma**2)


def forecast_positions(store: ParamStore, batch: Batch, cfg: ModelConfig, chunk: int = 1024) -> np.ndarray:
    """Forward-only forecasts for a batch of any size, (B, N, T, 2)."""
    parts = []
    for lo in range(0, batch.size, chunk):
        tape = Tape()
        idx = np.arange(lo, min(lo + chunk, batch.size))
        parts.append(forecast(store.attach(tape, trainable=False), batch.take(idx), cfg).value)
    if not parts:
        return np.zeros((0, batch.n_slots, cfg.T, 2))
    return np.concatenate(parts)


def plan_positions(store: ParamStore, batch: Batch, forecasts: np.ndarray, cfg: ModelConfig,
                   chunk: int = 1024) -> np.ndarray:
    """Forward-only plans for a batch of any size, (B, T, 2)."""
    parts = []
    for lo in range(0, batch.size, chunk):
        idx = np.arange(lo, min(lo + chunk, batch.size))
        tape = Tape()
        parts.append(plan(store.attach(tape, trainable=False), batch.take(idx), forecasts[idx], cfg).value)
    if not parts:
        return np.zeros((0, cfg.T, 2))
    return np.concatenate(parts)
