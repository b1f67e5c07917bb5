"""Ingestion of raw pedestrian tracks in the ETH/UCY text layout.

Each non-blank line is ``frame_id agent_id x y`` (whitespace separated, meters).
One frame step of the file is taken to last ``dt`` seconds (0.4 s for ETH/UCY,
whose frame ids advance in multiples of 10).
"""
from __future__ import annotations

import math
from collections import defaultdict
from functools import reduce
from pathlib import Path

import numpy as np

from advnav.core.types import Dataset, EpisodeRecord

ETH_DT = 0.4
ETH_H = 8
ETH_T = 12
PEDESTRIAN_RADIUS = 0.2
RAW_SUFFIXES = (".txt", ".tsv", ".ethucy")


class TrajectoryParseError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


def _read_rows(path) -> list[tuple[int, str, float, float, int]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise TrajectoryParseError(path, lineno, f"expected 4 fields 'frame agent x y', got {len(parts)}")
            try:
                frame_f, x, y = float(parts[0]), float(parts[2]), float(parts[3])
                agent = float(parts[1])
            except ValueError as exc:
                raise TrajectoryParseError(path, lineno, f"non-numeric field: {exc}") from None
            if not all(map(math.isfinite, (frame_f, agent, x, y))) or frame_f != round(frame_f):
                raise TrajectoryParseError(path, lineno, "frame id must be an integer and coordinates finite")
            aid = str(int(agent)) if agent == round(agent) else repr(agent)
            rows.append((int(round(frame_f)), aid, x, y, lineno))
    return rows


def _segments(track: list, step: int, max_gap: int) -> list[np.ndarray]:
    """Split a (frame, x, y) track at gaps of more than ``max_gap`` missing
    frames and linearly fill the shorter gaps. Returns arrays of
    (timeline_index, x, y) rows with consecutive indices."""
    out, cur = [], [track[0]]
    for prev, row in zip(track, track[1:]):
        missing = (row[0] - prev[0]) // step - 1
        if missing > max_gap:
            out.append(cur)
            cur = [row]
            continue
        for k in range(1, missing + 1):
            a = k / (missing + 1)
            cur.append((prev[0] + k * step, prev[1] + a * (row[1] - prev[1]), prev[2] + a * (row[2] - prev[2])))
        cur.append(row)
    out.append(cur)
    return [np.array(seg, dtype=np.float64) for seg in out]


def parse_trajectory_file(
    path,
    H: int = ETH_H,
    T: int = ETH_T,
    dt: float = ETH_DT,
    radius: float = PEDESTRIAN_RADIUS,
    max_gap: int = 2,
    seed: int = 0,
) -> list[EpisodeRecord]:
    """Parse one raw file into at most one episode holding every usable track.

    Tracks shorter than ``H + T`` frames can never fill a window and are
    dropped; if none survive the result is empty. Every remaining agent may act
    as ego; its goal is the last position of its track.
    """
    rows = _read_rows(path)
    if not rows:
        return []
    tracks: dict[str, list] = defaultdict(list)
    for frame, aid, x, y, lineno in rows:
        tr = tracks[aid]
        if tr and frame <= tr[-1][0]:
            raise TrajectoryParseError(path, lineno, f"frames of agent {aid} are not strictly increasing")
        tr.append((frame, x, y))
    frames = sorted({r[0] for r in rows})
    diffs = [b - a for a, b in zip(frames, frames[1:])]
    step = reduce(math.gcd, diffs) if diffs else 1
    origin = frames[0]

    segments = []
    for aid in sorted(tracks, key=_agent_sort_key):
        for k, seg in enumerate(_segments(tracks[aid], step, max_gap)):
            if len(seg) >= H + T:
                segments.append((aid if k == 0 else f"{aid}#{k}", seg))
    if not segments:
        return []

    n_steps = (frames[-1] - origin) // step + 1
    n = len(segments)
    pos = np.full((n_steps, n, 2), np.nan)
    vel = np.full((n_steps, n, 2), np.nan)
    goals = np.zeros((n, 2))
    for j, (_, seg) in enumerate(segments):
        idx = ((seg[:, 0] - origin) // step).astype(int)
        p = seg[:, 1:3]
        v = np.empty_like(p)
        v[:-1] = np.diff(p, axis=0) / dt
        v[-1] = v[-2]
        pos[idx, j] = p
        vel[idx, j] = v
        goals[j] = p[-1]
    first = min(int((seg[0, 0] - origin) // step) for _, seg in segments)
    last = max(int((seg[-1, 0] - origin) // step) for _, seg in segments)
    rec = EpisodeRecord(
        seed=seed,
        positions=pos[first : last + 1],
        velocities=vel[first : last + 1],
        radii=np.full(n, radius),
        goals=goals,
        dt=dt,
        agent_ids=tuple(aid for aid, _ in segments),
        ego_agents=tuple(range(n)),
    )
    return [rec]


def _agent_sort_key(aid: str):
    try:
        return (0, float(aid), aid)
    except ValueError:
        return (1, 0.0, aid)


def raw_files(path) -> list[Path]:
    path = Path(path)
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.is_file() and p.suffix.lower() in RAW_SUFFIXES)
    return [path]


def ingest(path, H: int = ETH_H, T: int = ETH_T, dt: float = ETH_DT, radius: float = PEDESTRIAN_RADIUS) -> Dataset:
    """Parse a raw file or every raw file of a directory (sorted by name)."""
    records = []
    for i, f in enumerate(raw_files(path)):
        records.extend(parse_trajectory_file(f, H=H, T=T, dt=dt, radius=radius, seed=i))
    return Dataset(records, "all", H, T, dt, {"source": "ethucy", "pedestrian_radius": radius})
