"""JSON-lines dataset files.

Line 1 is a header ``{"version": 1, "dt", "H", "T", "split_tag", "meta"}``;
every further line is one episode::

    {"seed": 3, "agents": [{"id": "0", "radius": 0.3, "goal": [x, y], "ego": true}, ...],
     "frames": [[[agent_index, x, y, vx, vy], ...], ...]}

Absent agents are simply missing from a frame. Floats use Python's shortest
round-trip repr, so write -> read -> write is byte-stable.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from advnav.core.types import Dataset, EpisodeRecord

SCHEMA_VERSION = 1


class DatasetFormatError(ValueError):
    pass


def atomic_write(path, data: bytes | str) -> None:
    """Write via a sibling temp file and rename, so readers never see partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def episode_to_json(rec: EpisodeRecord) -> dict:
    egos = set(rec.ego_agents)
    agents = [
        {"id": aid, "radius": float(r), "goal": [float(g[0]), float(g[1])], "ego": i in egos}
        for i, (aid, r, g) in enumerate(zip(rec.agent_ids, rec.radii, rec.goals))
    ]
    present = rec.present
    frames = []
    for t in range(rec.n_steps):
        idx = np.flatnonzero(present[t])
        p, v = rec.positions[t, idx].tolist(), rec.velocities[t, idx].tolist()
        frames.append([[int(i), *pi, *vi] for i, pi, vi in zip(idx.tolist(), p, v)])
    # ego order matters when several agents may act as ego
    return {"seed": int(rec.seed), "agents": agents, "ego_order": list(rec.ego_agents), "frames": frames}


def episode_from_json(obj: dict, dt: float) -> EpisodeRecord:
    agents = obj["agents"]
    n, frames = len(agents), obj["frames"]
    pos = np.full((len(frames), n, 2), np.nan)
    vel = np.full((len(frames), n, 2), np.nan)
    for t, frame in enumerate(frames):
        for entry in frame:
            if len(entry) != 5:
                raise DatasetFormatError(f"frame entry must have 5 fields, got {entry!r}")
            i = int(entry[0])
            pos[t, i] = entry[1:3]
            vel[t, i] = entry[3:5]
    return EpisodeRecord(
        seed=int(obj["seed"]),
        positions=pos,
        velocities=vel,
        radii=[a["radius"] for a in agents],
        goals=[a["goal"] for a in agents],
        dt=dt,
        agent_ids=tuple(str(a["id"]) for a in agents),
        ego_agents=tuple(obj.get("ego_order", [i for i, a in enumerate(agents) if a.get("ego")])),
    )


def dataset_to_text(d: Dataset) -> str:
    header = {"version": SCHEMA_VERSION, "dt": d.dt, "H": d.H, "T": d.T, "split_tag": d.split_tag, "meta": d.meta}
    lines = [_dumps(header)]
    lines.extend(_dumps(episode_to_json(r)) for r in d.records)
    return "\n".join(lines) + "\n"


def write_dataset(d: Dataset, path) -> None:
    atomic_write(path, dataset_to_text(d))


def read_dataset(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty file, missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}:1: corrupt header: {exc}") from exc
    version = header.get("version")
    if version != SCHEMA_VERSION:
        raise DatasetFormatError(f"{path}: unsupported dataset schema version {version!r} (expected {SCHEMA_VERSION})")
    dt = float(header["dt"])
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            records.append(episode_from_json(json.loads(line), dt))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, IndexError) as exc:
            raise DatasetFormatError(f"{path}:{lineno}: corrupt episode record: {exc}") from exc
    return Dataset(records, header["split_tag"], int(header["H"]), int(header["T"]), dt, header.get("meta", {}))
