"""Named parameter collections and their checkpoint files.

Checkpoint layout: one line of JSON (the header, newline terminated) followed
by the raw little-endian float64 payload of every array listed in the header,
parameters first (in name order) then any ``extra`` arrays such as optimizer
moments.
"""
from __future__ import annotations

import hashlib
import json
from collections import OrderedDict

import numpy as np

from advnav.diffkit.tape import Tape

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class ParamStore:
    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.params: OrderedDict[str, np.ndarray] = OrderedDict()
        self.grads: dict[str, np.ndarray] = {}
        self._rng = np.random.default_rng(self.seed)

    def add(self, name: str, value) -> np.ndarray:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=np.float64)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def add_affine(self, name: str, fan_in: int, fan_out: int) -> None:
        """Glorot-uniform weights ``name.W`` (fan_in, fan_out) and zero bias ``name.b``."""
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        self.add(f"{name}.W", self._rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        self.add(f"{name}.b", np.zeros(fan_out))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def size(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def attach(self, tape: Tape, trainable: bool = True) -> dict:
        """Bind every parameter as a leaf on ``tape``; backward adds into ``grads``.

        With ``trainable=False`` the parameters enter as constants, which is
        cheaper for forward-only evaluation.
        """
        if not trainable:
            return {name: tape.constant(value) for name, value in self.params.items()}
        return {name: tape.leaf(value, param=(self, name)) for name, value in self.params.items()}

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.grads.values())))

    def copy(self) -> "ParamStore":
        out = ParamStore(self.seed)
        for name, value in self.params.items():
            out.add(name, value)
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, value in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(value, dtype="<f8").tobytes())
        return h.hexdigest()


def checkpoint_bytes(store: ParamStore, step: int = 0, meta: dict | None = None, extra: dict | None = None) -> bytes:
    extra = extra or {}
    names = store.names()
    header = {
        "format": "advnav-params",
        "version": CHECKPOINT_VERSION,
        "names": names,
        "shapes": [list(store[n].shape) for n in names],
        "seed": store.seed,
        "step": int(step),
        "extra_names": list(extra),
        "extra_shapes": [list(np.shape(v)) for v in extra.values()],
        "meta": meta or {},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode() + b"\n"
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes() for a in [*(store[n] for n in names), *extra.values()]
    )
    return head + payload


def save_checkpoint(path, store: ParamStore, step: int = 0, meta: dict | None = None, extra: dict | None = None) -> None:
    from advnav.core.io import atomic_write

    atomic_write(path, checkpoint_bytes(store, step, meta, extra))


def parse_checkpoint(data: bytes) -> tuple[ParamStore, dict, dict]:
    nl = data.find(b"\n")
    if nl < 0:
        raise CheckpointError("missing checkpoint header")
    try:
        header = json.loads(data[:nl])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    if header.get("format") != "advnav-params" or header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format/version: {header.get('format')}/{header.get('version')}")
    shapes = [tuple(s) for s in header["shapes"]] + [tuple(s) for s in header["extra_shapes"]]
    names = header["names"] + header["extra_names"]
    expected = 8 * sum(int(np.prod(s)) for s in shapes)
    payload = memoryview(data)[nl + 1 :]
    if len(payload) != expected:
        raise CheckpointError(f"payload has {len(payload)} bytes, header implies {expected}")
    store = ParamStore(header["seed"])
    extra: dict[str, np.ndarray] = {}
    offset = 0
    for i, (name, shape) in enumerate(zip(names, shapes)):
        n = int(np.prod(shape))
        arr = np.frombuffer(payload[offset : offset + 8 * n], dtype="<f8").reshape(shape).astype(np.float64)
        offset += 8 * n
        if i < len(header["names"]):
            store.add(name, arr)
        else:
            extra[name] = arr
    return store, header, extra


def load_checkpoint(path) -> tuple[ParamStore, dict, dict]:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())
