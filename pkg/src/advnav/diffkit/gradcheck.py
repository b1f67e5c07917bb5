from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from advnav.diffkit.params import ParamStore
from advnav.diffkit.tape import Node, Tape


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def grad_check(
    f: Callable[[dict], Node],
    store: ParamStore,
    tol: float = 1e-4,
    floor: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare backward against central differences, coordinate by coordinate.

    ``f`` receives the parameters bound on a fresh tape and returns a scalar
    node. The step is ``1e-5 * max(1, |x|)``; the error of a coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``. With
    ``max_coords`` a seeded subset of coordinates is checked.
    """
    tape = Tape()
    saved = {k: g.copy() for k, g in store.grads.items()}
    store.zero_grad()
    tape.backward(f(store.attach(tape)))
    analytic = {k: g.copy() for k, g in store.grads.items()}
    for k, g in saved.items():
        store.grads[k][...] = g

    coords = [(name, idx) for name in store.names() for idx in np.ndindex(store[name].shape)]
    if max_coords is not None and len(coords) > max_coords:
        pick = np.random.default_rng(seed).choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    def value() -> float:
        return float(f(store.attach(Tape())).value)

    worst = (0.0, "", ())
    for name, idx in coords:
        arr = store[name]
        x0 = arr[idx]
        h = 1e-5 * max(1.0, abs(x0))
        arr[idx] = x0 + h
        fp = value()
        arr[idx] = x0 - h
        fm = value()
        arr[idx] = x0
        num = (fp - fm) / (2 * h)
        ana = analytic[name][idx]
        err = abs(ana - num) / max(abs(ana), abs(num), floor)
        if err > worst[0]:
            worst = (err, name, idx)
    return GradCheckReport(worst[0], worst[1], worst[2], len(coords), tol)
