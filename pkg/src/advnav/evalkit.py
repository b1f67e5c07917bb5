"""Held-out evaluation: cost/collision matrices and displacement tables.

Plans are always produced against the planner's training partner (the
nominal planner reads likelihood forecasts, the safe planner reads
adversarial forecasts). A plan is then scored against every available
source of human futures.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from advnav.core.io import atomic_write
from advnav.cost import CostParams, min_center_margin, scene_costs_array
from advnav.models import Batch, ModelConfig, forecast_positions, plan_positions

ROWS = ("nom-planner", "safe-planner", "demonstrations")
COLUMNS = ("ground-truth", "mle-forecaster", "adv-forecaster")
MODELS = ("mle-forecaster", "adv-forecaster", "nom-planner", "safe-planner")
# the forecaster each planner consumes when planning
PARTNER = {"nom-planner": "mle-forecaster", "safe-planner": "adv-forecaster"}
REPORT_VERSION = 1


@dataclass(frozen=True)
class Cell:
    mean_cost: float
    collision_rate: float
    count: int


@dataclass(frozen=True)
class EvalMatrix:
    cells: dict  # (row, column) -> Cell
    notes: tuple = ()

    def __post_init__(self):
        counts = {c.count for c in self.cells.values()}
        if len(counts) > 1:
            raise ValueError(f"cell counts differ: {sorted(counts)}")
        for key, c in self.cells.items():
            if not (math.isfinite(c.mean_cost) and c.mean_cost >= 0):
                raise ValueError(f"bad mean cost in cell {key}: {c.mean_cost}")
            if not 0.0 <= c.collision_rate <= 1.0:
                raise ValueError(f"collision rate outside [0, 1] in cell {key}")

    @property
    def rows(self) -> tuple:
        return tuple(r for r in ROWS if any(k[0] == r for k in self.cells))

    @property
    def columns(self) -> tuple:
        return tuple(c for c in COLUMNS if any(k[1] == c for k in self.cells))

    def cell(self, row: str, column: str) -> Cell:
        return self.cells[(row, column)]

    def __eq__(self, other):
        if not isinstance(other, EvalMatrix):
            return NotImplemented
        return self.cells == other.cells


@dataclass(frozen=True)
class DisplacementTable:
    entries: dict  # model -> (ade, fde)
    notes: tuple = field(default=(), compare=False)

    def __post_init__(self):
        for model, (a, f) in self.entries.items():
            if not (a >= 0 and f >= 0):
                raise ValueError(f"negative displacement for {model}")

    def ade(self, model: str) -> float:
        return self.entries[model][0]

    def fde(self, model: str) -> float:
        return self.entries[model][1]


def _mean(values) -> float:
    values = np.asarray(values, dtype=np.float64).ravel()
    return math.fsum(values.tolist()) / len(values) if len(values) else 0.0


def predict_all(data: Batch, stores: dict, mcfg: ModelConfig) -> dict:
    """Forecasts and plans of every model whose inputs are available.

    Returns a dict keyed by model name with (B, N, T, 2) forecasts or
    (B, T, 2) plans.
    """
    if data.H != mcfg.H or data.T != mcfg.T:
        raise ValueError(f"dataset has H={data.H}, T={data.T}; checkpoints expect H={mcfg.H}, T={mcfg.T}")
    out = {}
    for name in ("mle-forecaster", "adv-forecaster"):
        if name in stores:
            out[name] = forecast_positions(stores[name], data, mcfg)
    for name, partner in PARTNER.items():
        if name in stores and partner in out:
            out[name] = plan_positions(stores[name], data, out[partner], mcfg)
    return out


def evaluate(data: Batch, stores: dict, mcfg: ModelConfig, cost: CostParams = CostParams(),
             predictions: dict | None = None) -> EvalMatrix:
    """Fill every (plan source, future source) cell whose inputs exist.

    Missing checkpoints drop the affected rows and columns, which is
    recorded in ``notes``.
    """
    if data.size == 0:
        raise ValueError("empty evaluation dataset")
    pred = predict_all(data, stores, mcfg) if predictions is None else predictions
    plans = {"demonstrations": data.robot_future}
    plans.update({r: pred[r] for r in ("nom-planner", "safe-planner") if r in pred})
    futures = {"ground-truth": data.human_future}
    futures.update({c: pred[c][:, 1:] for c in ("mle-forecaster", "adv-forecaster") if c in pred})
    r_r, r_h, mask = data.radii[:, 0], data.radii[:, 1:], data.human_mask
    cells = {}
    for row in ROWS:
        if row not in plans:
            continue
        for col in COLUMNS:
            if col not in futures:
                continue
            costs = scene_costs_array(plans[row], futures[col], r_r, r_h, mask, cost)
            hits = min_center_margin(plans[row], futures[col], r_r, r_h, mask) < 0.0
            cells[(row, col)] = Cell(_mean(costs), _mean(hits.astype(np.float64)), int(data.size))
    notes = tuple(f"missing row {r}" for r in ROWS if r not in plans) + tuple(
        f"missing column {c}" for c in COLUMNS if c not in futures)
    return EvalMatrix(cells, notes)


def _displacements(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None) -> tuple[float, float]:
    dist = np.linalg.norm(pred - gt, axis=-1)  # (..., T)
    ade, fde = dist.mean(axis=-1), dist[..., -1]
    if mask is not None:
        ade, fde = ade[mask], fde[mask]
    return _mean(ade), _mean(fde)


def displacement_table(data: Batch, stores: dict, mcfg: ModelConfig, predictions: dict | None = None
                       ) -> DisplacementTable:
    """ADE/FDE of forecasters (over every real human of every context) and
    planners (against the demonstrated robot future)."""
    if data.size == 0:
        raise ValueError("empty evaluation dataset")
    pred = predict_all(data, stores, mcfg) if predictions is None else predictions
    entries = {}
    for name in MODELS:
        if name not in pred:
            continue
        if name.endswith("forecaster"):
            entries[name] = _displacements(pred[name][:, 1:], data.human_future, data.human_mask)
        else:
            entries[name] = _displacements(pred[name], data.robot_future, None)
    notes = tuple(f"missing model {m}" for m in MODELS if m not in entries)
    return DisplacementTable(entries, notes)


MATRIX_HEADER = ("row", "column", "mean_cost", "collision_rate", "count")
TABLE_HEADER = ("model", "ade", "fde")


def matrix_csv(m: EvalMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MATRIX_HEADER)
    for (row, col), c in m.cells.items():
        w.writerow([row, col, repr(c.mean_cost), repr(c.collision_rate), c.count])
    return buf.getvalue()


def table_csv(t: DisplacementTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_HEADER)
    for model, (a, f) in t.entries.items():
        w.writerow([model, repr(a), repr(f)])
    return buf.getvalue()


def parse_matrix_csv(text: str) -> EvalMatrix:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != MATRIX_HEADER:
        raise ValueError("not an evaluation-matrix CSV")
    return EvalMatrix({(r[0], r[1]): Cell(float(r[2]), float(r[3]), int(r[4])) for r in rows[1:]})


def parse_table_csv(text: str) -> DisplacementTable:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != TABLE_HEADER:
        raise ValueError("not a displacement-table CSV")
    return DisplacementTable({r[0]: (float(r[1]), float(r[2])) for r in rows[1:]})


def report_dict(m: EvalMatrix, t: DisplacementTable, provenance: dict | None = None) -> dict:
    return {
        "version": REPORT_VERSION,
        "matrix": [
            {"row": r, "column": c, "mean_cost": cell.mean_cost, "collision_rate": cell.collision_rate,
             "count": cell.count}
            for (r, c), cell in m.cells.items()
        ],
        "displacement": [{"model": k, "ade": a, "fde": f} for k, (a, f) in t.entries.items()],
        "notes": list(m.notes) + list(t.notes),
        "provenance": provenance or {},
    }


def report_json(m: EvalMatrix, t: DisplacementTable, provenance: dict | None = None) -> str:
    return json.dumps(report_dict(m, t, provenance), sort_keys=True, indent=2, allow_nan=False) + "\n"


def parse_report_json(text: str) -> tuple[EvalMatrix, DisplacementTable, dict]:
    d = json.loads(text)
    if d.get("version") != REPORT_VERSION:
        raise ValueError(f"unsupported report version {d.get('version')!r}")
    m = EvalMatrix({(c["row"], c["column"]): Cell(c["mean_cost"], c["collision_rate"], c["count"])
                    for c in d["matrix"]})
    t = DisplacementTable({e["model"]: (e["ade"], e["fde"]) for e in d["displacement"]})
    return m, t, d


def emit_report(m: EvalMatrix, t: DisplacementTable, path, fmt: str = "both", provenance: dict | None = None
                ) -> list[Path]:
    """Write ``matrix.csv`` + ``displacement.csv`` and/or ``report.json`` into
    directory ``path``; every file is written atomically."""
    if fmt not in ("csv", "json", "both"):
        raise ValueError(f"format must be csv|json|both, got {fmt!r}")
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise PermissionError(f"report directory {out} is not writable")
    written = []
    if fmt in ("csv", "both"):
        for name, text in (("matrix.csv", matrix_csv(m)), ("displacement.csv", table_csv(t))):
            atomic_write(out / name, text)
            written.append(out / name)
    if fmt in ("json", "both"):
        atomic_write(out / "report.json", report_json(m, t, provenance))
        written.append(out / "report.json")
    return written


def format_report(m: EvalMatrix, t: DisplacementTable) -> str:
    """Fixed-width text rendering of both tables."""
    lines = ["mean cost / collision rate (rows: plans, columns: futures)"]
    cols = m.columns
    lines.append(f"{'':16}" + "".join(f"{c:>24}" for c in cols))
    for r in m.rows:
        cells = "".join(
            f"{m.cell(r, c).mean_cost:>15.4f} /{m.cell(r, c).collision_rate:>7.3f}" if (r, c) in m.cells
            else f"{'-':>24}" for c in cols)
        lines.append(f"{r:16}{cells}")
    if m.cells:
        lines.append(f"contexts per cell: {next(iter(m.cells.values())).count}")
    lines.append("")
    lines.append(f"{'model':16}{'ADE':>10}{'FDE':>10}")
    for model in MODELS:
        if model in t.entries:
            a, f = t.entries[model]
            lines.append(f"{model:16}{a:>10.4f}{f:>10.4f}")
        else:
            lines.append(f"{model:16}{'-':>10}{'-':>10}")
    notes = list(m.notes) + list(t.notes)
    if notes:
        lines.append("")
        lines.extend(f"note: {n}" for n in notes)
    return "\n".join(lines) + "\n"


__all__ = [
    "ROWS", "COLUMNS", "MODELS", "PARTNER", "Cell", "EvalMatrix", "DisplacementTable", "predict_all", "evaluate",
    "displacement_table", "matrix_csv", "table_csv", "parse_matrix_csv", "parse_table_csv", "report_dict",
    "report_json", "parse_report_json", "emit_report", "format_report",
]
