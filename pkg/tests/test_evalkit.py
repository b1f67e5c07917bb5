import dataclasses
import json
import os

import numpy as np
import pytest

from advnav.cost import CostParams, scene_costs_array
from advnav.evalkit import (
    Cell,
    DisplacementTable,
    EvalMatrix,
    displacement_table,
    emit_report,
    evaluate,
    format_report,
    matrix_csv,
    parse_matrix_csv,
    parse_report_json,
    parse_table_csv,
    predict_all,
    report_json,
    table_csv,
)
from advnav.models import init_forecaster, init_planner
from helpers import SMALL, random_batch


def four_stores():
    return {"mle-forecaster": init_forecaster(SMALL), "adv-forecaster": init_forecaster(SMALL, seed=5),
            "nom-planner": init_planner(SMALL), "safe-planner": init_planner(SMALL, seed=6)}


@pytest.fixture(scope="module")
def data():
    return random_batch(0, B=10, N=4)


@pytest.fixture(scope="module")
def results(data):
    stores = four_stores()
    return evaluate(data, stores, SMALL), displacement_table(data, stores, SMALL)


class TestEvaluate:
    def test_full_grid(self, results):
        m, _ = results
        assert len(m.cells) == 9 and m.notes == ()
        assert {c.count for c in m.cells.values()} == {10}

    def test_demo_row_is_expert_cost(self, data, results):
        m, _ = results
        expect = scene_costs_array(data.robot_future, data.human_future, data.radii[:, 0], data.radii[:, 1:],
                                   data.human_mask).mean()
        assert m.cell("demonstrations", "ground-truth").mean_cost == pytest.approx(expect, rel=1e-12)

    def test_demo_row_ignores_checkpoints(self, data, results):
        m, _ = results
        other = evaluate(data, {"mle-forecaster": init_forecaster(SMALL), "adv-forecaster": init_forecaster(SMALL)},
                         SMALL)
        for col in ("ground-truth", "mle-forecaster"):
            assert other.cell("demonstrations", col) == m.cell("demonstrations", col)

    def test_identical_planners_identical_rows(self, data):
        stores = four_stores()
        stores["safe-planner"] = stores["nom-planner"]
        stores["adv-forecaster"] = stores["mle-forecaster"]
        m = evaluate(data, stores, SMALL)
        for col in m.columns:
            assert m.cell("nom-planner", col) == m.cell("safe-planner", col)

    def test_planners_use_training_partner(self, data):
        stores = four_stores()
        pred = predict_all(data, stores, SMALL)
        swapped = dict(stores, **{"mle-forecaster": stores["adv-forecaster"]})
        assert np.array_equal(predict_all(data, swapped, SMALL)["safe-planner"], pred["safe-planner"])
        assert not np.array_equal(predict_all(data, swapped, SMALL)["nom-planner"], pred["nom-planner"])

    def test_cells_are_pure(self, data, results):
        m, _ = results
        pred = predict_all(data, four_stores(), SMALL)
        only = {k: v for k, v in pred.items() if k != "mle-forecaster"}
        sub = evaluate(data, {}, SMALL, predictions=only)
        for key, cell in sub.cells.items():
            assert cell == m.cells[key]

    def test_only_mle_checkpoints(self, data):
        stores = {k: v for k, v in four_stores().items() if k in ("mle-forecaster", "nom-planner")}
        m = evaluate(data, stores, SMALL)
        assert m.rows == ("nom-planner", "demonstrations")
        assert m.columns == ("ground-truth", "mle-forecaster")
        assert "missing row safe-planner" in m.notes and "missing column adv-forecaster" in m.notes

    def test_horizon_mismatch(self, data):
        with pytest.raises(ValueError, match="H="):
            evaluate(data, four_stores(), dataclasses.replace(SMALL, T=5))

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate(random_batch(B=0), four_stores(), SMALL)

    def test_epsilon_changes_costs(self, data, results):
        m, _ = results
        wide = evaluate(data, four_stores(), SMALL, CostParams(epsilon=1.0))
        assert wide.cell("demonstrations", "ground-truth").mean_cost >= m.cell("demonstrations",
                                                                                 "ground-truth").mean_cost

    def test_invariant_checks(self):
        with pytest.raises(ValueError, match="counts"):
            EvalMatrix({("a", "b"): Cell(0.0, 0.0, 1), ("a", "c"): Cell(0.0, 0.0, 2)})
        with pytest.raises(ValueError, match="collision"):
            EvalMatrix({("a", "b"): Cell(0.0, 1.5, 1)})
        with pytest.raises(ValueError, match="cost"):
            EvalMatrix({("a", "b"): Cell(float("nan"), 0.0, 1)})


class TestDisplacement:
    def test_perfect_memorization(self, data):
        pred = {"mle-forecaster": data.future, "adv-forecaster": data.future,
                "nom-planner": data.robot_future, "safe-planner": data.robot_future}
        t = displacement_table(data, {}, SMALL, predictions=pred)
        assert all(v == (0.0, 0.0) for v in t.entries.values())

    def test_known_offset(self, data):
        fut = data.future + np.array([0.3, 0.4])
        t = displacement_table(data, {}, SMALL, predictions={"mle-forecaster": fut, "nom-planner": fut[:, 0]})
        assert t.ade("mle-forecaster") == pytest.approx(0.5) and t.fde("nom-planner") == pytest.approx(0.5)
        assert "missing model adv-forecaster" in t.notes

    def test_padding_excluded(self, data):
        fut = data.future.copy()
        fut[~data.mask] = 1e6
        t = displacement_table(data, {}, SMALL, predictions={"mle-forecaster": fut})
        assert t.ade("mle-forecaster") == 0.0

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            DisplacementTable({"x": (-1.0, 0.0)})


class TestReports:
    def test_csv_round_trip(self, results):
        m, t = results
        assert parse_matrix_csv(matrix_csv(m)) == m
        assert parse_table_csv(table_csv(t)) == t

    def test_json_round_trip_and_provenance(self, results):
        m, t = results
        text = report_json(m, t, {"epsilon": 0.2, "lam": 1.0})
        m2, t2, raw = parse_report_json(text)
        assert m2 == m and t2 == t
        assert raw["provenance"] == {"epsilon": 0.2, "lam": 1.0} and raw["version"] == 1

    def test_json_version(self, results):
        raw = json.loads(report_json(*results))
        raw["version"] = 2
        with pytest.raises(ValueError, match="version"):
            parse_report_json(json.dumps(raw))

    def test_bad_csv(self):
        with pytest.raises(ValueError):
            parse_matrix_csv("x,y\n")
        with pytest.raises(ValueError):
            parse_table_csv("")

    def test_emit_is_byte_stable(self, results, tmp_path):
        m, t = results
        a = emit_report(m, t, tmp_path / "a", provenance={"seed": 1})
        b = emit_report(m, t, tmp_path / "b", provenance={"seed": 1})
        assert [p.name for p in a] == ["matrix.csv", "displacement.csv", "report.json"]
        for x, y in zip(a, b):
            assert x.read_bytes() == y.read_bytes()

    def test_emit_formats(self, results, tmp_path):
        assert [p.name for p in emit_report(*results, tmp_path, fmt="json")] == ["report.json"]
        with pytest.raises(ValueError):
            emit_report(*results, tmp_path, fmt="xml")

    @pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
    def test_unwritable(self, results, tmp_path):
        tmp_path.chmod(0o500)
        try:
            with pytest.raises(OSError):
                emit_report(*results, tmp_path / "sub")
        finally:
            tmp_path.chmod(0o700)

    def test_unwritable_path_is_a_file(self, results, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            emit_report(*results, blocker / "sub")

    def test_format_report(self, results):
        text = format_report(*results)
        for name in ("mle-forecaster", "adv-forecaster", "nom-planner", "safe-planner", "contexts per cell: 10"):
            assert name in text
