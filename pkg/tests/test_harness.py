import json
import math

import pytest

from ccra.allocation import Solution
from ccra.harness import (
    HEADER,
    ExperimentPlan,
    MetricsRow,
    PlanError,
    emit_report,
    load_plan,
    moving_average,
    report_csv,
    report_json,
    rows_from_csv,
    run_experiment,
    run_point,
    solution_metrics,
    summarize,
)

from helpers import pair


def row(method="wf", sweep=10.0, seed=0, cost=100.0, supported=2, acc=None):
    return MetricsRow(method, sweep, seed, cost, cost / supported if supported else None, supported,
                      100.0 * supported / 4, 0.5 if supported else None, 1.25, acc)


class TestMovingAverage:
    def test_warmup(self):
        assert moving_average([1, 2, 3], 2) == pytest.approx([1, 1.5, 2.5])

    def test_constant(self):
        assert moving_average([4.0] * 7, 3) == pytest.approx([4.0] * 7)

    def test_identity(self):
        xs = [3.0, -1.0, 8.5, 0.0]
        assert moving_average(xs, 1) == pytest.approx(xs)

    def test_empty_and_bad_window(self):
        assert moving_average([], 5) == []
        with pytest.raises(ValueError):
            moving_average([1.0], 0)

    def test_matches_loop(self):
        xs = [float((7 * i) % 11) for i in range(250)]
        want = [sum(xs[max(0, i - 99) : i + 1]) / min(i + 1, 100) for i in range(250)]
        assert moving_average(xs, 100) == pytest.approx(want)


class TestReport:
    def test_two_rows(self):
        text = report_csv([row(seed=1), row(seed=0)])
        lines = text.splitlines()
        assert lines[0] == ",".join(HEADER)
        assert len(lines) == 3 and lines[1].startswith("wf,10.000000,0,100.000000")

    def test_stable_order(self):
        rows = [row("wf", 20, 0), row("bb", 10, 1), row("bb", 10, 0)]
        keys = [l.split(",")[:3] for l in report_csv(rows).splitlines()[1:]]
        assert keys == [["bb", "10.000000", "0"], ["bb", "10.000000", "1"], ["wf", "20.000000", "0"]]

    def test_byte_identical(self, tmp_path):
        rows = [row(seed=i, acc=0.9) for i in range(3)]
        for name in ("a", "b"):
            emit_report(rows, str(tmp_path / f"{name}.csv"), str(tmp_path / f"{name}.json"))
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_json_mirror(self):
        rows = [row(seed=0, acc=0.987654321), row(seed=1, supported=0)]
        recs = json.loads(report_json(rows))
        for rec, line in zip(recs, report_csv(rows).splitlines()[1:]):
            for k, cell in zip(HEADER, line.split(",")):
                if cell == "":
                    assert rec[k] is None
                elif k == "method":
                    assert rec[k] == cell
                else:
                    assert rec[k] == float(cell)

    def test_empty_fields(self):
        line = report_csv([row(supported=0)]).splitlines()[1].split(",")
        cells = dict(zip(HEADER, line))
        assert cells["cost_mean"] == cells["delay_mean_ms"] == cells["accuracy"] == ""

    def test_csv_round_trip(self):
        rows = [row(seed=i, acc=0.5) for i in range(2)]
        assert report_csv(rows_from_csv(report_csv(rows))) == report_csv(rows)

    def test_empty_rows(self):
        with pytest.raises(ValueError):
            emit_report([], "x.csv")

    def test_summary(self):
        s = summarize([row(seed=0, cost=100), row(seed=1, cost=300)])
        assert s == [
            {"method": "wf", "sweep": 10.0, "n": 2, "cost_mean": 100.0, "supported_pct": 50.0,
             "delay_mean_ms": 0.5, "runtime_ms": 1.25, "accuracy": None}
        ]


class TestPlan:
    def test_unknown_sweep(self):
        with pytest.raises(PlanError):
            load_plan(json.dumps({"sweep": "colour", "values": [1]}))

    def test_unknown_field(self):
        with pytest.raises(PlanError):
            load_plan(json.dumps({"sweep": "request_count", "values": [1], "bogus": 1}))

    def test_empty_grid(self):
        with pytest.raises(PlanError):
            load_plan(json.dumps({"sweep": "request_count", "values": []}))

    def test_unknown_method(self):
        with pytest.raises(PlanError):
            load_plan(json.dumps({"sweep": "request_count", "values": [5], "methods": ["magic"]}))

    def test_sweep_mapping(self):
        p = ExperimentPlan("delay_requirement", [2.5], overrides={"node_count": 7})
        cfg = p.generator_config(2.5)
        assert cfg.request_ranges.delay == (2.5, 2.5) and cfg.node_count == 7
        assert ExperimentPlan("network_size", [9]).generator_config(9).node_count == 9

    def test_solving_time_limit(self):
        p = ExperimentPlan("solving_time", [0.5, 2.0], methods=["bb"])
        assert p.bb_config(0.5).time_limit == 0.5

    def test_deterministic_needs_node_limit(self):
        with pytest.raises(PlanError):
            ExperimentPlan("request_count", [5], deterministic=True).bb_config(5)

    def test_round_trip(self):
        p = ExperimentPlan("request_count", [5, 6], seeds=2, methods=["wf", "cm"])
        assert load_plan(json.dumps(p.to_dict())) == p


class TestRun:
    def test_thirty_rows(self):
        plan = ExperimentPlan(
            "request_count", [10, 20, 30], seeds=5, methods=["wf", "bb"],
            overrides={"node_count": 6}, deterministic=True, bb_node_limit=100_000,
        )
        rows = run_experiment(plan)
        assert len(rows) == 30
        wf = [r for r in rows if r.method == "wf"]
        assert all(r.error is None for r in rows)
        assert all(r.accuracy is not None and 0 <= r.accuracy <= 1 for r in wf if r.supported == r.sweep)
        for w in wf:
            b = next(r for r in rows if r.method == "bb" and (r.sweep, r.seed) == (w.sweep, w.seed))
            if w.accuracy is not None:
                assert (w.accuracy == 1.0) == (w.cost_total == b.cost_total)

    def test_deterministic_report(self):
        plan = ExperimentPlan("request_count", [6], seeds=2, methods=["wf", "r", "bb"],
                              deterministic=True, bb_node_limit=10_000)
        assert report_csv(run_experiment(plan)) == report_csv(run_experiment(plan))

    def test_workers_match_serial(self):
        plan = ExperimentPlan("request_count", [5, 8], seeds=2, methods=["wf", "cep"], deterministic=True,
                              bb_node_limit=1)
        assert report_csv(run_experiment(plan, workers=2)) == report_csv(run_experiment(plan))

    def test_all_rejected(self):
        s = pair([(0, 0, 4, 10, 0.1, 2, 1)])
        r = solution_metrics(s, "wf", 0.1, 0, Solution.from_assignments(s, {}), 0.0)
        assert r.supported == 0 and r.cost_mean is None and r.delay_mean_ms is None

    def test_failure_flagged(self):
        plan = ExperimentPlan("request_count", [4], seeds=1, methods=["bb", "wf"], bb_search="tree",
                              deterministic=True, bb_node_limit=0)
        rows = run_point(plan, 4, 0)
        bb = next(r for r in rows if r.method == "bb")
        assert bb.error is not None and math.isnan(bb.cost_total)
        assert next(r for r in rows if r.method == "wf").error is None
