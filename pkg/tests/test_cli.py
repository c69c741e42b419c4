import json

import pytest

from ccra.cli import main


@pytest.fixture
def scen(tmp_path):
    path = tmp_path / "s.json"
    assert main(["gen", "--seed", "3", "--nodes", "6", "--requests", "6", "--out", str(path)]) == 0
    return path


def run(*args):
    return main([str(a) for a in args])


class TestGen:
    def test_deterministic(self, tmp_path):
        for name in ("a", "b"):
            assert run("gen", "--seed", 5, "--out", tmp_path / name) == 0
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"profile": "desk", "node_count": 6, "request_count": 4}))
        assert run("gen", "--config", cfg, "--out", tmp_path / "s.json") == 0
        doc = json.loads((tmp_path / "s.json").read_text())
        assert len(doc["nodes"]) == 6 and len(doc["requests"]) == 4

    def test_bad_config(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"bandwidth_range": [300, 250]}))
        assert run("gen", "--config", cfg) == 2

    def test_bad_flag(self):
        assert run("gen", "--colour", "red") == 2

    def test_tier_signature(self, tmp_path):
        assert run("gen", "--tier-signature", "--requests", 5, "--out", tmp_path / "t.json") == 0
        doc = json.loads((tmp_path / "t.json").read_text())
        assert len(doc["nodes"]) == 30 and len(doc["requests"]) == 5


class TestSolve:
    @pytest.mark.parametrize("method", ["wf", "r", "cm", "dm", "fsa", "bsa", "cep"])
    def test_heuristics(self, scen, tmp_path, method):
        out = tmp_path / "o.json"
        assert run("solve", "--scenario", scen, "--method", method, "--out", out) == 0
        doc = json.loads(out.read_text())
        assert doc["method"] == method and "metrics" in doc and "solution" in doc

    def test_bb_with_trace(self, scen, tmp_path):
        out, trace = tmp_path / "o.json", tmp_path / "t.csv"
        args = ("solve", "--scenario", scen, "--method", "bb", "--search", "highs", "--out", out)
        assert run(*args, "--trace-out", trace) == 0
        assert trace.read_text().startswith("t_ms,incumbent,bound,nodes")
        assert json.loads(out.read_text())["status"] == "optimal"

    def test_infeasible_certified(self, tmp_path):
        s = tmp_path / "tight.json"
        assert run("gen", "--nodes", 6, "--requests", 2, "--delay-req", 0.01, "--out", s) == 0
        assert run("solve", "--scenario", s, "--method", "bb") == 3

    def test_deterministic_tree_needs_node_limit(self, scen):
        assert run("solve", "--scenario", scen, "--method", "bb", "--deterministic") == 2

    def test_no_incumbent(self, scen):
        assert run("solve", "--scenario", scen, "--method", "bb", "--node-limit", 0) == 4

    def test_missing_scenario(self, tmp_path):
        assert run("solve", "--scenario", tmp_path / "nope.json", "--method", "wf") == 2

    def test_ddql_needs_chain(self, scen):
        assert run("solve", "--scenario", scen, "--method", "ddql") == 2


class TestTrainSolve:
    def test_round_trip_deterministic(self, scen, tmp_path):
        outs = []
        for name in ("a", "b"):
            chain, trace, sol = tmp_path / f"{name}.bin", tmp_path / f"{name}.csv", tmp_path / f"{name}.json"
            assert run("train", "--scenario", scen, "--steps", 60, "--seed", 1, "--out", chain,
                       "--trace-out", trace, "--request-features") == 0
            assert run("solve", "--scenario", scen, "--method", "ddql", "--chain", chain,
                       "--deterministic", "--out", sol) == 0
            outs.append([p.read_bytes() for p in (chain, trace, sol)])
        assert outs[0] == outs[1]

    def test_chain_for_other_scenario(self, scen, tmp_path):
        other = tmp_path / "other.json"
        run("gen", "--seed", 9, "--nodes", 6, "--requests", 6, "--out", other)
        chain = tmp_path / "c.bin"
        assert run("train", "--scenario", scen, "--steps", 5, "--out", chain) == 0
        assert run("solve", "--scenario", other, "--method", "ddql", "--chain", chain) == 2

    def test_train_needs_out(self, scen):
        assert run("train", "--scenario", scen, "--steps", 5) == 2

    def test_bad_service(self, scen, tmp_path):
        assert run("train", "--scenario", scen, "--service", 99, "--out", tmp_path / "c.bin") == 2


class TestExperiment:
    def test_plan_and_report(self, tmp_path):
        plan = tmp_path / "plan.json"
        plan.write_text(json.dumps({
            "sweep": "request_count", "values": [4, 6], "seeds": 2, "methods": ["wf", "bb", "cm"],
            "overrides": {"node_count": 6}, "bb_node_limit": 5000,
        }))
        reports = []
        for name in ("a", "b"):
            csv_path, json_path = tmp_path / f"{name}.csv", tmp_path / f"{name}.json"
            assert run("experiment", "--plan", plan, "--deterministic", "--out", csv_path,
                       "--json-out", json_path) == 0
            reports.append((csv_path.read_bytes(), json_path.read_bytes()))
        assert reports[0] == reports[1]
        assert len(reports[0][0].decode().splitlines()) == 1 + 2 * 2 * 3
        summary = tmp_path / "sum.json"
        assert run("report", "--in", tmp_path / "a.csv", "--out", summary) == 0
        assert {d["method"] for d in json.loads(summary.read_text())} == {"wf", "bb", "cm"}
        again = tmp_path / "again.csv"
        assert run("report", "--in", tmp_path / "a.csv", "--format", "csv", "--out", again) == 0
        assert again.read_bytes() == reports[0][0]

    def test_bad_plan(self, tmp_path):
        plan = tmp_path / "plan.json"
        plan.write_text(json.dumps({"sweep": "request_count", "values": [4], "methods": ["nope"]}))
        assert run("experiment", "--plan", plan) == 2

    def test_unbuildable_point(self, tmp_path):
        plan = tmp_path / "plan.json"
        plan.write_text(json.dumps({"sweep": "network_size", "values": [3], "methods": ["wf"]}))
        assert run("experiment", "--plan", plan) == 2

    def test_deterministic_plan_needs_node_limit(self, tmp_path):
        plan = tmp_path / "plan.json"
        plan.write_text(json.dumps({"sweep": "request_count", "values": [4], "methods": ["bb"]}))
        assert run("experiment", "--plan", plan, "--deterministic") == 2
