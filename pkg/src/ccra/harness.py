"""Experiment sweeps: generate scenarios, run methods, verify, tabulate."""

from __future__ import annotations

import concurrent.futures
import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .allocation import Solution, accuracy, check_feasibility, e2e_delay, link_users, objective
from .baselines import BaselineStrategy, Kind, baseline_solve
from .bb import BBConfig, bb_solve
from .generator import PROFILES, GenerationError, GeneratorConfig, generate_scenario
from .model import Scenario
from .wf import wf_solve

SWEEPS = ("network_size", "request_count", "delay_requirement", "solving_time")
METHODS = ("bb", "wf", "ddql") + tuple(k.value for k in Kind)
HEADER = (
    "method",
    "sweep",
    "seed",
    "cost_total",
    "cost_mean",
    "supported",
    "supported_pct",
    "delay_mean_ms",
    "runtime_ms",
    "accuracy",
)


class PlanError(ValueError):
    pass


@dataclass
class ExperimentPlan:
    sweep: str
    values: list[float]
    seeds: int = 20
    methods: list[str] = field(default_factory=lambda: ["wf", "bb"])
    profile: str = "desk"
    # generator fields applied on top of the profile
    overrides: dict = field(default_factory=dict)
    seed_offset: int = 0
    bb_time_limit: float = 60.0
    bb_search: str = "highs"
    bb_node_limit: int | None = None
    ddql_steps: int = 10_000
    # zero the runtime column so reports are byte-stable
    deterministic: bool = False
    out_csv: str | None = None
    out_json: str | None = None

    def validate(self) -> None:
        if self.sweep not in SWEEPS:
            raise PlanError(f"unknown sweep {self.sweep!r}; expected one of {SWEEPS}")
        if not self.values:
            raise PlanError("value grid is empty")
        if self.seeds < 1:
            raise PlanError("seeds must be >= 1")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise PlanError(f"unknown methods {bad}; expected a subset of {METHODS}")
        if self.profile not in PROFILES:
            raise PlanError(f"unknown profile {self.profile!r}")
        if self.bb_search not in ("tree", "highs"):
            raise PlanError("bb_search must be 'tree' or 'highs'")
        if self.sweep == "solving_time" and "bb" not in self.methods:
            raise PlanError("a solving_time sweep needs the bb method")

    def generator_config(self, value: float) -> GeneratorConfig:
        base = PROFILES[self.profile].to_dict()
        merged = {**base, **self.overrides}
        if "request_ranges" in self.overrides:
            merged["request_ranges"] = {**base["request_ranges"], **self.overrides["request_ranges"]}
        cfg = GeneratorConfig.from_dict(merged)
        if self.sweep == "network_size":
            cfg = replace(cfg, node_count=int(value))
        elif self.sweep == "request_count":
            cfg = replace(cfg, request_count=int(value))
        elif self.sweep == "delay_requirement":
            cfg = replace(cfg, request_ranges=replace(cfg.request_ranges, delay=(float(value), float(value))))
        return cfg

    def bb_config(self, value: float) -> BBConfig:
        limit = float(value) if self.sweep == "solving_time" else self.bb_time_limit
        if self.deterministic and self.bb_node_limit is None:
            raise PlanError("deterministic runs need bb_node_limit instead of a wall-clock limit")
        if self.deterministic:
            limit = math.inf
        return BBConfig(time_limit=limit, node_limit=self.bb_node_limit, search=self.bb_search)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise PlanError(f"unknown plan fields {sorted(extra)}")
        try:
            plan = cls(**d)
        except TypeError as exc:
            raise PlanError(str(exc)) from None
        plan.validate()
        return plan


def load_plan(text: str) -> ExperimentPlan:
    try:
        return ExperimentPlan.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise PlanError(f"plan is not valid JSON: {exc}") from None


@dataclass
class MetricsRow:
    method: str
    sweep: float
    seed: int
    cost_total: float
    cost_mean: float | None
    supported: int
    supported_pct: float
    delay_mean_ms: float | None
    runtime_ms: float
    accuracy: float | None
    # set when the method raised or produced an infeasible solution
    error: str | None = None

    def __post_init__(self):
        self.sweep = float(self.sweep)

    def values(self) -> list:
        return [getattr(self, k) for k in HEADER]


def solution_metrics(
    scenario: Scenario, method: str, value: float, seed: int, solution: Solution, runtime_ms: float
) -> MetricsRow:
    """Cost, support and exact end-to-end delay of a verified solution."""
    verdict = check_feasibility(scenario, solution, "exact")
    if not verdict.feasible:
        tags = ",".join(sorted(verdict.tags()))
        return failed_row(method, value, seed, scenario.R, f"infeasible solution ({tags})")
    n = len(solution.assignments)
    total = objective(scenario, solution)
    users = link_users(scenario, solution)
    delays = [e2e_delay(scenario, solution, r, "exact", users).total for r in solution.assignments]
    return MetricsRow(
        method=method,
        sweep=value,
        seed=seed,
        cost_total=total,
        cost_mean=total / n if n else None,
        supported=n,
        supported_pct=100.0 * n / scenario.R if scenario.R else 0.0,
        delay_mean_ms=float(np.mean(delays)) if n else None,
        runtime_ms=runtime_ms,
        accuracy=None,
    )


def failed_row(method: str, value: float, seed: int, R: int, error: str) -> MetricsRow:
    return MetricsRow(method, value, seed, math.nan, None, 0, 0.0, None, 0.0, None, error)


def _run_method(method: str, scenario: Scenario, plan: ExperimentPlan, value: float, seed: int):
    """(solution, runtime_ms, bb result or None)."""
    if method == "bb":
        res = bb_solve(scenario, plan.bb_config(value))
        return res.solution, res.runtime_ms, res
    if method == "wf":
        res = wf_solve(scenario)
        return res.solution, res.runtime_ms, None
    if method == "ddql":
        from .ddql import solve_all

        t0 = time.perf_counter()
        sol = solve_all(scenario, seed=seed, steps=plan.ddql_steps)
        return sol, (time.perf_counter() - t0) * 1000.0, None
    res = baseline_solve(scenario, BaselineStrategy.parse(method, seed))
    return res.solution, res.runtime_ms, None


def run_point(plan: ExperimentPlan, value: float, seed: int) -> list[MetricsRow]:
    """Every method on one generated scenario, with accuracy against the B&B reference."""
    try:
        scenario = generate_scenario(plan.generator_config(value), seed)
    except GenerationError as exc:
        raise PlanError(f"sweep value {value}: {exc}") from None
    rows: list[MetricsRow] = []
    reference = None
    for method in plan.methods:
        try:
            solution, ms, bb = _run_method(method, scenario, plan, value, seed)
        except Exception as exc:  # a failing method must not end the sweep
            rows.append(failed_row(method, value, seed, scenario.R, f"{type(exc).__name__}: {exc}"))
            continue
        if bb is not None:
            if bb.solution is not None and bb.status == "optimal":
                reference = bb.incumbent
            if bb.solution is None:
                rows.append(failed_row(method, value, seed, scenario.R, f"no incumbent ({bb.status})"))
                continue
        rows.append(solution_metrics(scenario, method, value, seed, solution, ms))
    if reference is not None:
        for row in rows:
            # the reference serves every request: only full solutions are comparable
            if row.error is None and row.supported == scenario.R:
                row.accuracy = accuracy(row.cost_total, reference)
    if plan.deterministic:
        for row in rows:
            row.runtime_ms = 0.0
    return rows


def run_experiment(plan: ExperimentPlan, workers: int = 1) -> list[MetricsRow]:
    """All grid points; with ``workers > 1`` points run in separate processes."""
    plan.validate()
    points = [(value, plan.seed_offset + s) for value in plan.values for s in range(plan.seeds)]
    rows: list[MetricsRow] = []
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(workers) as pool:
            for part in pool.map(run_point, [plan] * len(points), *zip(*points)):
                rows.extend(part)
    else:
        for value, seed in points:
            rows.extend(run_point(plan, value, seed))
    return sort_rows(rows)


def sort_rows(rows: list[MetricsRow]) -> list[MetricsRow]:
    return sorted(rows, key=lambda r: (r.method, r.sweep, r.seed))


def moving_average(series, window: int) -> list[float]:
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(list(series), dtype=float)
    if x.size == 0:
        return []
    c = np.concatenate([[0.0], np.cumsum(x)])
    i = np.arange(1, x.size + 1)
    lo = np.maximum(0, i - window)
    return list((c[i] - c[lo]) / (i - lo))


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.6f}"


def report_csv(rows: list[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in sort_rows(rows):
        w.writerow([_fmt(v) for v in r.values()])
    return buf.getvalue()


def report_json(rows: list[MetricsRow]) -> str:
    """Same values as the CSV, as strings parsed back into numbers (or null)."""
    out = []
    for r in sort_rows(rows):
        rec = {}
        for k, v in zip(HEADER, r.values()):
            s = _fmt(v)
            rec[k] = s if k == "method" else (None if s == "" else (int(s) if k in ("seed", "supported") else float(s)))
        if r.error:
            rec["error"] = r.error
        out.append(rec)
    return json.dumps(out, indent=2, sort_keys=True) + "\n"


def emit_report(rows: list[MetricsRow], csv_path: str | None = None, json_path: str | None = None) -> None:
    if not rows:
        raise ValueError("no rows to report")
    if csv_path:
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(report_csv(rows))
    if json_path:
        with open(json_path, "w", encoding="utf-8") as fh:
            fh.write(report_json(rows))


def rows_from_csv(text: str) -> list[MetricsRow]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):

        def num(k):
            return None if rec[k] == "" else float(rec[k])

        rows.append(
            MetricsRow(
                method=rec["method"],
                sweep=float(rec["sweep"]),
                seed=int(rec["seed"]),
                cost_total=num("cost_total") if rec["cost_total"] else math.nan,
                cost_mean=num("cost_mean"),
                supported=int(rec["supported"]),
                supported_pct=float(rec["supported_pct"]),
                delay_mean_ms=num("delay_mean_ms"),
                runtime_ms=float(rec["runtime_ms"]),
                accuracy=num("accuracy"),
            )
        )
    return rows


def summarize(rows: list[MetricsRow]) -> list[dict]:
    """Per (method, sweep value) means over seeds."""
    groups: dict[tuple[str, float], list[MetricsRow]] = {}
    for r in rows:
        groups.setdefault((r.method, r.sweep), []).append(r)
    out = []
    for (method, value), rs in sorted(groups.items()):

        def mean(key):
            xs = [getattr(r, key) for r in rs if getattr(r, key) is not None and not math.isnan(getattr(r, key))]
            return float(np.mean(xs)) if xs else None

        out.append(
            {
                "method": method,
                "sweep": value,
                "n": len(rs),
                "cost_mean": mean("cost_mean"),
                "supported_pct": mean("supported_pct"),
                "delay_mean_ms": mean("delay_mean_ms"),
                "runtime_ms": mean("runtime_ms"),
                "accuracy": mean("accuracy"),
            }
        )
    return out
