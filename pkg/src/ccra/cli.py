"""Command-line entry point: ``ccra gen|solve|train|experiment|report``."""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .allocation import check_feasibility
from .baselines import BaselineStrategy, baseline_solve
from .bb import BBConfig, bb_solve
from .generator import (
    PROFILES,
    GenerationError,
    generate_scenario,
    load_generator_config,
    tier_signature_scenario,
)
from .model import ScenarioError, dump_scenario, load_scenario
from .wf import wf_solve

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_FAILURE = 4


class ConfigError(Exception):
    pass


class MethodFailure(Exception):
    pass


class CertifiedInfeasible(Exception):
    pass


def _write(path: str | None, text: str | bytes) -> None:
    if path is None or path == "-":
        sys.stdout.write(text if isinstance(text, str) else text.decode())
        return
    mode = "wb" if isinstance(text, bytes) else "w"
    with open(path, mode) as fh:
        fh.write(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _read_scenario(path: str):
    try:
        return load_scenario(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc}") from None
    except (ScenarioError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from None


# -- gen -------------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.tier_signature:
        kw = {"request_count": args.requests or 20}
        if args.delay_req is not None:
            kw["delay_req"] = args.delay_req
        scenario = tier_signature_scenario(args.seed, **kw)
    else:
        try:
            if args.config:
                text = Path(args.config).read_text()
                cfg = load_generator_config(text)
            else:
                cfg = PROFILES[args.profile]
            if args.nodes is not None:
                cfg = replace(cfg, node_count=args.nodes)
            if args.requests is not None:
                cfg = replace(cfg, request_count=args.requests)
            if args.delay_req is not None:
                cfg = replace(cfg, request_ranges=replace(cfg.request_ranges, delay=(args.delay_req, args.delay_req)))
            cfg.validate()
        except (OSError, ValueError, TypeError, KeyError, GenerationError) as exc:
            raise ConfigError(f"invalid generator config: {exc}") from None
        try:
            scenario = generate_scenario(cfg, args.seed)
        except GenerationError as exc:
            raise ConfigError(str(exc)) from None
    _write(args.out, dump_scenario(scenario))
    return EXIT_OK


# -- solve -----------------------------------------------------------------------


def _solve_bb(scenario, args):
    limit = args.time_limit
    if args.deterministic:
        if args.node_limit is None and args.search == "tree":
            raise ConfigError("--deterministic with the tree search needs --node-limit")
        limit = math.inf
    cfg = BBConfig(time_limit=limit, gap_limit=args.gap, node_limit=args.node_limit, search=args.search)
    res = bb_solve(scenario, cfg)
    if args.trace_out:
        trace = res.trace if not args.deterministic else [(0.0, i, b, n) for _, i, b, n in res.trace]
        _write(args.trace_out, harness_trace_csv(trace))
    if res.status == "infeasible":
        raise CertifiedInfeasible("no allocation serves every request")
    if res.solution is None:
        raise MethodFailure(f"no incumbent found ({res.status})")
    extra = {"status": res.status, "incumbent": res.incumbent, "bound": res.bound, "nodes": res.nodes}
    return res.solution, res.runtime_ms, extra, "linearized"


def harness_trace_csv(trace) -> str:
    lines = ["t_ms,incumbent,bound,nodes"]
    lines += [f"{t:.6f},{inc:.6f},{bnd:.6f},{n}" for t, inc, bnd, n in trace]
    return "\n".join(lines) + "\n"


def _solve_ddql(scenario, args):
    from .ddql import AgentChain, decide_all

    if not args.chain:
        raise ConfigError("--method ddql needs at least one --chain file")
    chains = {}
    for path in args.chain:
        try:
            chain = AgentChain.from_bytes(Path(path).read_bytes(), scenario)
        except OSError as exc:
            raise ConfigError(f"cannot read chain: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        chains[chain.sets.service] = chain
    t0 = time.perf_counter()
    res = decide_all(scenario, chains)
    ms = (time.perf_counter() - t0) * 1000.0
    extra = {"drift": res.drift, "beta_bar": res.beta_bar}
    return res.solution, ms, extra, "linearized"


def cmd_solve(args) -> int:
    scenario = _read_scenario(args.scenario)
    method = args.method
    if method == "bb":
        solution, ms, extra, mode = _solve_bb(scenario, args)
    elif method == "ddql":
        solution, ms, extra, mode = _solve_ddql(scenario, args)
    else:
        if method == "wf":
            res = wf_solve(scenario)
        else:
            res = baseline_solve(scenario, BaselineStrategy.parse(method, args.seed))
        solution, ms, mode = res.solution, res.runtime_ms, "linearized"
        extra = {"rejected": [{"request": r, "reason": why} for r, why in sorted(res.rejected.items())]}
    verdict = check_feasibility(scenario, solution, mode)
    if not verdict.feasible:
        raise MethodFailure(f"{method} produced an infeasible solution: {sorted(verdict.tags())}")
    row = harness.solution_metrics(scenario, method, 0.0, args.seed, solution, 0.0 if args.deterministic else ms)
    if row.error:
        raise MethodFailure(row.error)
    doc = {
        "method": method,
        "scenario": scenario.digest(),
        "solution": solution.to_dict(),
        "metrics": {k: v for k, v in zip(harness.HEADER, row.values()) if k not in ("sweep", "accuracy")},
        **extra,
    }
    _write(args.out, _dumps(doc))
    sys.stderr.write(
        f"cost={row.cost_total:.6f} supported={row.supported}/{scenario.R} "
        f"mean_delay_ms={harness._fmt(row.delay_mean_ms) or '-'} runtime_ms={row.runtime_ms:.6f}\n"
    )
    return EXIT_OK


# -- train -----------------------------------------------------------------------


def cmd_train(args) -> int:
    from .ddql import AgentChain, ServiceEnv, TrainConfig, prune_action_sets, train

    scenario = _read_scenario(args.scenario)
    if not 0 <= args.service < scenario.S:
        raise ConfigError(f"service {args.service} does not exist")
    try:
        decay = args.eps_decay if args.eps_decay == "auto" else float(args.eps_decay)
        cfg = TrainConfig(
            steps=args.steps,
            lr=args.lr,
            eps_decay=decay,
            v_limit=args.v_limit,
            p_limit=args.p_limit,
            request_features=args.request_features,
            ranked_paths=args.ranked_paths,
        )
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    sets = prune_action_sets(scenario, args.service, cfg.v_limit, cfg.p_limit, cfg.ranked_paths)
    if sets.empty():
        raise CertifiedInfeasible(f"service {args.service} has no placeable node")
    rng = np.random.default_rng(args.seed)
    try:
        chain = AgentChain.create(scenario, sets, cfg, rng)
        result = train(ServiceEnv(scenario, sets), chain, rng, cfg)
    except ValueError as exc:
        raise MethodFailure(str(exc)) from None
    if args.out is None:
        raise ConfigError("train needs --out for the chain file")
    _write(args.out, chain.to_bytes())
    if args.trace_out:
        _write(args.trace_out, result.trace_csv())
    return EXIT_OK


# -- experiment / report ---------------------------------------------------------


def cmd_experiment(args) -> int:
    try:
        plan = harness.load_plan(Path(args.plan).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read plan: {exc}") from None
    except harness.PlanError as exc:
        raise ConfigError(str(exc)) from None
    if args.deterministic:
        plan.deterministic = True
    try:
        plan.bb_config(plan.values[0])
    except harness.PlanError as exc:
        raise ConfigError(str(exc)) from None
    try:
        rows = harness.run_experiment(plan, workers=args.workers)
    except harness.PlanError as exc:
        raise ConfigError(str(exc)) from None
    csv_out = args.out or plan.out_csv
    json_out = args.json_out or plan.out_json
    if csv_out is None:
        sys.stdout.write(harness.report_csv(rows))
    harness.emit_report(rows, csv_out, json_out)
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        rows = harness.rows_from_csv(Path(args.input).read_text())
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read report: {exc}") from None
    if not rows:
        raise ConfigError("report is empty")
    if args.format == "json":
        text = harness.report_json(rows)
    elif args.format == "csv":
        text = harness.report_csv(rows)
    else:
        text = _dumps(harness.summarize(rows))
    _write(args.out, text)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=None, help="output file (default: stdout)")
    common.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    common.add_argument(
        "--deterministic",
        action="store_true",
        help="zero wall-clock fields and drop wall-clock limits so outputs are byte-stable",
    )

    p = argparse.ArgumentParser(prog="ccra", description="Joint placement, prioritization and routing solvers.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a scenario")
    g.add_argument("--config", help="JSON generator config (fields override the profile)")
    g.add_argument("--nodes", type=int)
    g.add_argument("--requests", type=int)
    g.add_argument("--delay-req", type=float, help="fixed delay requirement (ms)")
    g.add_argument("--tier-signature", action="store_true", help="three full-mesh tiers with one entry node")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", parents=[common], help="solve a scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--method", required=True, choices=harness.METHODS)
    s.add_argument("--time-limit", type=float, default=60.0, help="seconds (bb)")
    s.add_argument("--gap", type=float, default=0.0, help="relative gap to stop at (bb)")
    s.add_argument("--node-limit", type=int, help="(bb)")
    s.add_argument("--search", choices=("tree", "highs"), default="tree", help="(bb)")
    s.add_argument("--trace-out", help="incumbent/bound trace CSV (bb)")
    s.add_argument("--chain", action="append", help="trained chain file, once per service (ddql)")
    s.set_defaults(func=cmd_solve)

    t = sub.add_parser("train", parents=[common], help="train the agent chain of one service")
    t.add_argument("--scenario", required=True)
    t.add_argument("--service", type=int, default=0)
    t.add_argument("--steps", type=int, default=10_000)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--eps-decay", default="auto", help="per-step decrement or 'auto'")
    t.add_argument("--v-limit", type=int, default=4)
    t.add_argument("--p-limit", type=int, default=2)
    t.add_argument("--request-features", action="store_true", help="append the active request to the agents' input")
    t.add_argument("--ranked-paths", action="store_true", help="path agents pick a cost rank to the chosen node")
    t.add_argument("--trace-out", help="reward trace CSV")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("experiment", parents=[common], help="run a sweep from a JSON plan")
    e.add_argument("--plan", required=True)
    e.add_argument("--json-out", help="JSON mirror of the CSV report")
    e.add_argument("--workers", type=int, default=1)
    e.set_defaults(func=cmd_experiment)

    r = sub.add_parser("report", parents=[common], help="re-emit or summarize a CSV report")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--format", choices=("csv", "json", "summary"), default="summary")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except CertifiedInfeasible as exc:
        sys.stderr.write(f"infeasible: {exc}\n")
        return EXIT_INFEASIBLE
    except MethodFailure as exc:
        sys.stderr.write(f"method failed: {exc}\n")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
