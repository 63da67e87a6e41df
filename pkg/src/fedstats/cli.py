"""Batch entry points: amplification curves, discovery runs, accountant demos.

Every command reads a canonical JSON config, takes an explicit seed where
randomness is involved, and writes CSV/JSON artifacts that are byte-identical
across runs with the same (config, seed).  Exit codes: 0 success, 1 denied or
gated, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .accountant import BudgetAccountant, QueryCost
from .amplification import (
    CohortSizeUnreachable,
    closed_form_epsilon,
    min_cohort_size,
    symohe_epsilon,
)
from .api import parse_plan
from .device import DeviceTrustConfig, TrustEntry
from .engine import run_discovery
from .fleet import PhrasePopulation, VectorFleet
from .randomizers import LocalEpsilon, Mode
from .recipe import AnalysisRules, QueryTemplate, RecipeError


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dump_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _csv_line(values) -> str:
    parts = []
    for v in values:
        if isinstance(v, float):
            parts.append(repr(v))
        else:
            parts.append(str(v))
    return ",".join(parts)


def _n_grid(spec: dict) -> list[int]:
    lo, hi = int(spec["min"]), int(spec["max"])
    points = int(spec.get("points", 50))
    if spec.get("scale", "log") == "log":
        grid = np.unique(np.geomspace(lo, hi, points).astype(np.int64))
    else:
        grid = np.unique(np.linspace(lo, hi, points).astype(np.int64))
    return [int(n) for n in grid]


def cmd_amplification_curve(args) -> int:
    config = json.loads(Path(args.config).read_text())
    delta = float(config["delta"])
    route = config.get("route", "closed")
    rows = [("eps0", "n", "delta", "epsilon")]
    for eps0 in config["eps0"]:
        for n in _n_grid(config["n"]):
            if route == "closed":
                bound = closed_form_epsilon(float(eps0), n, delta)
                eps = bound.epsilon if bound.applicable else "n/a"
            elif route == "renyi":
                eps = symohe_epsilon(n, float(eps0), delta)
            else:
                raise RecipeError(f"unknown route {route!r}")
            rows.append((float(eps0), n, delta, eps))
    out = Path(args.out)
    if args.format == "csv":
        _write(out / "curve.csv", "\n".join(_csv_line(r) for r in rows) + "\n")
    else:
        header, *data = rows
        _write(
            out / "curve.json",
            _dump_json([dict(zip(header, row)) for row in data]),
        )
    print(f"wrote amplification curve ({len(rows) - 1} rows) to {out}")
    return 0


def _trust_from_plan(plan, fleet_cfg: dict) -> DeviceTrustConfig:
    prefix = plan.analysis_id.split(".")[0] + "."
    budgets = {
        "analysis": {
            "allowed_epsilon": plan.total_epsilon,
            "allowed_reports": plan.max_ngram_len,
            "allowed_delta": plan.total_delta,
        },
        "fields": {
            plan.field: {
                "allowed_local_epsilon": plan.round_budgets.local_epsilon,
                "allowed_epsilon": plan.total_epsilon,
                "allowed_reports": plan.max_ngram_len,
            }
        },
    }
    rules = AnalysisRules(
        prefix=prefix,
        allowed_streams=(plan.stream,),
        allowed_fields=(plan.field,),
        templates=(QueryTemplate.pattern(plan.stream, (plan.field,)),),
    )
    entry = TrustEntry(
        rules=rules,
        non_sensitive_fields=tuple(fleet_cfg.get("non_sensitive_fields", ())),
        budgets=budgets,
    )
    return DeviceTrustConfig(entries=(entry,))


def cmd_discover(args) -> int:
    config = json.loads(Path(args.config).read_text())
    plan = parse_plan(config["plan"])
    fleet_cfg = config["fleet"]
    phrases = list(fleet_cfg["phrases"])
    seed = int(args.seed)
    rng = np.random.default_rng([seed, 1])
    if "weights" in fleet_cfg:
        population = PhrasePopulation.sample(
            phrases, fleet_cfg["weights"], int(fleet_cfg["size"]), rng
        )
    else:
        population = PhrasePopulation.zipf(
            phrases, float(fleet_cfg.get("zipf_s", 1.0)), int(fleet_cfg["size"]), rng
        )
    mode = Mode(fleet_cfg.get("mode", "asymmetric"))
    trust = _trust_from_plan(plan, fleet_cfg)
    fleet = VectorFleet(population, trust, field=plan.field, mode=mode, fleet_seed=seed)
    state = run_discovery(plan, fleet, trust)

    out = Path(args.out)
    _write(out / "discovery_report.json", _dump_json(state.to_doc()))
    published = 0
    for i, outcome in enumerate(state.rounds, start=1):
        if outcome.gated:
            continue
        published += 1
        if args.format == "csv":
            lines = [_csv_line(("bin_label", "estimate", "stderr"))]
            lines += [_csv_line(row) for row in outcome.to_csv_rows()]
            _write(out / f"round{i}.csv", "\n".join(lines) + "\n")
        else:
            _write(out / f"round{i}.json", _dump_json(outcome.to_doc()))
    print(f"discovery status: {state.status}; published rounds: {published}")
    return 0 if published else 1


def cmd_accountant_demo(args) -> int:
    config = json.loads(Path(args.config).read_text())
    script = json.loads(Path(args.script).read_text())
    accountant = BudgetAccountant.from_config(config)
    trace = []
    any_denied = False
    for i, q in enumerate(script):
        m = q["min_cohort"]
        if m == "auto":
            try:
                m = min_cohort_size(
                    float(q["local_epsilon"]), float(q["aggregate_epsilon"]), float(q["delta"])
                )
            except CohortSizeUnreachable:
                m = 1  # let the check deny it
        cost = QueryCost(
            local_epsilon=LocalEpsilon(float(q["local_epsilon"])),
            aggregate_epsilon=float(q["aggregate_epsilon"]),
            aggregate_delta=float(q["delta"]),
            fields_accessed=tuple(q["fields"]),
            min_cohort=int(m),
        )
        decision = accountant.check_and_charge(cost)
        any_denied = any_denied or not decision.approved
        snap = accountant.snapshot()["analysis"]
        trace.append(
            {
                "query": i,
                "decision": "approve" if decision.approved else "deny",
                "reason": decision.reason,
                "min_cohort": int(m),
                "used_epsilon": snap["used_epsilon"],
                "used_reports": snap["used_reports"],
            }
        )
    out = Path(args.out)
    if args.format == "csv":
        lines = [_csv_line(("query", "decision", "reason", "min_cohort", "used_epsilon", "used_reports"))]
        lines += [
            _csv_line(
                (t["query"], t["decision"], t["reason"] or "", t["min_cohort"], t["used_epsilon"], t["used_reports"])
            )
            for t in trace
        ]
        _write(out / "accountant_trace.csv", "\n".join(lines) + "\n")
    else:
        _write(out / "accountant_trace.json", _dump_json(trace))
    denied = sum(1 for t in trace if t["decision"] == "deny")
    print(f"accountant demo: {len(trace)} queries, {denied} denied")
    return 1 if any_denied else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedstats", description="Interactive private federated statistics simulator"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    curve = sub.add_parser("amplification-curve", help="closed-form/Renyi epsilon vs cohort size")
    curve.add_argument("--config", required=True)
    curve.add_argument("--out", required=True)
    curve.add_argument("--format", choices=("csv", "json"), default="csv")
    curve.set_defaults(func=cmd_amplification_curve)

    discover = sub.add_parser("discover", help="run adaptive n-gram discovery on a synthetic fleet")
    discover.add_argument("--config", required=True)
    discover.add_argument("--seed", required=True, type=int)
    discover.add_argument("--out", required=True)
    discover.add_argument("--format", choices=("csv", "json"), default="csv")
    discover.set_defaults(func=cmd_discover)

    demo = sub.add_parser("accountant-demo", help="replay a query script against budget tables")
    demo.add_argument("--config", required=True)
    demo.add_argument("--script", required=True)
    demo.add_argument("--out", required=True)
    demo.add_argument("--format", choices=("csv", "json"), default="csv")
    demo.set_defaults(func=cmd_accountant_demo)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (RecipeError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
