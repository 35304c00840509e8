"""Command-line entry point ``btaudit``.

Every command prints a JSON envelope::

    {"command", "config", "dataset_summary", "result", "timing", "seed"}

Exit codes: 0 success (robust audits included), 2 invalid input or usage,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import audit, manipulate
from .actions import Action, enumerate_candidates, score_candidates
from .bt_core import CI_METHODS, DEFAULT_TOL, confidence_intervals, fit, rank_positions, ranking, standard_errors
from .dataset import ComparisonDataset, expand, load
from .errors import NumericalError, ValidationError
from .influence import METHODS
from .objectives import TAU_TEMPERATURE, Objective

log = logging.getLogger("btaudit")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the validation code."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_INVALID)

    def exit(self, status=0, message=None):
        if message:
            sys.stderr.write(message)
        raise SystemExit(status)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, Action):
        return obj.value
    return obj


def _player(d: ComparisonDataset, token: str) -> int:
    try:
        return d.index_of(token)
    except ValidationError:
        if token.isdigit() and int(token) < d.M:
            return int(token)
        raise


def parse_objective(text: str, d: ComparisonDataset, m, temperature: float) -> Objective:
    """``gap:i,j`` | ``ci-player:name`` | ``ci-trace`` | ``tau``."""
    kind, _, arg = text.partition(":")
    if kind == "gap":
        parts = arg.split(",")
        if len(parts) != 2:
            raise ValidationError("gap objective expects gap:i,j")
        return Objective.gap(_player(d, parts[0]), _player(d, parts[1]))
    if kind == "ci-player":
        if not arg:
            raise ValidationError("ci-player objective expects ci-player:name")
        return Objective.ci_player(_player(d, arg))
    if kind == "ci-trace":
        return Objective.ci_trace()
    if kind == "tau":
        return Objective.tau_from_model(m, temperature)
    raise ValidationError(f"unknown objective {text!r}")


def _threads(args) -> int:
    env = os.environ.get("BT_AUDIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError("BT_AUDIT_THREADS must be an integer") from None
    return args.threads if args.threads else (os.cpu_count() or 1)


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _curve_rows(curves) -> list[list]:
    return [[p.step, p.policy, p.value] for c in curves for p in c.points]


# commands


def cmd_fit(args, d):
    m = fit(d, ridge=args.ridge, tol=args.tol)
    se = standard_errors(m, args.ci_method)
    cis = confidence_intervals(m, d, args.ci_level, args.ci_method)
    pos = rank_positions(ranking(m))
    return {
        "players": list(d.players),
        "theta": m.theta,
        "se": se,
        "ci_lower": [c.lower for c in cis],
        "ci_upper": [c.upper for c in cis],
        "rank": (pos + 1).tolist(),
        "converged": m.converged,
        "iterations": m.iterations,
    }


def cmd_influence(args, d):
    m = fit(d)
    obj = parse_objective(args.objective, d, m, args.temperature)
    action = Action.parse(args.action)
    scored = score_candidates(enumerate_candidates(d, m, action), m, obj, d, args.method)
    if args.top:
        scored = scored[:args.top]
    rows = []
    for s in scored:
        info = s.candidate.describe(d)
        rows.append({
            "candidate_id": info["candidate_id"],
            "action": info["action"],
            "i": info["i"],
            "j": info["j"],
            "outcome": info["outcome"],
            "predicted_delta_f": s.delta_f,
            "leverage": s.leverage,
        })
    if args.csv:
        header = ["candidate_id", "action", "i", "j", "outcome", "predicted_delta_f", "leverage"]
        _write_csv(args.csv, header, [[r[h] if r[h] is not None else "" for h in header] for r in rows])
    return {"objective": obj.describe(), "method": args.method, "candidates": rows}


def cmd_audit_topk(args, d):
    res = audit.topk_search(d, args.k, args.action, args.budget_frac, args.verify, args.method)
    return res.to_dict(d)


def cmd_audit_ci(args, d):
    m = fit(d)
    if args.k == "auto":
        sel = audit.ci_k_selection(d, args.ci_level, args.ci_method, model=m)
        if sel is None:
            return {"succeeded": False, "min_actions": None, "note": "no boundary with a nonnegative strict gap"}
        k, i, j, _ = sel
        pair = (i, j)
    else:
        try:
            k = int(args.k)
        except ValueError:
            raise ValidationError("--k must be 'auto' or an integer") from None
        pair = None
    res = audit.strict_ci_search(d, k, pair, args.action, args.ci_level, args.budget_frac,
                                 args.ci_method, args.method, model=m)
    return res.to_dict(d)


def cmd_curve(args, d):
    policies = ["influence", "random"] if args.policy == "both" else [args.policy]
    curves = [
        audit.greedy_curve(d, args.objective, args.action, args.budget, p,
                           seed=args.seed if p == "random" else None, temperature=args.temperature,
                           method=args.method)
        for p in policies
    ]
    if args.csv:
        _write_csv(args.csv, ["step", "policy", "value"], _curve_rows(curves))
    return {
        "objective": args.objective,
        "action": Action.parse(args.action).value,
        "curves": [
            {
                "policy": c.policy,
                "steps": [p.step for p in c.points],
                "values": [p.value for p in c.points],
                "truncated": c.truncated,
                "selected": [s.describe(d) for s in c.selected],
            }
            for c in curves
        ],
    }


def cmd_scores(args, d):
    r = audit.robustness_scores(d, args.budget_frac, args.trace_budget, args.tau_budget,
                                temperature=args.temperature, method=args.method)
    return {"R_Top-1": r.r_top1, "R_CI": r.r_ci, "R_tau": r.r_tau, "R_all": r.r_all, "details": r.details}


def cmd_manipulate(args, d):
    target = _player(d, args.target)
    stream = manipulate.make_stream(d.M, args.stream_len, args.stream_seed)
    elo = manipulate.EloParams(args.elo_k, args.elo_base, args.elo_scale)
    state = manipulate.run_stream(d, args.policy, target, args.direction, args.k, stream,
                                  budget=args.stream_len, elo=elo)
    out = state.to_dict()
    out["policy"] = args.policy
    if args.csv:
        _write_csv(args.csv, ["step", "policy", "value"],
                   [[t, args.policy, r] for t, r in enumerate(state.rank_history)])
    return out


def cmd_ci_reduce(args, d):
    target = _player(d, args.target)
    res = manipulate.ci_reduce(d, target, args.budget, args.mode, args.policy, args.ci_level,
                               args.seed, args.ci_method, args.method)
    if args.csv:
        _write_csv(args.csv, ["step", "policy", "value"], [[t, res.policy, w] for t, w in enumerate(res.widths)])
    return res.to_dict(d)


def cmd_remove_player(args, d):
    reports = audit.player_removal(d, args.top, args.temperature, args.topk, _threads(args))
    return {
        "temperature": args.temperature,
        "players": [
            {
                "player": d.players[r.player],
                "predicted_tau_influence": r.predicted_tau_influence,
                "predicted_delta_tau": r.predicted_delta_tau,
                "exact_delta_tau": r.exact_delta_tau,
                "moved": r.moved,
                "max_shift": r.max_shift,
                "topk_changes": r.topk_changes,
                "removed_fraction": r.removed_fraction,
                "warnings": r.warnings,
            }
            for r in reports
        ],
    }


COMMANDS = {
    "fit": cmd_fit,
    "influence": cmd_influence,
    "audit-topk": cmd_audit_topk,
    "audit-ci": cmd_audit_ci,
    "curve": cmd_curve,
    "scores": cmd_scores,
    "manipulate": cmd_manipulate,
    "ci-reduce": cmd_ci_reduce,
    "remove-player": cmd_remove_player,
}

ACTION_NAMES = [a.value for a in Action]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="btaudit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--input", required=True, help="comparison file (csv or jsonl)")
        p.add_argument("--format", choices=["csv", "jsonl"], default=None)
        p.add_argument("--out", default=None, help="write the JSON envelope here instead of stdout")
        p.add_argument("--csv", default=None, help="also write tabular output to this CSV path")
        p.add_argument("--threads", type=int, default=0, help="worker cap (0 = all cores)")
        p.add_argument("--verbose", action="store_true")
        return p

    def ci_flags(p):
        p.add_argument("--ci-level", type=float, default=0.95)
        p.add_argument("--ci-method", choices=CI_METHODS, default="local_info")

    def method_flag(p):
        p.add_argument("--method", choices=METHODS, default="1sn")

    p = common(sub.add_parser("fit", help="fit BT skills and confidence intervals"))
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    ci_flags(p)

    p = common(sub.add_parser("influence", help="score every candidate of one action space"))
    p.add_argument("--objective", default="tau")
    p.add_argument("--temperature", type=float, default=TAU_TEMPERATURE)
    p.add_argument("--action", choices=ACTION_NAMES, default="drop")
    method_flag(p)
    p.add_argument("--top", type=int, default=0, help="keep only the N most negative candidates")

    p = common(sub.add_parser("audit-topk", help="fewest actions that change top-k membership"))
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--action", choices=ACTION_NAMES, default="drop")
    p.add_argument("--budget-frac", type=float, default=audit.DEFAULT_BUDGET_FRACTION)
    p.add_argument("--verify", choices=audit.VERIFY_MODES, default="refit")
    method_flag(p)

    p = common(sub.add_parser("audit-ci", help="fewest actions for a strict CI-separated swap"))
    ci_flags(p)
    p.add_argument("--k", default="auto")
    p.add_argument("--action", choices=ACTION_NAMES, default="drop")
    p.add_argument("--budget-frac", type=float, default=audit.DEFAULT_BUDGET_FRACTION)
    method_flag(p)

    p = common(sub.add_parser("curve", help="greedy tau or CI-trace degradation curve"))
    p.add_argument("--objective", choices=["tau", "trace"], default="tau")
    p.add_argument("--action", choices=ACTION_NAMES, default="flip")
    p.add_argument("--budget", type=int, default=audit.DEFAULT_TAU_BUDGET)
    p.add_argument("--policy", choices=["influence", "random", "both"], default="influence")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=TAU_TEMPERATURE)
    method_flag(p)

    p = common(sub.add_parser("scores", help="normalised robustness scores"))
    p.add_argument("--budget-frac", type=float, default=audit.DEFAULT_BUDGET_FRACTION)
    p.add_argument("--trace-budget", type=int, default=audit.DEFAULT_TRACE_BUDGET)
    p.add_argument("--tau-budget", type=int, default=audit.DEFAULT_TAU_BUDGET)
    p.add_argument("--temperature", type=float, default=TAU_TEMPERATURE)
    method_flag(p)

    p = common(sub.add_parser("manipulate", help="online targeted top-k manipulation on a seeded stream"))
    p.add_argument("--policy", choices=["influence", "rigging"], default="influence")
    p.add_argument("--target", required=True, help="player name (or index)")
    p.add_argument("--direction", choices=[x.value for x in manipulate.Direction], default="promote")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--stream-seed", type=int, default=0)
    p.add_argument("--stream-len", type=int, default=manipulate.DEFAULT_STREAM_LENGTH)
    p.add_argument("--elo-k", type=float, default=4.0)
    p.add_argument("--elo-base", type=float, default=10.0)
    p.add_argument("--elo-scale", type=float, default=400.0)

    p = common(sub.add_parser("ci-reduce", help="targeted CI reduction by adding matches"))
    p.add_argument("--target", required=True)
    p.add_argument("--budget", type=int, default=manipulate.DEFAULT_CI_BUDGET)
    p.add_argument("--policy", choices=["influence", "arena_active", "random"], default="influence")
    p.add_argument("--mode", choices=["add-pairs", "add-outcomes", "add-weighted"], default="add-pairs")
    p.add_argument("--seed", type=int, default=0)
    ci_flags(p)
    method_flag(p)

    p = common(sub.add_parser("remove-player", help="predicted and exact effect of removing each player"))
    p.add_argument("--top", type=int, default=3)
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--temperature", type=float, default=0.1)
    return parser


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        d = expand(load(args.input, args.format))
        result = COMMANDS[args.command](args, d)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    config = {k: v for k, v in vars(args).items() if k not in ("out", "verbose")}
    summary = d.summary()
    envelope = {
        "command": args.command,
        "config": config,
        "dataset_summary": summary,
        "result": result,
        "timing": time.perf_counter() - start,
        "seed": getattr(args, "seed", getattr(args, "stream_seed", None)),
    }
    text = json.dumps(_jsonable(envelope), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    return dispatch(argv)


if __name__ == "__main__":
    raise SystemExit(main())
