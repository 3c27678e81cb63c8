"""Command-line driver.

Exit codes: 0 success, 1 usage, 2 validation, 3 I/O, 4 network.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import strict_json
from .analyzer import parse_shapes_doc, recommend_filters, rules_to_block_filters, run_block_sweep
from .core_ir import load_model, model_to_dict
from .cost_model import default_config, load_config, metrics_to_dict, model_metrics
from .errors import NasForgeError, ValidationError
from .ppe_service import Detail, PpeClient, PpeError, PpeEvaluator, PpeServer, parse_hostport
from .report import emit_report
from .search_engine import (
    InProcessEvaluator, Objective, archive_from_log, load_log, run_evolution, run_random_search,
)
from .search_space import BlockFilter, apply_block_filters, load_space, materialize

log = logging.getLogger("nas_forge")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_IO, EXIT_NETWORK = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _hostport(text):
    try:
        return parse_hostport(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser():
    p = _Parser(prog="nas-forge", description="Hardware-aware block analysis and architecture search.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    e = sub.add_parser("estimate", help="estimate latency/energy/size of a model document")
    e.add_argument("--model", required=True)
    e.add_argument("--config", help="accelerator config JSON (default: shipped profile or $NAS_FORGE_CONFIG)")
    e.add_argument("--per-op", action="store_true", help="include one entry per lowered primitive op")
    e.add_argument("--ppe", type=_hostport, metavar="HOST:PORT", help="ask a PPE server instead of estimating locally")

    a = sub.add_parser("analyze", help="sweep IBN variants over shapes and recommend filters")
    a.add_argument("--shapes", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--config")
    a.add_argument("--space", help="also map the recommended rules onto this search space")

    s = sub.add_parser("search", help="run a multi-trial search")
    s.add_argument("--space", required=True)
    s.add_argument("--algo", choices=("random", "evolution"), required=True)
    s.add_argument("--budget", type=_positive_int, required=True)
    s.add_argument("--target-us", type=_positive_float, required=True)
    s.add_argument("--reward-exponent", type=float, default=-0.07)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--population", type=_positive_int, default=32)
    s.add_argument("--sample", type=_positive_int, default=8)
    s.add_argument("--workers", type=_positive_int, default=1)
    s.add_argument("--dedup", action="store_true", help="random search: draw distinct candidates")
    s.add_argument("--filters", help="JSON list of block filters to apply to the space first")
    s.add_argument("--config")
    s.add_argument("--ppe", type=_hostport, metavar="HOST:PORT")

    v = sub.add_parser("serve", help="run a PPE server")
    v.add_argument("--bind", type=_hostport, default=("127.0.0.1", 50051), metavar="HOST:PORT")
    v.add_argument("--config")
    v.add_argument("--max-concurrent", type=_positive_int, default=8)

    r = sub.add_parser("report", help="tables and plots from a trial log")
    r.add_argument("--log", required=True)
    r.add_argument("--out", required=True)
    return p


def _config(path):
    return load_config(path) if path else default_config()


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return strict_json.loads(fh.read())


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def cmd_estimate(args):
    model = load_model(args.model)
    if args.ppe:
        accel = load_config(args.config) if args.config else None
        with PpeClient(*args.ppe) as client:
            resp = client.estimate(model, accel, Detail.PER_OP if args.per_op else Detail.TOTALS)
        if not resp.ok:
            raise ValidationError(f"server rejected the model: {resp.error}")
        doc = resp.metrics
    else:
        doc = metrics_to_dict(model_metrics(model, _config(args.config)), per_op=args.per_op)
    sys.stdout.write(strict_json.dumps(doc))
    return EXIT_OK


def cmd_analyze(args):
    cfg = _config(args.config)
    shapes, menu, thresholds = parse_shapes_doc(_read_json(args.shapes))
    table = run_block_sweep(shapes, menu, cfg)
    for note in table.notes:
        log.info(note)
    if not table.rows:
        raise ValidationError("no valid block in the sweep")
    out = Path(args.out)
    emit_report(table, "csv", out / "sweep.csv")
    emit_report(table, "svg", out / "sweep.svg")
    rules = recommend_filters(table, thresholds)
    doc = {"rules": [r.to_dict() for r in rules]}
    if args.space:
        space = load_space(args.space)
        filters = rules_to_block_filters(rules, space)
        apply_block_filters(space, filters)  # re-check the guard
        doc["block_filters"] = [f.to_dict() for f in filters]
    _write(out / "filters.json", strict_json.dumps(doc))
    _write(out / "summary.txt", sweep_summary(table))
    print(f"{len(table)} rows, {len(rules)} rules -> {out}")
    return EXIT_OK


def sweep_summary(table, param_ratio=2.5, band=0.6, tight=0.55):
    """Per shape: the lowest-latency group-conv row, the best row with at least
    ``param_ratio`` x the baseline parameters, and whether the shape has a
    group-conv row inside the (``param_ratio``, ``band``) box plus one at or
    under ``tight`` latency."""
    lines = ["shape        pick                   variant           k  m   g   param_ratio  latency_ratio"]
    checks = []
    for shape in table.shapes():
        gc = [r for r in table.rows if r.shape == shape and r.g is not None and r.g > 1]
        picks = []
        if gc:
            picks.append(("fastest", min(gc, key=lambda r: (r.latency_ratio, -r.param_ratio))))
            big = [r for r in gc if r.param_ratio >= param_ratio]
            if big:
                picks.append((f"fastest >={param_ratio:g}x params",
                              min(big, key=lambda r: (r.latency_ratio, -r.param_ratio))))
        for label, r in picks:
            lines.append(f"{'x'.join(map(str, shape)):<12} {label:<22} {r.variant:<17} {r.k}  {str(r.m):<3} "
                         f"{r.g:<3} {r.param_ratio:>11.3f}  {r.latency_ratio:>13.3f}")
        in_box = any(r.param_ratio >= param_ratio and r.latency_ratio <= band for r in gc)
        fast = any(r.latency_ratio <= tight for r in gc)
        checks.append(f"{'x'.join(map(str, shape))} {'yes' if in_box and fast else 'no'}")
    lines.append("")
    lines.append(f"band check (group conv with params >= {param_ratio:g}x and latency <= {band:g}x "
                 f"the depthwise IBN, and a row <= {tight:g}x): " + ", ".join(checks))
    return "\n".join(lines) + "\n"


def cmd_search(args):
    space = load_space(args.space)
    if args.filters:
        rules = _read_json(args.filters)
        if isinstance(rules, dict):
            rules = rules.get("block_filters", [])
        space = apply_block_filters(space, [BlockFilter.from_dict(r, f"filters[{i}]") for i, r in enumerate(rules)])
    if args.algo == "evolution" and not args.budget >= args.population >= args.sample:
        raise UsageError("search: need --budget >= --population >= --sample")
    obj = Objective(args.target_us, args.reward_exponent)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "trials.jsonl"
    client = None
    try:
        if args.ppe:
            client = PpeClient(*args.ppe)
            evaluator = PpeEvaluator(client, load_config(args.config) if args.config else None)
        else:
            evaluator = InProcessEvaluator(_config(args.config))
        if args.algo == "random":
            result = run_random_search(space, args.budget, obj, evaluator, args.seed, args.workers,
                                       dedup=args.dedup, log_path=log_path)
        else:
            result = run_evolution(space, args.budget, args.population, args.sample, obj, evaluator,
                                   args.seed, args.workers, log_path=log_path)
    finally:
        if client:
            client.close()
    _emit_log_reports(result.log, result.archive, out)
    if result.best is not None and result.best.ok:
        best = result.best
        doc = {"trial": best.to_dict(), "model": model_to_dict(materialize(best.candidate, space))}
        _write(out / "best.json", strict_json.dumps(doc))
        print(f"best trial {best.trial_id}: reward {best.reward:.6g}, latency {best.latency_us:.6g} us, "
              f"quality {best.quality:.6g}")
    failed = sum(1 for r in result.log if not r.ok)
    print(f"{len(result.log)} trials ({failed} failed), front of {len(result.archive)} -> {out}")
    return EXIT_OK


def _emit_log_reports(records, archive, out):
    emit_report(records, "csv", out / "trials.csv")
    emit_report(records, "svg", out / "trials.svg")
    if len(archive):
        emit_report(archive, "csv", out / "front.csv")
        emit_report(archive, "svg", out / "front.svg")


def cmd_serve(args):
    host, port = args.bind
    try:
        server = PpeServer(host, port, _config(args.config), args.max_concurrent)
        server.start()
    except OSError as exc:
        raise PpeError(f"cannot bind {host}:{port}: {exc}") from exc
    print(f"serving on {server.host}:{server.port}", flush=True)
    server.serve_forever()
    return EXIT_OK


def cmd_report(args):
    loaded = load_log(args.log)
    for w in loaded.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if not loaded.records:
        raise ValidationError(f"{args.log}: no readable trial records")
    out = Path(args.out)
    _emit_log_reports(loaded.records, archive_from_log(loaded.records), out)
    print(f"{len(loaded.records)} trials -> {out}")
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "analyze": cmd_analyze, "search": cmd_search,
            "serve": cmd_serve, "report": cmd_report}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except PpeError as exc:
        print(f"error: network: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except ValidationError as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: I/O: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NasForgeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
