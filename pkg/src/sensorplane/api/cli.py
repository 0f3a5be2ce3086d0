"""``sensorplane`` command line."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from typing import Any, Sequence

from ..cep import RuleSyntaxError, format_rule, parse_rules
from ..core import PlatformError
from ..metadata import KINDS, MetadataStore
from ..rts import LatestReadings
from ..sim.latency import EmptyTrace, ecdf_csv, latency_report, read_trace
from ..sim.scenario import run_scenario
from .handlers import Api
from .heatmap import heatmap
from .platform import DEFAULT_CONFIG, JOURNAL, Platform, load_platform_config, load_transforms, open_store, resolve, serve_http


class CliError(Exception):
    pass


def _emit(args: argparse.Namespace, obj: Any, text: str) -> None:
    print(json.dumps(obj, indent=2) if args.json else text)


def _data_dir(args: argparse.Namespace, cfg: dict[str, Any], base: str) -> str:
    dd = args.data_dir or cfg.get("data_dir")
    if not dd:
        raise CliError("no data directory: pass --data-dir or set data_dir in the config")
    return args.data_dir or resolve(base, dd)


# -- subcommands ----------------------------------------------------------------


def cmd_serve(args: argparse.Namespace) -> int:
    platform = Platform.from_config(args.config, data_dir=args.data_dir)
    http = platform.config.get("http", {})
    host = args.host or http.get("host", "127.0.0.1")
    port = args.port if args.port is not None else int(http.get("port", 8098))
    server = serve_http(platform.api, host, port)
    print(f"serving on http://{host}:{server.server_address[1]}  broker={platform.broker.id}  data={platform.data_dir}",
          flush=True)
    try:
        if args.duration is not None:
            server.timeout = 0.2
            deadline = time.monotonic() + args.duration
            while time.monotonic() < deadline:
                server.handle_request()
        else:
            server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        platform.close()
    return 0


def cmd_sim_run(args: argparse.Namespace) -> int:
    res = run_scenario(args.scenario, seed=args.seed, out_dir=args.out, clock=args.clock)
    summary = {"emitted": res.emitted, "dropped": res.dropped, "delivered": res.delivered, "fed": res.fed,
               "stored": res.stored, "deadletters": res.deadletters, "ground_truth": len(res.ground_truth),
               "out": args.out}
    _emit(args, summary, "  ".join(f"{k}={v}" for k, v in summary.items()))
    return 0


def cmd_report_latency(args: argparse.Namespace) -> int:
    trace = read_trace(args.trace)
    report = latency_report(trace)
    if args.ecdf:
        with open(args.ecdf, "w", encoding="utf-8") as fh:
            fh.write(ecdf_csv(trace))
    lines = [f"{'stage':<10}{'n':>8}{'mean':>10}{'stddev':>10}{'p50':>10}{'p99':>10}   (ms)"]
    for stage, r in report.items():
        lines.append(f"{stage:<10}{r['n']:>8}{r['mean']:>10.3f}{r['stddev']:>10.3f}{r['p50']:>10.3f}{r['p99']:>10.3f}")
    _emit(args, report, "\n".join(lines))
    return 0


def cmd_heatmap(args: argparse.Namespace) -> int:
    cfg, base = load_platform_config(args.config)
    data_dir = _data_dir(args, cfg, base)
    store = open_store(data_dir, cfg, base)
    grid = heatmap(store.snapshot(), args.floor, args.feature, LatestReadings.from_shards(data_dir).all(),
                   args.cell, load_transforms(cfg.get("transforms"), base))
    doc = grid.to_json()
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    filled = sum(1 for c in grid.cells if c.value is not None)
    summary = {"out": args.out, "cells": len(grid.cells), "filled": filled, "as_of": doc["as_of"]}
    _emit(args, summary, f"wrote {args.out}: {len(grid.cells)} cells, {filled} with values")
    return 0


def cmd_rules_check(args: argparse.Namespace) -> int:
    with open(args.file, encoding="utf-8") as fh:
        text = fh.read()
    try:
        rules = parse_rules(text)
    except RuleSyntaxError as exc:
        if args.json:
            print(json.dumps({"ok": False, "error": exc.msg, "line": exc.lineno, "column": exc.offset}))
        else:
            print(f"{args.file}:{exc.lineno}:{exc.offset}: {exc.msg}", file=sys.stderr)
        return 1
    _emit(args, {"ok": True, "rules": [r.rule_id for r in rules]},
          "\n".join(format_rule(r) for r in rules) + f"\n{len(rules)} rules ok")
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    journal = os.path.join(args.data_dir, JOURNAL)
    if not os.path.exists(journal):
        raise CliError(f"no metadata journal at {journal}")
    store = MetadataStore.replay(journal)
    latest = LatestReadings.from_shards(args.data_dir)
    snap = store.snapshot()
    counts = {kind: len(snap.ids(kind)) for kind in KINDS}
    summary = {"metadata_version": snap.version, "records": counts, "sensors_with_readings": len(latest.all())}
    _emit(args, summary, f"version {snap.version}: " + ", ".join(f"{n} {k}" for k, n in counts.items())
          + f"; latest readings for {len(latest.all())} sensors")
    return 0


def cmd_query(args: argparse.Namespace) -> int:
    cfg, base = load_platform_config(args.config)
    data_dir = _data_dir(args, cfg, base)
    api = Api(open_store(data_dir, cfg, base), LatestReadings.from_shards(data_dir), data_dir)
    resp = api.get(args.url)
    sys.stdout.write(resp.text)
    return 0 if resp.status == 200 else 1


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sensorplane", description="Building sensor platform tools.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("serve", help="run the platform with an HTTP query API")
    s.add_argument("--config", default=DEFAULT_CONFIG)
    s.add_argument("--data-dir")
    s.add_argument("--host")
    s.add_argument("--port", type=int)
    s.add_argument("--duration", type=float, help="stop after this many seconds")
    s.set_defaults(fn=cmd_serve)

    sim = sub.add_parser("sim", help="simulator").add_subparsers(dest="sim_command", required=True)
    s = sim.add_parser("run", help="run a scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="sim-out")
    s.add_argument("--clock", choices=("virtual", "wall"))
    s.add_argument("--json", action="store_true")
    s.set_defaults(fn=cmd_sim_run)

    rep = sub.add_parser("report", help="reports").add_subparsers(dest="report_command", required=True)
    s = rep.add_parser("latency", help="per-stage latency from a trace")
    s.add_argument("--trace", required=True)
    s.add_argument("--ecdf", help="also write the per-stage ECDF as CSV")
    s.add_argument("--json", action="store_true")
    s.set_defaults(fn=cmd_report_latency)

    s = sub.add_parser("heatmap", help="room-constrained heatmap grid as JSON")
    s.add_argument("--floor", type=int, required=True)
    s.add_argument("--feature", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--cell", type=float, default=1.0, help="cell size in metres")
    s.add_argument("--config", default=DEFAULT_CONFIG)
    s.add_argument("--data-dir")
    s.add_argument("--json", action="store_true")
    s.set_defaults(fn=cmd_heatmap)

    rules = sub.add_parser("rules", help="CEP rules").add_subparsers(dest="rules_command", required=True)
    s = rules.add_parser("check", help="parse a rule file")
    s.add_argument("file")
    s.add_argument("--json", action="store_true")
    s.set_defaults(fn=cmd_rules_check)

    s = sub.add_parser("replay", help="rebuild stores from the journal and shards")
    s.add_argument("--data-dir", required=True)
    s.add_argument("--json", action="store_true")
    s.set_defaults(fn=cmd_replay)

    s = sub.add_parser("query", help="answer one API request offline")
    s.add_argument("url")
    s.add_argument("--config", default=DEFAULT_CONFIG)
    s.add_argument("--data-dir")
    s.set_defaults(fn=cmd_query)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.fn(args))
    except (CliError, PlatformError, EmptyTrace, OSError, ValueError, KeyError) as exc:
        print(f"sensorplane: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
