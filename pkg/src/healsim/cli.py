"""Command-line entry point.

Subcommands: simulate (full pipeline), bench (trend experiments plus
figures), classify (offline fix lookup), inspect (human-readable store
dump).  Exit codes: 0 success, 2 configuration error, 3 store corruption.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from . import bench as benchmod
from .config import ClusterSpec, parse_config, validate_spec
from .core import st_from_record
from .errors import ConfigError, SimulatorError, StoreCorruptError
from .faults import ModelDb, classify
from .healing import HealingConfig, decide_fix
from .pipeline import run_simulation
from .store import GlobalKnowledge, NodeStore

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STORE = 3


def _load_spec(args) -> ClusterSpec:
    spec = parse_config(args.config) if args.config else ClusterSpec()
    if getattr(args, "seed", None) is not None:
        spec = replace(spec, seed=args.seed)
    if getattr(args, "mode", None) is not None:
        spec = replace(spec, mode=args.mode)
    return validate_spec(spec)


def cmd_simulate(args) -> int:
    spec = _load_spec(args)
    summary = run_simulation(spec, args.out)
    nodes = summary["nodes"]
    healed = sum(n["healed"] for n in nodes.values())
    escalated = sum(n["escalated"] for n in nodes.values())
    runs = sum(n["runs"] for n in nodes.values())
    print(f"runs={runs} healed={healed} escalated={escalated} "
          f"ticks={summary['cluster']['ticks']} out={args.out or '-'}")
    return EXIT_OK


def cmd_bench(args) -> int:
    spec = _load_spec(args)
    ex = benchmod.ExperimentSpec(
        nodes=spec.nodes, repeats=spec.bench.repeats,
        run_counts=spec.bench.run_counts, seed=spec.seed,
        requests_per_run=spec.requests_per_run,
        store_threshold=spec.store_threshold)
    rows = benchmod.run_bench(ex)
    os.makedirs(args.out, exist_ok=True)
    table_path = os.path.join(args.out, "bench.tsv")
    benchmod.write_table(rows, table_path)
    written = [table_path]
    if not args.no_figures:
        from .figures import render_bench_figures
        written.extend(render_bench_figures(rows, args.out))
    for path in written:
        print(path)
    return EXIT_OK


def _read_fault_record(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise StoreCorruptError("fault record file is empty", record=1)
    try:
        return st_from_record(lines[0])
    except StoreCorruptError as exc:
        raise StoreCorruptError(str(exc), record=1) from exc


def cmd_classify(args) -> int:
    db = ModelDb.load(args.models)
    fault = _read_fault_record(args.fault)
    cfg = HealingConfig()
    if args.store:
        store = NodeStore.load(args.store)
        plan, _matched, _comps, cres = decide_fix(store, db, fault, cfg)
        if plan:
            print(plan[0].fix_id)
            return EXIT_OK
        result = cres
    else:
        result = classify(fault, db, cfg.eps, cfg.eps_exact, cfg.w_sig, cfg.w_trace)
    if result.decision == "fix":
        print(result.fix.fix_id)
    else:
        print("escalate")
    return EXIT_OK


def cmd_inspect(args) -> int:
    with open(args.path, encoding="utf-8") as fh:
        first = fh.readline()
    if '"kind":"node-store"' in first:
        store = NodeStore.load(args.path)
        print(f"node store {store.node_id}: version {store.version}, "
              f"threshold {store.threshold}, {len(store)} records")
        entries = store.entries
    elif '"kind":"global-knowledge"' in first:
        gk = GlobalKnowledge.load(args.path)
        print(f"global knowledge: {gk.source_count} sources "
              f"(mature={gk.mature}), {len(gk)} records")
        entries = gk.entries
    elif '"kind":"models"' in first:
        db = ModelDb.load(args.path)
        print(f"model database: {len(db)} models")
        for m in db.sorted_models():
            fixes = ", ".join(f"{f.fix_id}({f.successes}/{f.attempts})"
                              for f in m.fixes) or "none"
            print(f"  {m.fault_id} [kind {m.kind_id}] "
                  f"tagged={len(m.tagged)} fixes: {fixes}")
        return EXIT_OK
    else:
        raise StoreCorruptError("unrecognized store header", record=1)
    for e in entries:
        st = e.st
        keys = ", ".join("/".join(k.path) for k in sorted(st.keys()))
        trace = ">".join(st.trace.collapsed())
        fixes = ", ".join(f"{f.fix_id}({f.successes}/{f.attempts})"
                          for f in st.fixes) or "-"
        print(f"  x{e.occurrences} {st.outcome}"
              f"{'(' + st.fault_id + ')' if st.fault_id else ''} "
              f"trace[{trace}] keys[{keys}] fixes[{fixes}]")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="healsim",
        description="Deterministic multi-node self-healing simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the full pipeline")
    p.add_argument("--config", required=True, help="cluster config file (JSON)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--mode", choices=("full", "incremental"),
                   help="override the exchange mode")
    p.add_argument("--out", help="directory for stores, logs, and the summary")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="run trend experiments")
    p.add_argument("--config", help="cluster config file (JSON)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="directory for the table and figures")
    p.add_argument("--no-figures", action="store_true",
                   help="skip figure rendering")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("classify", help="offline fix lookup for a fault record")
    p.add_argument("--models", required=True, help="model database path")
    p.add_argument("--store", help="node store path (enables the store fast path)")
    p.add_argument("--fault", required=True, help="file holding one fault record")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("inspect", help="dump a store human-readably")
    p.add_argument("path", help="store file to inspect")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StoreCorruptError as exc:
        print(f"store corrupt: {exc}", file=sys.stderr)
        return EXIT_STORE
    except FileNotFoundError as exc:
        print(f"missing file: {exc.filename}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulatorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
