"""Benchmark experiments: gathering cost, merge cost, store size, and
known-fault match cost across growing run counts.

Costs are abstract deterministic work units from the meter, so tables are
byte-reproducible across machines.  The workload is repetitive with rare
one-off variants (at power-of-two run indices), which keeps store growth
sublinear while still producing fresh records.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from statistics import mean

from .config import ClusterSpec
from .core import FixStat, build_st
from .errors import SimulatorError
from .exchange import build_cluster
from .faults import ModelDb
from .healing import HealingConfig, HealingEngine
from .meter import METER
from .pipeline import calibration_record, default_forest, FAULT_KIND
from .simapp import ROOT_CAUSES, FaultSpec, SimApp

METRICS = ("st-gather-ticks", "dst-merge-ticks", "dst-size-records",
           "match-ticks", "match-ticks-second")

TABLE_COLUMNS = ("experiment", "metric", "run_count", "dst_size", "repeat", "value")


@dataclass(frozen=True)
class ExperimentSpec:
    nodes: int = 5
    repeats: int = 10
    run_counts: tuple = (1, 10, 50, 100, 500)
    seed: int = 0
    requests_per_run: int = 4
    share_interval: int = 50
    store_threshold: int = 64
    known_fault: str = "network-outage"

    def __post_init__(self):
        if self.nodes < 1 or self.repeats < 1 or not self.run_counts:
            raise ValueError("experiment counts must be at least 1")
        if any(c < 1 for c in self.run_counts):
            raise ValueError("run counts must be positive")

    @property
    def experiment_id(self) -> str:
        return f"bench-n{self.nodes}-s{self.seed}"


@dataclass(frozen=True)
class MetricRow:
    experiment_id: str
    metric: str
    run_count: int
    dst_size: int
    repeat: str  # "0".."k" for raw repeats, "avg" for the mean row
    value: float


def is_variant_run(g: int) -> bool:
    # Rare paths appear at power-of-two global run indices: frequent early,
    # then increasingly sparse.
    return g >= 1 and (g & (g - 1)) == 0


def _measure_point(spec: ExperimentSpec, total_runs: int, repeat: int) -> dict:
    METER.reset()
    seed = spec.seed * 1000003 + repeat * 101 + 7
    cluster = build_cluster(spec.nodes, "full", spec.share_interval, "full",
                            seed, spec.store_threshold)
    apps = {nid: SimApp(nid, seed, spec.requests_per_run)
            for nid in cluster.node_ids()}

    gather = []
    for g in range(1, total_runs + 1):
        variant = f"rare-path-{g}" if is_variant_run(g) else None
        nid = "n0" if variant else f"n{(g - 1) % spec.nodes}"
        before = METER.gather_units
        rec = apps[nid].run(variant=variant)
        st = build_st(rec)
        gather.append(METER.gather_units - before)
        cluster.nodes[nid].store.merge_st(st)
        cluster.tick()

    # The known fault's record is pre-established before the cluster settles,
    # so it reaches the same exchange fan-in plateau as the rare variants.
    measured = cluster.nodes["n0"].store
    cspec = _cluster_like(spec, seed)
    db = ModelDb(default_forest())
    seeded = calibration_record("n0", spec.known_fault, 1, cspec)
    if seeded is None:
        raise SimulatorError("known-fault calibration produced no record")
    fixes = tuple(FixStat(fid, 1, 1) for fid in sorted(ROOT_CAUSES[spec.known_fault]))
    seeded = replace(seeded, fixes=fixes)
    model = db.ensure(spec.known_fault, FAULT_KIND[spec.known_fault])
    model.fixes.extend(fixes)
    model.add_tagged(seeded)
    measured.merge_st(seeded)

    for _ in range(2 * spec.share_interval):
        cluster.tick()
    dst_size = len(measured)

    # Cost of folding one fresh, unseen record into the converged store.
    probe_app = SimApp("n0", seed + 1, spec.requests_per_run)
    probe = build_st(probe_app.run(variant="probe-path"))
    scratch = measured.copy()
    before = METER.merge_work()
    scratch.merge_st(probe)
    merge_cost = METER.merge_work() - before

    app = apps["n0"]
    engine = HealingEngine(app, measured, db, HealingConfig())
    match = []
    for _ in range(2):
        rec = app.run(FaultSpec(spec.known_fault, 0, 1))
        outcome = engine.on_failure(build_st(rec))
        if not outcome.healed:
            raise SimulatorError("known fault failed to heal during bench")
        match.append(outcome.comparisons)

    return {
        "st-gather-ticks": mean(gather),
        "dst-merge-ticks": merge_cost,
        "dst-size-records": dst_size,
        "match-ticks": match[0],
        "match-ticks-second": match[1],
        "_dst_size": dst_size,
    }


def _cluster_like(spec: ExperimentSpec, seed: int) -> ClusterSpec:
    return ClusterSpec(nodes=spec.nodes, seed=seed,
                       requests_per_run=spec.requests_per_run)


def run_bench(spec: ExperimentSpec) -> list[MetricRow]:
    rows = []
    for run_count in spec.run_counts:
        values = {m: [] for m in METRICS}
        sizes = []
        for r in range(spec.repeats):
            point = _measure_point(spec, run_count, r)
            sizes.append(point["_dst_size"])
            for m in METRICS:
                values[m].append(point[m])
                rows.append(MetricRow(spec.experiment_id, m, run_count,
                                      point["_dst_size"], str(r), point[m]))
        avg_size = round(mean(sizes))
        for m in METRICS:
            rows.append(MetricRow(spec.experiment_id, m, run_count, avg_size,
                                  "avg", mean(values[m])))
    order = {m: i for i, m in enumerate(METRICS)}

    def row_key(row: MetricRow):
        repeat = (1, 0) if row.repeat == "avg" else (0, int(row.repeat))
        return (order[row.metric], row.run_count, repeat)

    rows.sort(key=row_key)
    return rows


def format_value(v) -> str:
    if isinstance(v, float) and v == int(v):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def table_text(rows) -> str:
    lines = ["\t".join(TABLE_COLUMNS)]
    for r in rows:
        lines.append("\t".join([r.experiment_id, r.metric, str(r.run_count),
                                str(r.dst_size), r.repeat, format_value(r.value)]))
    return "\n".join(lines) + "\n"


def write_table(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(table_text(rows))


def averages(rows) -> dict:
    """(metric, run_count) -> (value, dst_size) for the average rows."""
    return {(r.metric, r.run_count): (r.value, r.dst_size)
            for r in rows if r.repeat == "avg"}
