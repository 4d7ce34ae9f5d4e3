"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest -s tests/test_acceptance.py` to see the per-criterion
lines.  Criteria 4-6 share one reference benchmark run (5 nodes, 10
repeats, run counts 1/10/50/100/500).
"""

import filecmp
import json
import random
import time

import pytest

from healsim.bench import ExperimentSpec, averages, run_bench
from healsim.cli import main
from healsim.config import ClusterSpec, InjectionSpec
from healsim.exchange import build_cluster
from healsim.pipeline import run_simulation
from healsim.simapp import ROOT_CAUSES, TRANSIENT_TYPES
from healsim.store import Replica

from conftest import random_dst, random_st

RUN_COUNTS = (1, 10, 50, 100, 500)
PROBES = (0, 1, 2, 3, 5, 8, 9, "red", "blue", 7.5)


def report(criterion, text):
    print(f"\nACCEPTANCE {criterion}: PASS - {text}")


@pytest.fixture(scope="module")
def reference_bench():
    spec = ExperimentSpec(nodes=5, repeats=10, run_counts=RUN_COUNTS, seed=2024)
    start = time.monotonic()
    rows = run_bench(spec)
    elapsed = time.monotonic() - start
    return rows, elapsed


def coverage(entry):
    return {(ent.key, p) for ent in entry.st.signature for p in PROBES
            if ent.value.covers(p)}


def test_c1_knowledge_store_property_suite():
    start = time.monotonic()
    rng = random.Random(808017)
    cases = 1000
    for case in range(cases):
        threshold = rng.randint(3, 8)
        a = random_dst(rng, node="t0", threshold=threshold,
                       merges=rng.randint(0, 7))
        b = random_dst(rng, node="t1", threshold=threshold,
                       merges=rng.randint(0, 7))

        # idempotence: merging a store's own content changes nothing
        dup = a.copy()
        dup.merge_dst(list(a.entries))
        assert dup.fingerprints() == a.fingerprints(), case

        # commutativity up to canonical order
        ab = a.copy()
        ab.merge_dst(b.entries)
        ba = b.copy()
        ba.merge_dst(a.entries)
        assert ab.fingerprints() == ba.fingerprints(), case

        # size bound after every public operation
        assert len(ab) <= ab.threshold, case
        assert len(a) <= a.threshold and len(b) <= b.threshold, case

        # generalization monotonicity (no pruning pressure)
        wide_a = random_dst(rng, node="t0", threshold=64,
                            merges=rng.randint(1, 5))
        wide_b = random_dst(rng, node="t1", threshold=64,
                            merges=rng.randint(1, 5))
        before = [coverage(e) for e in wide_a.entries + wide_b.entries]
        wide_a.merge_dst(wide_b.entries)
        after = [coverage(e) for e in wide_a.entries]
        for had in before:
            assert any(had <= got for got in after), case

        # delta replay equality over a random mutation run
        store = random_dst(rng, node="t2", threshold=rng.randint(3, 6),
                           merges=rng.randint(0, 3))
        replica = Replica()
        replica.set_full(store.records(), store.version)
        for _ in range(rng.randint(1, 6)):
            store.merge_st(random_st(rng, node="t2"))
        assert replica.apply(store.delta_since(replica.version)), case
        assert replica.records == store.records(), case

    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"property suite took {elapsed:.1f}s"
    report("C1", f"{cases} cases x 5 store properties in {elapsed:.1f}s")


def test_c2_incremental_and_full_modes_agree():
    rng = random.Random(606)
    schedules = 100
    for schedule in range(schedules):
        n = rng.randint(2, 8)
        topology = rng.choice(("full", "ring", "star", "line"))
        interval = rng.randint(1, 3)
        ticks = rng.randint(6, 12)
        seed = rng.randrange(10 ** 6)
        plan = [(t, nid) for t in range(ticks)
                for nid in (f"n{i}" for i in range(n))
                if rng.random() < 0.35]
        merges = {key: random_st(rng, node=key[1]) for key in plan}

        finals = {}
        for mode in ("full", "incremental"):
            cluster = build_cluster(n, topology, interval, mode, seed)
            for t in range(ticks):
                for nid in cluster.node_ids():
                    st = merges.get((t, nid))
                    if st is not None:
                        cluster.nodes[nid].store.merge_st(st)
                cluster.tick()
            finals[mode] = [cluster.nodes[nid].store.fingerprints()
                            for nid in cluster.node_ids()]
        assert finals["full"] == finals["incremental"], (schedule, topology, n)
    report("C2", f"{schedules} random schedules, incremental == full content")


def matrix_spec(fault_type, seed):
    return ClusterSpec(
        nodes=2, runs_per_node=4, share_interval=2, seed=seed,
        faults=(InjectionSpec(fault_type, "n0", 2, 1),))


def test_c3_healing_oracle_matrix():
    seeds = (1, 2, 3, 4, 5)
    healed = 0
    for fault_type in TRANSIENT_TYPES:
        for seed in seeds:
            summary = run_simulation(matrix_spec(fault_type, seed))
            events = summary["fault_events"]
            assert len(events) == 1, (fault_type, seed)
            ev = events[0]
            assert ev["healed"], (fault_type, seed)
            assert ev["fix"] in ROOT_CAUSES[fault_type], (fault_type, seed)
            healed += 1
    assert healed == 15
    escalated = 0
    for seed in seeds:
        summary = run_simulation(matrix_spec("custom-nontransient", seed))
        ev = summary["fault_events"][0]
        assert not ev["healed"], seed
        escalated += 1
    assert escalated == 5
    report("C3", "15/15 transient faults healed with a root-cause fix, "
                 "5/5 logic faults escalated")


def test_c4_gather_flat_merge_growing(reference_bench):
    rows, elapsed = reference_bench
    avg = averages(rows)
    sizes = [avg[("dst-size-records", rc)][0] for rc in RUN_COUNTS]
    merge = [avg[("dst-merge-ticks", rc)][0] for rc in RUN_COUNTS]
    gather = [avg[("st-gather-ticks", rc)][0] for rc in RUN_COUNTS]
    assert all(b > a for a, b in zip(sizes, sizes[1:])), sizes
    assert all(b > a for a, b in zip(merge, merge[1:])), merge
    spread = (max(gather) - min(gather)) / (sum(gather) / len(gather))
    assert spread < 0.10, gather
    assert elapsed < 300.0, f"reference bench took {elapsed:.0f}s"
    report("C4", f"merge cost {merge[0]:.0f}->{merge[-1]:.0f} strictly grows "
                 f"with store size; gather spread {100 * spread:.2f}% < 10%; "
                 f"bench ran in {elapsed:.0f}s")


def test_c5_store_size_sublinear(reference_bench):
    rows, _elapsed = reference_bench
    avg = averages(rows)
    size_100 = avg[("dst-size-records", 100)][0]
    size_500 = avg[("dst-size-records", 500)][0]
    ratio = size_500 / size_100
    assert ratio < 1.5, ratio
    report("C5", f"size(500)/size(100) = {ratio:.3f} < 1.5")


def test_c6_match_cost_proportional_and_promoted(reference_bench):
    rows, _elapsed = reference_bench
    avg = averages(rows)
    first = [avg[("match-ticks", rc)][0] for rc in RUN_COUNTS]
    second = [avg[("match-ticks-second", rc)][0] for rc in RUN_COUNTS]
    assert all(b >= a for a, b in zip(first, first[1:])), first
    assert first[-1] > first[0]
    for f, s in zip(first, second):
        assert s < f, (first, second)
    report("C6", f"match comparisons {first[0]:.0f}->{first[-1]:.0f} track "
                 f"store size; repeat occurrences cost strictly less "
                 f"({second[0]:.0f}..{second[-1]:.0f})")


def test_c7_classifier_forced_examples():
    from test_faults import (db_of, make_model, negative_st, partial_st,
                             positive_st, probe, st_with_keys,
                             PROBE_KEYS, PROBE_METHODS)
    from healsim.faults import classify

    # exact hit returns that model's fix
    tagged = st_with_keys(PROBE_KEYS, PROBE_METHODS, node="probe")
    exact_model = make_model("fault-a", "kind-x", [tagged], [("fix-x", 1, 1)])
    res = classify(probe(PROBE_KEYS), db_of(exact_model))
    assert (res.decision, res.fix.fix_id, res.category) == ("fix", "fix-x", "exact")

    # empty database escalates
    assert classify(probe(PROBE_KEYS), db_of()).escalated

    # positive candidates at 80% and 60%: the 80% model wins
    a = make_model("fault-a", "kind-x",
                   [positive_st(i) for i in range(1, 5)] + [partial_st(5)],
                   [("fix-a", 1, 1)])
    b = make_model("fault-b", "kind-x",
                   [positive_st(i) for i in range(1, 4)]
                   + [partial_st(4), partial_st(5)],
                   [("fix-b", 1, 1)])
    res = classify(probe(PROBE_KEYS), db_of(a, b))
    assert (res.model_id, res.percent) == ("fault-a", pytest.approx(80.0))

    # only negative candidates at 70% and 40%: the 40% model wins
    c = make_model("fault-c", "kind-x",
                   [negative_st(i) for i in range(1, 8)]
                   + [partial_st(i) for i in range(8, 11)],
                   [("fix-c", 1, 1)])
    d = make_model("fault-d", "kind-x",
                   [negative_st(i) for i in range(1, 5)]
                   + [partial_st(i) for i in range(5, 11)],
                   [("fix-d", 1, 1)])
    res = classify(probe(PROBE_KEYS), db_of(c, d))
    assert (res.model_id, res.percent) == ("fault-d", pytest.approx(40.0))
    report("C7", "exact hit, empty db, 80/60 positive, 70/40 negative "
                 "all classified as specified")


def test_c8_end_to_end_determinism(tmp_path):
    config = {
        "nodes": 3,
        "share_interval": 3,
        "seed": 77,
        "runs_per_node": 5,
        "faults": [
            {"type": "network-outage", "node": "n0", "run": 2},
            {"type": "custom-nontransient", "node": "n2", "run": 3},
        ],
        "bench": {"repeats": 2, "run_counts": [1, 10, 50]},
    }
    cfg = tmp_path / "cluster.json"
    cfg.write_text(json.dumps(config), encoding="utf-8")
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(["simulate", "--config", str(cfg), "--out", str(out_a)]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(out_b)]) == 0
    names = sorted(p.name for p in out_a.iterdir())
    assert names == sorted(p.name for p in out_b.iterdir())
    match, mismatch, errors = filecmp.cmpfiles(out_a, out_b, names, shallow=False)
    assert not mismatch and not errors, (mismatch, errors)
    assert any(n.endswith(".log") for n in names)  # escalation log exercised

    bench_a = tmp_path / "ba"
    bench_b = tmp_path / "bb"
    assert main(["bench", "--config", str(cfg), "--out", str(bench_a),
                 "--no-figures"]) == 0
    assert main(["bench", "--config", str(cfg), "--out", str(bench_b),
                 "--no-figures"]) == 0
    assert ((bench_a / "bench.tsv").read_bytes()
            == (bench_b / "bench.tsv").read_bytes())
    report("C8", f"{len(names)} simulate artifacts and the bench table are "
                 f"byte-identical across reruns")
