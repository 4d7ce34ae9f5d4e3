"""Configuration handling and the command-line surface."""

import json

import pytest

from healsim.cli import main
from healsim.config import parse_config_text, serialize_config
from healsim.core import st_record
from healsim.errors import ConfigError
from healsim.pipeline import run_simulation
from healsim.store import NodeStore


MINIMAL = {"nodes": 1, "runs_per_node": 1, "seed": 3}

REFERENCE = {
    "nodes": 5,
    "topology": "full",
    "share_interval": 4,
    "mode": "full",
    "seed": 11,
    "runs_per_node": 6,
    "faults": [
        {"type": "network-outage", "node": "n1", "run": 2},
        {"type": "disk-full", "node": "n3", "run": 4},
        {"type": "custom-nontransient", "node": "n4", "run": 3},
    ],
}


def write_config(tmp_path, obj, name="cluster.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj, indent=1), encoding="utf-8")
    return path


# -- config ----------------------------------------------------------------------

def test_parse_minimal_defaults():
    spec = parse_config_text(json.dumps(MINIMAL))
    assert spec.nodes == 1
    assert spec.mode == "full"
    assert spec.healing.time_limit == 1000


def test_unknown_key_named():
    with pytest.raises(ConfigError) as err:
        parse_config_text(json.dumps({"nodes": 1, "wibble": 2}))
    assert "wibble" in str(err.value)


def test_unknown_nested_key_named():
    with pytest.raises(ConfigError) as err:
        parse_config_text(json.dumps({"healing": {"time_limit": 5, "wobble": 1}}))
    assert "wobble" in str(err.value)


def test_malformed_json_reports_line():
    text = '{\n  "nodes": 1,\n  "mode": full\n}\n'
    with pytest.raises(ConfigError) as err:
        parse_config_text(text)
    assert err.value.line == 3
    assert "line 3" in str(err.value)


def test_validation_errors():
    with pytest.raises(ConfigError):
        parse_config_text(json.dumps({"nodes": 0}))
    with pytest.raises(ConfigError):
        parse_config_text(json.dumps({"mode": "sneaker-net"}))
    with pytest.raises(ConfigError):
        parse_config_text(json.dumps({"distance_weights": [0.9, 0.9]}))
    with pytest.raises(ConfigError):
        parse_config_text(json.dumps(
            {"nodes": 1, "runs_per_node": 2,
             "faults": [{"type": "disk-full", "node": "n9", "run": 0}]}))


def test_config_round_trip_fixed_point():
    spec = parse_config_text(json.dumps(REFERENCE))
    text = serialize_config(spec)
    again = parse_config_text(text)
    assert again == spec
    assert serialize_config(again) == text


def test_healing_thresholds_follow_cluster_knobs():
    spec = parse_config_text(json.dumps({"epsilon": 0.4, "epsilon_exact": 0.1}))
    assert spec.healing.eps == 0.4
    assert spec.healing.eps_exact == 0.1


# -- simulate ---------------------------------------------------------------------

def test_simulate_minimal_persists_single_entry_store(tmp_path, capsys):
    cfg = write_config(tmp_path, MINIMAL)
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    store = NodeStore.load(out / "n0.store")
    assert len(store) == 1
    assert store.entries[0].st.outcome == "stable"
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["nodes"]["n0"]["runs"] == 1
    assert capsys.readouterr().out.startswith("runs=1 ")


def test_simulate_unknown_key_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, dict(MINIMAL, zap=1))
    assert main(["simulate", "--config", str(cfg)]) == 2
    assert "zap" in capsys.readouterr().err


def test_simulate_summary_matches_persisted_recount(tmp_path):
    cfg = write_config(tmp_path, REFERENCE)
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    for nid, counts in summary["nodes"].items():
        store = NodeStore.load(out / f"{nid}.store")
        assert len(store) == counts["store_records"]
        assert store.version == counts["store_version"]
    escalated = sum(c["escalated"] for c in summary["nodes"].values())
    log_lines = 0
    for nid in summary["nodes"]:
        path = out / f"escalations-{nid}.log"
        if path.exists():
            log_lines += len(path.read_text(encoding="utf-8").splitlines())
    assert log_lines == escalated
    healed = sum(c["healed"] for c in summary["nodes"].values())
    assert healed == sum(1 for ev in summary["fault_events"] if ev["healed"])


def test_simulate_seed_override(tmp_path):
    cfg = write_config(tmp_path, MINIMAL)
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert main(["simulate", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["simulate", "--config", str(cfg), "--seed", "4",
                 "--out", str(b)]) == 0
    assert ((a / "n0.store").read_bytes()
            != (b / "n0.store").read_bytes())


# -- classify ---------------------------------------------------------------------

def test_classify_round_trip_matches_engine_decision(tmp_path, capsys):
    spec = parse_config_text(json.dumps(REFERENCE))
    out = tmp_path / "out"
    summary = run_simulation(spec, str(out))
    healed_events = [ev for ev in summary["fault_events"] if ev["healed"]]
    assert healed_events
    ev = healed_events[0]
    # rebuild the fault record exactly as it occurred mid-simulation
    from healsim.core import build_st
    from healsim.simapp import SimApp
    app = SimApp(ev["node"], spec.seed, spec.requests_per_run)
    inj = next(i for i in spec.faults
               if i.node == ev["node"] and i.run == ev["run"])
    for _ in range(ev["run"]):
        app.run()
    st_c = build_st(app.run(inj.fault_spec()), spec.set_cap)
    fault_file = tmp_path / "fault.rec"
    fault_file.write_text(st_record(st_c) + "\n", encoding="utf-8")
    code = main(["classify", "--models", str(out / "models.db"),
                 "--store", str(out / f"{ev['node']}.store"),
                 "--fault", str(fault_file)])
    assert code == 0
    printed = capsys.readouterr().out.strip()
    assert printed == ev["fix"]


def test_classify_empty_models_escalates(tmp_path, capsys):
    from healsim.faults import ModelDb
    db_path = tmp_path / "models.db"
    ModelDb().save(db_path)
    fault_file = tmp_path / "fault.rec"
    from conftest import simple_st
    fault_file.write_text(st_record(simple_st({"a": 1}, fault="fault-x"))
                          + "\n", encoding="utf-8")
    assert main(["classify", "--models", str(db_path),
                 "--fault", str(fault_file)]) == 0
    assert capsys.readouterr().out.strip() == "escalate"


def test_classify_corrupt_store_exits_3(tmp_path, capsys):
    bad = tmp_path / "models.db"
    bad.write_text('{"v":1,"kind":"models","models":1}\n{"v":1,"rec":"oops"}\n',
                   encoding="utf-8")
    fault_file = tmp_path / "fault.rec"
    from conftest import simple_st
    fault_file.write_text(st_record(simple_st({"a": 1}, fault="fault-x"))
                          + "\n", encoding="utf-8")
    assert main(["classify", "--models", str(bad),
                 "--fault", str(fault_file)]) == 3
    assert "record 2" in capsys.readouterr().err


# -- bench and inspect ---------------------------------------------------------------

def test_bench_single_point_table_shape(tmp_path, capsys):
    cfg = write_config(tmp_path, {
        "nodes": 2, "seed": 5,
        "bench": {"repeats": 2, "run_counts": [1]},
    })
    out = tmp_path / "bench"
    assert main(["bench", "--config", str(cfg), "--out", str(out),
                 "--no-figures"]) == 0
    table = (out / "bench.tsv").read_text(encoding="utf-8").splitlines()
    assert table[0] == "experiment\tmetric\trun_count\tdst_size\trepeat\tvalue"
    body = [ln.split("\t") for ln in table[1:]]
    # 5 metrics x (2 repeats + 1 average row)
    assert len(body) == 15
    for metric in ("st-gather-ticks", "dst-merge-ticks", "dst-size-records",
                   "match-ticks", "match-ticks-second"):
        repeats = [row[4] for row in body if row[1] == metric]
        assert repeats == ["0", "1", "avg"]


def test_bench_renders_figures(tmp_path):
    cfg = write_config(tmp_path, {
        "nodes": 2, "seed": 5,
        "bench": {"repeats": 1, "run_counts": [1, 4]},
    })
    out = tmp_path / "bench"
    assert main(["bench", "--config", str(cfg), "--out", str(out)]) == 0
    for name in ("bench.tsv", "cost_vs_runs.png", "cost_vs_size.png",
                 "dst_size_vs_runs.png", "match_cost.png"):
        assert (out / name).exists(), name


def test_inspect_outputs_human_readable(tmp_path, capsys):
    cfg = write_config(tmp_path, MINIMAL)
    out = tmp_path / "out"
    main(["simulate", "--config", str(cfg), "--out", str(out)])
    capsys.readouterr()
    assert main(["inspect", str(out / "n0.store")]) == 0
    text = capsys.readouterr().out
    assert "node store n0" in text
    assert "stable" in text
    assert main(["inspect", str(out / "models.db")]) == 0
    assert "model database" in capsys.readouterr().out
    assert main(["inspect", str(out / "global.store")]) == 0
    assert "global knowledge" in capsys.readouterr().out


def test_missing_config_file_exits_2(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == 2
    err = capsys.readouterr().err
    assert "nope.json" in err
