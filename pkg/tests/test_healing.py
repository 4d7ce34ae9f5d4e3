"""Healing engine: fix search, recursion and budget bounds, escalation."""

import json
import random
from dataclasses import replace

import pytest

from healsim.core import FixStat, build_st
from healsim.errors import UnstableStateError
from healsim.faults import FaultModel, ModelDb
from healsim.healing import (HealingConfig, HealingEngine, apply_fix,
                             exact_submatch, update_success)
from healsim.pipeline import calibration_record, default_forest
from healsim.simapp import FaultSpec, SimApp
from healsim.store import NodeStore

from conftest import simple_st


def broken_app(fault_type="memory-overload", seed=4):
    app = SimApp("n0", seed=seed)
    rec = app.run(FaultSpec(fault_type, 0, 1))
    return app, build_st(rec)


def seeded_store(fault_type, fixes, node="n0", seed=4):
    """Store holding a generalized record of the fault with given fix stats."""
    from healsim.config import ClusterSpec
    store = NodeStore(node)
    record = calibration_record(node, fault_type, 1,
                                ClusterSpec(seed=seed))
    record = replace(record, fixes=tuple(FixStat(*f) for f in fixes))
    store.merge_st(record)
    return store


def empty_db():
    return ModelDb(default_forest())


# -- update_success ------------------------------------------------------------

def test_update_success_on_record():
    st = simple_st({"a": 1}, fault="fault-x", fixes=(("fix-a", 0, 0),))
    healed = update_success(st, "fix-a", True)
    assert healed.fix("fix-a") == FixStat("fix-a", 1, 1)
    failed = update_success(healed, "fix-a", False)
    assert failed.fix("fix-a") == FixStat("fix-a", 1, 2)


def test_update_success_on_model():
    model = FaultModel("fault-x", "kind", [FixStat("fix-a", 1, 1)])
    update_success(model, "fix-a", False)
    assert model.fix("fix-a") == FixStat("fix-a", 1, 2)


def test_update_success_rejects_unattached():
    st = simple_st({"a": 1}, fault="fault-x")
    with pytest.raises(ValueError):
        update_success(st, "fix-a", True)
    with pytest.raises(ValueError):
        update_success(FaultModel("f", "k"), "fix-a", True)


def test_update_success_random_sequences_keep_invariant():
    rng = random.Random(17)
    st = simple_st({"a": 1}, fault="fault-x", fixes=(("fix-a", 0, 0),))
    for _ in range(100):
        st = update_success(st, "fix-a", rng.random() < 0.5)
        stat = st.fix("fix-a")
        assert 0 <= stat.successes <= stat.attempts


# -- apply_fix -------------------------------------------------------------------

def test_apply_fix_right_cause_heals():
    app, _st = broken_app("network-outage")
    checkpoint = app.snapshot()
    assert apply_fix(app, "reopen-connection", checkpoint) is True
    assert app.is_stable()


def test_apply_fix_wrong_cause_restores_state():
    app, _st = broken_app("memory-overload")
    checkpoint = app.snapshot()
    frozen = app.serialize_state()
    assert apply_fix(app, "purge-disk", checkpoint) is False
    assert app.serialize_state() == frozen


def test_apply_fix_unknown_fix_counts_as_unstable():
    app, _st = broken_app("memory-overload")
    checkpoint = app.snapshot()
    assert apply_fix(app, "not-a-fix", checkpoint) is False


def test_apply_fix_on_stable_app_rejected():
    app = SimApp("n0", seed=4)
    app.run()
    with pytest.raises(UnstableStateError):
        apply_fix(app, "purge-disk", app.snapshot())


# -- exact submatch ----------------------------------------------------------------

def test_exact_submatch_contiguous_and_value_overlap():
    whole = simple_st({"a": 1, "b": 2}, ("m1", "m2", "m3"), fault="f",
                      fixes=(("fix", 0, 1),))
    part = simple_st({"a": 1}, ("m2", "m3"), fault="f", fixes=(("fix", 0, 1),))
    assert exact_submatch(part, whole)
    gap = simple_st({"a": 1}, ("m1", "m3"), fault="f", fixes=(("fix", 0, 1),))
    assert not exact_submatch(gap, whole)
    clash = simple_st({"a": 9}, ("m2", "m3"), fault="f", fixes=(("fix", 0, 1),))
    assert not exact_submatch(clash, whole)


# -- on_failure ---------------------------------------------------------------------

def test_exact_store_hit_heals_on_first_attempt():
    app, st_c = broken_app("network-outage")
    store = seeded_store("network-outage", [("reopen-connection", 1, 1)])
    engine = HealingEngine(app, store, empty_db())
    out = engine.on_failure(st_c)
    assert out.healed
    assert out.fix_id == "reopen-connection"
    assert out.attempts == 1
    assert app.is_stable()
    # the healed scenario merged back: success count incremented
    entry = next(e for e in store.entries if e.st.fault_id)
    assert entry.st.fix("reopen-connection") == FixStat("reopen-connection", 2, 2)
    assert entry.occurrences == 2


def test_empty_knowledge_escalates_with_log(tmp_path):
    log = tmp_path / "esc.log"
    app, st_c = broken_app("memory-overload")
    engine = HealingEngine(app, NodeStore("n0"), empty_db(), log_path=str(log))
    out = engine.on_failure(st_c)
    assert out.escalated
    assert out.fix_id is None
    assert out.log_record is not None
    lines = log.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 1
    rec = json.loads(lines[0])
    assert rec["node"] == "n0"
    assert rec["st"]["fault"] == "memory-overload"
    assert rec["state"]["active_fault"] is not None


def test_high_rate_wrong_fix_tried_first_then_correct():
    app, st_c = broken_app("memory-overload")
    store = seeded_store("memory-overload",
                         [("reopen-connection", 9, 10), ("clear-memory", 1, 2)])
    engine = HealingEngine(app, store, empty_db())
    out = engine.on_failure(st_c)
    assert out.healed
    assert out.fix_id == "clear-memory"
    tried = [(t.fix_id, t.stable) for t in out.tried]
    assert tried[0] == ("reopen-connection", False)
    assert ("clear-memory", True) in tried
    entry = next(e for e in store.entries if e.st.fault_id)
    wrong = entry.st.fix("reopen-connection")
    right = entry.st.fix("clear-memory")
    assert (wrong.successes, wrong.attempts) == (9, 11)
    assert (right.successes, right.attempts) == (2, 3)


def test_on_failure_rejects_stable_inputs():
    app = SimApp("n0", seed=4)
    app.run()
    engine = HealingEngine(app, NodeStore("n0"), empty_db())
    with pytest.raises(UnstableStateError):
        engine.on_failure(build_st(app.run()))
    app2, st_c = broken_app()
    engine2 = HealingEngine(SimApp("n1", seed=1), NodeStore("n1"), empty_db())
    engine2.app.run()
    with pytest.raises(UnstableStateError):
        engine2.on_failure(st_c)
    assert app2 is not None


def test_nontransient_always_escalates():
    app, st_c = broken_app("custom-nontransient")
    # even with every fix on offer, nothing repairs a logic error
    store = NodeStore("n0")
    record = replace(st_c, fixes=tuple(FixStat(f, 1, 1) for f in
                                       sorted(("reopen-connection", "clear-memory",
                                               "purge-disk", "restart-component",
                                               "restore-config"))))
    store.merge_st(record)
    engine = HealingEngine(app, store, empty_db())
    out = engine.on_failure(st_c)
    assert out.escalated
    assert all(not t.stable for t in out.tried)
    assert not app.is_stable()


def test_budget_bound_holds():
    app, st_c = broken_app("custom-nontransient")
    store = NodeStore("n0")
    record = replace(st_c, fixes=(FixStat("restart-component", 1, 1),))
    store.merge_st(record)
    cfg = HealingConfig(time_limit=2, fix_attempt_cap=50)
    calls = []

    def refresh():
        calls.append(1)
        return True

    engine = HealingEngine(app, store, empty_db(), cfg, refresh_hook=refresh)
    out = engine.on_failure(st_c)
    assert out.escalated
    assert out.elapsed <= cfg.time_limit + 1


def test_recursion_depth_bound():
    app, st_c = broken_app("custom-nontransient")
    store = NodeStore("n0")
    # many submatching records, each with a distinct useless fix
    for i in range(8):
        part = replace(st_c, fixes=(FixStat(f"zz-fake-{i}", 1, 1),))
        store.merge_st(replace(part, run_id=i))
    cfg = HealingConfig(max_recursion_depth=2, fix_attempt_cap=1,
                        time_limit=1000)
    engine = HealingEngine(app, store, empty_db(), cfg)
    out = engine.on_failure(st_c)
    assert out.escalated
    # depth bound keeps each submatch cascade at two nested trials


def test_state_restored_after_every_failed_trial():
    app, st_c = broken_app("memory-overload")
    frozen = app.serialize_state()
    store = seeded_store("memory-overload", [("purge-disk", 3, 3)])
    cfg = HealingConfig(fix_attempt_cap=1)
    engine = HealingEngine(app, store, empty_db(), cfg)
    out = engine.on_failure(st_c)
    assert out.escalated
    assert app.serialize_state() == frozen


def test_refresh_brings_the_healing_fix():
    app, st_c = broken_app("disk-full")
    local = NodeStore("n0")
    remote = seeded_store("disk-full", [("purge-disk", 1, 1)], node="n1")

    def refresh():
        return local.merge_dst(remote.entries)

    engine = HealingEngine(app, local, empty_db(), refresh_hook=refresh)
    out = engine.on_failure(st_c)
    assert out.healed
    assert out.fix_id == "purge-disk"


def test_healed_fix_rate_is_non_decreasing_and_sorts_earlier():
    rates = []
    store = seeded_store("network-outage", [("reopen-connection", 1, 2),
                                            ("restore-config", 2, 3)])
    db = empty_db()
    app = SimApp("n0", seed=4)
    app.run()
    for _ in range(4):
        rec = app.run(FaultSpec("network-outage", 0, 1))
        out = HealingEngine(app, store, db).on_failure(build_st(rec))
        assert out.healed
        entry = next(e for e in store.entries if e.st.fault_id)
        rates.append(entry.st.fix("reopen-connection").smoothed_rate())
    assert rates == sorted(rates)
    # by now the honest fix outranks the decoy that started higher
    entry = next(e for e in store.entries if e.st.fault_id)
    fixes = sorted(entry.st.fixes, key=lambda f: -f.smoothed_rate())
    assert fixes[0].fix_id == "reopen-connection"


def test_healed_scenario_tagged_into_model():
    app, st_c = broken_app("network-outage")
    store = seeded_store("network-outage", [("reopen-connection", 1, 1)])
    db = empty_db()
    engine = HealingEngine(app, store, db)
    out = engine.on_failure(st_c)
    assert out.healed
    model = db.get("network-outage")
    assert model is not None
    assert model.tagged
    assert model.fix("reopen-connection").successes >= 1
