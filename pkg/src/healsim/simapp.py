"""Simulated target application and fault injector.

A small request-serving server with a fixed call graph stands in for the
real instrumented application: every run emits probe events (method
entry/exit plus state samples) and can be broken mid-run by an injected
fault.  The root-cause table is the evaluation ground truth for whether a
recovery action actually repairs a fault.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .core import EntityKey, ProbeEvent, RunRecord, dump_json
from .errors import SimulatorError

TRANSIENT_TYPES = ("network-outage", "memory-overload", "disk-full")
FAULT_TYPES = TRANSIENT_TYPES + ("custom-nontransient",)

# Five recovery actions: one true repair per transient fault plus two decoys,
# so false-positive healing stays measurable.
FIX_CATALOG = ("restart-component", "reopen-connection", "clear-memory",
               "purge-disk", "restore-config")

ROOT_CAUSES = {
    "network-outage": frozenset({"reopen-connection"}),
    "memory-overload": frozenset({"clear-memory"}),
    "disk-full": frozenset({"purge-disk"}),
    "custom-nontransient": frozenset(),
}

FAULT_RESOURCE = {
    "network-outage": "network-links",
    "memory-overload": "memory-used",
    "disk-full": "disk-used",
    "custom-nontransient": None,
}

REQUEST_OPS = ("db-call", "file-write", "net-send")

# Where each fault type naturally fires: transient faults break inside the
# operation that uses the affected resource; logic errors break in dispatch.
FAULT_OP = {
    "network-outage": "net-send",
    "memory-overload": "db-call",
    "disk-full": "file-write",
}

NETWORK_LINKS = 4
POOL_SIZE = 8
MEMORY_BUDGET = 100
DISK_BUDGET = 100


@dataclass(frozen=True)
class AppModel:
    """Structure of the simulated server: call graph, resource levels,
    environment, and the per-run request workload."""

    call_graph: tuple = (
        ("handle-request", ("dispatch",)),
        ("dispatch", REQUEST_OPS),
        ("db-call", ()),
        ("file-write", ()),
        ("net-send", ()),
    )
    entry: str = "handle-request"
    resources: tuple = (("network-links", NETWORK_LINKS),
                        ("connection-pool", POOL_SIZE),
                        ("memory-used", 30), ("disk-used", 20))
    environment: tuple = (("os", "simos"), ("version", "1.0"))
    requests_per_run: int = 4

    def __post_init__(self):
        if self.requests_per_run < 1:
            raise ValueError("requests_per_run must be positive")
        graph = dict(self.call_graph)
        if self.entry not in graph:
            raise ValueError(f"entry method {self.entry!r} not in call graph")
        seen = set()
        frontier = [self.entry]
        while frontier:
            m = frontier.pop()
            if m in seen:
                continue
            seen.add(m)
            frontier.extend(graph.get(m, ()))
        unreachable = sorted(set(graph) - seen)
        if unreachable:
            raise ValueError(f"methods unreachable from entry: {unreachable}")
        if any(level < 0 for _name, level in self.resources):
            raise ValueError("resource levels must be non-negative")


DEFAULT_MODEL = AppModel()


@dataclass(frozen=True)
class FaultSpec:
    """An injection: which fault type fires on which run, at which probe seq."""

    fault_type: str
    run_index: int = 0
    seq: int = 8

    def __post_init__(self):
        if self.fault_type not in FAULT_TYPES:
            raise ValueError(f"unknown fault type {self.fault_type!r}")
        if self.run_index < 0 or self.seq < 0:
            raise ValueError("fault trigger indices must be non-negative")

    @property
    def resource(self) -> str | None:
        return FAULT_RESOURCE[self.fault_type]

    def to_wire(self) -> list:
        return [self.fault_type, self.run_index, self.seq]

    @classmethod
    def from_wire(cls, obj) -> "FaultSpec":
        return cls(obj[0], obj[1], obj[2])


class SimApp:
    """One node's application instance: deterministic runs, checkpoints,
    recovery actions."""

    def __init__(self, node_id: str, seed: int = 0,
                 requests_per_run: int | None = None,
                 model: AppModel = DEFAULT_MODEL):
        if requests_per_run is not None and requests_per_run != model.requests_per_run:
            model = AppModel(model.call_graph, model.entry, model.resources,
                             model.environment, requests_per_run)
        self.model = model
        self.node_id = node_id
        self.seed = seed
        self.requests_per_run = model.requests_per_run
        self.resources = dict(model.resources)
        self.env = dict(model.environment)
        self.run_count = 0
        self.requests_served = 0
        self.active_fault: FaultSpec | None = None
        self.exec_point = ("", 0)

    # -- state --------------------------------------------------------------

    def is_stable(self) -> bool:
        return (self.active_fault is None
                and self.resources["network-links"] >= 1
                and self.resources["memory-used"] < MEMORY_BUDGET
                and self.resources["disk-used"] < DISK_BUDGET)

    def snapshot(self) -> dict:
        """Restorable snapshot: resources, environment, counters, execution
        point."""
        return {
            "resources": dict(self.resources),
            "env": dict(self.env),
            "run_count": self.run_count,
            "requests_served": self.requests_served,
            "active_fault": self.active_fault.to_wire() if self.active_fault else None,
            "exec_point": list(self.exec_point),
        }

    def restore(self, snap: dict) -> None:
        self.resources = dict(snap["resources"])
        self.env = dict(snap["env"])
        self.run_count = snap["run_count"]
        self.requests_served = snap["requests_served"]
        self.active_fault = (FaultSpec.from_wire(snap["active_fault"])
                             if snap["active_fault"] else None)
        self.exec_point = tuple(snap["exec_point"])

    def serialize_state(self) -> str:
        return dump_json(self.snapshot())

    # -- running ------------------------------------------------------------

    def run(self, injected: FaultSpec | None = None,
            variant: str | None = None) -> RunRecord:
        """Execute one deterministic run, optionally breaking at the injected
        fault's trigger point.

        `variant` swaps the first request's operation method, modelling a
        rarely-exercised code path of the same length as the common ones.
        """
        if not self.is_stable():
            raise SimulatorError("application must be stable to start a run")
        run_id = self.run_count
        self.run_count += 1
        rng = random.Random(f"{self.seed}:{self.node_id}:{run_id}")
        events: list[ProbeEvent] = []
        stack: list[str] = []
        seq = 0
        fault_id = None
        terminal = None

        def call(method, depth):
            nonlocal seq
            events.append(ProbeEvent(seq, "call", method_id=method, depth=depth))
            seq += 1

        def sample(category, path, value):
            nonlocal seq
            events.append(ProbeEvent(seq, "sample", key=EntityKey(category, tuple(path)),
                                     value=value))
            seq += 1

        def armed(at_op: str | None) -> bool:
            if injected is None or fault_id is not None or seq < injected.seq:
                return False
            if injected.fault_type == "custom-nontransient":
                return at_op is None
            return at_op == FAULT_OP[injected.fault_type]

        for i in range(self.requests_per_run):
            op = variant if (variant is not None and i == 0) else REQUEST_OPS[i % 3]
            stack.append("handle-request")
            call("handle-request", 0)
            sample("environment", ("env", "os"), self.env["os"])
            sample("environment", ("env", "version"), self.env["version"])
            # Sampled state stays in small finite domains so generalized
            # values eventually cover every run of the same scenario.
            sample("field-value", ("server", "requests", "inflight"), i)
            stack.append("dispatch")
            call("dispatch", 1)
            self.resources["connection-pool"] = rng.choice((6, 7, 8))
            sample("object-state", ("server", "handler", "mode"),
                   rng.choice(("idle", "busy")))
            sample("open-resource", ("server", "pool", "size"),
                   self.resources["connection-pool"])
            sample("field-value", ("server", "queue", "depth"),
                   rng.choice((0, 2, 4, 6, 8)))
            if armed(None):
                # Logic error in the dispatcher itself: no resource involved.
                self._break(injected)
                fault_id = injected.fault_type
                terminal = tuple(stack)
                self.exec_point = ("dispatch", seq)
                break
            stack.append(op)
            call(op, 2)
            self.resources["memory-used"] = rng.choice((20, 30, 40, 50))
            self.resources["disk-used"] = rng.choice((10, 20, 30))
            if armed(op):
                self._break(injected)
                fault_id = injected.fault_type
                terminal = tuple(stack)
                self.exec_point = (op, seq)
            sample("open-resource", ("net", "links", "up"),
                   self.resources["network-links"])
            sample("field-value", ("host", "memory", "used"),
                   self.resources["memory-used"])
            sample("field-value", ("host", "disk", "used"),
                   self.resources["disk-used"])
            if fault_id is not None:
                break
            call(op, 2)
            stack.pop()
            call("dispatch", 1)
            stack.pop()
            self.requests_served += 1
            call("handle-request", 0)
            stack.pop()
        return RunRecord(self.node_id, run_id, tuple(events), fault_id, terminal)

    def _break(self, spec: FaultSpec) -> None:
        if spec.fault_type == "network-outage":
            self.resources["network-links"] = 0
        elif spec.fault_type == "memory-overload":
            self.resources["memory-used"] = MEMORY_BUDGET
        elif spec.fault_type == "disk-full":
            self.resources["disk-used"] = DISK_BUDGET
        self.active_fault = spec

    # -- recovery -----------------------------------------------------------

    def apply_recovery(self, fix_id: str) -> str | None:
        """Run one recovery action; returns a diagnostic for unknown ids.

        The action repairs the active fault only when the root-cause table
        maps the fault type to this fix; otherwise it just normalizes the
        resource it targets.
        """
        if fix_id not in FIX_CATALOG:
            return f"unknown fix {fix_id!r}: no recovery action taken"
        if fix_id == "restart-component":
            self.resources["connection-pool"] = POOL_SIZE
        elif fix_id == "reopen-connection":
            self.resources["network-links"] = NETWORK_LINKS
        elif fix_id == "clear-memory":
            self.resources["memory-used"] = 0
        elif fix_id == "purge-disk":
            self.resources["disk-used"] = 0
        elif fix_id == "restore-config":
            self.env = dict(self.model.environment)
        fault = self.active_fault
        if fault is not None and fix_id in ROOT_CAUSES[fault.fault_type]:
            self.active_fault = None
        return None

    def replay_from(self, snap: dict) -> bool:
        """Re-evaluate the failed operation's stability after a recovery."""
        del snap  # the failed request needs the same resources every replay
        return self.is_stable()
