"""Cluster configuration: parsing, validation, canonical serialization.

Config files are JSON; parse failures report the offending line, unknown
keys are rejected by name, and parse -> serialize -> parse is a fixed
point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .healing import HealingConfig
from .simapp import FAULT_TYPES, FaultSpec

MODES = ("full", "incremental")

TOP_KEYS = {
    "nodes", "topology", "share_interval", "mode", "seed", "store_threshold",
    "global_threshold", "global_min_sources", "runs_per_node", "requests_per_run",
    "drop_probability", "set_cap", "merge_theta", "distance_weights",
    "epsilon", "epsilon_exact", "family_factor", "settle_rounds",
    "seed_models", "healing", "faults", "bench",
}
HEALING_KEYS = {"max_recursion_depth", "time_limit", "candidate_subset_size",
                "fix_attempt_cap"}
FAULT_KEYS = {"type", "node", "run", "seq"}
BENCH_KEYS = {"repeats", "run_counts"}


@dataclass(frozen=True)
class InjectionSpec:
    """One scheduled fault: type, target node, node-local run index, seq."""

    fault_type: str
    node: str
    run: int
    seq: int = 1

    def fault_spec(self) -> FaultSpec:
        return FaultSpec(self.fault_type, self.run, self.seq)


@dataclass(frozen=True)
class BenchSpec:
    repeats: int = 10
    run_counts: tuple = (1, 10, 50, 100, 500)


@dataclass(frozen=True)
class ClusterSpec:
    nodes: int = 1
    topology: object = "full"  # named shape or explicit peer map
    share_interval: int = 10
    mode: str = "full"
    seed: int = 0
    store_threshold: int = 64
    global_threshold: int = 256
    global_min_sources: int = 3
    runs_per_node: int = 1
    requests_per_run: int = 4
    drop_probability: float = 0.0
    set_cap: int = 4
    merge_theta: float = 0.8
    distance_weights: tuple = (0.5, 0.5)
    epsilon: float = 0.25
    epsilon_exact: float = 0.02
    family_factor: float = 1.25
    settle_rounds: int = 3
    seed_models: bool = True
    healing: HealingConfig = field(default_factory=HealingConfig)
    faults: tuple = ()
    bench: BenchSpec = field(default_factory=BenchSpec)

    @property
    def w_sig(self) -> float:
        return self.distance_weights[0]

    @property
    def w_trace(self) -> float:
        return self.distance_weights[1]

    def node_ids(self) -> list:
        return [f"n{i}" for i in range(self.nodes)]


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate_spec(spec: ClusterSpec) -> ClusterSpec:
    _require(spec.nodes >= 1, "nodes must be at least 1")
    _require(spec.share_interval >= 1, "share_interval must be at least 1")
    _require(spec.mode in MODES, f"mode must be one of {MODES}")
    _require(spec.store_threshold >= 1, "store_threshold must be positive")
    _require(spec.global_threshold >= 1, "global_threshold must be positive")
    _require(spec.global_min_sources >= 1, "global_min_sources must be positive")
    _require(spec.runs_per_node >= 0, "runs_per_node must be non-negative")
    _require(spec.requests_per_run >= 1, "requests_per_run must be positive")
    _require(0.0 <= spec.drop_probability < 1.0,
             "drop_probability must be in [0, 1)")
    _require(spec.set_cap >= 1, "set_cap must be positive")
    _require(0.0 < spec.merge_theta <= 1.0, "merge_theta must be in (0, 1]")
    _require(len(spec.distance_weights) == 2,
             "distance_weights needs a signature and trace weight")
    _require(abs(sum(spec.distance_weights) - 1.0) < 1e-9,
             "distance_weights must sum to 1")
    _require(0.0 <= spec.epsilon <= 1.0, "epsilon must be in [0, 1]")
    _require(0.0 <= spec.epsilon_exact <= spec.epsilon,
             "epsilon_exact must be within epsilon")
    _require(spec.family_factor >= 1.0, "family_factor must be at least 1")
    _require(spec.settle_rounds >= 0, "settle_rounds must be non-negative")
    node_ids = set(spec.node_ids())
    for inj in spec.faults:
        _require(inj.fault_type in FAULT_TYPES,
                 f"unknown fault type {inj.fault_type!r}")
        _require(inj.node in node_ids, f"fault targets unknown node {inj.node!r}")
        _require(0 <= inj.run < max(spec.runs_per_node, 1),
                 f"fault run index {inj.run} outside runs_per_node")
        _require(inj.seq >= 0, "fault seq must be non-negative")
    _require(spec.bench.repeats >= 1, "bench repeats must be at least 1")
    _require(len(spec.bench.run_counts) >= 1, "bench run_counts must be non-empty")
    _require(all(c >= 1 for c in spec.bench.run_counts),
             "bench run_counts must be positive")
    return spec


def _check_keys(obj: dict, allowed: set, where: str) -> None:
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}")


def parse_config_text(text: str) -> ClusterSpec:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, line=exc.lineno) from exc
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object", line=1)
    _check_keys(obj, TOP_KEYS, "config")
    kwargs = {}
    spec_fields = {f.name for f in fields(ClusterSpec)}
    for key, value in obj.items():
        if key == "healing":
            if not isinstance(value, dict):
                raise ConfigError("healing must be an object")
            _check_keys(value, HEALING_KEYS, "healing")
            kwargs["healing"] = HealingConfig(**value)
        elif key == "faults":
            if not isinstance(value, list):
                raise ConfigError("faults must be a list")
            injections = []
            for entry in value:
                if not isinstance(entry, dict):
                    raise ConfigError("each fault must be an object")
                _check_keys(entry, FAULT_KEYS, "faults")
                try:
                    injections.append(InjectionSpec(
                        entry["type"], entry["node"], entry["run"],
                        entry.get("seq", 1)))
                except KeyError as exc:
                    raise ConfigError(f"fault entry missing key {exc.args[0]!r}")
            kwargs["faults"] = tuple(injections)
        elif key == "bench":
            if not isinstance(value, dict):
                raise ConfigError("bench must be an object")
            _check_keys(value, BENCH_KEYS, "bench")
            kwargs["bench"] = BenchSpec(
                value.get("repeats", 10),
                tuple(value.get("run_counts", (1, 10, 50, 100, 500))))
        elif key == "distance_weights":
            kwargs[key] = tuple(value)
        elif key == "topology":
            kwargs[key] = value if isinstance(value, str) else dict(value)
        elif key in spec_fields:
            kwargs[key] = value
    weights = tuple(kwargs.get("distance_weights", (0.5, 0.5)))
    if len(weights) != 2:
        raise ConfigError("distance_weights needs a signature and trace weight")
    # Healing thresholds follow the cluster-level matching knobs.
    partial = kwargs.get("healing", HealingConfig())
    kwargs["healing"] = HealingConfig(
        partial.max_recursion_depth, partial.time_limit,
        partial.candidate_subset_size,
        kwargs.get("epsilon", 0.25), kwargs.get("epsilon_exact", 0.02),
        partial.fix_attempt_cap, weights[0], weights[1])
    try:
        spec = ClusterSpec(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return validate_spec(spec)


def parse_config(path) -> ClusterSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc


def serialize_config(spec: ClusterSpec) -> str:
    obj = {
        "nodes": spec.nodes,
        "topology": spec.topology,
        "share_interval": spec.share_interval,
        "mode": spec.mode,
        "seed": spec.seed,
        "store_threshold": spec.store_threshold,
        "global_threshold": spec.global_threshold,
        "global_min_sources": spec.global_min_sources,
        "runs_per_node": spec.runs_per_node,
        "requests_per_run": spec.requests_per_run,
        "drop_probability": spec.drop_probability,
        "set_cap": spec.set_cap,
        "merge_theta": spec.merge_theta,
        "distance_weights": list(spec.distance_weights),
        "epsilon": spec.epsilon,
        "epsilon_exact": spec.epsilon_exact,
        "family_factor": spec.family_factor,
        "settle_rounds": spec.settle_rounds,
        "seed_models": spec.seed_models,
        "healing": {
            "max_recursion_depth": spec.healing.max_recursion_depth,
            "time_limit": spec.healing.time_limit,
            "candidate_subset_size": spec.healing.candidate_subset_size,
            "fix_attempt_cap": spec.healing.fix_attempt_cap,
        },
        "faults": [{"type": f.fault_type, "node": f.node, "run": f.run,
                    "seq": f.seq} for f in spec.faults],
        "bench": {"repeats": spec.bench.repeats,
                  "run_counts": list(spec.bench.run_counts)},
    }
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def summary_json(obj: dict) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=True) + "\n"
