"""Deterministic multi-node self-healing simulator and knowledge library."""

from .core import (EntityKey, FixStat, GeneralizedValue, ProbeEvent, RunRecord,
                   SignatureEntity, SignatureTrace, Trace, TraceEvent, build_st,
                   concrete, distance, make_st, st_from_record, st_record,
                   value_range, value_set, widen)
from .exchange import Cluster, ExchangeNode, SimClock, build_cluster
from .faults import (ClassifyResult, FaultGraph, FaultKind, FaultModel,
                     KindForest, MatchResult, ModelDb, classify, find_fix,
                     match_category, rebuild_graph, refine_family)
from .healing import (HealingConfig, HealingEngine, HealingOutcome, apply_fix,
                      update_success)
from .simapp import AppModel, FaultSpec, SimApp
from .store import Delta, GlobalKnowledge, NodeStore, StoreEntry, build_global

__version__ = "0.1.0"

__all__ = [
    "EntityKey", "FixStat", "GeneralizedValue", "ProbeEvent", "RunRecord",
    "SignatureEntity", "SignatureTrace", "Trace", "TraceEvent", "build_st",
    "concrete", "distance", "make_st", "st_from_record", "st_record",
    "value_range", "value_set", "widen",
    "Cluster", "ExchangeNode", "SimClock", "build_cluster",
    "ClassifyResult", "FaultGraph", "FaultKind", "FaultModel", "KindForest",
    "MatchResult", "ModelDb", "classify", "find_fix", "match_category",
    "rebuild_graph", "refine_family",
    "HealingConfig", "HealingEngine", "HealingOutcome", "apply_fix",
    "update_success",
    "AppModel", "FaultSpec", "SimApp",
    "Delta", "GlobalKnowledge", "NodeStore", "StoreEntry", "build_global",
]
