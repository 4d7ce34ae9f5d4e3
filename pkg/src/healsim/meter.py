"""Deterministic work counters.

All benchmark costs are abstract work units (events processed, entries
scanned, value comparisons), never wall clock, so results are machine
independent.
"""

from dataclasses import dataclass, asdict


@dataclass
class WorkMeter:
    gather_units: int = 0      # probe events folded into signature-trace records
    merge_scans: int = 0       # store entries examined during merges
    distance_evals: int = 0    # full distance computations
    trace_cells: int = 0       # subsequence DP cells touched
    widen_ops: int = 0

    def reset(self) -> None:
        self.gather_units = 0
        self.merge_scans = 0
        self.distance_evals = 0
        self.trace_cells = 0
        self.widen_ops = 0

    def snapshot(self) -> dict:
        return asdict(self)

    def merge_work(self) -> int:
        return self.merge_scans + self.widen_ops

    def since(self, snap: dict) -> dict:
        return {k: v - snap[k] for k, v in self.snapshot().items()}


METER = WorkMeter()
