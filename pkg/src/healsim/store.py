"""Per-node and global knowledge stores.

A node store keeps a ranked, threshold-pruned collection of generalized
signature-trace records plus a version counter and change log, so peers can
be brought up to date with incremental deltas instead of full snapshots.
Folding many node stores yields the global knowledge database, which is
pushed back down once enough sources have contributed.

Mutations follow a single-writer discipline: every public mutation either
changes nothing (and leaves the version alone) or bumps the version and
appends to the change log.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

from . import core
from .core import (SignatureEntity, SignatureTrace, content_fingerprint,
                   dump_json, generalize_pair, make_st, st_from_wire,
                   st_record, st_to_wire)
from .errors import ImmatureKnowledgeError, StaleVersionError, StoreCorruptError
from .meter import METER

DEFAULT_THRESHOLD = 64
DEFAULT_GLOBAL_THRESHOLD = 256
DEFAULT_THETA = 0.8
DEFAULT_LOG_WINDOW = 64
DEFAULT_MIN_SOURCES = 3


def observation_counts(node_id: str, n: int = 1) -> tuple:
    """Occurrence counts for `n` fresh runs observed at one node."""
    return ((node_id, n),)


def counts_total(counts: tuple) -> int:
    return sum(n for _node, n in counts)


def merge_counts(a: tuple, b: tuple, observation: bool) -> tuple:
    """Combine per-origin occurrence counts.

    New observations add; reconciling replicated knowledge takes the
    per-origin maximum, so the same runs are never counted twice no matter
    how often stores are re-merged.
    """
    out = dict(a)
    for node, n in b:
        if observation:
            out[node] = out.get(node, 0) + n
        else:
            out[node] = max(out.get(node, 0), n)
    return tuple(sorted(out.items()))


@dataclass(frozen=True)
class StoreEntry:
    """A generalized record plus per-origin occurrence counts (its rank)."""

    st: SignatureTrace
    counts: tuple = ()

    def __post_init__(self):
        if not self.counts:
            object.__setattr__(self, "counts",
                               observation_counts(self.st.node_id))

    @property
    def occurrences(self) -> int:
        return counts_total(self.counts)

    @cached_property
    def record_body(self) -> str:
        return st_record(self.st)

    @cached_property
    def collapsed(self) -> tuple:
        return self.st.trace.collapsed()

    @cached_property
    def key_set(self) -> frozenset:
        return self.st.keys()

    @cached_property
    def fingerprint(self) -> str:
        return content_fingerprint(self.st)


def entry_record(e: StoreEntry) -> str:
    return dump_json({"v": core.RECORD_VERSION,
                      "occ": {node: n for node, n in e.counts},
                      "st": st_to_wire(e.st)})


def entry_from_record(line: str) -> StoreEntry:
    try:
        obj = json.loads(line)
        if obj.get("v") != core.RECORD_VERSION:
            raise ValueError(f"unsupported record version {obj.get('v')!r}")
        counts = tuple(sorted(obj["occ"].items()))
        if not counts or any(n < 1 for _node, n in counts):
            raise ValueError("entry occurrence counts must be positive")
        return StoreEntry(st_from_wire(obj["st"]), counts)
    except (ValueError, KeyError, IndexError, TypeError, AttributeError) as exc:
        raise StoreCorruptError(str(exc)) from exc


def entry_rank_key(e: StoreEntry):
    # Rank by occurrences, ties broken by serialized form so that pruning
    # the last entry always evicts the lexicographically largest record.
    return (-e.occurrences, e.record_body)


def merge_equivalent(a: StoreEntry, b: StoreEntry, theta: float = DEFAULT_THETA) -> bool:
    """Whether two records describe the same scenario.

    Outcome kinds must match, collapsed method sequences must be equal, and
    at least `theta` of the signature keys must coincide.
    """
    METER.merge_scans += 1
    if (a.st.fault_id is None) != (b.st.fault_id is None):
        return False
    if a.collapsed != b.collapsed:
        return False
    ka, kb = a.key_set, b.key_set
    if not ka and not kb:
        return True
    larger = max(len(ka), len(kb))
    return len(ka & kb) / larger >= theta


def combine_entries(a: StoreEntry, b: StoreEntry,
                    set_cap: int = core.DEFAULT_SET_CAP,
                    observation: bool = True) -> StoreEntry:
    """Symmetric merge of two equivalent records.

    Keys are unioned with per-key generalization; the representative trace
    is the one with the smaller serialized form, which keeps the merge
    commutative and idempotent.  Counts (entry occurrences, entity
    occurrences, fix statistics) add for fresh observations and take the
    maximum when reconciling replicated knowledge.
    """
    by_key = {e.key: e for e in a.st.signature}
    for e in b.st.signature:
        cur = by_key.get(e.key)
        if cur is None:
            by_key[e.key] = e
        else:
            occ = (cur.occurrences + e.occurrences if observation
                   else max(cur.occurrences, e.occurrences))
            by_key[e.key] = SignatureEntity(
                e.key, generalize_pair(cur.value, e.value, set_cap), occ)

    def trace_form(st: SignatureTrace) -> str:
        return dump_json([[ev.method_id, ev.depth, ev.seq] for ev in st.trace.events]
                         + [list(st.trace.terminal_stack or ())])

    keeper = min(a.st, b.st, key=trace_form)
    if a.st.fault_id is None:
        fault = None
    else:
        fault = min(a.st.fault_id, b.st.fault_id)
    fixes = {}
    for f in a.st.fixes + b.st.fixes:
        cur = fixes.get(f.fix_id)
        if cur is None:
            fixes[f.fix_id] = f
        elif observation:
            fixes[f.fix_id] = core.FixStat(f.fix_id, cur.successes + f.successes,
                                           cur.attempts + f.attempts)
        else:
            fixes[f.fix_id] = core.FixStat(f.fix_id,
                                           max(cur.successes, f.successes),
                                           max(cur.attempts, f.attempts))
    node, run = min((a.st.node_id, a.st.run_id), (b.st.node_id, b.st.run_id))
    st = make_st(by_key.values(), keeper.trace, fault, fixes.values(), node, run)
    return StoreEntry(st, merge_counts(a.counts, b.counts, observation))


def _merge_pool(pool: list[StoreEntry], theta: float, set_cap: int) -> list[StoreEntry]:
    """Partition a pool into equivalence components and fold each one.

    Components make the result independent of which side the entries came
    from, which is what gives store merges commutativity up to canonical
    order.
    """
    n = len(pool)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if find(i) != find(j) and merge_equivalent(pool[i], pool[j], theta):
                parent[find(j)] = find(i)
    groups: dict[int, list[StoreEntry]] = {}
    for i, e in enumerate(pool):
        groups.setdefault(find(i), []).append(e)
    merged = []
    for members in groups.values():
        members.sort(key=lambda e: e.record_body)
        acc = members[0]
        for m in members[1:]:
            acc = combine_entries(acc, m, set_cap, observation=False)
        merged.append(acc)
    merged.sort(key=entry_rank_key)
    return merged


# ---------------------------------------------------------------------------
# Deltas
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeltaOp:
    op: str  # "add" | "update" | "remove"
    old: str | None = None
    new: str | None = None


@dataclass(frozen=True)
class Delta:
    from_version: int
    to_version: int
    ops: tuple = ()

    @property
    def added(self) -> tuple:
        return tuple(o.new for o in self.ops if o.op == "add")

    @property
    def updated(self) -> tuple:
        return tuple((o.old, o.new) for o in self.ops if o.op == "update")

    @property
    def removed(self) -> tuple:
        return tuple(o.old for o in self.ops if o.op == "remove")

    def is_empty(self) -> bool:
        return not self.ops

    def to_wire(self) -> str:
        return dump_json({"v": core.RECORD_VERSION, "from": self.from_version,
                          "to": self.to_version,
                          "ops": [[o.op, o.old, o.new] for o in self.ops]})

    @classmethod
    def from_wire(cls, text: str) -> "Delta":
        try:
            obj = json.loads(text)
            ops = tuple(DeltaOp(op, old, new) for op, old, new in obj["ops"])
            return cls(obj["from"], obj["to"], ops)
        except (ValueError, KeyError, TypeError) as exc:
            raise StoreCorruptError(str(exc)) from exc


def apply_ops(records: list[str], ops) -> list[str]:
    """Apply delta operations to a list of entry records."""
    out = list(records)
    for o in ops:
        if o.op == "add":
            out.append(o.new)
        elif o.op == "remove":
            try:
                out.remove(o.old)
            except ValueError:
                raise StoreCorruptError("delta removed a record the replica lacks")
        elif o.op == "update":
            try:
                out[out.index(o.old)] = o.new
            except ValueError:
                raise StoreCorruptError("delta updated a record the replica lacks")
        else:
            raise StoreCorruptError(f"unknown delta op {o.op!r}")
    return out


def _diff_ops(old: list[StoreEntry], new: list[StoreEntry]) -> tuple:
    """Describe old -> new as remove/update/add operations.

    Entries are matched by content fingerprint so a record that merely
    accumulated counts shows up as a single update.
    """
    old_by_fp: dict[str, list[StoreEntry]] = {}
    for e in old:
        old_by_fp.setdefault(e.fingerprint, []).append(e)
    new_by_fp: dict[str, list[StoreEntry]] = {}
    for e in new:
        new_by_fp.setdefault(e.fingerprint, []).append(e)
    removes, updates, adds = [], [], []
    for fp in sorted(set(old_by_fp) | set(new_by_fp)):
        olds = old_by_fp.get(fp, [])
        news = new_by_fp.get(fp, [])
        for o, n in zip(olds, news):
            ro, rn = entry_record(o), entry_record(n)
            if ro != rn:
                updates.append(DeltaOp("update", ro, rn))
        for o in olds[len(news):]:
            removes.append(DeltaOp("remove", entry_record(o), None))
        for n in news[len(olds):]:
            adds.append(DeltaOp("add", None, entry_record(n)))
    removes.sort(key=lambda o: o.old)
    updates.sort(key=lambda o: o.old)
    adds.sort(key=lambda o: o.new)
    return tuple(removes + updates + adds)


# ---------------------------------------------------------------------------
# Node store
# ---------------------------------------------------------------------------

class NodeStore:
    """A node's ranked, pruned, version-counted knowledge store."""

    kind = "node-store"

    def __init__(self, node_id: str, threshold: int = DEFAULT_THRESHOLD,
                 theta: float = DEFAULT_THETA, set_cap: int = core.DEFAULT_SET_CAP,
                 log_window: int = DEFAULT_LOG_WINDOW):
        if threshold < 1:
            raise ValueError("size threshold must be positive")
        self.node_id = node_id
        self.threshold = threshold
        self.theta = theta
        self.set_cap = set_cap
        self.log_window = log_window
        self.version = 0
        self._entries: list[StoreEntry] = []
        self._log: list[tuple[int, tuple]] = []

    @property
    def entries(self) -> list[StoreEntry]:
        if __debug__:
            ranks = [entry_rank_key(e) for e in self._entries]
            assert ranks == sorted(ranks), "store entries out of canonical order"
        return self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def records(self) -> list[str]:
        return [entry_record(e) for e in self.entries]

    def fingerprints(self) -> tuple:
        return tuple(sorted(e.fingerprint for e in self._entries))

    def content_equal(self, other) -> bool:
        return self.fingerprints() == other.fingerprints()

    def copy(self) -> "NodeStore":
        dup = NodeStore(self.node_id, self.threshold, self.theta, self.set_cap,
                       self.log_window)
        dup.version = self.version
        dup._entries = list(self._entries)
        dup._log = list(self._log)
        return dup

    # -- mutations ----------------------------------------------------------

    def _bump(self, ops: tuple) -> None:
        self.version += 1
        self._log.append((self.version, ops))
        if len(self._log) > self.log_window:
            self._log = self._log[-self.log_window:]

    def _settle(self, new_entries: list[StoreEntry]) -> bool:
        """Install a recomputed entry list; bump only on real change."""
        new_entries = new_entries[:self.threshold]
        ops = _diff_ops(self._entries, new_entries)
        if not ops:
            return False
        self._entries = new_entries
        self._bump(ops)
        return True

    def merge_st(self, st: SignatureTrace) -> None:
        """Fold one fresh record in: widen an equivalent entry or append.

        Always versions, since even a repeat observation raises a rank.
        Prunes the lowest-ranked entry when the threshold is exceeded.
        """
        incoming = StoreEntry(st)
        ops = []
        matched = None
        for i, e in enumerate(self._entries):
            if merge_equivalent(e, incoming, self.theta):
                matched = i
                break
        if matched is not None:
            old = self._entries[matched]
            new = combine_entries(old, incoming, self.set_cap)
            self._entries[matched] = new
            ops.append(DeltaOp("update", entry_record(old), entry_record(new)))
        else:
            self._entries.append(incoming)
            ops.append(DeltaOp("add", None, entry_record(incoming)))
        self._entries.sort(key=entry_rank_key)
        while len(self._entries) > self.threshold:
            evicted = self._entries.pop()
            ops.append(DeltaOp("remove", entry_record(evicted), None))
        self._bump(tuple(ops))

    def merge_dst(self, remote_entries) -> bool:
        """Merge another store's entries; returns whether anything changed."""
        pool = self._entries + list(remote_entries)
        return self._settle(_merge_pool(pool, self.theta, self.set_cap))

    def refresh_from_global(self, gk: "GlobalKnowledge") -> bool:
        """Adopt the more generalized values from mature global knowledge.

        No new entries are added; counts reconcile by per-origin maximum so
        globally attributed observations are never double counted.
        """
        if not gk.mature:
            raise ImmatureKnowledgeError(
                f"global knowledge has {gk.source_count} sources, needs {gk.min_sources}")
        new_entries = []
        for e in self._entries:
            match = None
            for g in gk.entries:
                if merge_equivalent(e, g, self.theta):
                    match = g
                    break
            if match is None:
                new_entries.append(e)
                continue
            by_key = {x.key: x for x in e.st.signature}
            merged = []
            for g_ent in match.st.signature:
                local = by_key.pop(g_ent.key, None)
                if local is None:
                    merged.append(g_ent)
                else:
                    merged.append(SignatureEntity(
                        g_ent.key,
                        generalize_pair(local.value, g_ent.value, self.set_cap),
                        max(local.occurrences, g_ent.occurrences)))
            merged.extend(by_key.values())
            fixes = {f.fix_id: f for f in e.st.fixes}
            for f in match.st.fixes:
                cur = fixes.get(f.fix_id)
                if cur is None:
                    fixes[f.fix_id] = f
                else:
                    fixes[f.fix_id] = core.FixStat(f.fix_id,
                                                   max(cur.successes, f.successes),
                                                   max(cur.attempts, f.attempts))
            st = make_st(merged, e.st.trace, e.st.fault_id, fixes.values(),
                         e.st.node_id, e.st.run_id)
            new_entries.append(StoreEntry(
                st, merge_counts(e.counts, match.counts, observation=False)))
        new_entries.sort(key=entry_rank_key)
        return self._settle(new_entries)

    # -- deltas -------------------------------------------------------------

    def delta_since(self, version: int) -> Delta:
        """Changes needed to bring a replica at `version` up to date."""
        if version > self.version:
            raise ValueError(f"version {version} is ahead of store ({self.version})")
        if version == self.version:
            return Delta(version, version, ())
        if not self._log or self._log[0][0] > version + 1:
            raise StaleVersionError(
                f"version {version} fell out of the change-log window")
        ops = []
        for v, vops in self._log:
            if v > version:
                ops.extend(vops)
        return Delta(version, self.version, tuple(ops))

    # -- persistence --------------------------------------------------------

    def header(self) -> str:
        return dump_json({"v": core.RECORD_VERSION, "kind": self.kind,
                          "node": self.node_id, "version": self.version,
                          "threshold": self.threshold})

    def serialized(self) -> str:
        return "\n".join([self.header()] + self.records()) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.serialized())

    @classmethod
    def load(cls, path, theta: float = DEFAULT_THETA,
             set_cap: int = core.DEFAULT_SET_CAP,
             log_window: int = DEFAULT_LOG_WINDOW) -> "NodeStore":
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines:
            raise StoreCorruptError("empty store file", record=1)
        try:
            head = json.loads(lines[0])
            if head.get("kind") != cls.kind or head.get("v") != core.RECORD_VERSION:
                raise ValueError(f"not a {cls.kind} store header")
            store = cls(head["node"], head["threshold"], theta, set_cap, log_window)
            store.version = head["version"]
        except (ValueError, KeyError, TypeError) as exc:
            raise StoreCorruptError(str(exc), record=1) from exc
        for i, line in enumerate(lines[1:], 2):
            try:
                store._entries.append(entry_from_record(line))
            except StoreCorruptError as exc:
                raise StoreCorruptError(str(exc), record=i) from exc
        ranks = [entry_rank_key(e) for e in store._entries]
        if ranks != sorted(ranks):
            raise StoreCorruptError("entries not in canonical order", record=2)
        return store


# ---------------------------------------------------------------------------
# Replica of a peer store (receiver side of the exchange protocol)
# ---------------------------------------------------------------------------

def sort_records(records) -> list[str]:
    entries = [entry_from_record(r) for r in records]
    entries.sort(key=entry_rank_key)
    return [entry_record(e) for e in entries]


class Replica:
    """Reconstruction of a peer's store from full snapshots and deltas."""

    def __init__(self):
        self.version = 0
        self.records: list[str] = []

    def set_full(self, records: list[str], version: int) -> None:
        self.records = list(records)
        self.version = version

    def apply(self, delta: Delta) -> bool:
        """Apply a delta if it chains onto our version; False on a gap."""
        if delta.from_version != self.version:
            return False
        self.records = sort_records(apply_ops(self.records, delta.ops))
        self.version = delta.to_version
        return True

    def entries(self) -> list[StoreEntry]:
        return [entry_from_record(r) for r in self.records]


# ---------------------------------------------------------------------------
# Global knowledge
# ---------------------------------------------------------------------------

class GlobalKnowledge:
    """The global generalized database folded from many node stores."""

    kind = "global-knowledge"

    def __init__(self, threshold: int = DEFAULT_GLOBAL_THRESHOLD,
                 min_sources: int = DEFAULT_MIN_SOURCES,
                 theta: float = DEFAULT_THETA,
                 set_cap: int = core.DEFAULT_SET_CAP):
        self.threshold = threshold
        self.min_sources = min_sources
        self.theta = theta
        self.set_cap = set_cap
        self.source_count = 0
        self._entries: list[StoreEntry] = []

    @property
    def entries(self) -> list[StoreEntry]:
        if __debug__:
            ranks = [entry_rank_key(e) for e in self._entries]
            assert ranks == sorted(ranks), "store entries out of canonical order"
        return self._entries

    @property
    def mature(self) -> bool:
        return self.source_count >= self.min_sources

    def __len__(self) -> int:
        return len(self._entries)

    def records(self) -> list[str]:
        return [entry_record(e) for e in self.entries]

    def fingerprints(self) -> tuple:
        return tuple(sorted(e.fingerprint for e in self._entries))

    def content_equal(self, other) -> bool:
        return self.fingerprints() == other.fingerprints()

    def header(self) -> str:
        return dump_json({"v": core.RECORD_VERSION, "kind": self.kind,
                          "sources": self.source_count,
                          "min_sources": self.min_sources,
                          "threshold": self.threshold})

    def serialized(self) -> str:
        return "\n".join([self.header()] + self.records()) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.serialized())

    @classmethod
    def load(cls, path, theta: float = DEFAULT_THETA,
             set_cap: int = core.DEFAULT_SET_CAP) -> "GlobalKnowledge":
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines:
            raise StoreCorruptError("empty store file", record=1)
        try:
            head = json.loads(lines[0])
            if head.get("kind") != cls.kind or head.get("v") != core.RECORD_VERSION:
                raise ValueError("not a global knowledge header")
            gk = cls(head["threshold"], head["min_sources"], theta, set_cap)
            gk.source_count = head["sources"]
        except (ValueError, KeyError, TypeError) as exc:
            raise StoreCorruptError(str(exc), record=1) from exc
        for i, line in enumerate(lines[1:], 2):
            try:
                gk._entries.append(entry_from_record(line))
            except StoreCorruptError as exc:
                raise StoreCorruptError(str(exc), record=i) from exc
        return gk


def build_global(stores, min_sources: int = DEFAULT_MIN_SOURCES,
             threshold: int = DEFAULT_GLOBAL_THRESHOLD,
             theta: float = DEFAULT_THETA,
             set_cap: int = core.DEFAULT_SET_CAP) -> GlobalKnowledge:
    """Fold node stores into global knowledge (no per-node threshold)."""
    stores = list(stores)
    if not stores:
        raise ValueError("need at least one node store")
    gk = GlobalKnowledge(threshold, min_sources, theta, set_cap)
    pool = [e for d in stores for e in d.entries]
    gk._entries = _merge_pool(pool, theta, set_cap)[:threshold]
    gk.source_count = len(stores)
    return gk
