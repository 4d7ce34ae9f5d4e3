"""Signature-trace core model.

A run of the instrumented application is captured as a stream of probe
events: method invocation events plus samples of runtime state (field
values, object states, open resources, environment entries).  The stream
folds into a SignatureTrace, the atomic knowledge unit everything else
builds on.  Values generalize by widening (concrete -> set -> range/any),
and records compare through a blended signature/trace dissimilarity in
[0, 1].

All values here are immutable after construction and safe to share.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import MalformedRunError, StoreCorruptError
from .meter import METER

CATEGORIES = ("field-value", "object-state", "open-resource", "environment")

CONCRETE = "concrete"
SET = "set"
RANGE = "range"
ANY = "any"

RECORD_VERSION = 1

DEFAULT_SET_CAP = 4
DEFAULT_SIG_WEIGHT = 0.5
DEFAULT_TRACE_WEIGHT = 0.5


def is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _value_key(v):
    # Total order over mixed scalars: numbers first, then text.
    if is_number(v):
        return (0, float(v), "")
    return (1, 0.0, str(v))


def _canon_number(v):
    # Collapse float/int aliases (3.0 vs 3) so widening is order-insensitive.
    if isinstance(v, float) and v.is_integer():
        return int(v)
    return v


def _dedupe(values) -> tuple:
    out = {}
    for v in values:
        if is_number(v):
            v = _canon_number(v)
        k = _value_key(v)
        if k not in out:
            out[k] = v
    return tuple(out[k] for k in sorted(out))


@dataclass(frozen=True)
class GeneralizedValue:
    """A concrete scalar, a small set, a numeric range, or anything."""

    shape: str
    values: tuple = ()
    lo: float = 0
    hi: float = 0
    widen_count: int = 0

    def __post_init__(self):
        if self.shape not in (CONCRETE, SET, RANGE, ANY):
            raise ValueError(f"bad value shape {self.shape!r}")
        if self.shape == RANGE and self.lo > self.hi:
            raise ValueError("range lower bound above upper bound")
        if self.widen_count < 0:
            raise ValueError("widen count must be non-negative")

    def covers(self, v) -> bool:
        """Whether a concrete scalar falls inside this value."""
        if self.shape == ANY:
            return True
        if self.shape == RANGE:
            return is_number(v) and self.lo <= v <= self.hi
        if is_number(v):
            v = _canon_number(v)
        return v in self.values

    def covers_all(self, other: "GeneralizedValue") -> bool:
        """Whether every concrete covered by `other` is covered by self."""
        if self.shape == ANY:
            return True
        if other.shape == ANY:
            return False
        if other.shape == RANGE:
            if self.shape == RANGE:
                return self.lo <= other.lo and other.hi <= self.hi
            # A finite collection only covers a degenerate interval.
            return other.lo == other.hi and self.covers(other.lo)
        return all(self.covers(v) for v in other.values)

    def overlaps(self, other: "GeneralizedValue") -> bool:
        """Whether the covered sets intersect."""
        if self.shape == ANY or other.shape == ANY:
            return True
        if self.shape == RANGE and other.shape == RANGE:
            return self.lo <= other.hi and other.lo <= self.hi
        if self.shape == RANGE:
            return any(self.covers(v) for v in other.values)
        return any(other.covers(v) for v in self.values)


def concrete(v) -> GeneralizedValue:
    if is_number(v):
        v = _canon_number(v)
    return GeneralizedValue(CONCRETE, values=(v,))


def value_set(values) -> GeneralizedValue:
    vals = _dedupe(values)
    if not vals:
        raise ValueError("value set must be non-empty")
    return GeneralizedValue(SET, values=vals)


def value_range(lo, hi) -> GeneralizedValue:
    return GeneralizedValue(RANGE, lo=_canon_number(lo), hi=_canon_number(hi))


def anything() -> GeneralizedValue:
    return GeneralizedValue(ANY)


def widen(a: GeneralizedValue, b: GeneralizedValue,
          set_cap: int = DEFAULT_SET_CAP) -> GeneralizedValue:
    """Smallest representable value covering both inputs.

    Escalation is concrete -> set -> range (all numeric) or any, and `any`
    absorbs everything.  Commutative; the result's widen count is
    max(inputs) + 1.
    """
    METER.widen_ops += 1
    wc = max(a.widen_count, b.widen_count) + 1
    if a.shape == ANY or b.shape == ANY:
        return GeneralizedValue(ANY, widen_count=wc)
    if a.shape == RANGE or b.shape == RANGE:
        ends = []
        for v in (a, b):
            if v.shape == RANGE:
                ends.extend((v.lo, v.hi))
            else:
                ends.extend(v.values)
        if not all(is_number(e) for e in ends):
            return GeneralizedValue(ANY, widen_count=wc)
        return GeneralizedValue(RANGE, lo=_canon_number(min(ends)),
                                hi=_canon_number(max(ends)), widen_count=wc)
    union = _dedupe(a.values + b.values)
    if a.shape == CONCRETE and b.shape == CONCRETE and len(union) == 1:
        return GeneralizedValue(CONCRETE, values=union, widen_count=wc)
    if len(union) <= set_cap:
        return GeneralizedValue(SET, values=union, widen_count=wc)
    if all(is_number(v) for v in union):
        return GeneralizedValue(RANGE, lo=min(union), hi=max(union), widen_count=wc)
    return GeneralizedValue(ANY, widen_count=wc)


def generalize_pair(a: GeneralizedValue, b: GeneralizedValue,
                    set_cap: int = DEFAULT_SET_CAP) -> GeneralizedValue:
    """Pick the more generalized of two values; widen when neither covers.

    Used by store merges, where an already-covering value wins outright and
    widening only happens for genuinely new coverage.
    """
    a_wins = a.covers_all(b)
    b_wins = b.covers_all(a)
    if a_wins and b_wins:
        return min(a, b, key=lambda v: (v.widen_count, dump_json(value_to_wire(v))))
    if a_wins:
        return a
    if b_wins:
        return b
    return widen(a, b, set_cap)


@dataclass(frozen=True, order=True)
class EntityKey:
    """One sampled runtime attribute: a category plus a name path."""

    category: str
    path: tuple

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown entity category {self.category!r}")
        if not self.path:
            raise ValueError("entity path must be non-empty")


@dataclass(frozen=True)
class SignatureEntity:
    key: EntityKey
    value: GeneralizedValue
    occurrences: int = 1

    def __post_init__(self):
        if self.occurrences < 1:
            raise ValueError("occurrences must be positive")


@dataclass(frozen=True)
class TraceEvent:
    method_id: str
    depth: int
    seq: int

    def __post_init__(self):
        if self.depth < 0 or self.seq < 0:
            raise ValueError("trace event depth and seq must be non-negative")


@dataclass(frozen=True)
class Trace:
    events: tuple = ()
    terminal_stack: tuple | None = None

    def method_ids(self) -> tuple:
        return tuple(e.method_id for e in self.events)

    def collapsed(self) -> tuple:
        """Method-id sequence with consecutive repeats collapsed."""
        out = []
        for m in self.method_ids():
            if not out or out[-1] != m:
                out.append(m)
        return tuple(out)


@dataclass(frozen=True)
class FixStat:
    """Recovery action id with its observed success statistics."""

    fix_id: str
    successes: int = 0
    attempts: int = 0

    def __post_init__(self):
        if not (0 <= self.successes <= self.attempts):
            raise ValueError("fix successes must be within attempts")

    def smoothed_rate(self) -> float:
        # Laplace smoothing keeps unattempted fixes rankable.
        return (self.successes + 1) / (self.attempts + 2)


def entity_sort_key(e: SignatureEntity):
    return (-e.occurrences, e.key)


def canonical_signature(entities) -> tuple:
    return tuple(sorted(entities, key=entity_sort_key))


@dataclass(frozen=True)
class SignatureTrace:
    """One run's generalized signature plus its execution path and outcome."""

    signature: tuple
    trace: Trace
    fault_id: str | None = None
    fixes: tuple = ()
    node_id: str = ""
    run_id: int = 0

    def __post_init__(self):
        if self.fault_id is None:
            if self.fixes:
                raise ValueError("stable records carry no fixes")
            if self.trace.terminal_stack is not None:
                raise ValueError("stable records carry no terminal stack")
        else:
            if self.trace.terminal_stack is None:
                raise ValueError("faulted records require a terminal stack")
        keys = [e.key for e in self.signature]
        if len(set(keys)) != len(keys):
            raise ValueError("signature keys must be unique")
        if tuple(self.signature) != canonical_signature(self.signature):
            raise ValueError("signature entities not in canonical order")

    @property
    def outcome(self) -> str:
        return "stable" if self.fault_id is None else "fault"

    def keys(self) -> frozenset:
        return frozenset(e.key for e in self.signature)

    def entity(self, key: EntityKey) -> SignatureEntity | None:
        for e in self.signature:
            if e.key == key:
                return e
        return None

    def fix(self, fix_id: str) -> FixStat | None:
        for f in self.fixes:
            if f.fix_id == fix_id:
                return f
        return None


def make_st(entities, trace: Trace, fault_id: str | None = None, fixes=(),
            node_id: str = "", run_id: int = 0) -> SignatureTrace:
    return SignatureTrace(canonical_signature(entities), trace, fault_id,
                          tuple(sorted(fixes, key=lambda f: f.fix_id)),
                          node_id, run_id)


# ---------------------------------------------------------------------------
# Probe events and record building
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeEvent:
    """One instrumentation event: a method call/exit or a state sample."""

    seq: int
    kind: str  # "call" | "sample"
    method_id: str = ""
    depth: int = 0
    key: EntityKey | None = None
    value: object = None


@dataclass(frozen=True)
class RunRecord:
    node_id: str
    run_id: int
    events: tuple
    fault_id: str | None = None
    terminal_stack: tuple | None = None


def build_st(record: RunRecord, set_cap: int = DEFAULT_SET_CAP) -> SignatureTrace:
    """Fold a raw probe stream into a canonical signature-trace.

    Every sampled key appears exactly once with occurrences = 1; repeated
    samples of the same key widen its value.  Rejects streams whose seq is
    not strictly increasing or whose call depth jumps by more than one.
    """
    last_seq = -1
    last_depth = None
    values: dict[EntityKey, GeneralizedValue] = {}
    events = []
    for ev in record.events:
        METER.gather_units += 1
        if ev.seq <= last_seq:
            raise MalformedRunError(
                f"probe seq {ev.seq} after {last_seq} is not strictly increasing")
        last_seq = ev.seq
        if ev.kind == "call":
            if last_depth is not None and abs(ev.depth - last_depth) > 1:
                raise MalformedRunError(
                    f"call depth jumped from {last_depth} to {ev.depth} at seq {ev.seq}")
            last_depth = ev.depth
            events.append(TraceEvent(ev.method_id, ev.depth, ev.seq))
        elif ev.kind == "sample":
            got = concrete(ev.value)
            prev = values.get(ev.key)
            values[ev.key] = got if prev is None else widen(prev, got, set_cap)
        else:
            raise MalformedRunError(f"unknown probe kind {ev.kind!r} at seq {ev.seq}")
    entities = [SignatureEntity(k, v, 1) for k, v in values.items()]
    trace = Trace(tuple(events), record.terminal_stack if record.fault_id else None)
    return make_st(entities, trace, record.fault_id, (),
                   record.node_id, record.run_id)


# ---------------------------------------------------------------------------
# Distance
# ---------------------------------------------------------------------------

def lcs_length(a, b) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(cur[j - 1], prev[j]))
        prev = cur
    METER.trace_cells += len(a) * len(b)
    return prev[-1]


def signature_distance(a: SignatureTrace, b: SignatureTrace) -> float:
    """Jaccard distance over key/value pairs; a pair matches when the keys
    are equal and the generalized values overlap."""
    if not a.signature and not b.signature:
        return 0.0
    matched = 0
    b_by_key = {e.key: e for e in b.signature}
    for e in a.signature:
        other = b_by_key.get(e.key)
        if other is not None and e.value.overlaps(other.value):
            matched += 1
    union = len(a.signature) + len(b.signature) - matched
    if union == 0:
        return 0.0
    return 1.0 - matched / union


def trace_distance(a: SignatureTrace, b: SignatureTrace) -> float:
    """Longest-common-subsequence distance over method-id sequences,
    normalized by the longer sequence."""
    x, y = a.trace.method_ids(), b.trace.method_ids()
    if not x and not y:
        return 0.0
    longest = max(len(x), len(y))
    return 1.0 - lcs_length(x, y) / longest


def distance(a: SignatureTrace, b: SignatureTrace,
             w_sig: float = DEFAULT_SIG_WEIGHT,
             w_trace: float = DEFAULT_TRACE_WEIGHT) -> float:
    """Blended dissimilarity in [0, 1]; weights must sum to 1."""
    METER.distance_evals += 1
    return w_sig * signature_distance(a, b) + w_trace * trace_distance(a, b)


def key_share(a: SignatureTrace, b: SignatureTrace) -> float:
    """Jaccard similarity of the two key sets (1.0 when both are empty)."""
    ka, kb = a.keys(), b.keys()
    if not ka and not kb:
        return 1.0
    return len(ka & kb) / len(ka | kb)


# ---------------------------------------------------------------------------
# Canonical wire records
# ---------------------------------------------------------------------------
# One record per line, UTF-8 JSON with fixed field order and the format
# version first.  Store persistence and the exchange wire format both use
# these functions, so byte-identical round-trips fall out for free.

def value_to_wire(v: GeneralizedValue) -> list:
    if v.shape == CONCRETE:
        return ["c", v.values[0], v.widen_count]
    if v.shape == SET:
        return ["s", list(v.values), v.widen_count]
    if v.shape == RANGE:
        return ["r", v.lo, v.hi, v.widen_count]
    return ["a", v.widen_count]


def value_from_wire(obj) -> GeneralizedValue:
    tag = obj[0]
    if tag == "c":
        return GeneralizedValue(CONCRETE, values=(obj[1],), widen_count=obj[2])
    if tag == "s":
        return GeneralizedValue(SET, values=tuple(obj[1]), widen_count=obj[2])
    if tag == "r":
        return GeneralizedValue(RANGE, lo=obj[1], hi=obj[2], widen_count=obj[3])
    if tag == "a":
        return GeneralizedValue(ANY, widen_count=obj[1])
    raise ValueError(f"unknown value tag {tag!r}")


def st_to_wire(st: SignatureTrace) -> dict:
    out = {"v": RECORD_VERSION, "node": st.node_id, "run": st.run_id,
           "outcome": st.outcome}
    if st.fault_id is not None:
        out["fault"] = st.fault_id
    out["sig"] = [[e.key.category, list(e.key.path), value_to_wire(e.value),
                   e.occurrences] for e in st.signature]
    out["trace"] = [[e.method_id, e.depth, e.seq] for e in st.trace.events]
    if st.trace.terminal_stack is not None:
        out["stack"] = list(st.trace.terminal_stack)
    out["fixes"] = [[f.fix_id, f.successes, f.attempts] for f in st.fixes]
    return out


def st_from_wire(obj: dict) -> SignatureTrace:
    entities = []
    for cat, path, val, occ in obj["sig"]:
        entities.append(SignatureEntity(EntityKey(cat, tuple(path)),
                                        value_from_wire(val), occ))
    events = tuple(TraceEvent(m, d, s) for m, d, s in obj["trace"])
    stack = tuple(obj["stack"]) if "stack" in obj else None
    fixes = tuple(FixStat(fid, s, a) for fid, s, a in obj.get("fixes", ()))
    fault = obj.get("fault") if obj.get("outcome") == "fault" else None
    return SignatureTrace(tuple(entities), Trace(events, stack), fault,
                          fixes, obj.get("node", ""), obj.get("run", 0))


def dump_json(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def st_record(st: SignatureTrace) -> str:
    return dump_json(st_to_wire(st))


def st_from_record(line: str) -> SignatureTrace:
    try:
        obj = json.loads(line)
        if obj.get("v") != RECORD_VERSION:
            raise ValueError(f"unsupported record version {obj.get('v')!r}")
        return st_from_wire(obj)
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise StoreCorruptError(str(exc)) from exc


def content_fingerprint(st: SignatureTrace) -> str:
    """Projection used for content equality between stores.

    Occurrence counts, fix statistics, widen counts and run provenance all
    keep accumulating as knowledge circulates, so equality of what a record
    *covers* deliberately ignores them.
    """
    sig = []
    for e in sorted(st.signature, key=lambda e: e.key):
        v = e.value
        sig.append([e.key.category, list(e.key.path), v.shape, list(v.values),
                    v.lo, v.hi])
    body = [st.outcome, st.fault_id, sig,
            [[e.method_id, e.depth, e.seq] for e in st.trace.events],
            list(st.trace.terminal_stack or ()),
            sorted(f.fix_id for f in st.fixes)]
    return dump_json(body)
