"""Fault models, match categories, and the classification graph.

Each fault model collects the generalized records tagged with that fault
plus its candidate fixes and their success statistics.  Matching an unknown
fault against a model yields one of five categories (exact, positive,
negative, cannot, no-match); models are arranged in a weighted acyclic
graph whose edges carry those categories, refined by the fault-kind family
tree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

from . import core
from .core import FixStat, SignatureTrace, dump_json, st_from_wire, st_record, st_to_wire
from .errors import StoreCorruptError
from .store import StoreEntry, combine_entries, merge_equivalent

EXACT = "exact"
POSITIVE = "positive"
NEGATIVE = "negative"
CANNOT = "cannot"
NO_MATCH = "no-match"

DEFAULT_EPS = 0.25
DEFAULT_EPS_EXACT = 0.02
DEFAULT_FAMILY_FACTOR = 1.25


@dataclass(frozen=True)
class FaultKind:
    kind_id: str
    parent: str | None = None


class KindForest:
    """Inheritance-like hierarchy over fault kinds (a forest, never cyclic)."""

    def __init__(self, kinds=()):
        self._kinds: dict[str, FaultKind] = {}
        for k in kinds:
            self.add(k)

    def add(self, kind: FaultKind) -> None:
        self._kinds[kind.kind_id] = kind

    def kinds(self) -> list[FaultKind]:
        return [self._kinds[k] for k in sorted(self._kinds)]

    def validate(self) -> None:
        for kid in self._kinds:
            seen = set()
            cur = kid
            while cur is not None:
                if cur in seen:
                    raise ValueError(f"fault kind hierarchy has a cycle at {cur!r}")
                seen.add(cur)
                node = self._kinds.get(cur)
                cur = node.parent if node else None

    def ancestors(self, kind_id: str) -> tuple:
        """The kind itself plus every ancestor, root last."""
        out = []
        cur = kind_id
        guard = 0
        while cur is not None:
            out.append(cur)
            node = self._kinds.get(cur)
            cur = node.parent if node else None
            guard += 1
            if guard > len(self._kinds) + 1:
                raise ValueError(f"fault kind hierarchy has a cycle at {kind_id!r}")
        return tuple(out)

    def root(self, kind_id: str) -> str:
        return self.ancestors(kind_id)[-1]

    def related(self, a: str, b: str) -> bool:
        return bool(set(self.ancestors(a)) & set(self.ancestors(b)))

    def siblings(self, a: str, b: str) -> bool:
        if a == b:
            return False
        pa = self._kinds.get(a)
        pb = self._kinds.get(b)
        return (pa is not None and pb is not None
                and pa.parent is not None and pa.parent == pb.parent)


class FaultModel:
    """One fault's tagged records and candidate fixes."""

    def __init__(self, fault_id: str, kind_id: str, fixes=(), tagged=()):
        self.fault_id = fault_id
        self.kind_id = kind_id
        self.fixes: list[FixStat] = list(fixes)
        self.tagged: list[SignatureTrace] = []
        for st in tagged:
            self.add_tagged(st)

    def add_tagged(self, st: SignatureTrace, theta: float = 0.8,
                   set_cap: int = core.DEFAULT_SET_CAP) -> None:
        """Tag a record with this fault, merging equivalent scenarios."""
        if st.fault_id != self.fault_id:
            raise ValueError(
                f"record is for fault {st.fault_id!r}, not {self.fault_id!r}")
        incoming = StoreEntry(st)
        for i, cur in enumerate(self.tagged):
            if merge_equivalent(StoreEntry(cur), incoming, theta):
                self.tagged[i] = combine_entries(StoreEntry(cur), incoming, set_cap).st
                return
        self.tagged.append(st)

    def fix(self, fix_id: str) -> FixStat | None:
        for f in self.fixes:
            if f.fix_id == fix_id:
                return f
        return None

    def record_fix(self, fix_id: str, succeeded: bool) -> None:
        """Attach the fix if new, then count one attempt."""
        cur = self.fix(fix_id)
        if cur is None:
            cur = FixStat(fix_id)
            self.fixes.append(cur)
        updated = FixStat(fix_id, cur.successes + (1 if succeeded else 0),
                          cur.attempts + 1)
        self.fixes[self.fixes.index(cur)] = updated

    def representative(self) -> SignatureTrace | None:
        if not self.tagged:
            return None
        return min(self.tagged, key=st_record)


@dataclass(frozen=True)
class MatchResult:
    category: str
    percent: float | None = None
    note: str = ""


def match_category(model: FaultModel, f: SignatureTrace,
                   eps: float = DEFAULT_EPS, eps_exact: float = DEFAULT_EPS_EXACT,
                   f_kind: str | None = None,
                   w_sig: float = core.DEFAULT_SIG_WEIGHT,
                   w_trace: float = core.DEFAULT_TRACE_WEIGHT) -> MatchResult:
    """Categorize how the unknown fault record relates to one model.

    A tagged record counts positive when its distance is within `eps`, and
    negative when the distance is near-maximal or, for same-kind faults,
    when the signatures share less than half their keys.  Kind checks
    produce `cannot` (different kinds, no common structure); everything
    without a majority falls through to `no-match`.
    """
    if not 0.0 <= eps <= 1.0:
        raise ValueError("error margin must be in [0, 1]")
    if eps_exact > eps:
        raise ValueError("exact margin cannot exceed the error margin")
    if not model.tagged:
        return MatchResult(NO_MATCH, None, "model has no tagged records")
    dists = [core.distance(s, f, w_sig, w_trace) for s in model.tagged]
    dmin = min(dists)
    if dmin <= eps_exact:
        return MatchResult(EXACT, 100.0 * (1.0 - dmin))
    same_kind = f_kind is not None and f_kind == model.kind_id
    kinds_differ = f_kind is not None and f_kind != model.kind_id
    f_keys = f.keys()
    if kinds_differ and all(not (s.keys() & f_keys) for s in model.tagged):
        return MatchResult(CANNOT, None)
    positives = 0
    negatives = 0
    for s, d in zip(model.tagged, dists):
        if d <= eps:
            positives += 1
        elif d >= 1.0 - eps or (same_kind and core.key_share(s, f) < 0.5):
            negatives += 1
    total = len(model.tagged)
    if positives > negatives:
        return MatchResult(POSITIVE, 100.0 * positives / total)
    if negatives > positives:
        return MatchResult(NEGATIVE, 100.0 * negatives / total)
    return MatchResult(NO_MATCH, None)


@dataclass(frozen=True)
class ClassifyResult:
    decision: str  # "fix" | "escalate"
    fix: FixStat | None = None
    model_id: str | None = None
    category: str | None = None
    percent: float | None = None

    @property
    def escalated(self) -> bool:
        return self.decision == "escalate"


ESCALATE = ClassifyResult("escalate")


def find_fix(model: FaultModel, f: SignatureTrace | None = None) -> FixStat | None:
    """The model's best fix by smoothed success rate; None signals escalation."""
    del f  # selection depends only on the attached statistics
    if not model.fixes:
        return None
    return min(model.fixes, key=lambda fx: (-fx.smoothed_rate(), fx.fix_id))


def classify(f: SignatureTrace, db, eps: float = DEFAULT_EPS,
             eps_exact: float = DEFAULT_EPS_EXACT,
             w_sig: float = core.DEFAULT_SIG_WEIGHT,
             w_trace: float = core.DEFAULT_TRACE_WEIGHT,
             f_kind: str | None = None) -> ClassifyResult:
    """Match an unknown fault against every model and pick a fix.

    Walks candidates in fault-id order: an exact match returns that model's
    fix immediately; a positive match discards candidates recorded negative
    so far (and symmetrically for negative matches); finally the top
    positive percent wins, else the lowest negative percent, else the
    administrator is informed.  Percent ties go to the lower fault id.
    """
    models = db.sorted_models()
    if f_kind is None and f.fault_id is not None:
        known = db.get(f.fault_id)
        f_kind = known.kind_id if known is not None else None
    recorded: dict[str, MatchResult] = {}
    removed: set[str] = set()
    for m in models:
        if m.fault_id in removed:
            continue
        res = match_category(m, f, eps, eps_exact, f_kind, w_sig, w_trace)
        if res.category == EXACT:
            fix = find_fix(m, f)
            if fix is None:
                return ClassifyResult("escalate", None, m.fault_id, EXACT, res.percent)
            return ClassifyResult("fix", fix, m.fault_id, EXACT, res.percent)
        if res.category == POSITIVE:
            for fid in [k for k, r in recorded.items() if r.category == NEGATIVE]:
                removed.add(fid)
                del recorded[fid]
            recorded[m.fault_id] = res
        elif res.category == NEGATIVE:
            for fid in [k for k, r in recorded.items() if r.category == POSITIVE]:
                removed.add(fid)
                del recorded[fid]
            recorded[m.fault_id] = res
        # cannot / no-match: ignored

    positives = [(fid, r) for fid, r in recorded.items() if r.category == POSITIVE]
    negatives = [(fid, r) for fid, r in recorded.items() if r.category == NEGATIVE]
    if positives:
        fid, res = min(positives, key=lambda kv: (-kv[1].percent, kv[0]))
    elif negatives:
        fid, res = min(negatives, key=lambda kv: (kv[1].percent, kv[0]))
    else:
        return ESCALATE
    model = db.get(fid)
    fix = find_fix(model, f)
    if fix is None:
        return ClassifyResult("escalate", None, fid, res.category, res.percent)
    return ClassifyResult("fix", fix, fid, res.category, res.percent)


# ---------------------------------------------------------------------------
# Model database and graph
# ---------------------------------------------------------------------------

class ModelDb:
    """All fault models plus the kind forest they hang from."""

    def __init__(self, forest: KindForest | None = None):
        self.forest = forest or KindForest()
        self._models: dict[str, FaultModel] = {}

    def add(self, model: FaultModel) -> FaultModel:
        self._models[model.fault_id] = model
        return model

    def get(self, fault_id: str) -> FaultModel | None:
        return self._models.get(fault_id)

    def ensure(self, fault_id: str, kind_id: str | None = None) -> FaultModel:
        model = self._models.get(fault_id)
        if model is None:
            kind = kind_id or fault_id
            if not any(k.kind_id == kind for k in self.forest.kinds()):
                self.forest.add(FaultKind(kind))
            model = self.add(FaultModel(fault_id, kind))
        return model

    def sorted_models(self) -> list[FaultModel]:
        return [self._models[k] for k in sorted(self._models)]

    def kind_of(self, fault_id: str) -> str | None:
        m = self._models.get(fault_id)
        return m.kind_id if m else None

    def __len__(self) -> int:
        return len(self._models)

    # -- persistence ---------------------------------------------------------

    def serialized(self) -> str:
        lines = [dump_json({"v": core.RECORD_VERSION, "kind": "models",
                            "models": len(self._models)})]
        for k in self.forest.kinds():
            lines.append(dump_json({"v": core.RECORD_VERSION, "rec": "fault-kind",
                                    "id": k.kind_id, "parent": k.parent}))
        for m in self.sorted_models():
            lines.append(dump_json({"v": core.RECORD_VERSION, "rec": "fault-model",
                                    "id": m.fault_id, "fault_kind": m.kind_id,
                                    "fixes": [[f.fix_id, f.successes, f.attempts]
                                              for f in sorted(m.fixes, key=lambda f: f.fix_id)]}))
            for st in m.tagged:
                lines.append(dump_json({"v": core.RECORD_VERSION, "rec": "tagged",
                                        "model": m.fault_id, "st": st_to_wire(st)}))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.serialized())

    @classmethod
    def load(cls, path) -> "ModelDb":
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines:
            raise StoreCorruptError("empty model database", record=1)
        db = cls()
        try:
            head = json.loads(lines[0])
            if head.get("kind") != "models" or head.get("v") != core.RECORD_VERSION:
                raise ValueError("not a model database header")
        except (ValueError, KeyError, TypeError) as exc:
            raise StoreCorruptError(str(exc), record=1) from exc
        for i, line in enumerate(lines[1:], 2):
            try:
                obj = json.loads(line)
                rec = obj["rec"]
                if rec == "fault-kind":
                    db.forest.add(FaultKind(obj["id"], obj["parent"]))
                elif rec == "fault-model":
                    fixes = [FixStat(fid, s, a) for fid, s, a in obj["fixes"]]
                    db.add(FaultModel(obj["id"], obj["fault_kind"], fixes))
                elif rec == "tagged":
                    model = db.get(obj["model"])
                    if model is None:
                        raise ValueError(f"tagged record for unknown model {obj['model']!r}")
                    model.tagged.append(st_from_wire(obj["st"]))
                else:
                    raise ValueError(f"unknown record type {rec!r}")
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise StoreCorruptError(str(exc), record=i) from exc
        db.forest.validate()
        return db


@dataclass(frozen=True)
class GraphEdge:
    a: str
    b: str
    category: str
    weight: float

    def __post_init__(self):
        if not 0.0 <= self.weight <= 100.0:
            raise ValueError("edge weight must be in [0, 100]")


class FaultGraph:
    """Models as nodes; match-category edges; kind-derived refinement edges."""

    def __init__(self, db: ModelDb, edges=(), refinement=(), dimensions=None,
                 shared_fix_pairs=()):
        self.db = db
        self.edges: list[GraphEdge] = list(edges)
        self.refinement: list[tuple] = list(refinement)  # directed (ancestor, descendant)
        self.dimensions: dict[str, int] = dict(dimensions or {})
        self.shared_fix_pairs: set[tuple] = set(shared_fix_pairs)

    def sorted_models(self) -> list[FaultModel]:
        return self.db.sorted_models()

    def get(self, fault_id: str) -> FaultModel | None:
        return self.db.get(fault_id)

    def kind_of(self, fault_id: str) -> str | None:
        return self.db.kind_of(fault_id)

    def refinement_acyclic(self) -> bool:
        """The directed refinement edges must never form a cycle."""
        adj: dict[str, list[str]] = {}
        for a, b in self.refinement:
            adj.setdefault(a, []).append(b)
        state: dict[str, int] = {}

        def visit(n):
            state[n] = 1
            for nxt in adj.get(n, ()):
                if state.get(nxt) == 1:
                    return False
                if state.get(nxt) is None and not visit(nxt):
                    return False
            state[n] = 2
            return True

        return all(visit(n) for n in sorted(adj) if state.get(n) is None)

    def export_edges(self) -> str:
        lines = [f"{e.a}\t{e.b}\t{e.category}\t{e.weight:g}"
                 for e in sorted(self.edges, key=lambda e: (e.a, e.b, e.category))]
        return "\n".join(lines) + ("\n" if lines else "")


def rebuild_graph(db: ModelDb, eps: float = DEFAULT_EPS,
                  eps_exact: float = DEFAULT_EPS_EXACT,
                  w_sig: float = core.DEFAULT_SIG_WEIGHT,
                  w_trace: float = core.DEFAULT_TRACE_WEIGHT,
                  family_factor: float = DEFAULT_FAMILY_FACTOR) -> FaultGraph:
    """All-pairs matching over representatives, then family refinement."""
    models = db.sorted_models()
    best: dict[tuple, float] = {}
    for i, a in enumerate(models):
        for b in models[i + 1:]:
            for model, probe in ((a, b), (b, a)):
                rep = probe.representative()
                if rep is None:
                    continue
                res = match_category(model, rep, eps, eps_exact, probe.kind_id,
                                     w_sig, w_trace)
                key = (a.fault_id, b.fault_id, res.category)
                weight = res.percent if res.percent is not None else 0.0
                if weight > best.get(key, -1.0):
                    best[key] = weight
    edges = [GraphEdge(a, b, cat, w) for (a, b, cat), w in sorted(best.items())]
    refinement = []
    for i, a in enumerate(models):
        for b in models[i + 1:]:
            anc_a = db.forest.ancestors(a.kind_id)
            anc_b = db.forest.ancestors(b.kind_id)
            if a.kind_id != b.kind_id:
                if a.kind_id in anc_b[1:]:
                    refinement.append((a.fault_id, b.fault_id))
                elif b.kind_id in anc_a[1:]:
                    refinement.append((b.fault_id, a.fault_id))
    roots = sorted({db.forest.root(m.kind_id) for m in models})
    dimensions = {m.fault_id: roots.index(db.forest.root(m.kind_id)) for m in models}
    graph = FaultGraph(db, edges, refinement, dimensions)
    return refine_family(graph, family_factor)


def refine_family(graph: FaultGraph,
                  factor: float = DEFAULT_FAMILY_FACTOR) -> FaultGraph:
    """Apply the family-tree refinement to related fault pairs.

    Pairs sharing an ancestor lose their cannot/no-match edges and have
    positive/negative edge weights scaled up (capped at 100); sibling pairs
    are additionally tagged as shared-fix candidates.
    """
    forest = graph.db.forest
    forest.validate()
    new_edges = []
    for e in graph.edges:
        ka = graph.kind_of(e.a)
        kb = graph.kind_of(e.b)
        if ka is not None and kb is not None and forest.related(ka, kb):
            if e.category in (CANNOT, NO_MATCH):
                continue
            new_edges.append(replace(e, weight=min(100.0, e.weight * factor)))
        else:
            new_edges.append(e)
    shared = set(graph.shared_fix_pairs)
    models = graph.sorted_models()
    for i, a in enumerate(models):
        for b in models[i + 1:]:
            if forest.siblings(a.kind_id, b.kind_id):
                shared.add((a.fault_id, b.fault_id))
    out = FaultGraph(graph.db, new_edges, graph.refinement, graph.dimensions, shared)
    if not out.refinement_acyclic():
        raise ValueError("refinement edges form a cycle")
    return out
