"""Feedback-driven fix search with checkpoint/restore.

On failure the engine snapshots the application, builds a fix list from the
node store and the fault-model database ordered by success rate, and trials
fixes one at a time: a stable replay heals and bumps the winning fix's
statistics; failures trigger bounded exact-submatch recursion, then the
closest partial-match candidate, then a knowledge refresh, and finally an
administrator escalation with a persisted log.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, replace

from . import core, faults
from .core import FixStat, SignatureTrace, dump_json, st_to_wire
from .errors import UnstableStateError
from .faults import ClassifyResult, FaultModel, classify

STORE_SOURCE = "store"


@dataclass(frozen=True)
class HealingConfig:
    max_recursion_depth: int = 3
    time_limit: int = 1000
    candidate_subset_size: int = 5
    eps: float = 0.25
    eps_exact: float = 0.02
    fix_attempt_cap: int = 3
    w_sig: float = core.DEFAULT_SIG_WEIGHT
    w_trace: float = core.DEFAULT_TRACE_WEIGHT

    def __post_init__(self):
        for name in ("max_recursion_depth", "time_limit", "candidate_subset_size",
                     "fix_attempt_cap"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class TriedFix:
    fix_id: str
    source: str
    stable: bool


@dataclass(frozen=True)
class FixCandidate:
    fix_id: str
    rate: float
    source: str  # STORE_SOURCE or a fault model id
    exact: bool = False


@dataclass(frozen=True)
class HealingOutcome:
    healed: bool
    fix_id: str | None
    attempts: int
    elapsed: int
    comparisons: int
    tried: tuple
    log_record: str | None = None

    @property
    def escalated(self) -> bool:
        return not self.healed


def update_success(carrier, fix_id: str, succeeded: bool):
    """Count one attempt (and maybe one success) for an attached fix.

    Records are immutable, so an updated copy is returned for them; fault
    models are updated in place and returned.
    """
    if isinstance(carrier, SignatureTrace):
        cur = carrier.fix(fix_id)
        if cur is None:
            raise ValueError(f"fix {fix_id!r} is not attached to this record")
        bumped = FixStat(fix_id, cur.successes + (1 if succeeded else 0),
                         cur.attempts + 1)
        return replace(carrier, fixes=tuple(
            bumped if f.fix_id == fix_id else f for f in carrier.fixes))
    if isinstance(carrier, FaultModel):
        if carrier.fix(fix_id) is None:
            raise ValueError(f"fix {fix_id!r} is not attached to model "
                             f"{carrier.fault_id!r}")
        carrier.record_fix(fix_id, succeeded)
        return carrier
    raise TypeError(f"cannot update success on {type(carrier).__name__}")


def apply_fix(app, fix_id: str, checkpoint: dict) -> bool:
    """Run one recovery action and re-evaluate stability from the checkpoint.

    Unknown fixes act as failed trials.  On an unstable result the
    application state is restored to the checkpoint before the next trial.
    """
    if app.is_stable():
        raise UnstableStateError("recovery attempted on a stable application")
    app.apply_recovery(fix_id)
    stable = app.replay_from(checkpoint)
    if not stable:
        app.restore(checkpoint)
    return stable


def exact_submatch(part: SignatureTrace, whole: SignatureTrace) -> bool:
    """Whether `part` exactly matches a portion of `whole`: its method
    sequence is a contiguous subsequence and its keys are a subset with
    overlapping values."""
    sub = part.trace.method_ids()
    full = whole.trace.method_ids()
    if not sub or len(sub) > len(full):
        return False
    if not any(full[i:i + len(sub)] == sub
               for i in range(len(full) - len(sub) + 1)):
        return False
    for ent in part.signature:
        other = whole.entity(ent.key)
        if other is None or not ent.value.overlaps(other.value):
            return False
    return True


def decide_fix(store, db, st_c: SignatureTrace, cfg: HealingConfig):
    """Shared fix-list generation: scan the store in rank order (stopping at
    an exact hit), classify against the fault models, and merge the fixes
    ordered by smoothed success rate with the exact hit's fixes first.

    Returns (plan, matched, comparisons, classify_result); `matched` holds
    (entry, dist) pairs for the candidate phase.
    """
    comparisons = 0
    matched = []
    exact_entry = None
    for e in store.entries:
        comparisons += 1
        d = core.distance(e.st, st_c, cfg.w_sig, cfg.w_trace)
        if e.st.fixes:
            if d <= cfg.eps:
                matched.append((e, d))
            if d <= cfg.eps_exact:
                exact_entry = e
                break
    cres = classify(st_c, db, cfg.eps, cfg.eps_exact, cfg.w_sig, cfg.w_trace)
    plan: list[FixCandidate] = []
    seen: dict[str, int] = {}

    def push(fix: FixStat, source: str, exact: bool = False):
        rate = fix.smoothed_rate()
        idx = seen.get(fix.fix_id)
        if idx is None:
            seen[fix.fix_id] = len(plan)
            plan.append(FixCandidate(fix.fix_id, rate, source, exact))
            return
        cur = plan[idx]
        plan[idx] = FixCandidate(fix.fix_id, max(rate, cur.rate),
                                 source if rate > cur.rate else cur.source,
                                 cur.exact or exact)

    if exact_entry is not None:
        for f in sorted(exact_entry.st.fixes,
                        key=lambda f: (-f.smoothed_rate(), f.fix_id)):
            push(f, STORE_SOURCE, exact=True)
    if cres.decision == "fix":
        push(cres.fix, cres.model_id)
    pool = []
    for e, _d in matched:
        if exact_entry is not None and e is exact_entry:
            continue
        pool.extend(e.st.fixes)
    for f in sorted(pool, key=lambda f: (-f.smoothed_rate(), f.fix_id)):
        push(f, STORE_SOURCE)
    plan.sort(key=lambda c: (not c.exact, -c.rate, c.fix_id))
    return plan, matched, comparisons, cres


class HealingEngine:
    """Drives the fix-search loop for one node's application."""

    def __init__(self, app, store, db, config: HealingConfig | None = None,
                 refresh_hook=None, log_path=None, clock=None):
        self.app = app
        self.store = store
        self.db = db
        self.cfg = config or HealingConfig()
        self.refresh_hook = refresh_hook
        self.log_path = log_path
        self.clock = clock or (lambda: 0)

    # -- public entry ---------------------------------------------------------

    def on_failure(self, st_c: SignatureTrace) -> HealingOutcome:
        """Heal the application or escalate; never anything else."""
        if st_c.fault_id is None:
            raise UnstableStateError("healing invoked with a stable record")
        if self.app.is_stable():
            raise UnstableStateError("healing invoked but the application is stable")
        cfg = self.cfg
        checkpoint = self.app.snapshot()
        tried: list[TriedFix] = []
        attempts: Counter = Counter()
        failed_this_round: set[str] = set()
        comparisons = 0
        elapsed = 0
        winner: FixCandidate | None = None
        classify_result: ClassifyResult = faults.ESCALATE

        while winner is None:
            plan, matched, comps, classify_result = decide_fix(
                self.store, self.db, st_c, cfg)
            comparisons += comps
            for cand in plan:
                if elapsed >= cfg.time_limit:
                    break
                if not self._available(cand.fix_id, attempts, failed_this_round):
                    continue
                elapsed += 1
                if self._attempt(cand, checkpoint, tried, attempts,
                                 failed_this_round):
                    winner = cand
                    break
                sub, cost = self._submatch_phase(st_c, checkpoint, tried,
                                                 attempts, failed_this_round,
                                                 cfg.time_limit - elapsed)
                elapsed += cost
                if sub is not None:
                    winner = sub
                    break
            if winner is not None or elapsed >= cfg.time_limit:
                break
            cand = self._closest_partial(st_c, matched, attempts, failed_this_round)
            if cand is not None:
                elapsed += 1
                if self._attempt(cand, checkpoint, tried, attempts,
                                 failed_this_round):
                    winner = cand
                    break
            if elapsed >= cfg.time_limit or self.refresh_hook is None:
                break
            elapsed += 1
            if not self.refresh_hook():
                break
            failed_this_round.clear()

        record = self._episode_record(st_c, attempts,
                                      winner.fix_id if winner else None)
        self.store.merge_st(record)
        if winner is not None:
            self._enrich_models(record, winner, classify_result)
            return HealingOutcome(True, winner.fix_id, len(tried), elapsed,
                                  comparisons, tuple(tried))
        log_record = self._escalate(record, tried)
        return HealingOutcome(False, None, len(tried), elapsed, comparisons,
                              tuple(tried), log_record)

    # -- phases ---------------------------------------------------------------

    def _available(self, fix_id: str, attempts: Counter, failed: set) -> bool:
        return attempts[fix_id] < self.cfg.fix_attempt_cap and fix_id not in failed

    def _attempt(self, cand: FixCandidate, checkpoint, tried, attempts,
                 failed) -> bool:
        stable = apply_fix(self.app, cand.fix_id, checkpoint)
        attempts[cand.fix_id] += 1
        if not stable:
            failed.add(cand.fix_id)
        tried.append(TriedFix(cand.fix_id, cand.source, stable))
        if cand.source != STORE_SOURCE:
            model = self.db.get(cand.source)
            if model is not None:
                model.record_fix(cand.fix_id, stable)
        return stable

    def _submatch_phase(self, st_c, checkpoint, tried, attempts, failed,
                        budget: int):
        """Try fixes of store entries that exactly match part of the failure,
        recursing at most max_recursion_depth deep."""
        cands = [e for e in self.store.entries
                 if e.st.fixes and exact_submatch(e.st, st_c)]
        return self._submatch_try(cands, checkpoint, tried, attempts, failed,
                                  depth=1, budget=budget)

    def _submatch_try(self, cands, checkpoint, tried, attempts, failed,
                      depth: int, budget: int):
        assert depth <= self.cfg.max_recursion_depth + 1
        if depth > self.cfg.max_recursion_depth or budget <= 0 or not cands:
            return None, 0
        head, rest = cands[0], cands[1:]
        fix = self._best_available_fix(head, attempts, failed)
        if fix is None:
            return self._submatch_try(rest, checkpoint, tried, attempts, failed,
                                      depth, budget)
        cand = FixCandidate(fix.fix_id, fix.smoothed_rate(), STORE_SOURCE)
        if self._attempt(cand, checkpoint, tried, attempts, failed):
            return cand, 1
        sub, cost = self._submatch_try(rest, checkpoint, tried, attempts, failed,
                                       depth + 1, budget - 1)
        return sub, cost + 1

    def _best_available_fix(self, entry, attempts, failed) -> FixStat | None:
        usable = [f for f in entry.st.fixes
                  if self._available(f.fix_id, attempts, failed)]
        if not usable:
            return None
        return min(usable, key=lambda f: (-f.smoothed_rate(), f.fix_id))

    def _closest_partial(self, st_c, matched, attempts, failed):
        """Candidate phase: among partial matches, take the top-n by success
        rate and pick the fix of the entry closest to the failure."""
        partials = []
        for e, d in matched:
            if d <= self.cfg.eps_exact:
                continue
            fix = self._best_available_fix(e, attempts, failed)
            if fix is not None:
                partials.append((e, d, fix))
        if not partials:
            return None
        partials.sort(key=lambda t: (-t[2].smoothed_rate(), t[0].record_body))
        subset = partials[:self.cfg.candidate_subset_size]
        entry, _d, fix = min(subset, key=lambda t: (t[1], t[0].record_body))
        return FixCandidate(fix.fix_id, fix.smoothed_rate(), STORE_SOURCE)

    # -- bookkeeping ------------------------------------------------------------

    def _episode_record(self, st_c: SignatureTrace, attempts: Counter,
                        winner_fix: str | None) -> SignatureTrace:
        fixes = tuple(FixStat(fid, 1 if fid == winner_fix else 0, n)
                      for fid, n in sorted(attempts.items()))
        return replace(st_c, fixes=fixes)

    def _enrich_models(self, record: SignatureTrace, winner: FixCandidate,
                       cres: ClassifyResult) -> None:
        """Tag the healed scenario into the winning fault model."""
        kind = None
        if cres.model_id is not None:
            kind = self.db.kind_of(cres.model_id)
        model = self.db.ensure(record.fault_id, kind)
        model.add_tagged(record, getattr(self.store, "theta", 0.8),
                         getattr(self.store, "set_cap", core.DEFAULT_SET_CAP))
        if winner.source != model.fault_id:
            # The attempt only credited the source carrier; the fault's own
            # model learns the working fix here.
            model.record_fix(winner.fix_id, True)

    def _escalate(self, record: SignatureTrace, tried) -> str:
        line = dump_json({
            "v": core.RECORD_VERSION,
            "tick": self.clock(),
            "node": self.app.node_id,
            "st": st_to_wire(record),
            "tried": [[t.fix_id, t.source, t.stable] for t in tried],
            "state": self.app.snapshot(),
        })
        if self.log_path is not None:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        return line
