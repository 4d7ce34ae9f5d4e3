"""Shared builders for unit and property tests."""

import random

import pytest

from healsim.core import (EntityKey, FixStat, SignatureEntity, Trace,
                          TraceEvent, anything, concrete, make_st, value_range,
                          value_set)
from healsim.store import NodeStore

KEY_POOL = ("alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta")
METHOD_POOL = ("m-init", "m-load", "m-work", "m-save", "m-close")
CAT_POOL = ("field-value", "object-state", "open-resource", "environment")


def key(name, category="field-value"):
    return EntityKey(category, (name,))


def entity(name, value, occ=1, category="field-value"):
    if not hasattr(value, "shape"):
        value = concrete(value)
    return SignatureEntity(key(name, category), value, occ)


def trace_of(*methods, fault_stack=None):
    events = tuple(TraceEvent(m, 0, i) for i, m in enumerate(methods))
    return Trace(events, fault_stack)


def simple_st(values=None, methods=("m-work",), fault=None, fixes=(),
              node="t0", run=0):
    """Record with flat single-name keys and a depth-0 trace."""
    values = values or {}
    ents = [entity(n, v) for n, v in values.items()]
    stack = (methods[-1],) if fault and methods else ("none",) if fault else None
    fx = tuple(FixStat(fid, s, a) for fid, s, a in fixes)
    return make_st(ents, trace_of(*methods, fault_stack=stack), fault, fx,
                   node, run)


def random_value(rng):
    pick = rng.randrange(4)
    if pick == 0:
        return concrete(rng.choice((1, 2, 5, 9, "red", "blue")))
    if pick == 1:
        span = rng.sample((1, 2, 3, 5, 8, 9), k=rng.randint(1, 3))
        return value_set(span)
    if pick == 2:
        lo = rng.randint(0, 6)
        return value_range(lo, lo + rng.randint(0, 5))
    return anything()


def random_st(rng, node=None, faulty=None):
    node = node or f"t{rng.randrange(3)}"
    names = rng.sample(KEY_POOL, k=rng.randint(0, 4))
    ents = [entity(n, random_value(rng)) for n in names]
    methods = [rng.choice(METHOD_POOL) for _ in range(rng.randint(0, 4))]
    if faulty is None:
        faulty = rng.random() < 0.4
    fault = None
    stack = None
    fixes = ()
    if faulty and methods:
        fault = rng.choice(("fault-a", "fault-b"))
        stack = (methods[-1],)
        attempts = rng.randint(0, 3)
        fixes = (FixStat("fix-" + rng.choice("xyz"),
                         rng.randint(0, attempts), attempts),)
    elif faulty:
        fault = "fault-a"
        stack = ("m-init",)
    return make_st(ents, trace_of(*methods, fault_stack=stack), fault, fixes,
                   node, rng.randrange(50))


def random_dst(rng, node=None, threshold=None, merges=None):
    node = node or f"t{rng.randrange(3)}"
    store = NodeStore(node, threshold=threshold or rng.randint(3, 8),
                     log_window=16)
    for _ in range(merges if merges is not None else rng.randint(0, 8)):
        store.merge_st(random_st(rng, node=node))
    return store


@pytest.fixture
def rng():
    return random.Random(20240817)
