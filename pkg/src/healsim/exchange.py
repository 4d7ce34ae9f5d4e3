"""Deterministic simulated network for sharing knowledge between nodes.

Logically concurrent nodes run under a single-threaded scheduler: each tick,
nodes whose share interval divides the tick emit their store (full snapshot
or incremental delta) to every peer, then all inboxes drain in
(timestamp, sender) order.  Identical seed, config, and run sequence always
reproduce a bit-identical cluster.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .core import dump_json
from .errors import PendingMessagesError, StaleVersionError
from .store import Delta, NodeStore, Replica

FULL = "full"
INCREMENTAL = "incremental"
DEFAULT_SHARE_INTERVAL = 10
TOPOLOGIES = ("full", "ring", "star", "line")


@dataclass
class SimClock:
    tick: int = 0

    def advance(self) -> None:
        self.tick += 1


@dataclass
class ExchangeMessage:
    sender: str
    timestamp: int
    kind: str  # "full" | "delta" | "resync"
    body: str = ""


@dataclass
class ExchangeNode:
    """Exchange-level view of one node: its store, inbox, and peer state."""

    node_id: str
    store: NodeStore
    peers: tuple = ()
    share_interval: int = DEFAULT_SHARE_INTERVAL
    inbox: list = field(default_factory=list)
    replicas: dict = field(default_factory=dict)
    acked: dict = field(default_factory=dict)      # peer -> version of ours they hold
    resync: set = field(default_factory=set)       # peers needing a full snapshot

    def __post_init__(self):
        if self.share_interval < 1:
            raise ValueError("share interval must be at least 1")


def make_topology(n: int, topology) -> dict:
    """Peer map for `n` nodes; `topology` is a named shape or an explicit map."""
    ids = [f"n{i}" for i in range(n)]
    if isinstance(topology, dict):
        peers = {nid: tuple(sorted(topology.get(nid, ()))) for nid in ids}
        for nid, ps in peers.items():
            for p in ps:
                if p not in peers:
                    raise ValueError(f"peer {p!r} of {nid!r} is not a node")
        return peers
    if topology == "full":
        return {a: tuple(b for b in ids if b != a) for a in ids}
    if topology == "ring":
        if n == 1:
            return {ids[0]: ()}
        out = {}
        for i, a in enumerate(ids):
            out[a] = tuple(sorted({ids[(i - 1) % n], ids[(i + 1) % n]} - {a}))
        return out
    if topology == "star":
        hub = ids[0]
        out = {hub: tuple(ids[1:])}
        for a in ids[1:]:
            out[a] = (hub,)
        return out
    if topology == "line":
        out = {}
        for i, a in enumerate(ids):
            ps = []
            if i > 0:
                ps.append(ids[i - 1])
            if i < n - 1:
                ps.append(ids[i + 1])
            out[a] = tuple(ps)
        return out
    raise ValueError(f"unknown topology {topology!r}")


class Cluster:
    """All nodes plus the clock, message queues, and delivery bookkeeping."""

    def __init__(self, nodes, mode: str = FULL, seed: int = 0,
                 drop_probability: float = 0.0):
        if mode not in (FULL, INCREMENTAL):
            raise ValueError(f"unknown exchange mode {mode!r}")
        self.nodes: dict[str, ExchangeNode] = {n.node_id: n for n in nodes}
        if len(self.nodes) != len(list(nodes)):
            raise ValueError("node ids must be unique")
        self.mode = mode
        self.drop_probability = drop_probability
        self.clock = SimClock()
        self.rng = random.Random(f"exchange:{seed}")
        self.sent = 0
        self.delivered = 0
        self.dropped = 0
        self._control: list = []  # (dest, message) deferred to the next tick

    def node_ids(self) -> list:
        return sorted(self.nodes)

    def tick(self) -> None:
        """One scheduler step: emit, deliver, drain."""
        self.clock.advance()
        t = self.clock.tick
        outbound = self._control
        self._control = []
        for nid in self.node_ids():
            node = self.nodes[nid]
            if node.peers and t % node.share_interval == 0:
                for peer in sorted(node.peers):
                    outbound.append((peer, self._payload(node, peer)))
        for dest, msg in outbound:
            self.sent += 1
            if self.drop_probability and self.rng.random() < self.drop_probability:
                self.dropped += 1
                continue
            self.nodes[dest].inbox.append(msg)
        for nid in self.node_ids():
            node = self.nodes[nid]
            msgs = sorted(node.inbox, key=lambda m: (m.timestamp, m.sender))
            node.inbox = []
            for msg in msgs:
                self._consume(node, msg)
                self.delivered += 1

    def _payload(self, node: ExchangeNode, peer: str) -> ExchangeMessage:
        t = self.clock.tick
        if self.mode == INCREMENTAL and peer not in node.resync:
            base = node.acked.get(peer, 0)
            try:
                delta = node.store.delta_since(base)
            except StaleVersionError:
                pass  # replica too old; fall through to a full snapshot
            else:
                node.acked[peer] = node.store.version
                return ExchangeMessage(node.node_id, t, "delta", delta.to_wire())
        node.resync.discard(peer)
        node.acked[peer] = node.store.version
        body = dump_json({"version": node.store.version,
                          "records": node.store.records()})
        return ExchangeMessage(node.node_id, t, "full", body)

    def _consume(self, node: ExchangeNode, msg: ExchangeMessage) -> None:
        if msg.kind == "resync":
            node.resync.add(msg.sender)
            node.acked[msg.sender] = 0
            return
        replica = node.replicas.setdefault(msg.sender, Replica())
        if msg.kind == "full":
            obj = json.loads(msg.body)
            replica.set_full(obj["records"], obj["version"])
        elif msg.kind == "delta":
            delta = Delta.from_wire(msg.body)
            if not replica.apply(delta):
                # Gap in the delta chain (a drop); ask for a full snapshot.
                self._control.append((msg.sender, ExchangeMessage(
                    node.node_id, self.clock.tick, "resync")))
                return
        else:
            raise ValueError(f"unknown message kind {msg.kind!r}")
        node.store.merge_dst(replica.entries())

    def has_pending(self) -> bool:
        return bool(self._control) or any(n.inbox for n in self.nodes.values())

    def convergence_check(self) -> bool:
        """True iff every node store is content-equal; requires a quiet network."""
        if self.has_pending():
            raise PendingMessagesError("messages still in flight")
        ids = self.node_ids()
        first = self.nodes[ids[0]].store
        return all(self.nodes[nid].store.content_equal(first) for nid in ids[1:])

    def serialized(self) -> str:
        parts = [dump_json({"tick": self.clock.tick, "mode": self.mode})]
        for nid in self.node_ids():
            parts.append(self.nodes[nid].store.serialized())
        return "\n".join(parts)


def build_cluster(n: int, topology="full", share_interval: int = DEFAULT_SHARE_INTERVAL,
                  mode: str = FULL, seed: int = 0, threshold: int = 64,
                  theta: float = 0.8, set_cap: int = 4,
                  drop_probability: float = 0.0) -> Cluster:
    peers = make_topology(n, topology)
    nodes = []
    for nid in sorted(peers):
        store = NodeStore(nid, threshold=threshold, theta=theta, set_cap=set_cap)
        nodes.append(ExchangeNode(nid, store, peers[nid], share_interval))
    return Cluster(nodes, mode, seed, drop_probability)


def tick(cluster: Cluster) -> Cluster:
    cluster.tick()
    return cluster


def convergence_check(cluster: Cluster) -> bool:
    return cluster.convergence_check()
