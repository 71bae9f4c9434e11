"""Slot-driven execution of per-node protocol state machines.

The engine iterates global slots. Each awake node is polled through its
NodeProcess, collected transmission intents are resolved against the SINR
channel, and deliveries become the receivers' inboxes one slot later.
Synchronous runs are the special case where every wake offset is zero.

Scheduling contract (kept cheap for runs of 10^5+ slots):

  * ``on_slot(local_time, inbox)`` is called at the node's wake slot, on
    every slot whose inbox is nonempty, and whenever the process scheduled
    itself via ``next_wake`` (a *local* slot number; None means no
    self-scheduled poll). A process that needs polling every slot sets
    ``next_wake = local_time + 1`` on each call.
  * ``steady_intent`` is broadcast on every slot without polling until the
    process changes it; an intent returned from on_slot overrides the
    steady intent for that slot only. Processes must therefore key their
    behavior on ``local_time``, never on the number of polls received.
  * A process is "terminated" for metrics the first time is_terminated()
    reports True; it keeps being polled/broadcast (keep-alives) until every
    node has terminated, which ends the run.

Randomness: a master seed s feeds one channel stream default_rng([s, 0])
for transmission coin flips (consumed in ascending sender order), and one
protocol stream default_rng([s, 1, node]) per node for color draws, so
identical seeds replay bit-exactly.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, is_dataclass, asdict
from typing import Any, Callable, NamedTuple, Optional

import numpy as np

from .sinr import (Channel, NodeId, PhysicalParams, Topology,
                   TransmissionIntent)

WakeSchedule = dict  # NodeId -> wake slot; missing nodes wake at 0


def channel_rng(seed: int) -> np.random.Generator:
    """The per-run stream used for transmission coin flips."""
    return np.random.default_rng([seed, 0])


def node_rng(seed: int, node: NodeId) -> np.random.Generator:
    """The per-node stream used for protocol random draws."""
    return np.random.default_rng([seed, 1, node])


class NodeProcess:
    """Base protocol state machine driven by the engine (see module doc)."""

    steady_intent: Optional[TransmissionIntent] = None
    next_wake: Optional[int] = None
    probability_cap: Optional[float] = None

    def __init__(self):
        self.pending_events: list[tuple[str, dict]] = []

    def emit(self, kind: str, **payload) -> None:
        self.pending_events.append((kind, payload))

    def on_slot(self, local_time: int, inbox: list[tuple[NodeId, Any]]
                ) -> Optional[TransmissionIntent]:
        raise NotImplementedError

    def is_terminated(self) -> bool:
        return False

    def snapshot(self) -> dict:
        return {}


class TraceEvent(NamedTuple):
    slot: int
    node: Optional[NodeId]
    kind: str
    payload: dict


@dataclass
class RunResult:
    final_states: dict[NodeId, dict]
    slots_elapsed: dict[NodeId, Optional[int]]
    timed_out: list[NodeId]
    trace: list[TraceEvent]
    audit_max: float
    audit_argmax: tuple[int, Optional[NodeId]]
    protocol_errors: list[tuple[NodeId, dict]]
    diagnostics: list[str]
    slots_run: int
    transmissions: int
    deliveries: int
    wake: dict[NodeId, int]

    def metrics(self) -> dict:
        done = [s for s in self.slots_elapsed.values() if s is not None]
        return {
            "slots_run": self.slots_run,
            "transmissions": self.transmissions,
            "deliveries": self.deliveries,
            "audit_max": self.audit_max,
            "timed_out": len(self.timed_out),
            "slots_p50": float(np.median(done)) if done else math.nan,
            "slots_max": max(done) if done else math.nan,
        }


def ideal_deliveries(topology: Topology) -> Callable:
    """Forced-success channel for tests: every transmission reaches every
    in-range listener (half-duplex and the RSSI range rule still apply)."""
    def deliver(transmitters, receivers=None):
        txs = set(transmitters)
        out = {}
        for u in sorted(txs):
            got = [v for v in topology.neighbors[u]
                   if v not in txs and (receivers is None or v in receivers)]
            if got:
                out[u] = got
        return out
    return deliver


def run(topology: Topology, params: PhysicalParams, constants,
        processes: dict[NodeId, NodeProcess], wake: Optional[WakeSchedule] = None,
        max_slots: int = 1_000_000, rng: int | np.random.Generator = 0, *,
        trace_level: str = "state", dense_poll: bool = False,
        deliveries_fn: Optional[Callable] = None,
        audit: bool = True) -> RunResult:
    """Drive every process through global slots until all terminate.

    trace_level: "state" records process-emitted events and terminations;
    "full" additionally records every intent, transmission and delivery
    (memory-heavy; meant for small runs and the trace checker). Nodes not
    yet awake neither receive nor transmit. Unterminated nodes at max_slots
    are reported as timed out, not raised.
    """
    if max_slots < 1:
        raise ValueError("max_slots must be >= 1")
    ids = list(topology.ids)
    missing = [v for v in ids if v not in processes]
    if missing:
        raise ValueError(f"nodes without a process: {missing}")
    if isinstance(rng, np.random.Generator):
        flips = rng
    else:
        flips = channel_rng(int(rng))
    wake = dict(wake or {})
    wake_of = {v: int(wake.get(v, 0)) for v in ids}
    if any(w < 0 for w in wake_of.values()):
        raise ValueError("wake slots must be nonnegative")
    if deliveries_fn is None:
        deliveries_fn = Channel(topology, params).deliveries

    n = len(ids)
    idx = topology.index
    full_trace = trace_level == "full"
    trace: list[TraceEvent] = []
    errors: list[tuple[NodeId, dict]] = []
    diagnostics: list[str] = []

    # region membership matrix for the probability audit (includes the node)
    if audit:
        region = (topology.dist <= topology.r_b).astype(float)

    wake_at: dict[int, list[NodeId]] = {}
    for v, w in wake_of.items():
        wake_at.setdefault(w, []).append(v)

    awake: set[NodeId] = set()
    pending: dict[NodeId, list] = {}
    heap: list[tuple[int, NodeId]] = []
    steady: dict[NodeId, TransmissionIntent] = {}
    steady_ids: list[NodeId] = []
    steady_probs = np.empty(0)
    steady_dirty = False
    steady_vec = np.zeros(n)
    audit_cached = 0.0
    audit_cached_node: Optional[NodeId] = None
    audit_fresh = False
    audit_max = 0.0
    audit_argmax: tuple[int, Optional[NodeId]] = (-1, None)

    term_slot: dict[NodeId, Optional[int]] = {v: None for v in ids}
    n_terminated = 0
    transmissions = 0
    total_deliveries = 0
    slots_run = 0

    def check_intent(node: NodeId, intent: TransmissionIntent) -> None:
        if intent.sender != node:
            raise ValueError(f"process for {node} emitted intent for {intent.sender}")
        cap = processes[node].probability_cap
        if not 0.0 <= intent.probability <= 1.0:
            raise ValueError(f"intent probability out of range: {intent!r}")
        if cap is not None and intent.probability > cap + 1e-12:
            raise ValueError(f"node {node} exceeded its probability cap {cap}: {intent!r}")

    for t in range(max_slots):
        slots_run = t + 1
        for v in wake_at.get(t, ()):
            awake.add(v)
            heapq.heappush(heap, (t, v))

        due: set[NodeId] = set(pending)
        while heap and heap[0][0] <= t:
            due.add(heapq.heappop(heap)[1])
        if dense_poll:
            due = set(awake)

        adhoc: dict[NodeId, TransmissionIntent] = {}
        for v in sorted(due):
            if v not in awake:
                pending.pop(v, None)
                continue
            proc = processes[v]
            inbox = pending.pop(v, [])
            ret = proc.on_slot(t - wake_of[v], inbox)
            if proc.pending_events:
                for kind, payload in proc.pending_events:
                    if kind == "error":
                        errors.append((v, payload))
                    if kind == "diagnostic":
                        diagnostics.append(f"slot {t} node {v}: {payload}")
                    trace.append(TraceEvent(t, v, kind, payload))
                proc.pending_events.clear()
            if ret is not None:
                check_intent(v, ret)
                adhoc[v] = ret
            new_steady = proc.steady_intent
            if new_steady is not steady.get(v):
                if new_steady is None:
                    steady.pop(v, None)
                else:
                    check_intent(v, new_steady)
                    steady[v] = new_steady
                steady_dirty = True
            nw = proc.next_wake
            if nw is not None:
                gw = wake_of[v] + nw
                if gw <= t:
                    raise ValueError(f"node {v} scheduled next_wake in the past")
                heapq.heappush(heap, (gw, v))
            if term_slot[v] is None and proc.is_terminated():
                term_slot[v] = t
                n_terminated += 1
                trace.append(TraceEvent(t, v, "terminated", {}))

        if steady_dirty:
            steady_ids = sorted(steady)
            steady_probs = np.array([steady[v].probability for v in steady_ids])
            steady_vec = np.zeros(n)
            for v in steady_ids:
                steady_vec[idx[v]] = steady[v].probability
            steady_dirty = False
            audit_fresh = False

        if adhoc:
            slot_ids = sorted(set(steady_ids) | set(adhoc))
            slot_intents = [adhoc.get(v) or steady[v] for v in slot_ids]
            slot_probs = np.array([i.probability for i in slot_intents])
        else:
            slot_ids = steady_ids
            slot_intents = [steady[v] for v in slot_ids]
            slot_probs = steady_probs

        if audit and slot_ids:
            if adhoc:
                vec = steady_vec.copy()
                for v, intent in adhoc.items():
                    vec[idx[v]] = intent.probability
                sums = region @ vec
                j = int(np.argmax(sums))
                value, vnode = float(sums[j]), ids[j]
            elif not audit_fresh:
                sums = region @ steady_vec
                j = int(np.argmax(sums))
                audit_cached, audit_cached_node = float(sums[j]), ids[j]
                audit_fresh = True
                value, vnode = audit_cached, audit_cached_node
            else:
                value, vnode = audit_cached, audit_cached_node
            if value > audit_max:
                audit_max = value
                audit_argmax = (t, vnode)

        transmitted: list[NodeId] = []
        if slot_ids:
            draws = flips.random(len(slot_ids))
            transmitted = [v for v, u, p in zip(slot_ids, draws, slot_probs) if u < p]
            if full_trace:
                for v, intent in zip(slot_ids, slot_intents):
                    trace.append(TraceEvent(t, v, "intent", {
                        "probability": intent.probability,
                        "message": _encode_message(intent.message)}))
                for v in transmitted:
                    trace.append(TraceEvent(t, v, "transmit", {}))

        if transmitted:
            transmissions += len(transmitted)
            msg = {v: i.message for v, i in zip(slot_ids, slot_intents)}
            for u, vs in deliveries_fn(transmitted, awake).items():
                for v in vs:
                    pending.setdefault(v, []).append((u, msg[u]))
                    total_deliveries += 1
                    if full_trace:
                        trace.append(TraceEvent(t, v, "deliver", {
                            "sender": u, "message": _encode_message(msg[u])}))

        if n_terminated == n:
            break

    timed_out = [v for v in ids if term_slot[v] is None]
    if timed_out:
        diagnostics.append(
            f"{len(timed_out)} node(s) unterminated after {slots_run} slots: "
            f"{timed_out[:10]}")
    return RunResult(
        final_states={v: processes[v].snapshot() for v in ids},
        slots_elapsed={v: (None if term_slot[v] is None else term_slot[v] - wake_of[v])
                       for v in ids},
        timed_out=timed_out,
        trace=trace,
        audit_max=audit_max,
        audit_argmax=audit_argmax,
        protocol_errors=errors,
        diagnostics=diagnostics,
        slots_run=slots_run,
        transmissions=transmissions,
        deliveries=total_deliveries,
        wake=wake_of,
    )


# ---------------------------------------------------------------------------
# Probability audit over recorded traces
# ---------------------------------------------------------------------------

@dataclass
class AuditReport:
    max_sum: float
    slot: int
    node: Optional[NodeId]
    violations: list[tuple[int, NodeId, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def probability_audit(trace, topology: Topology, constants=None,
                      tolerance: float = 1e-9) -> AuditReport:
    """Re-derive per-slot, per-region probability sums from intent events.

    Accepts a RunResult or a raw event list; requires a full-level trace
    (engine runs compute the same quantity online as RunResult.audit_max).
    Any region whose sum exceeds 1 becomes a violation entry.
    """
    events = trace.trace if isinstance(trace, RunResult) else trace
    ids = list(topology.ids)
    idx = topology.index
    region = (topology.dist <= topology.r_b).astype(float)
    by_slot: dict[int, list] = {}
    for ev in events:
        kind = ev[2] if isinstance(ev, tuple) else ev.kind
        if kind != "intent":
            continue
        ev = TraceEvent(*ev) if not isinstance(ev, TraceEvent) else ev
        by_slot.setdefault(ev.slot, []).append(ev)
    report = AuditReport(max_sum=0.0, slot=-1, node=None)
    vec = np.zeros(len(ids))
    for slot in sorted(by_slot):
        vec[:] = 0.0
        for ev in by_slot[slot]:
            vec[idx[ev.node]] = ev.payload["probability"]
        sums = region @ vec
        j = int(np.argmax(sums))
        if sums[j] > report.max_sum:
            report.max_sum, report.slot, report.node = float(sums[j]), slot, ids[j]
        for j in np.flatnonzero(sums > 1.0 + tolerance):
            report.violations.append((slot, ids[int(j)], float(sums[int(j)])))
    return report


# ---------------------------------------------------------------------------
# Trace serialization (JSON-lines, one event per line)
# ---------------------------------------------------------------------------

def _encode_message(m):
    if m is None or isinstance(m, (str, int, float, bool)):
        return m
    if isinstance(m, tuple) and hasattr(m, "_asdict"):
        return {"type": type(m).__name__, **m._asdict()}
    if is_dataclass(m):
        return {"type": type(m).__name__, **asdict(m)}
    if isinstance(m, (tuple, list)):
        return {"type": "bundle", "parts": [_encode_message(p) for p in m]}
    return {"type": type(m).__name__, "repr": repr(m)}


def write_trace(events: list[TraceEvent], path) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps({"slot": ev.slot, "node": ev.node,
                                 "kind": ev.kind, "payload": ev.payload},
                                sort_keys=True))
            fh.write("\n")


def read_trace(path) -> list[TraceEvent]:
    events = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            events.append(TraceEvent(d["slot"], d["node"], d["kind"], d["payload"]))
    return events
