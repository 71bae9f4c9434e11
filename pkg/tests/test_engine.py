import numpy as np
import pytest

from sinrcolor import (PhysicalParams, TransmissionIntent, build_topology,
                       derive_constants, probability_audit, read_trace,
                       write_trace)
from sinrcolor.engine import NodeProcess, RunResult, ideal_deliveries, run


class Idle(NodeProcess):
    """Terminates at its first poll without ever transmitting."""

    def __init__(self):
        super().__init__()
        self.done = False

    def on_slot(self, now, inbox):
        self.done = True
        self.next_wake = None
        return None

    def is_terminated(self):
        return self.done

    def snapshot(self):
        return {"done": self.done}


class Beacon(NodeProcess):
    """Transmits a fixed message at a fixed probability for `slots` slots."""

    def __init__(self, node, probability, slots, message="beacon"):
        super().__init__()
        self.node = node
        self.slots = slots
        self.steady_intent = TransmissionIntent(node, probability, message)
        self.done = False

    def on_slot(self, now, inbox):
        if now >= self.slots:
            self.steady_intent = None
            self.done = True
            self.next_wake = None
        else:
            self.next_wake = self.slots
        return None

    def is_terminated(self):
        return self.done

    def snapshot(self):
        return {}


class Recorder(NodeProcess):
    """Listens for `slots` slots and keeps everything it hears."""

    def __init__(self, slots):
        super().__init__()
        self.slots = slots
        self.heard = []
        self.done = False

    def on_slot(self, now, inbox):
        self.heard.extend((now, s, m) for s, m in inbox)
        if now >= self.slots:
            self.done = True
            self.next_wake = None
        else:
            self.next_wake = self.slots
        return None

    def is_terminated(self):
        return self.done

    def snapshot(self):
        return {"heard": list(self.heard)}


@pytest.fixture
def single_topology(params):
    return build_topology({0: (0.0, 0.0)}, params)


def test_immediate_termination(single_topology, params):
    res = run(single_topology, params, None, {0: Idle()}, max_slots=10, rng=0)
    assert res.transmissions == 0
    assert res.slots_elapsed[0] == 0
    assert res.timed_out == []
    assert res.slots_run == 1


def test_deterministic_delivery_next_slot(pair_topology, params):
    procs = {0: Beacon(0, 1.0, 1, message="hello"), 1: Recorder(2)}
    res = run(pair_topology, params, None, procs, max_slots=10, rng=0)
    heard = res.final_states[1]["heard"]
    assert heard == [(1, 0, "hello")]
    assert res.transmissions == 1
    assert res.deliveries == 1


def test_half_duplex_and_replay(line_topology, params):
    def make():
        return {0: Beacon(0, 0.6, 40, "a"), 1: Beacon(1, 0.6, 40, "b"),
                2: Recorder(41)}
    r1 = run(line_topology, params, None, make(), max_slots=100, rng=3,
             trace_level="full")
    r2 = run(line_topology, params, None, make(), max_slots=100, rng=3,
             trace_level="full")
    assert r1.trace == r2.trace
    assert r1.final_states == r2.final_states
    # half duplex: a deliver event is resolved in the slot it was sent, so a
    # transmitting node can never be a receiver in that same slot
    tx1 = {e.slot for e in r1.trace if e.kind == "transmit" and e.node == 1}
    heard1 = {e.slot for e in r1.trace if e.kind == "deliver" and e.node == 1}
    assert tx1 and heard1
    assert not tx1 & heard1


def test_wake_containment(pair_topology, params):
    # the receiver sleeps through the sender's whole beacon window
    procs = {0: Beacon(0, 1.0, 5), 1: Recorder(3)}
    res = run(pair_topology, params, None, procs, wake={1: 20}, max_slots=40, rng=0)
    assert res.final_states[1]["heard"] == []
    assert res.slots_elapsed[1] == 3


def test_trace_conservation_and_audit(line_topology, params):
    procs = {0: Beacon(0, 0.5, 30), 1: Beacon(1, 0.25, 30), 2: Recorder(31)}
    res = run(line_topology, params, None, procs, max_slots=60, rng=9,
              trace_level="full")
    transmitted = {(e.slot, e.node) for e in res.trace if e.kind == "transmit"}
    for e in res.trace:
        if e.kind == "deliver":
            assert (e.slot, e.payload["sender"]) in transmitted
    report = probability_audit(res, line_topology)
    # nodes 0 and 1 both have the two beacons in range: 0.5 + 0.25
    assert report.max_sum == pytest.approx(0.75)
    assert report.node in (0, 1)
    assert report.ok
    assert res.audit_max == pytest.approx(report.max_sum)


def test_audit_idle_network(single_topology, params):
    res = run(single_topology, params, None, {0: Idle()}, max_slots=5, rng=0)
    assert res.audit_max == 0.0


def test_audit_crowded_region(params):
    # delta_a nodes all in one region, each at p1 = 1/(2*delta_a): sum = 1/2
    pts = {i: (0.01 * i, 0.0) for i in range(10)}
    topo = build_topology(pts, params)
    consts = derive_constants(n=16, delta_a=10)
    procs = {i: Beacon(i, consts.p1, 3) for i in topo.ids}
    res = run(topo, params, consts, procs, max_slots=10, rng=0, trace_level="full")
    assert res.audit_max == pytest.approx(0.5)
    assert probability_audit(res, topo).max_sum == pytest.approx(0.5)


def test_audit_mixed_p1_p2_region(params):
    # 90 nodes at p2 plus delta <= delta_a nodes at p1 stay within 1
    pts = {i: (0.001 * i, 0.0) for i in range(98)}
    topo = build_topology(pts, params)
    consts = derive_constants(n=128, delta_a=97)
    procs = {}
    for i in topo.ids:
        p = consts.p2 if i < 90 else consts.p1
        procs[i] = Beacon(i, p, 2)
    res = run(topo, params, consts, procs, max_slots=6, rng=0)
    expected = 90 * consts.p2 + 8 * consts.p1
    assert res.audit_max == pytest.approx(expected)
    assert res.audit_max <= 1.0


def test_timeout_diagnostic(pair_topology, params):
    class Never(NodeProcess):
        def on_slot(self, now, inbox):
            self.next_wake = None
            return None
    procs = {0: Never(), 1: Idle()}
    res = run(pair_topology, params, None, procs, max_slots=8, rng=0)
    assert res.timed_out == [0]
    assert res.slots_elapsed[0] is None
    assert any("unterminated" in d for d in res.diagnostics)


def test_missing_process_rejected(pair_topology, params):
    with pytest.raises(ValueError, match="without a process"):
        run(pair_topology, params, None, {0: Idle()}, max_slots=5, rng=0)


def test_ideal_deliveries_force_success(line_topology, params):
    procs = {0: Beacon(0, 1.0, 1, "x"), 1: Recorder(2), 2: Recorder(2)}
    res = run(line_topology, params, None, procs, max_slots=10, rng=0,
              deliveries_fn=ideal_deliveries(line_topology))
    assert res.final_states[1]["heard"] == [(1, 0, "x")]
    # node 2 is out of range of node 0 even on the ideal channel
    assert res.final_states[2]["heard"] == []


def test_dense_poll_equivalence(params):
    rng = np.random.default_rng(4)
    pts = {i: tuple(rng.random(2) * 2.5) for i in range(6)}
    topo = build_topology(pts, params)

    def procs():
        return {i: Beacon(i, 0.4, 25, f"m{i}") if i % 2 else Recorder(26)
                for i in topo.ids}

    sparse = run(topo, params, None, procs(), max_slots=60, rng=7,
                 trace_level="full")
    dense = run(topo, params, None, procs(), max_slots=60, rng=7,
                trace_level="full", dense_poll=True)
    assert sparse.trace == dense.trace
    assert sparse.final_states == dense.final_states


def test_trace_jsonl_roundtrip(tmp_path, pair_topology, params):
    procs = {0: Beacon(0, 1.0, 2, "ping"), 1: Recorder(3)}
    res = run(pair_topology, params, None, procs, max_slots=10, rng=0,
              trace_level="full")
    path = tmp_path / "trace.jsonl"
    write_trace(res.trace, path)
    events = read_trace(path)
    assert len(events) == len(res.trace)
    assert probability_audit(events, pair_topology).max_sum == pytest.approx(
        probability_audit(res, pair_topology).max_sum)


def test_probability_cap_enforced(pair_topology, params):
    class Hot(Beacon):
        def __init__(self):
            super().__init__(0, 0.9, 3)
            self.probability_cap = 0.5
    with pytest.raises(ValueError, match="cap"):
        run(pair_topology, params, None, {0: Hot(), 1: Idle()}, max_slots=5, rng=0)
