"""Asynchronous Delta+1 color reduction.

Nodes wake at arbitrary slots holding a temporary color from a valid
d-coloring. A first-level MIS elects leaders, which take color 0 and run a
periodic schedule that assigns every temporary color an active interval of
2*k^2*kappa2 slots. Every other node asks its leader for the countdown to
its color's next interval, waits, and then competes in second-level MIS
rounds inside the interval; each winner picks a free color from {1..Delta},
announces it, and keeps rebroadcasting it at p1 so that late wakers learn
the colors already taken.

The MIS rounds are driven by counters: after listening for kappa slots a
node starts its counter at the largest non-positive value outside every
competitor's kappa-band (xi below) and increments it each slot, resetting
whenever a competing counter lands within kappa of its own; crossing kappa
wins. Counter bands guarantee a winner has kappa slots to announce before
any competitor can cross.
"""

from __future__ import annotations

from collections import deque
from typing import Callable, Iterable, Mapping, NamedTuple, Optional

from .engine import NodeProcess
from .params import ProtocolConstants
from .sinr import NodeId, TransmissionIntent
from .sync_coloring import FinalColor


# ---------------------------------------------------------------------------
# Messages
# ---------------------------------------------------------------------------

class MA(NamedTuple):
    """MIS counter broadcast."""
    level: int
    sender: NodeId
    counter: int


class MC1Color(NamedTuple):
    """Leader success announcement / periodic beacon (color is always 0)."""
    sender: NodeId
    color: int


class MC1Answer(NamedTuple):
    """Leader's reply to a schedule request: t slots until the target's
    active interval (t <= 0, correct on arrival)."""
    sender: NodeId
    target: NodeId
    t: int


class MC2(NamedTuple):
    """Second-level MIS success announcement carrying the chosen color."""
    sender: NodeId
    color: int


class MR(NamedTuple):
    """Schedule request from a non-leader to its chosen leader."""
    sender: NodeId
    leader: NodeId
    tmp_color: int


# ---------------------------------------------------------------------------
# Schedule helpers
# ---------------------------------------------------------------------------

def xi(P: Iterable[NodeId], d: Mapping[NodeId, int], kappa: int) -> int:
    """Largest c <= 0 with c outside [d(w)-kappa, d(w)+kappa] for all w in P.

    The maximum is either 0 or sits directly below some competitor's band,
    so only those candidates need checking.
    """
    if kappa < 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    values = [d[w] for w in P]
    candidates = [0] + [v - kappa - 1 for v in values]
    for c in sorted(candidates, reverse=True):
        if c > 0:
            continue
        if all(not (v - kappa <= c <= v + kappa) for v in values):
            return c
    raise AssertionError("unreachable: a valid counter value always exists")


def tau(tmp_color: int, c_prime: int, d: int, kappa2: int, k: int) -> int:
    """Countdown t <= 0 to the next active interval of `tmp_color` in a
    leader schedule with counter value c_prime.

    -t is the minimal value congruent to tmp_color*2k^2*kappa2 - c_prime
    modulo d*2k^2*kappa2 that is at least kappa2 (so the answer can be
    transmitted w.h.p. before the interval starts).
    """
    if kappa2 < 1:
        raise ValueError(f"kappa2 must be >= 1, got {kappa2}")
    if k < 1 or d < 1:
        raise ValueError("k and d must be >= 1")
    if not 0 <= tmp_color < d:
        raise ValueError(f"tmp_color {tmp_color} outside palette of size {d}")
    interval = 2 * k * k * kappa2
    period = d * interval
    wait = (tmp_color * interval - c_prime) % period
    if wait < kappa2:
        wait += period
    return -wait


# ---------------------------------------------------------------------------
# MIS counter core (shared by the standalone process and the full stack)
# ---------------------------------------------------------------------------

class _MisCore:
    """Listen-then-compete counter mechanics for one MIS execution.

    Counters are stored as offsets against the current slot so that the
    per-slot increment of c_v and every d_v(w) is implicit.
    """

    def __init__(self, level: int, node: NodeId, kappa: int, p: float, start: int):
        self.level = level
        self.node = node
        self.kappa = kappa
        self.p = p
        self.listen_end = start + kappa
        self.P: dict[NodeId, int] = {}  # competitor -> counter base (value = base + now)
        self.c_base: Optional[int] = None  # None while listening

    def _fail_msg(self, m) -> bool:
        return (isinstance(m, MC1Color) and self.level == 1) or \
               (isinstance(m, MC2) and self.level == 2)

    def _record(self, now: int, m: MA) -> None:
        if m.level == self.level and m.sender != self.node:
            self.P[m.sender] = m.counter - now

    def _xi(self, now: int) -> int:
        return xi(self.P, {w: b + now for w, b in self.P.items()}, self.kappa)

    def drop(self, w: NodeId) -> None:
        self.P.pop(w, None)

    def slot(self, now: int, msgs: list[tuple[NodeId, object]]):
        """Advance one slot. Returns (outcome, intent) where outcome is None,
        ("win",) or ("fail", winner)."""
        if now < self.listen_end or self.c_base is None:
            # listen semantics (also covers the slot where competing starts:
            # the previous slot's receptions still belong to the listen phase)
            for s, m in msgs:
                if isinstance(m, MA):
                    self._record(now, m)
            for s, m in msgs:
                if self._fail_msg(m):
                    return ("fail", s), None
            if now < self.listen_end:
                return None, None
            # first competing slot: seed the counter with its post-increment
            # value xi+1, then fall through; later slots increment implicitly
            self.c_base = self._xi(now) + 1 - now
            msgs = []
        c = self.c_base + now
        if c > self.kappa:
            return ("win",), None
        for s, m in msgs:
            if self._fail_msg(m):
                return ("fail", s), None
        intent = TransmissionIntent(self.node, self.p, MA(self.level, self.node, c))
        for s, m in msgs:
            if isinstance(m, MA) and m.level == self.level and m.sender != self.node:
                self.P[m.sender] = m.counter - now
                if abs(c - m.counter) <= self.kappa:
                    c = self._xi(now)
                    self.c_base = c - now
        return None, intent

    def next_wake(self, now: int) -> int:
        return self.listen_end if now < self.listen_end else now + 1

    def counter(self, now: int) -> Optional[int]:
        return None if self.c_base is None else self.c_base + now


class MisProcess(NodeProcess):
    """Standalone MIS(level) participant, mainly for MIS-only experiments.

    Winners announce their success at p2 for kappa2 slots and then keep
    beaconing at p1. Losers record the winner and stop, unless next_on_fail
    supplies a follow-on process to delegate to.
    """

    def __init__(self, level: int, node: NodeId, constants: ProtocolConstants,
                 rng=None, next_on_fail: Optional[Callable[[NodeId], Optional[NodeProcess]]] = None):
        super().__init__()
        if level not in (1, 2):
            raise ValueError(f"level must be 1 or 2, got {level}")
        self.level = level
        self.node = node
        self.consts = constants
        kappa = constants.kappa1 if level == 1 else constants.kappa2
        p = constants.p1 if level == 1 else constants.p2
        self.probability_cap = max(constants.p1, constants.p2)
        self.core = _MisCore(level, node, kappa, p, start=0)
        self.next_on_fail = next_on_fail
        self.won: Optional[bool] = None
        self.lost_to: Optional[NodeId] = None
        self.announce_end: Optional[int] = None
        self.delegate: Optional[NodeProcess] = None
        self._delegate_at = 0
        self.next_wake = self.core.listen_end

    def _success_msg(self):
        if self.level == 1:
            return MC1Color(self.node, 0)
        return MC2(self.node, 0)

    def on_slot(self, now, inbox):
        if self.delegate is not None:
            ret = self.delegate.on_slot(now - self._delegate_at, inbox)
            self.steady_intent = self.delegate.steady_intent
            nw = self.delegate.next_wake
            self.next_wake = None if nw is None else nw + self._delegate_at
            return ret
        msgs = _flatten(inbox)
        if self.won:
            if self.announce_end is not None and now >= self.announce_end:
                self.steady_intent = TransmissionIntent(
                    self.node, self.consts.p1, self._success_msg())
                self.announce_end = None
                self.next_wake = None
            return None
        if self.won is None:
            outcome, intent = self.core.slot(now, msgs)
            if outcome is None:
                self.next_wake = self.core.next_wake(now)
                return intent
            if outcome[0] == "win":
                self.won = True
                self.emit("state", name=f"mis{self.level}-won")
                self.announce_end = now + self.consts.kappa2
                self.steady_intent = TransmissionIntent(
                    self.node, self.consts.p2, self._success_msg())
                self.next_wake = self.announce_end
                return None
            self.won = False
            self.lost_to = outcome[1]
            self.emit("state", name=f"mis{self.level}-lost", winner=self.lost_to)
            self.steady_intent = None
            self.next_wake = None
            if self.next_on_fail is not None:
                self.delegate = self.next_on_fail(self.lost_to)
                if self.delegate is not None:
                    self._delegate_at = now
                    ret = self.delegate.on_slot(0, [])
                    self.steady_intent = self.delegate.steady_intent
                    nw = self.delegate.next_wake
                    self.next_wake = None if nw is None else nw + now
                    return ret
        return None

    def is_terminated(self):
        if self.delegate is not None:
            return self.delegate.is_terminated()
        return self.won is not None

    def snapshot(self):
        if self.delegate is not None:
            return {"algo": f"mis{self.level}", "won": False,
                    "lost_to": self.lost_to, **self.delegate.snapshot()}
        return {"algo": f"mis{self.level}", "won": bool(self.won),
                "lost_to": self.lost_to}


# ---------------------------------------------------------------------------
# Full asynchronous color-reduction stack
# ---------------------------------------------------------------------------

def _flatten(inbox):
    out = []
    for sender, m in inbox:
        if isinstance(m, tuple) and not hasattr(m, "_fields"):
            out.extend((sender, part) for part in m)
        else:
            out.append((sender, m))
    return out


class _Job(NamedTuple):
    target: NodeId
    window_end: int
    interval_start: int


class AsyncColorReductionProcess(NodeProcess):
    """Per-node state machine wiring MIS(1) -> Colored(1) | Level2 ->
    MIS(2) -> Colored(2), with the available-color set maintained across
    every state ("do continuously").
    """

    def __init__(self, node: NodeId, tmp_color: int, palette_size: int,
                 delta: int, constants: ProtocolConstants, rng, *,
                 _start: str = "mis1"):
        super().__init__()
        if not 0 <= tmp_color < palette_size:
            raise ValueError(f"tmp_color {tmp_color} outside palette of size {palette_size}")
        if delta < 0:
            raise ValueError(f"delta must be >= 0, got {delta}")
        self.node = node
        self.tmp_color = tmp_color
        self.palette_size = palette_size
        self.delta = delta
        self.consts = constants
        self.rng = rng
        self.probability_cap = constants.p1 + constants.p2  # leader serve bundle
        self.F = set(range(1, delta + 1))
        self.color: Optional[int] = None
        self.failed = False
        self.leader: Optional[NodeId] = None
        self.core: Optional[_MisCore] = None
        self.mis2_executions = 0
        self.interval_start: Optional[int] = None
        self.interval_end: Optional[int] = None
        self.interval_expired_flagged = False
        # leader bookkeeping
        self.queue: deque = deque()
        self.queued: set[NodeId] = set()
        self.job: Optional[_Job] = None
        self.serve_start: Optional[int] = None
        self.announce_end: Optional[int] = None
        self._terminated = False
        self.state = _start
        if _start == "mis1":
            self.core = _MisCore(1, node, constants.kappa1, constants.p1, start=0)
            self.next_wake = self.core.listen_end

    # -- constructors for entering mid-protocol (used by tests/tools) ------

    @classmethod
    def as_level2(cls, node, leader, tmp_color, palette_size, delta, constants, rng):
        proc = cls(node, tmp_color, palette_size, delta, constants, rng,
                   _start="level2-request")
        proc._enter_level2_request(0, leader)
        return proc

    @classmethod
    def as_colored(cls, level, node, available, palette_size, delta, constants, rng):
        proc = cls(node, 0, max(palette_size, 1), delta, constants, rng,
                   _start="colored")
        if available is not None:
            proc.F = set(available)
        if level == 1:
            proc._enter_colored1(0)
        else:
            proc._enter_colored2(0)
        return proc

    # -- state entries ------------------------------------------------------

    def _enter_level2_request(self, now, leader):
        self.leader = leader
        self.core = None
        self.state = "level2-request"
        self.emit("state", name="level2-request", leader=leader)
        self.steady_intent = TransmissionIntent(
            self.node, self.consts.p1, MR(self.node, leader, self.tmp_color))
        self.next_wake = None

    def _enter_level2_wait(self, now, t):
        wait = -t
        if wait < 0:
            raise ValueError(f"received positive countdown t={t}")
        self.interval_start = now + wait
        self.interval_end = self.interval_start + self.consts.active_interval
        self.state = "level2-wait"
        self.emit("state", name="level2-wait", wait=wait)
        self.steady_intent = None
        if wait == 0:
            self._enter_mis2(now)
        else:
            self.next_wake = self.interval_start

    def _enter_mis2(self, now):
        self.mis2_executions += 1
        self.core = _MisCore(2, self.node, self.consts.kappa2, self.consts.p2,
                             start=now)
        self.state = "mis2"
        self.emit("state", name="mis2", execution=self.mis2_executions)
        self.steady_intent = None
        self.next_wake = self.core.listen_end

    def _enter_colored1(self, now):
        self.color = 0
        self.core = None
        self._terminated = True
        self.state = "colored1-announce"
        self.emit("state", name="colored1", color=0)
        self.announce_end = now + self.consts.kappa2
        self.steady_intent = TransmissionIntent(
            self.node, self.consts.p2, MC1Color(self.node, 0))
        self.next_wake = self.announce_end

    def _enter_colored2(self, now):
        self.core = None
        self._terminated = True
        if not self.F:
            self.failed = True
            self.color = None
            self.state = "dead"
            self.emit("error", reason="available colors exhausted")
            self.steady_intent = None
            self.next_wake = None
            return
        pool = sorted(self.F)
        self.color = pool[int(self.rng.integers(0, len(pool)))]
        self.state = "colored2-announce"
        self.emit("state", name="colored2", color=self.color,
                  executions=self.mis2_executions)
        self.announce_end = now + self.consts.kappa2
        self.steady_intent = TransmissionIntent(
            self.node, self.consts.p2, MC2(self.node, self.color))
        self.next_wake = self.announce_end

    # -- slot dispatch -------------------------------------------------------

    def on_slot(self, now, inbox):
        msgs = _flatten(inbox)
        for s, m in msgs:
            if isinstance(m, (MC2, FinalColor)):
                self.F.discard(m.color)
                if self.core is not None:
                    self.core.drop(s)
            elif isinstance(m, MC1Color):
                self.F.discard(m.color)
            elif isinstance(m, MR) and self.core is not None:
                # the sender left its first-level MIS; retire its counter
                self.core.drop(s)
        state = self.state
        if state == "mis1":
            return self._mis1_slot(now, msgs)
        if state == "level2-request":
            return self._request_slot(now, msgs)
        if state == "level2-wait":
            if now >= self.interval_start:
                self._enter_mis2(now)
                return self._mis2_core_slot(now, msgs)
            return None
        if state == "mis2":
            return self._mis2_slot(now, msgs)
        if state == "colored1-announce":
            self._collect_requests(msgs)
            if now >= self.announce_end:
                self.state = "colored1-serve"
                self.serve_start = now
                self.announce_end = None
                self._leader_idle()
                return self._serve_slot(now)
            return None
        if state == "colored1-serve":
            self._collect_requests(msgs)
            return self._serve_slot(now)
        if state == "colored2-announce":
            if now >= self.announce_end:
                self.state = "colored2-keepalive"
                self.steady_intent = TransmissionIntent(
                    self.node, self.consts.p1, FinalColor(self.node, self.color))
                self.next_wake = None
            return None
        # colored2-keepalive / dead: color stripping above is all that remains
        return None

    # -- MIS(1) ---------------------------------------------------------------

    def _mis1_slot(self, now, msgs):
        outcome, intent = self.core.slot(now, msgs)
        if outcome is None:
            self.next_wake = self.core.next_wake(now)
            return intent
        if outcome[0] == "win":
            self._enter_colored1(now)
        else:
            self._enter_level2_request(now, outcome[1])
        return None

    # -- Level2 ---------------------------------------------------------------

    def _request_slot(self, now, msgs):
        answers = [m for _, m in msgs
                   if isinstance(m, MC1Answer) and m.target == self.node
                   and m.sender == self.leader]
        if answers:
            self._enter_level2_wait(now, answers[0].t)
        return None

    def _mis2_slot(self, now, msgs):
        if now >= self.interval_end and not self.interval_expired_flagged:
            self.interval_expired_flagged = True
            self.emit("diagnostic", reason="active interval expired without a win",
                      executions=self.mis2_executions)
        return self._mis2_core_slot(now, msgs)

    def _mis2_core_slot(self, now, msgs):
        outcome, intent = self.core.slot(now, msgs)
        if outcome is None:
            self.next_wake = self.core.next_wake(now)
            return intent
        if outcome[0] == "win":
            self._enter_colored2(now)
        else:
            # lost this execution: listen afresh and try again
            self._enter_mis2(now)
        return None

    # -- Colored(1): leader schedule ------------------------------------------

    def _collect_requests(self, msgs):
        for s, m in msgs:
            if isinstance(m, MR) and m.leader == self.node:
                busy_with = self.job.target if self.job is not None else None
                if m.sender != busy_with and m.sender not in self.queued:
                    self.queue.append((m.sender, m.tmp_color))
                    self.queued.add(m.sender)

    def _leader_idle(self):
        self.steady_intent = TransmissionIntent(
            self.node, self.consts.p1, MC1Color(self.node, 0))
        self.next_wake = None

    def _serve_slot(self, now):
        if self.job is not None and now >= self.job.window_end:
            self.job = None
        if self.job is None and self.queue:
            target, tmp = self.queue.popleft()
            self.queued.discard(target)
            c_prime = now - self.serve_start + 1
            t0 = tau(tmp, c_prime, self.palette_size, self.consts.kappa2,
                     self.consts.k)
            self.job = _Job(target=target, window_end=now + self.consts.kappa2,
                            interval_start=now + (-t0))
            self.emit("state", name="serve", target=target, t=t0)
        if self.job is None:
            self._leader_idle()
            return None
        # answer countdown is encoded so it is exact on next-slot arrival
        t_msg = (now + 1) - self.job.interval_start
        self.steady_intent = None
        self.next_wake = now + 1
        return TransmissionIntent(
            self.node, self.consts.p1 + self.consts.p2,
            (MC1Color(self.node, 0), MC1Answer(self.node, self.job.target, t_msg)))

    # -- bookkeeping ------------------------------------------------------------

    def is_terminated(self):
        return self._terminated

    def snapshot(self):
        return {
            "algo": "async", "state": self.state, "color": self.color,
            "tmp_color": self.tmp_color, "leader": self.leader,
            "failed": self.failed, "mis2_executions": self.mis2_executions,
            "interval_expired": self.interval_expired_flagged,
        }


# -- named constructors -------------------------------------------------

def async_color_reduction_process(node: NodeId, tmp_color: int, palette_size: int,
                                  delta: int, constants: ProtocolConstants,
                                  rng) -> AsyncColorReductionProcess:
    return AsyncColorReductionProcess(node, tmp_color, palette_size, delta,
                                      constants, rng)


def mis_process(level: int, node: NodeId, constants: ProtocolConstants, rng=None,
                next_on_fail=None) -> MisProcess:
    return MisProcess(level, node, constants, rng, next_on_fail)


def colored_process(level: int, node: NodeId, chosen_color_source,
                    palette_size: int, delta: int, constants: ProtocolConstants,
                    rng) -> AsyncColorReductionProcess:
    return AsyncColorReductionProcess.as_colored(
        level, node, chosen_color_source, palette_size, delta, constants, rng)


def level2_process(node: NodeId, leader: NodeId, tmp_color: int, palette_size: int,
                   delta: int, constants: ProtocolConstants,
                   rng) -> AsyncColorReductionProcess:
    return AsyncColorReductionProcess.as_level2(
        node, leader, tmp_color, palette_size, delta, constants, rng)
