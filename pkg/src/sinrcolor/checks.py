"""Validators and trace oracles for experiment runs.

Every checker reports witnesses rather than raising, so harness runs can
record failures per seed; each one also has a negative test in the suite
feeding it a hand-built violating instance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .engine import RunResult, TraceEvent
from .sinr import NodeId, Topology


# ---------------------------------------------------------------------------
# Coloring validity
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    valid: bool
    conflict_edges: list[tuple[NodeId, NodeId]]
    palette_used: int
    missing: list[NodeId]
    over_palette: list[tuple[NodeId, int]]


def validate_coloring(topology: Topology, colors: dict[NodeId, Optional[int]],
                      palette_max: int) -> ValidationReport:
    """Report every monochromatic edge and every color above palette_max.

    A node with no color (None or absent) is reported as missing and makes
    the coloring invalid, but never raises.
    """
    conflicts = []
    missing = [v for v in topology.ids if colors.get(v) is None]
    over = [(v, colors[v]) for v in topology.ids
            if colors.get(v) is not None and not 0 <= colors[v] <= palette_max]
    for v in topology.ids:
        cv = colors.get(v)
        if cv is None:
            continue
        for w in topology.neighbors[v]:
            if w > v and colors.get(w) == cv:
                conflicts.append((v, w))
    used = len({c for c in colors.values() if c is not None})
    return ValidationReport(
        valid=not conflicts and not missing and not over,
        conflict_edges=conflicts, palette_used=used,
        missing=missing, over_palette=over,
    )


@dataclass
class MisReport:
    independent: bool
    maximal: bool
    adjacent_winners: list[tuple[NodeId, NodeId]]
    uncovered: list[NodeId]

    @property
    def ok(self) -> bool:
        return self.independent and self.maximal


def verify_mis(topology: Topology, winners: set[NodeId]) -> MisReport:
    """Check independence (no two winners adjacent) and maximality (every
    non-winner has a winner neighbor), with witnesses."""
    unknown = winners - set(topology.ids)
    if unknown:
        raise ValueError(f"winners outside the topology: {sorted(unknown)}")
    adjacent = [(v, w) for v in sorted(winners)
                for w in topology.neighbors[v] if w in winners and w > v]
    uncovered = [v for v in topology.ids
                 if v not in winners and not any(w in winners for w in topology.neighbors[v])]
    return MisReport(independent=not adjacent, maximal=not uncovered,
                     adjacent_winners=adjacent, uncovered=uncovered)


# ---------------------------------------------------------------------------
# Geometric packing checks
# ---------------------------------------------------------------------------

@dataclass
class GeometricReport:
    leader_packing_max: int
    leader_packing_bound: int
    leader_packing_witness: Optional[NodeId]
    same_color_max: int
    same_color_witness: Optional[tuple[NodeId, int]]
    active_max: int
    active_bound: int
    active_witness: Optional[tuple[NodeId, int]]
    audit_max: float
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def leader_packing(topology: Topology, leaders: set[NodeId]) -> tuple[int, Optional[NodeId]]:
    """Max number of leaders within distance 2*r_b of any node."""
    worst, witness = 0, None
    lead_idx = [topology.index[v] for v in sorted(leaders)]
    if not lead_idx:
        return 0, None
    counts = (topology.dist[:, lead_idx] <= 2.0 * topology.r_b).sum(axis=1)
    j = int(np.argmax(counts))
    return int(counts[j]), topology.ids[j]


def same_color_per_region(topology: Topology, colors: dict[NodeId, int]
                          ) -> tuple[int, Optional[tuple[NodeId, int]]]:
    """Max count, over nodes v and colors x, of x-colored nodes in v's
    broadcasting region (at most 5 under any valid coloring)."""
    worst, witness = 0, None
    for v in topology.ids:
        tally: dict[int, int] = {}
        for u in topology.region(v):
            cu = colors.get(u)
            if cu is None:
                continue
            tally[cu] = tally.get(cu, 0) + 1
        if tally:
            x = max(tally, key=lambda c: (tally[c], -c))
            if tally[x] > worst:
                worst, witness = tally[x], (v, x)
    return worst, witness


def active_intervals_from_trace(result: RunResult) -> dict[NodeId, tuple[int, int]]:
    """Per node, the global slot span [enter mis2 first, colored/terminated]
    during which it was active at the second level."""
    start: dict[NodeId, int] = {}
    end: dict[NodeId, int] = {}
    for ev in result.trace:
        if ev.kind == "state" and ev.payload.get("name") == "mis2":
            start.setdefault(ev.node, ev.slot)
        elif ev.kind == "state" and ev.payload.get("name") in ("colored2", "colored1"):
            if ev.node in start:
                end[ev.node] = ev.slot
    spans = {}
    for v, s in start.items():
        spans[v] = (s, end.get(v, result.slots_run))
    return spans


def max_active_per_region(topology: Topology, spans: dict[NodeId, tuple[int, int]]
                          ) -> tuple[int, Optional[tuple[NodeId, int]]]:
    """Max, over nodes and slots, of second-level-active nodes in a region.

    Sweeps each region's span endpoints instead of iterating slots.
    """
    worst, witness = 0, None
    for v in topology.ids:
        events = []
        for u in topology.region(v):
            if u in spans:
                s, e = spans[u]
                events.append((s, 1))
                events.append((e, -1))
        if not events:
            continue
        events.sort()
        cur = 0
        for slot, delta in events:
            cur += delta
            if cur > worst:
                worst, witness = cur, (v, slot)
    return worst, witness


def geometric_checks(topology: Topology, result: RunResult,
                     leaders: set[NodeId], input_colors: dict[NodeId, int],
                     *, leader_bound: int = 18,
                     active_bound: Optional[int] = None) -> GeometricReport:
    """Packing assertions for an asynchronous run.

    The active-per-region bound defaults to 18 leaders times 5 same-colored
    followers per leader; the geometry does not shrink with a scaled-down k,
    so the default stays 90 unless the caller recomputes it.
    """
    if active_bound is None:
        active_bound = leader_bound * 5
    lp, lp_wit = leader_packing(topology, leaders)
    sc, sc_wit = same_color_per_region(topology, input_colors)
    spans = active_intervals_from_trace(result)
    am, am_wit = max_active_per_region(topology, spans)
    rep = GeometricReport(
        leader_packing_max=lp, leader_packing_bound=leader_bound,
        leader_packing_witness=lp_wit,
        same_color_max=sc, same_color_witness=sc_wit,
        active_max=am, active_bound=active_bound, active_witness=am_wit,
        audit_max=result.audit_max,
    )
    if lp > leader_bound:
        rep.failures.append(f"leader packing {lp} > {leader_bound} near node {lp_wit}")
    if sc > 5:
        rep.failures.append(f"{sc} same-colored nodes in one region (witness {sc_wit})")
    if am > active_bound:
        rep.failures.append(f"{am} active nodes in one region (witness {am_wit})")
    if result.audit_max > 1.0 + 1e-9:
        rep.failures.append(f"probability audit max {result.audit_max:.4f} > 1")
    return rep


# ---------------------------------------------------------------------------
# Conflict decay
# ---------------------------------------------------------------------------

def phase_colors_from_trace(trace: list[TraceEvent]) -> dict[int, dict[NodeId, int]]:
    """Per-phase colors of stage-one nodes, from their `phase` events."""
    phases: dict[int, dict[NodeId, int]] = {}
    for ev in trace:
        if ev.kind == "phase":
            phases.setdefault(ev.payload["phase"], {})[ev.node] = ev.payload["color"]
    return phases


def conflict_counts(topology: Topology, trace: list[TraceEvent]) -> list[int]:
    """Ground-truth conflicted-node count per phase: nodes sharing their
    phase color with at least one neighbor (whether they know it or not)."""
    phases = phase_colors_from_trace(trace)
    counts = []
    for t in sorted(phases):
        colors = phases[t]
        counts.append(sum(
            1 for v in topology.ids
            if any(colors.get(w) == colors.get(v) and colors.get(v) is not None
                   for w in topology.neighbors[v])
        ))
    return counts


@dataclass
class DecayFit:
    ratio: float
    phases_used: int
    degenerate: bool


def conflict_decay(counts: list[float]) -> DecayFit:
    """Least-squares slope of log(count+1) over the decaying prefix,
    reported as a per-phase ratio. Trailing all-zero phases are excluded;
    an all-zero series reports ratio 0 with the degenerate flag."""
    last = max((i for i, c in enumerate(counts) if c > 0), default=-1)
    if last < 0:
        return DecayFit(ratio=0.0, phases_used=0, degenerate=True)
    prefix = counts[:last + 1]
    if len(prefix) < 2:
        return DecayFit(ratio=0.0, phases_used=len(prefix), degenerate=True)
    y = np.log(np.asarray(prefix, dtype=float) + 1.0)
    x = np.arange(len(prefix), dtype=float)
    slope = np.polyfit(x, y, 1)[0]
    return DecayFit(ratio=float(math.exp(slope)), phases_used=len(prefix),
                    degenerate=False)
