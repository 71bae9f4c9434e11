"""Physical layer: geometry, communication graph, and SINR slot resolution.

A transmission from u to v succeeds when the received power of u's signal,
divided by the summed received power of all other simultaneous transmitters
plus background noise, reaches the hardware threshold beta:

    (P / d(u,v)^alpha) / (sum_w P / d(w,v)^alpha + N) >= beta

Receivers additionally discard anything transmitted from beyond the
broadcasting range r_b (the RSSI discard rule), so the communication graph
is the unit-disk-style graph with radius r_b even though the raw SINR
predicate may hold at larger distances.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Any, Iterable, NamedTuple, Optional

import numpy as np

NodeId = int


# ---------------------------------------------------------------------------
# Parameters and geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhysicalParams:
    """Hardware and environment constants.

    alpha:   path-loss exponent, must exceed 2.
    beta:    SINR decoding threshold.
    noise:   background noise power N.
    power:   per-node transmission power P (all nodes share it).
    epsilon: broadcast margin; r_b may use at most (1 - epsilon) of the
             noise-only transmission range, otherwise no spatial reuse.
    r_b:     broadcasting range defining the communication graph.
    """

    alpha: float
    beta: float
    noise: float
    power: float
    epsilon: float
    r_b: float

    def __post_init__(self):
        if not self.alpha > 2:
            raise ValueError(f"alpha must be > 2, got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not self.noise > 0:
            raise ValueError(f"noise must be > 0, got {self.noise}")
        if not self.power > 0:
            raise ValueError(f"power must be > 0, got {self.power}")
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must be in (0,1), got {self.epsilon}")
        if not self.r_b > 0:
            raise ValueError(f"r_b must be > 0, got {self.r_b}")
        limit = (1.0 - self.epsilon) * transmission_range(self)
        if self.r_b > limit * (1 + 1e-12):
            raise ValueError(
                f"r_b={self.r_b} exceeds (1-epsilon)*r_T={limit:.6g}; "
                "no spatial reuse is possible"
            )


class Point(NamedTuple):
    x: float
    y: float


def transmission_range(params: PhysicalParams) -> float:
    """Maximum noise-only decodable distance, (P / (beta * N))^(1/alpha)."""
    return (params.power / (params.beta * params.noise)) ** (1.0 / params.alpha)


def proximity_range(params: PhysicalParams) -> float:
    """Interference-accounting radius r_A around a node.

    r_A = r_B * (3^3 * 2^alpha * beta * (alpha-1)/(alpha-2))^(1/(alpha-2)),
    always larger than 2*r_B.
    """
    a, b = params.alpha, params.beta
    if not a > 2:
        raise ValueError(f"alpha must be > 2, got {a}")
    base = 27.0 * (2.0 ** a) * b * (a - 1.0) / (a - 2.0)
    return params.r_b * base ** (1.0 / (a - 2.0))


class Topology:
    """Node positions plus the derived communication graph.

    neighbors[v] holds every node within distance r_b of v (excluding v);
    region(v) is the same set including v itself (the broadcasting region).
    delta is the maximum degree, delta_a the maximum number of other nodes
    within the proximity range r_a of any node.
    """

    def __init__(self, positions: dict[NodeId, Point], params: PhysicalParams):
        self.positions = positions
        self.r_b = params.r_b
        ids = tuple(sorted(positions))
        self.ids = ids
        self.index = {nid: i for i, nid in enumerate(ids)}
        xy = np.array([positions[nid] for nid in ids], dtype=float)
        self.xy = xy
        diff = xy[:, None, :] - xy[None, :, :]
        self.dist = np.sqrt(diff[..., 0] ** 2 + diff[..., 1] ** 2)

        n = len(ids)
        off_diag = ~np.eye(n, dtype=bool)
        if n > 1 and np.any((self.dist == 0.0) & off_diag):
            warnings.warn("distinct nodes share exact coordinates; "
                          "colocated pairs can never decode each other")

        within = (self.dist <= params.r_b) & off_diag
        self.neighbors = {
            ids[i]: tuple(ids[j] for j in np.flatnonzero(within[i]))
            for i in range(n)
        }
        self._regions = {
            v: tuple(sorted(self.neighbors[v] + (v,))) for v in ids
        }
        self.delta = max(len(nb) for nb in self.neighbors.values())
        self.r_a = proximity_range(params)
        prox = (self.dist < self.r_a) & off_diag
        self.delta_a = int(prox.sum(axis=1).max()) if n > 1 else 0

    def __len__(self) -> int:
        return len(self.ids)

    def distance(self, u: NodeId, v: NodeId) -> float:
        return float(self.dist[self.index[u], self.index[v]])

    def region(self, v: NodeId) -> tuple[NodeId, ...]:
        """Nodes within r_b of v, including v itself."""
        return self._regions[v]

    def degree(self, v: NodeId) -> int:
        return len(self.neighbors[v])


def build_topology(positions: dict[NodeId, Point | tuple[float, float]],
                   params: PhysicalParams) -> Topology:
    """Derive the communication graph from node positions.

    Colocated distinct nodes are legal in the model but flagged with a
    warning, since a colocated pair can never decode each other.
    """
    if not positions:
        raise ValueError("topology needs at least one node")
    pts = {}
    for nid, p in positions.items():
        x, y = float(p[0]), float(p[1])
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValueError(f"node {nid} has non-finite coordinates {p!r}")
        pts[int(nid)] = Point(x, y)
    if len(pts) != len(positions):
        raise ValueError("duplicate node ids")
    return Topology(pts, params)


def save_topology(topo: Topology, path) -> None:
    """Write the `rb <value>` header followed by one `id x y` line per node."""
    with open(path, "w") as fh:
        fh.write(f"rb {topo.r_b!r}\n")
        for nid in topo.ids:
            p = topo.positions[nid]
            fh.write(f"{nid} {p.x!r} {p.y!r}\n")


def load_positions(path) -> tuple[dict[NodeId, Point], float]:
    """Read a topology file; returns (positions, r_b from the header)."""
    r_b = None
    positions: dict[NodeId, Point] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "rb":
                r_b = float(parts[1])
                continue
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'id x y', got {line!r}")
            positions[int(parts[0])] = Point(float(parts[1]), float(parts[2]))
    if r_b is None:
        raise ValueError(f"{path}: missing 'rb <value>' header line")
    if not positions:
        raise ValueError(f"{path}: no nodes")
    return positions, r_b


# ---------------------------------------------------------------------------
# Slot resolution
# ---------------------------------------------------------------------------

class TransmissionIntent(NamedTuple):
    """A node's offer to transmit `message` this slot with `probability`."""
    sender: NodeId
    probability: float
    message: Any


@dataclass
class SlotOutcome:
    transmitted: set[NodeId]
    delivered: dict[NodeId, list[tuple[NodeId, Any]]]


def sinr_feasible(sender: NodeId, receiver: NodeId, simultaneous: Iterable[NodeId],
                  topology: Topology, params: PhysicalParams) -> bool:
    """Per-link SINR predicate given the set of simultaneous transmitters.

    `simultaneous` may include the sender itself; every other member is an
    interferer. A colocated interferer (distance 0 to the receiver) always
    kills reception; a colocated sender is degenerate and rejected.
    """
    if sender == receiver:
        raise ValueError("sender == receiver")
    others = set(simultaneous) - {sender}
    if receiver in others:
        raise ValueError("a transmitting node does not receive")
    d_sr = topology.distance(sender, receiver)
    if d_sr == 0.0:
        raise ValueError("colocated sender/receiver pair is degenerate")
    signal = params.power / d_sr ** params.alpha
    interference = 0.0
    for w in sorted(others):
        d = topology.distance(w, receiver)
        if d == 0.0:
            return False
        interference += params.power / d ** params.alpha
    return signal / (interference + params.noise) >= params.beta


class Channel:
    """Precomputed received-power matrix and per-sender receiver candidates.

    Cache used by the engine so repeated resolve_slot calls on one topology
    avoid rebuilding the n x n power matrix; the math is identical to the
    plain sinr_feasible path.
    """

    def __init__(self, topology: Topology, params: PhysicalParams):
        self.topology = topology
        self.params = params
        with np.errstate(divide="ignore"):
            pwr = params.power / topology.dist ** params.alpha
        np.fill_diagonal(pwr, 0.0)  # a node never interferes with itself
        self.pwr = pwr
        # candidate receivers per sender: in range, not self, not colocated
        self.candidates = {
            u: tuple(v for v in topology.neighbors[u] if topology.distance(u, v) > 0.0)
            for u in topology.ids
        }

    def deliveries(self, transmitters: list[NodeId],
                   receivers: Optional[set[NodeId]] = None) -> dict[NodeId, list[NodeId]]:
        """Map sender -> receivers that decode it, given who transmits.

        `receivers` optionally restricts the candidate set (the engine passes
        the awake nodes). Transmitters never receive (half-duplex).
        """
        topo, par = self.topology, self.params
        out: dict[NodeId, list[NodeId]] = {}
        if not transmitters:
            return out
        tx = sorted(transmitters)
        tx_set = set(tx)
        tx_idx = [topo.index[u] for u in tx]
        for u in tx:
            iu = topo.index[u]
            got = []
            for v in self.candidates[u]:
                if v in tx_set:
                    continue
                if receivers is not None and v not in receivers:
                    continue
                iv = topo.index[v]
                signal = self.pwr[iu, iv]
                interference = 0.0
                for it in tx_idx:
                    if it != iu:
                        interference += self.pwr[it, iv]
                if signal / (interference + par.noise) >= par.beta:
                    got.append(v)
            if got:
                out[u] = got
        return out


def resolve_slot(intents: list[TransmissionIntent], topology: Topology,
                 params: PhysicalParams, rng: np.random.Generator,
                 *, channel: Optional[Channel] = None,
                 receivers: Optional[set[NodeId]] = None) -> SlotOutcome:
    """Flip each intent's coin, then deliver per the SINR and RSSI rules.

    Coins are flipped in ascending sender order so a fixed rng stream
    replays bit-exactly. Transmitters receive nothing this slot.
    """
    senders = [i.sender for i in intents]
    if len(set(senders)) != len(senders):
        raise ValueError("duplicate sender intents")
    for i in intents:
        if not 0.0 <= i.probability <= 1.0:
            raise ValueError(f"probability out of range: {i!r}")
    ordered = sorted(intents, key=lambda i: i.sender)
    if ordered:
        draws = rng.random(len(ordered))
        transmitted = {i.sender for i, u in zip(ordered, draws) if u < i.probability}
    else:
        transmitted = set()
    msg = {i.sender: i.message for i in intents}
    if channel is None:
        channel = Channel(topology, params)
    delivered: dict[NodeId, list[tuple[NodeId, Any]]] = {}
    for u, vs in channel.deliveries(sorted(transmitted), receivers).items():
        for v in vs:
            delivered.setdefault(v, []).append((u, msg[u]))
    for v in delivered:
        delivered[v].sort(key=lambda sm: sm[0])
    return SlotOutcome(transmitted=transmitted, delivered=delivered)
