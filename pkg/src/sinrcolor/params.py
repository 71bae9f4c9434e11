"""Protocol constants: closed-form derivation and empirical calibration.

Slot-count constants scale with a factor lambda that absorbs the channel
uncertainty of one transmission attempt. The closed-form lambda obtained
from the packing argument (see theoretical_lambda) is astronomically large
for realistic path-loss exponents, so experiments either supply lambda
directly or calibrate the smallest empirically sufficient value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .sinr import Channel, NodeId, PhysicalParams, Topology, proximity_range

LN12 = math.log(12.0)


# ---------------------------------------------------------------------------
# Derived protocol constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProtocolConstants:
    """All slot counts and probabilities used by the coloring protocols.

    p1 = 1/(2*delta_a) is the crowded-channel probability, p2 = 1/180 the
    constant probability reserved for the few nodes a schedule activates.
    kappa0 covers one constant-success broadcast attempt, kappa1/kappa2 one
    w.h.p. attempt at p1/p2 respectively. The second-level density bound k
    fixes the active-interval length 2*k^2*kappa2.
    """

    n: int
    delta_a: int
    c: float
    lam: float
    k: int
    p1: float
    p2: float
    kappa0: int
    kappa1: int
    kappa2: int
    active_interval: int
    phases: int

    def to_dict(self) -> dict:
        return {
            "n": self.n, "delta_a": self.delta_a, "c": self.c, "lam": self.lam,
            "k": self.k, "p1": self.p1, "p2": self.p2, "kappa0": self.kappa0,
            "kappa1": self.kappa1, "kappa2": self.kappa2,
            "active_interval": self.active_interval, "phases": self.phases,
        }


def derive_constants(n: int, delta_a: int, c: float = 1.0, lam: float = 1.0,
                     k: int = 90) -> ProtocolConstants:
    """Compute every protocol constant from (n, delta_a, c, lambda, k).

    k defaults to 90 and is overridable for scaled-down
    asynchronous experiments; the active interval is always 2*k^2*kappa2.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if delta_a < 1:
        raise ValueError(f"delta_a must be >= 1, got {delta_a}")
    if c < 1:
        raise ValueError(f"c must be >= 1, got {c}")
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    p1 = 1.0 / (2.0 * delta_a)
    p2 = 1.0 / 180.0
    ln_n = math.log(n)
    kappa0 = math.ceil(lam * LN12 / p1)
    kappa1 = math.ceil(c * lam * ln_n / p1)
    kappa2 = math.ceil(c * lam * ln_n / p2)
    return ProtocolConstants(
        n=n, delta_a=delta_a, c=c, lam=lam, k=k, p1=p1, p2=p2,
        kappa0=kappa0, kappa1=kappa1, kappa2=kappa2,
        active_interval=2 * k * k * kappa2,
        phases=math.ceil(6.0 * (c + 3.0) * ln_n),
    )


# ---------------------------------------------------------------------------
# Theoretical lambda
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TheoreticalDerivation:
    """Closed-form lambda from the disk-packing argument.

    chi bounds the number of independent broadcasting ranges inside the
    proximity disk; the no-competing-transmitter probability is then at
    least (1/4)^chi and the SINR-holds probability at least 1/2, giving
    lambda = 2 * 4^chi. The log2 fields are exact even when the plain
    floats under/overflow.
    """

    chi: float
    p_none: float
    p_sinr: float
    lambda_theory: float
    log2_p_none: float
    log2_lambda: float


def theoretical_lambda(params: PhysicalParams) -> TheoreticalDerivation:
    """Evaluate chi = (2*pi/(3*sqrt(3))) * (r_A + 2*r_B)^2 / r_B^2 and the
    resulting lambda = ((1/4)^chi * 1/2)^(-1)."""
    r_a = proximity_range(params)
    r_b = params.r_b
    chi = (2.0 * math.pi / (3.0 * math.sqrt(3.0))) * (r_a + 2.0 * r_b) ** 2 / r_b ** 2
    log2_p_none = -2.0 * chi
    log2_lambda = 2.0 * chi + 1.0
    p_none = 2.0 ** log2_p_none if log2_p_none > -1074 else 0.0
    lam = 2.0 ** log2_lambda if log2_lambda < 1024 else math.inf
    return TheoreticalDerivation(
        chi=chi, p_none=p_none, p_sinr=0.5, lambda_theory=lam,
        log2_p_none=log2_p_none, log2_lambda=log2_lambda,
    )


# ---------------------------------------------------------------------------
# Empirical calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationReport:
    lambda_emp: float
    trials: int
    achieved_success: float
    target: float

    def __post_init__(self):
        if self.achieved_success < self.target:
            raise ValueError("calibration reported a lambda below its target")


class CalibrationError(RuntimeError):
    pass


def region_probability_sums(topology: Topology, probs: dict[NodeId, float]) -> dict[NodeId, float]:
    """Per-node sum of transmission probabilities over its broadcasting region."""
    return {
        v: sum(probs.get(u, 0.0) for u in topology.region(v))
        for v in topology.ids
    }


def _broadcast_trials(channel: Channel, designated: NodeId, p: float,
                      background_p: float, kappa: int, trials: int,
                      rng: np.random.Generator) -> int:
    """Count trials in which `designated`, transmitting with probability p
    while everyone else transmits with background_p, reaches all neighbors
    within kappa slots."""
    topo, par = channel.topology, channel.params
    n = len(topo)
    i_des = topo.index[designated]
    nbr_idx = np.array([topo.index[v] for v in topo.neighbors[designated]], dtype=int)
    probs = np.full(n, background_p)
    probs[i_des] = p
    pwr = channel.pwr
    successes = 0
    for _ in range(trials):
        remaining = nbr_idx.copy()
        if remaining.size == 0:
            successes += 1
            continue
        for _slot in range(kappa):
            mask = rng.random(n) < probs
            if not mask[i_des]:
                continue
            listeners = remaining[~mask[remaining]]
            if listeners.size == 0:
                continue
            tx = np.flatnonzero(mask)
            total = pwr[tx][:, listeners].sum(axis=0)
            signal = pwr[i_des, listeners]
            ok = signal / (total - signal + par.noise) >= par.beta
            if ok.any():
                reached = set(listeners[ok].tolist())
                remaining = np.array([i for i in remaining if i not in reached], dtype=int)
                if remaining.size == 0:
                    break
        if remaining.size == 0:
            successes += 1
    return successes


def calibrate_lambda(topology: Topology, params: PhysicalParams, p: float,
                     target: float = 11.0 / 12.0, trials: int = 200,
                     rng: Optional[np.random.Generator] = None, *,
                     designated: Optional[NodeId] = None,
                     background_p: Optional[float] = None,
                     lambda_floor: float = 1e-3,
                     lambda_ceiling: float = 4096.0,
                     resolution: float = 0.05) -> CalibrationReport:
    """Find the smallest lambda such that a designated node transmitting with
    probability p reaches all its neighbors within ceil(lambda*ln12/p) slots
    in at least `target` of `trials` runs.

    Every other node produces background load at probability background_p
    (default 1/(2*delta_a)); the per-region probability sums must not exceed
    1 or the search refuses to run. Doubling locates a passing lambda, then
    bisection shrinks it to the requested relative resolution. The reported
    achieved_success is the passing measurement at the returned lambda.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if not 0.0 < target < 1.0:
        raise ValueError(f"target must be in (0,1), got {target}")
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must be in (0,1], got {p}")
    if rng is None:
        rng = np.random.default_rng()
    if designated is None:
        designated = max(topology.ids, key=lambda v: (topology.degree(v), -v))
    if background_p is None:
        background_p = 1.0 / (2.0 * max(topology.delta_a, 1))

    load = {v: background_p for v in topology.ids}
    load[designated] = p
    worst = max(region_probability_sums(topology, load).values())
    if worst > 1.0 + 1e-9:
        raise ValueError(
            f"per-region probability sum {worst:.4f} exceeds 1; "
            "lower p or the background load"
        )

    channel = Channel(topology, params)

    def evaluate(lam: float) -> float:
        kappa = math.ceil(lam * LN12 / p)
        hits = _broadcast_trials(channel, designated, p, background_p,
                                 kappa, trials, rng.spawn(1)[0])
        return hits / trials

    lam = 0.5
    freq = evaluate(lam)
    if freq >= target:
        hi, hi_freq = lam, freq
        cur = lam / 2.0
        while cur >= lambda_floor:
            f = evaluate(cur)
            if f >= target:
                hi, hi_freq = cur, f
                cur /= 2.0
            else:
                break
        lo = hi / 2.0  # last failing value, or the untested floor region
    else:
        while freq < target:
            lam *= 2.0
            if lam > lambda_ceiling:
                raise CalibrationError(
                    f"target {target} unreachable below lambda={lambda_ceiling} "
                    f"(last frequency {freq:.3f} at lambda={lam / 2.0})"
                )
            freq = evaluate(lam)
        hi, hi_freq = lam, freq
        lo = lam / 2.0

    while hi - lo > resolution * hi:
        mid = (lo + hi) / 2.0
        f = evaluate(mid)
        if f >= target:
            hi, hi_freq = mid, f
        else:
            lo = mid
    return CalibrationReport(lambda_emp=hi, trials=trials,
                             achieved_success=hi_freq, target=target)
