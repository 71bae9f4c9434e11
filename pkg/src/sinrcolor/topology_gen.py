"""Topology generation and input colorings for experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .sinr import NodeId, PhysicalParams, Point, Topology, build_topology


@dataclass(frozen=True)
class PlacementSpec:
    """Node placement recipe: `uniform` scatters n points in a square of the
    given side, `grid` lays out n points row-major with the given spacing,
    `poisson` draws the count from a Poisson law with mean n first."""

    kind: str = "uniform"
    n: int = 100
    area: float = 10.0
    spacing: Optional[float] = None  # grid only; defaults to area/ceil(sqrt(n))

    def __post_init__(self):
        if self.kind not in ("uniform", "grid", "poisson"):
            raise ValueError(f"unknown placement kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.area <= 0:
            raise ValueError("area must be > 0")


def generate_topology(spec: PlacementSpec, params: PhysicalParams,
                      rng: np.random.Generator) -> Topology:
    if spec.kind == "uniform":
        xy = rng.random((spec.n, 2)) * spec.area
    elif spec.kind == "poisson":
        count = max(1, int(rng.poisson(spec.n)))
        xy = rng.random((count, 2)) * spec.area
    else:
        cols = math.ceil(math.sqrt(spec.n))
        spacing = spec.spacing if spec.spacing is not None else spec.area / cols
        xy = np.array([[(i % cols) * spacing, (i // cols) * spacing]
                       for i in range(spec.n)])
    positions = {i: Point(float(x), float(y)) for i, (x, y) in enumerate(xy)}
    return build_topology(positions, params)


def side_for_mean_degree(n: int, r_b: float, mean_degree: float) -> float:
    """Square side giving roughly the requested mean degree for n uniform
    points: E[deg] ~= n * pi * r_b^2 / side^2 (ignoring border effects)."""
    if mean_degree <= 0:
        raise ValueError("mean_degree must be > 0")
    return r_b * math.sqrt(n * math.pi / mean_degree)


def greedy_coloring(topology: Topology) -> dict[NodeId, int]:
    """Deterministic smallest-free-color sweep in node-id order; uses at
    most delta+1 colors, so it is a valid input for the reduction stacks."""
    colors: dict[NodeId, int] = {}
    for v in topology.ids:
        taken = {colors[w] for w in topology.neighbors[v] if w in colors}
        c = 0
        while c in taken:
            c += 1
        colors[v] = c
    return colors
