"""Experiment orchestration: per-seed runs, validation, CSV output."""

from __future__ import annotations

import csv
import dataclasses
import math
import time
from dataclasses import dataclass
from multiprocessing import Pool
from pathlib import Path
from typing import Optional

import numpy as np

from . import checks, engine, sync_coloring
from .async_coloring import AsyncColorReductionProcess
from .params import calibrate_lambda, derive_constants
from .sinr import PhysicalParams, build_topology, load_positions
from .sync_coloring import ColorReductionProcess, Rand4DeltaProcess, full_sync_process
from .topology_gen import PlacementSpec, generate_topology, greedy_coloring

ALGOS = ("sync", "async", "rand4delta", "reduction")

CSV_COLUMNS = ["seed", "algo", "n", "delta", "delta_a", "slots_total",
               "slots_p50", "slots_max", "palette_used", "valid",
               "decay_ratio", "audit_max", "status"]


@dataclass(frozen=True)
class ExperimentConfig:
    algo: str = "sync"
    placement: str = "uniform"
    n: int = 100
    area: float = 10.0
    alpha: float = 4.0
    beta: float = 1.5
    noise: float = 1.0
    power: float = 4.0
    epsilon: float = 0.1
    rb: float = 1.0
    c: float = 1.0
    lam: float | str = 1.0  # numeric, or "auto" to calibrate per seed
    k: int = 90
    seeds: tuple[int, ...] = (0,)
    max_slots: Optional[int] = None
    wake_max: int = 0
    out: str = "out"
    trace: bool = False
    deterministic: bool = False
    workers: int = 1
    topology_file: Optional[str] = None

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ValueError(f"algo must be one of {ALGOS}, got {self.algo!r}")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if isinstance(self.lam, str) and self.lam != "auto":
            raise ValueError(f"lam must be a number or 'auto', got {self.lam!r}")

    def physical_params(self) -> PhysicalParams:
        return PhysicalParams(alpha=self.alpha, beta=self.beta, noise=self.noise,
                              power=self.power, epsilon=self.epsilon, r_b=self.rb)


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return f"{value:.6g}"
    return str(value)


def seed_topology(config: ExperimentConfig, seed: int):
    params = config.physical_params()
    if config.topology_file:
        positions, rb = load_positions(config.topology_file)
        if abs(rb - params.r_b) > 1e-12:
            params = dataclasses.replace(params, r_b=rb)
        return build_topology(positions, params), params
    spec = PlacementSpec(kind=config.placement, n=config.n, area=config.area)
    return generate_topology(spec, params, np.random.default_rng([seed, 3])), params


def seed_constants(config: ExperimentConfig, seed: int, topology, params):
    delta_a = max(topology.delta_a, 1)
    if config.algo == "async":
        # dense-regime bound: a first-level winner must finish its p2
        # announce window inside the kappa1 counter gap, which needs
        # p1 <= p2, i.e. a proximity bound of at least 90; inflating the
        # bound handed to the nodes is always legal.
        delta_a = max(delta_a, 90)
    if config.lam == "auto":
        report = calibrate_lambda(topology, params, p=1.0 / 180.0,
                                  rng=np.random.default_rng([seed, 2]))
        lam = report.lambda_emp
    else:
        lam = float(config.lam)
    return derive_constants(n=max(len(topology), 2), delta_a=delta_a,
                            c=config.c, lam=lam, k=config.k)


def build_processes(config: ExperimentConfig, seed: int, topology, constants):
    """Per-node protocol processes plus the wake schedule for this run."""
    delta = topology.delta
    procs = {}
    wake = {}
    if config.algo == "rand4delta":
        for v in topology.ids:
            procs[v] = Rand4DeltaProcess(v, delta, constants, engine.node_rng(seed, v))
    elif config.algo == "sync":
        for v in topology.ids:
            procs[v] = full_sync_process(v, delta, constants, engine.node_rng(seed, v))
    elif config.algo == "reduction":
        colors = greedy_coloring(topology)
        for v in topology.ids:
            procs[v] = ColorReductionProcess(v, colors[v], delta, constants,
                                             engine.node_rng(seed, v))
    else:  # async
        colors = greedy_coloring(topology)
        palette = max(max(colors.values()) + 1, delta, 1)
        wake_rng = np.random.default_rng([seed, 4])
        for v in topology.ids:
            procs[v] = AsyncColorReductionProcess(
                v, colors[v], palette, delta, constants, engine.node_rng(seed, v))
            if config.wake_max > 0:
                wake[v] = int(wake_rng.integers(0, config.wake_max + 1))
    return procs, wake


def default_max_slots(config: ExperimentConfig, topology, constants) -> int:
    d = topology.delta
    if config.algo == "rand4delta":
        return constants.phases * constants.kappa0 + 2
    if config.algo == "reduction":
        return (4 * d + 1) * constants.kappa2 + 2
    if config.algo == "sync":
        return constants.phases * constants.kappa0 + (4 * d + 1) * constants.kappa2 + 4
    # async: MIS(1) + request/answer + schedule wait + interval, with slack
    palette = d + 2
    est = (config.wake_max + 2 * constants.kappa1 + 2 * (d + 2) * constants.kappa2
           + (palette + 2) * constants.active_interval)
    return int(1.5 * est) + 16


def run_seed(config: ExperimentConfig, seed: int) -> tuple[dict, engine.RunResult]:
    """One complete experiment run; returns the CSV row and the RunResult."""
    topology, params = seed_topology(config, seed)
    constants = seed_constants(config, seed, topology, params)
    procs, wake = build_processes(config, seed, topology, constants)
    max_slots = config.max_slots or default_max_slots(config, topology, constants)
    result = engine.run(topology, params, constants, procs, wake=wake,
                        max_slots=max_slots, rng=seed,
                        trace_level="full" if config.trace else "state")

    colors = {v: result.final_states[v].get("color") for v in topology.ids}
    palette_max = 4 * topology.delta if config.algo == "rand4delta" else topology.delta
    report = checks.validate_coloring(topology, colors, palette_max)
    decay = None
    if config.algo in ("rand4delta", "sync"):
        counts = checks.conflict_counts(topology, result.trace)
        if counts:
            decay = checks.conflict_decay(counts).ratio

    if result.timed_out:
        status = "timeout"
    elif result.protocol_errors:
        status = "error"
    else:
        status = "ok"
    row = {
        "seed": seed,
        "algo": config.algo,
        "n": len(topology),
        "delta": topology.delta,
        "delta_a": topology.delta_a,
        "slots_total": result.slots_run,
        "slots_p50": result.metrics()["slots_p50"],
        "slots_max": result.metrics()["slots_max"],
        "palette_used": report.palette_used,
        "valid": report.valid and status == "ok",
        "decay_ratio": decay,
        "audit_max": result.audit_max,
        "status": status,
    }
    return row, result


def _run_seed_row(args) -> dict:
    config, seed = args
    try:
        row, result = run_seed(config, seed)
    except Exception as exc:  # recorded per seed, not fatal for the batch
        return {"seed": seed, "algo": config.algo, "n": config.n,
                "delta": None, "delta_a": None, "slots_total": None,
                "slots_p50": None, "slots_max": None, "palette_used": None,
                "valid": False, "decay_ratio": None, "audit_max": None,
                "status": f"error:{type(exc).__name__}"}
    if config.trace:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        engine.write_trace(result.trace, out / f"trace_{seed}.jsonl")
    return row


def run_experiment(config: ExperimentConfig) -> Path:
    """Run every seed, write results.csv, return its path.

    With workers > 1, seeds run in a process pool; rows are always written
    in seed order so reruns of the same config are byte-identical under
    deterministic=True (otherwise a timestamp column is appended).
    """
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(config, seed) for seed in config.seeds]
    if config.workers > 1:
        with Pool(config.workers) as pool:
            rows = pool.map(_run_seed_row, jobs)
    else:
        rows = [_run_seed_row(job) for job in jobs]
    rows.sort(key=lambda r: config.seeds.index(r["seed"]))

    columns = list(CSV_COLUMNS)
    if not config.deterministic:
        columns.append("timestamp")
        stamp = f"{time.time():.0f}"
        for row in rows:
            row["timestamp"] = stamp
    path = out / "results.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(row.get(col)) for col in columns])
    return path


# ---------------------------------------------------------------------------
# Flat key=value config files (same keys as the CLI flags)
# ---------------------------------------------------------------------------

_FIELD_TYPES = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _parse_value(key: str, raw: str):
    if key == "seeds":
        return tuple(int(s) for s in raw.split(",") if s.strip())
    if key == "lam":
        return raw if raw == "auto" else float(raw)
    if key in ("trace", "deterministic"):
        return raw.lower() in ("1", "true", "yes", "on")
    if key in ("n", "k", "max_slots", "wake_max", "workers"):
        return int(raw)
    if key in ("algo", "placement", "out", "topology_file"):
        return raw
    return float(raw)


def parse_config_file(path) -> dict:
    overrides = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, raw = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key == "lambda":
                key = "lam"
            if key not in _FIELD_TYPES:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            overrides[key] = _parse_value(key, raw)
    return overrides
