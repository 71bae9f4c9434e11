"""Slot-based SINR network simulator with distributed Delta+1 coloring."""

from .sinr import (PhysicalParams, Point, Topology, TransmissionIntent,
                   SlotOutcome, build_topology, transmission_range,
                   proximity_range, sinr_feasible, resolve_slot,
                   save_topology, load_positions)
from .params import (ProtocolConstants, TheoreticalDerivation, CalibrationReport,
                     derive_constants, theoretical_lambda, calibrate_lambda)
from .engine import (NodeProcess, RunResult, TraceEvent, run, probability_audit,
                     node_rng, channel_rng, write_trace, read_trace,
                     ideal_deliveries)
from .sync_coloring import (Rand4DeltaProcess, ColorReductionProcess,
                            ChainedProcess, full_sync_process, TempColor,
                            FinalColor)
from .async_coloring import (xi, tau, AsyncColorReductionProcess, MisProcess,
                             async_color_reduction_process, mis_process,
                             colored_process, level2_process,
                             MA, MC1Color, MC1Answer, MC2, MR)
from .topology_gen import (PlacementSpec, generate_topology, greedy_coloring,
                           side_for_mean_degree)
from .checks import (validate_coloring, verify_mis, geometric_checks,
                     conflict_decay, conflict_counts, ValidationReport)
from .experiment import ExperimentConfig, run_experiment, run_seed

__version__ = "0.1.0"
