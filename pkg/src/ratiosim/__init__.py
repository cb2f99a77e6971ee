"""Delay-robust ratio consensus on digraphs: simulator, oracle, analysis."""

from . import analysis, augmented, baseline, cli, engine, graph, weights
from .engine import (DelaySchedule, RunSpec, SimulationState, SwitchPlan,
                     TerminationEvent, ratios, run, spread, step)
from .graph import Digraph, DigraphSequence, is_strongly_connected, union
from .weights import WeightMatrix, doubly_stochastic_weights, out_degree_weights

__version__ = "0.1.0"

__all__ = [
    "analysis", "augmented", "baseline", "cli", "engine", "graph", "weights",
    "DelaySchedule", "RunSpec", "SimulationState", "SwitchPlan",
    "TerminationEvent", "ratios", "run", "spread", "step",
    "Digraph", "DigraphSequence", "is_strongly_connected", "union",
    "WeightMatrix", "doubly_stochastic_weights", "out_degree_weights",
    "__version__",
]
