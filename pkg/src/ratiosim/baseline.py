"""Single-iteration doubly stochastic consensus under delays, for contrast.

Each node combines its own value with the most recently seen value from
every in-neighbor, weighted by a doubly stochastic matrix. Without delays
this converges to the exact average; with delays it still reaches
consensus, but the agreed value depends on the delay schedule. The
simulator exists to exhibit that drift next to the delay-robust ratio
protocol, which has no such dependence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .engine import DelaySchedule, ScheduleError
from .graph import Edge
from .weights import WeightMatrix

_ROW_COL_TOL = 1e-9

BOOTSTRAP_MODES = ("initial", "skip")


class BaselineError(RuntimeError):
    """Baseline simulation misconfiguration or invariant failure."""


@dataclass(frozen=True)
class BaselineMessage:
    sender: int
    receiver: int
    send_step: int
    arrival_step: int
    value: float


@dataclass(frozen=True)
class BaselineState:
    """Snapshot of the single-iteration protocol.

    ``last_seen`` maps (receiver, sender) to the freshest delivered value
    and its send step; send step -1 marks the bootstrap stand-in for links
    that have not delivered yet.
    """

    step: int
    x: np.ndarray
    last_seen: Mapping[Edge, tuple[float, int]]
    in_flight: tuple[BaselineMessage, ...] = ()
    bootstrap: str = "initial"


def _edges_of(weights: WeightMatrix) -> frozenset[Edge]:
    return weights.support_edges()


def _require_doubly_stochastic(weights: WeightMatrix) -> None:
    w = weights.entries
    row_dev = np.abs(w.sum(axis=1) - 1.0).max()
    col_dev = np.abs(w.sum(axis=0) - 1.0).max()
    if row_dev > _ROW_COL_TOL or col_dev > _ROW_COL_TOL:
        raise BaselineError(
            f"weights must be doubly stochastic (row dev {row_dev:.3e}, "
            f"column dev {col_dev:.3e})")
    edges = _edges_of(weights)
    if any((i, j) not in edges for (j, i) in edges):
        raise BaselineError("weight support must be symmetric")


def initial_baseline_state(x0: Sequence[float], weights: WeightMatrix,
                           bootstrap: str = "initial") -> BaselineState:
    if bootstrap not in BOOTSTRAP_MODES:
        raise BaselineError(f"unknown bootstrap mode {bootstrap!r}")
    x = np.array(x0, dtype=float)
    if x.shape != (weights.n,):
        raise BaselineError(f"x0 length {x.shape} does not match n={weights.n}")
    last_seen: dict[Edge, tuple[float, int]] = {}
    if bootstrap == "initial":
        # pretend every link delivered its initial value before the run
        for j, i in _edges_of(weights):
            last_seen[(j, i)] = (float(x[i]), -1)
    return BaselineState(step=0, x=x, last_seen=last_seen, bootstrap=bootstrap)


def baseline_step(state: BaselineState, weights: WeightMatrix,
                  delays: DelaySchedule) -> BaselineState:
    """One update x_j <- p_jj x_j + sum_i p_ji (most recent value from i).

    Deliveries for this step are applied first (a delay-0 send arrives the
    same step); a link silent for more than tau_bar steps means the delay
    schedule violated its bound.
    """
    k = state.step
    edges = _edges_of(weights)
    w = weights.entries

    in_flight = list(state.in_flight)
    for j, i in sorted(edges):
        d = delays.delay_at(k, j, i)
        in_flight.append(BaselineMessage(i, j, k, k + d, float(state.x[i])))

    last_seen = dict(state.last_seen)
    remaining = []
    for m in in_flight:
        if m.arrival_step == k:
            prev = last_seen.get((m.receiver, m.sender))
            if prev is None or m.send_step > prev[1]:
                last_seen[(m.receiver, m.sender)] = (m.value, m.send_step)
        else:
            remaining.append(m)

    for j, i in edges:
        seen = last_seen.get((j, i))
        if seen is not None and k - seen[1] > delays.tau_bar:
            raise ScheduleError(
                f"link ({j}, {i}) silent for {k - seen[1]} steps, beyond "
                f"tau_bar={delays.tau_bar}")

    n = weights.n
    new_x = np.empty(n)
    for j in range(n):
        acc = w[j, j] * float(state.x[j])
        slack = 0.0
        for i in sorted(i for (jj, i) in edges if jj == j):
            seen = last_seen.get((j, i))
            if seen is None:
                # skip mode before first delivery: fold the weight into self
                slack += w[j, i]
            else:
                acc += w[j, i] * seen[0]
        new_x[j] = acc + slack * float(state.x[j])
    return BaselineState(step=k + 1, x=new_x, last_seen=last_seen,
                         in_flight=tuple(remaining), bootstrap=state.bootstrap)


@dataclass
class BaselineRunResult:
    weights: WeightMatrix
    states: list[BaselineState]

    def x_series(self) -> np.ndarray:
        return np.stack([st.x for st in self.states])

    def final_values(self) -> np.ndarray:
        return self.states[-1].x.copy()

    def spread_series(self) -> np.ndarray:
        xs = self.x_series()
        return xs.max(axis=1) - xs.min(axis=1)

    def trace_csv(self) -> str:
        lines = ["k,node,y"]
        for k, st in enumerate(self.states):
            for j, v in enumerate(st.x):
                lines.append(f"{k},{j},{float(v)!r}")
        return "\n".join(lines) + "\n"


def run_baseline(x0: Sequence[float], weights: WeightMatrix,
                 delays: DelaySchedule, horizon: int,
                 bootstrap: str = "initial") -> BaselineRunResult:
    _require_doubly_stochastic(weights)
    if horizon < 0:
        raise BaselineError("horizon must be nonnegative")
    state = initial_baseline_state(x0, weights, bootstrap)
    states = [state]
    for _ in range(horizon):
        state = baseline_step(state, weights, delays)
        states.append(state)
    return BaselineRunResult(weights=weights, states=states)
