"""Event-driven simulation of delay-robust ratio consensus.

Two coupled mass-passing iterations (y, z) run on a possibly switching
digraph. At step k every node scales its state by its self-weight, absorbs
all messages whose delay expires at k, and emits one weighted message per
current out-neighbor. The per-node ratio y/z converges to the average of
the initial y values whenever delays are bounded and the union of graphs
over bounded windows stays strongly connected.

Timing conventions (shared with the augmented-matrix oracle):

* A message sent at step s with delay t arrives at step ``s + t`` and is
  consumed by the update producing the state at ``s + t + 1``. Delay 0
  therefore means same-step availability.
* A link terminated at step ``k_t`` stops delivering immediately, but its
  sender keeps emitting into a loop-back buffer until it learns of the
  termination at ``k_t + T``; at that discovery step the buffered masses
  re-enter the sender unweighted, alongside ordinary arrivals.

Total mass (node values + in-flight messages + undelivered loop-back
masses) is invariant; the simulator checks this each step.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Literal, Mapping, Sequence, Union

import numpy as np

from . import weights as weights_mod
from .graph import Digraph, DigraphSequence, Edge, derived_seed, _STREAM_DELAY
from .weights import WeightMatrix

MASS_TOL = 1e-9


class EngineError(RuntimeError):
    """Simulation failed an internal contract."""


class ConservationError(EngineError):
    """Total mass drifted beyond tolerance."""


class ScheduleError(ValueError):
    """Invalid delay schedule or switch plan."""


class HistoryUnderrunError(ScheduleError):
    """An acknowledgement delay exceeds the send-history depth."""


# ---------------------------------------------------------------------------
# delay schedules


@dataclass(frozen=True)
class DelaySchedule:
    """Per-link, per-step integer delays bounded by ``tau_bar``.

    Self-delays are identically zero. Sources:

    * ``zero``      -- every delay is 0.
    * ``uniform``   -- seeded i.i.d. uniform draw over {0..bound(j, i)};
                       a pure function of (seed, k, j, i).
    * ``table``     -- explicit (k, j, i) -> delay map, default 0.
    * ``constant``  -- fixed per-link delay, constant in k.
    """

    tau_bar: int
    source: str = "zero"
    n: int = 0
    seed: int = 0
    per_link_bounds: Mapping[Edge, int] | None = None
    table: Mapping[tuple[int, int, int], int] | None = None
    constant: Mapping[Edge, int] | None = None

    def __post_init__(self) -> None:
        if self.tau_bar < 0:
            raise ScheduleError(f"tau_bar must be nonnegative, got {self.tau_bar}")
        if self.per_link_bounds:
            for (j, i), b in self.per_link_bounds.items():
                if j == i:
                    raise ScheduleError("self-links cannot carry a delay bound")
                if not 0 <= b <= self.tau_bar:
                    raise ScheduleError(
                        f"per-link bound {b} for ({j}, {i}) outside [0, {self.tau_bar}]")
        if self.table:
            for (k, j, i), d in self.table.items():
                if j == i and d != 0:
                    raise ScheduleError("self-delays must be zero")
                if not 0 <= d <= self.bound(j, i):
                    raise ScheduleError(
                        f"table delay {d} at (k={k}, {j}, {i}) exceeds bound {self.bound(j, i)}")
        if self.constant:
            for (j, i), d in self.constant.items():
                if j == i and d != 0:
                    raise ScheduleError("self-delays must be zero")
                if not 0 <= d <= self.bound(j, i):
                    raise ScheduleError(
                        f"constant delay {d} on ({j}, {i}) exceeds bound {self.bound(j, i)}")

    @classmethod
    def none(cls) -> "DelaySchedule":
        return cls(tau_bar=0, source="zero")

    @classmethod
    def uniform(cls, tau_bar: int, seed: int, n: int,
                per_link_bounds: Mapping[Edge, int] | None = None) -> "DelaySchedule":
        return cls(tau_bar=tau_bar, source="uniform", n=n, seed=seed,
                   per_link_bounds=dict(per_link_bounds) if per_link_bounds else None)

    @classmethod
    def from_table(cls, tau_bar: int, table: Mapping[tuple[int, int, int], int],
                   per_link_bounds: Mapping[Edge, int] | None = None) -> "DelaySchedule":
        return cls(tau_bar=tau_bar, source="table", table=dict(table),
                   per_link_bounds=dict(per_link_bounds) if per_link_bounds else None)

    @classmethod
    def constant_per_link(cls, delays: Mapping[Edge, int]) -> "DelaySchedule":
        tau_bar = max(delays.values(), default=0)
        return cls(tau_bar=tau_bar, source="constant", constant=dict(delays))

    def bound(self, j: int, i: int) -> int:
        if j == i:
            return 0
        if self.per_link_bounds is not None:
            return self.per_link_bounds.get((j, i), self.tau_bar)
        return self.tau_bar

    def _uniform_step_matrix(self, k: int) -> np.ndarray:
        rng = np.random.default_rng(derived_seed(self.seed, _STREAM_DELAY, k))
        return rng.random((self.n, self.n))

    def delay_at(self, k: int, j: int, i: int) -> int:
        """Delay experienced by the message sent on link (j, i) at step k."""
        if j == i:
            return 0
        if self.source == "zero":
            return 0
        if self.source == "table":
            return self.table.get((k, j, i), 0) if self.table else 0
        if self.source == "constant":
            return self.constant.get((j, i), 0) if self.constant else 0
        u = self._uniform_step_matrix(k)
        return int(u[j, i] * (self.bound(j, i) + 1))

    def delays_for_step(self, k: int, edges: Iterable[Edge]) -> dict[Edge, int]:
        """Delays for all given links at step k (one seeded draw per step)."""
        edge_list = sorted(edges)
        if self.source == "uniform":
            u = self._uniform_step_matrix(k)
            return {(j, i): int(u[j, i] * (self.bound(j, i) + 1))
                    for j, i in edge_list}
        return {(j, i): self.delay_at(k, j, i) for j, i in edge_list}


# ---------------------------------------------------------------------------
# switch plans and termination events


@dataclass(frozen=True)
class TerminationEvent:
    """Link (receiver <- sender) dies at ``step``; the sender learns of it
    ``ack_delay`` steps later and reclaims the sends made in between."""

    step: int
    sender: int
    receiver: int
    ack_delay: int

    @property
    def discovery_step(self) -> int:
        return self.step + self.ack_delay

    @property
    def edge(self) -> Edge:
        return (self.receiver, self.sender)


@dataclass(frozen=True)
class SwitchPlan:
    """Topology schedule plus delayed-ACK termination events."""

    topology: DigraphSequence
    ack_delay_bound: int = 0
    termination_events: tuple[TerminationEvent, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "termination_events",
                           tuple(self.termination_events))
        if self.ack_delay_bound < 0:
            raise ScheduleError("ack_delay_bound must be nonnegative")
        seen: set[Edge] = set()
        for ev in self.termination_events:
            if ev.ack_delay < 0 or ev.ack_delay > self.ack_delay_bound:
                raise HistoryUnderrunError(
                    f"ack delay {ev.ack_delay} exceeds bound {self.ack_delay_bound}")
            if ev.edge in seen:
                raise ScheduleError(f"multiple termination events on link {ev.edge}")
            seen.add(ev.edge)
            if ev.edge not in self.topology.graph_at(ev.step).edges:
                raise ScheduleError(
                    f"termination event references link {ev.edge} inactive at step {ev.step}")

    @classmethod
    def static(cls, g: Digraph) -> "SwitchPlan":
        return cls(DigraphSequence.static(g))


# ---------------------------------------------------------------------------
# simulation state


@dataclass(frozen=True)
class InFlightMessage:
    sender: int
    receiver: int
    send_step: int
    arrival_step: int
    y_mass: float
    z_mass: float


@dataclass(frozen=True)
class PendingReturn:
    """Mass emitted on a dead link, waiting for the sender's discovery step."""

    sender: int
    receiver: int
    send_step: int
    discovery_step: int
    y_mass: float
    z_mass: float


HistoryEntry = tuple[int, float, float]  # (send_step, y_mass, z_mass)


@dataclass(frozen=True)
class SimulationState:
    """Snapshot after ``step`` updates.

    ``send_history`` keeps, per (sender, receiver) link, the last
    ``ack_delay_bound`` sends so terminated links can be reconciled.
    ``pending_returns`` holds masses already known (to the simulator, not
    the node) to need reclaiming.
    """

    step: int
    y: np.ndarray
    z: np.ndarray
    in_flight: tuple[InFlightMessage, ...] = ()
    send_history: Mapping[tuple[int, int], tuple[HistoryEntry, ...]] = field(
        default_factory=dict)
    pending_returns: tuple[PendingReturn, ...] = ()
    active_edges: frozenset[Edge] = frozenset()
    ack_delay_bound: int = 0
    initial_totals: tuple[float, float] = (0.0, 0.0)

    def total_mass(self) -> tuple[float, float]:
        """Node mass plus in-flight plus not-yet-reconciled loop-back mass."""
        y_total = float(self.y.sum())
        z_total = float(self.z.sum())
        for m in self.in_flight:
            y_total += m.y_mass
            z_total += m.z_mass
        for r in self.pending_returns:
            y_total += r.y_mass
            z_total += r.z_mass
        return y_total, z_total


def ratios(state: SimulationState) -> np.ndarray:
    """Per-node ratio y/z; the consensus read-out."""
    if not (state.z > 0).all():
        raise EngineError("nonpositive z encountered; state invariant broken")
    return state.y / state.z


def spread(values: Sequence[float] | np.ndarray) -> float:
    """max - min of a nonempty value vector."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("spread of an empty vector is undefined")
    return float(arr.max() - arr.min())


# ---------------------------------------------------------------------------
# per-step structure resolution (shared with the oracle)


@dataclass(frozen=True)
class StepStructure:
    """Everything step k depends on, resolved deterministically.

    ``believed_edges`` are the links senders act on (terminated links stay
    here until their discovery step). ``diverted`` maps each dead-but-
    undiscovered link to its discovery step; sends on those links divert to
    the loop-back buffer instead of flying to the receiver.
    """

    k: int
    n: int
    believed_edges: frozenset[Edge]
    diverted: Mapping[Edge, int]
    weights: np.ndarray
    delays: Mapping[Edge, int]


WeightsSpec = Union[Literal["out_degree"], WeightMatrix]


def _check_weights_against(edges: frozenset[Edge], w: np.ndarray, n: int) -> None:
    if w.shape != (n, n):
        raise EngineError(f"weight matrix shape {w.shape} does not match n={n}")
    col = w.sum(axis=0)
    if np.abs(col - 1.0).max() > weights_mod.COLUMN_SUM_TOL:
        raise EngineError(f"weight columns must sum to 1 (max deviation "
                          f"{np.abs(col - 1.0).max():.3e})")
    if (np.diag(w) <= 0).any():
        raise EngineError("weight matrix needs strictly positive self-weights")
    for l in range(n):
        for j in range(n):
            if l == j:
                continue
            if w[l, j] > 0 and (l, j) not in edges:
                raise EngineError(f"weight on ({l}, {j}) has no matching link")
            if w[l, j] <= 0 and (l, j) in edges:
                raise EngineError(f"link ({l}, {j}) carries no weight")


def resolve_step(k: int, plan: SwitchPlan, delays: DelaySchedule,
                 weights: WeightsSpec = "out_degree") -> StepStructure:
    """Resolve believed links, weights, diverted links, and delays for step k."""
    n = plan.topology.n
    topo_edges = plan.topology.graph_at(k).edges
    discovered = {ev.edge for ev in plan.termination_events
                  if ev.discovery_step <= k}
    diverted = {ev.edge: ev.discovery_step for ev in plan.termination_events
                if ev.step <= k < ev.discovery_step and ev.edge in topo_edges}
    believed = frozenset(topo_edges - discovered)
    if isinstance(weights, WeightMatrix):
        w = weights.entries
        _check_weights_against(believed, w, n)
    else:
        w = weights_mod.out_degree_weights(Digraph(n, believed)).entries
    live = sorted(believed - set(diverted))
    delay_map = delays.delays_for_step(k, live)
    return StepStructure(k=k, n=n, believed_edges=believed,
                         diverted=diverted, weights=w, delays=delay_map)


# ---------------------------------------------------------------------------
# stepping


def initial_state(y0: Sequence[float] | np.ndarray, plan: SwitchPlan) -> SimulationState:
    y = np.array(y0, dtype=float)
    n = plan.topology.n
    if y.shape != (n,):
        raise EngineError(f"y0 length {y.shape} does not match n={n}")
    z = np.ones(n)
    dead0 = {ev.edge for ev in plan.termination_events if ev.step <= 0}
    active = frozenset(plan.topology.graph_at(0).edges - dead0)
    return SimulationState(step=0, y=y, z=z, active_edges=active,
                           ack_delay_bound=plan.ack_delay_bound,
                           initial_totals=(float(y.sum()), float(n)))


def reconcile_termination(state: SimulationState,
                          event: TerminationEvent) -> SimulationState:
    """Fold a terminated link's unconveyed sends back into the sender.

    Runs as part of the update at the discovery step: the state passed in
    is the freshly computed one (``state.step == discovery_step + 1``) and
    the buffered masses join the sender's values unweighted, exactly like
    a delayed self-delivery. Also drops the link's history and its
    pending-return ledger entries, so total mass is unchanged.
    """
    if event.ack_delay > state.ack_delay_bound:
        raise HistoryUnderrunError(
            f"ack delay {event.ack_delay} exceeds send-history depth "
            f"{state.ack_delay_bound}")
    key = (event.sender, event.receiver)
    window = range(event.step, event.discovery_step)
    entries = [e for e in state.send_history.get(key, ())
               if e[0] in window]
    new_y = state.y.copy()
    new_z = state.z.copy()
    for _, ym, zm in entries:   # ascending send step
        new_y[event.sender] += ym
        new_z[event.sender] += zm
    kept = tuple(r for r in state.pending_returns
                 if not (r.sender == event.sender
                         and r.receiver == event.receiver
                         and r.send_step in window))
    dropped = len(state.pending_returns) - len(kept)
    if dropped != len(entries):
        raise EngineError("send history and return ledger disagree on a "
                          f"terminated link {key}")
    history = {k: v for k, v in state.send_history.items() if k != key}
    return replace(state, y=new_y, z=new_z,
                   pending_returns=kept, send_history=history)


def _step_structured(state: SimulationState, s: StepStructure,
                     plan: SwitchPlan, check_conservation: bool) -> SimulationState:
    k = state.step
    if s.k != k:
        raise EngineError(f"structure for step {s.k} applied to state at step {k}")
    n = len(state.y)
    w = s.weights

    in_flight = list(state.in_flight)
    pending = list(state.pending_returns)
    history = {key: list(val) for key, val in state.send_history.items()}
    track_history = plan.ack_delay_bound > 0

    # sends, canonical (sender, receiver) order
    out_by_sender: list[list[int]] = [[] for _ in range(n)]
    for l, i in s.believed_edges:
        out_by_sender[i].append(l)
    for i in range(n):
        yi = float(state.y[i])
        zi = float(state.z[i])
        for l in sorted(out_by_sender[i]):
            ym = w[l, i] * yi
            zm = w[l, i] * zi
            if track_history:
                entries = history.setdefault((i, l), [])
                entries.append((k, ym, zm))
                if len(entries) > plan.ack_delay_bound:
                    del entries[:len(entries) - plan.ack_delay_bound]
            if (l, i) in s.diverted:
                pending.append(PendingReturn(i, l, k, s.diverted[(l, i)], ym, zm))
            else:
                in_flight.append(InFlightMessage(i, l, k, k + s.delays[(l, i)], ym, zm))

    # arrivals, canonical (sender, send_step) order per receiver
    arriving: list[list[InFlightMessage]] = [[] for _ in range(n)]
    remaining: list[InFlightMessage] = []
    for m in in_flight:
        if m.arrival_step == k:
            arriving[m.receiver].append(m)
        else:
            if m.arrival_step < k:
                raise EngineError(f"stale in-flight message {m}")
            remaining.append(m)
    new_y = np.empty(n)
    new_z = np.empty(n)
    for j in range(n):
        acc_y = w[j, j] * float(state.y[j])
        acc_z = w[j, j] * float(state.z[j])
        for m in sorted(arriving[j], key=lambda m: (m.sender, m.send_step)):
            acc_y += m.y_mass
            acc_z += m.z_mass
        new_y[j] = acc_y
        new_z[j] = acc_z

    dead_next = {ev.edge for ev in plan.termination_events if ev.step <= k + 1}
    active_next = frozenset(plan.topology.graph_at(k + 1).edges - dead_next) \
        if _has_graph_at(plan.topology, k + 1) else frozenset()
    new_state = SimulationState(
        step=k + 1, y=new_y, z=new_z,
        in_flight=tuple(remaining),
        send_history={key: tuple(val) for key, val in history.items()},
        pending_returns=tuple(pending),
        active_edges=active_next,
        ack_delay_bound=state.ack_delay_bound,
        initial_totals=state.initial_totals)

    # delayed-ACK reconciliation for links discovered dead at this step
    for ev in plan.termination_events:
        if ev.discovery_step == k:
            new_state = reconcile_termination(new_state, ev)

    if not (new_state.z > 0).all():
        raise EngineError("z lost positivity; weights must have positive diagonals")
    if check_conservation:
        _check_conservation(new_state)
    return new_state


def _has_graph_at(topology: DigraphSequence, k: int) -> bool:
    return topology.length is None or k < topology.length


def _check_conservation(state: SimulationState) -> None:
    y_total, z_total = state.total_mass()
    y0, z0 = state.initial_totals
    if abs(y_total - y0) > MASS_TOL * max(1.0, abs(y0)):
        raise ConservationError(
            f"y mass drifted: {y_total!r} vs initial {y0!r} at step {state.step}")
    if abs(z_total - z0) > MASS_TOL * max(1.0, abs(z0)):
        raise ConservationError(
            f"z mass drifted: {z_total!r} vs initial {z0!r} at step {state.step}")


def step(state: SimulationState, weights_at_k: WeightMatrix | np.ndarray,
         delays: DelaySchedule, plan: SwitchPlan, *,
         check_conservation: bool = True) -> SimulationState:
    """Advance one update with explicitly supplied weights.

    The weights must be column stochastic and structurally consistent with
    the links the senders believe active at this step.
    """
    wm = weights_at_k if isinstance(weights_at_k, WeightMatrix) \
        else WeightMatrix(np.asarray(weights_at_k))
    s = resolve_step(state.step, plan, delays, wm)
    return _step_structured(state, s, plan, check_conservation)


# ---------------------------------------------------------------------------
# whole runs


@dataclass(frozen=True)
class RunSpec:
    """Validated description of one reproducible experiment."""

    plan: SwitchPlan
    delays: DelaySchedule
    y0: tuple[float, ...]
    horizon: int
    weights: WeightsSpec = "out_degree"
    epsilon: float = 1e-6
    check_conservation: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "y0", tuple(float(v) for v in self.y0))
        n = self.plan.topology.n
        if len(self.y0) != n:
            raise EngineError(f"y0 has {len(self.y0)} entries for n={n}")
        if self.horizon < 0:
            raise EngineError("horizon must be nonnegative")
        length = self.plan.topology.length
        if length is not None and self.horizon > length:
            raise EngineError(f"horizon {self.horizon} exceeds the explicit "
                              f"topology schedule of length {length}")
        if self.delays.source == "uniform" and self.delays.n != n:
            raise EngineError("uniform delay schedule sized for a different n")
        if isinstance(self.weights, WeightMatrix):
            if not self.plan.topology.is_static or self.plan.termination_events:
                raise EngineError("explicit weight matrices need a static, "
                                  "termination-free plan")
            _check_weights_against(self.plan.topology.graph_at(0).edges,
                                   self.weights.entries, n)

    @property
    def n(self) -> int:
        return self.plan.topology.n

    @property
    def mu_star(self) -> float:
        return float(sum(self.y0)) / self.n


@dataclass
class RunResult:
    """All states of a run plus trace helpers."""

    spec: RunSpec
    states: list[SimulationState]

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    def mu_series(self) -> np.ndarray:
        return np.stack([ratios(st) for st in self.states])

    def final_ratios(self) -> np.ndarray:
        return ratios(self.states[-1])

    def spread_series(self) -> np.ndarray:
        mu = self.mu_series()
        return mu.max(axis=1) - mu.min(axis=1)

    def deviation_series(self) -> np.ndarray:
        """Per-step max |mu_j - mu*|."""
        mu = self.mu_series()
        return np.abs(mu - self.spec.mu_star).max(axis=1)

    def steps_to_epsilon(self, epsilon: float | None = None) -> int | None:
        eps = self.spec.epsilon if epsilon is None else epsilon
        dev = self.deviation_series()
        hits = np.nonzero(dev <= eps)[0]
        return int(hits[0]) if hits.size else None

    def trace_rows(self):
        for k, st in enumerate(self.states):
            mu = ratios(st)
            for j in range(len(st.y)):
                yield k, j, float(st.y[j]), float(st.z[j]), float(mu[j])

    def trace_csv(self) -> str:
        lines = ["k,node,y,z,mu"]
        for k, j, y, z, mu in self.trace_rows():
            lines.append(f"{k},{j},{y!r},{z!r},{mu!r}")
        return "\n".join(lines) + "\n"

    def spread_csv(self) -> str:
        lines = ["k,spread"]
        for k, s in enumerate(self.spread_series()):
            lines.append(f"{k},{float(s)!r}")
        return "\n".join(lines) + "\n"


def run(spec: RunSpec) -> RunResult:
    """Execute a full experiment; identical specs yield identical results."""
    state = initial_state(spec.y0, spec.plan)
    states = [state]
    for k in range(spec.horizon):
        s = resolve_step(k, spec.plan, spec.delays, spec.weights)
        state = _step_structured(state, s, spec.plan, spec.check_conservation)
        states.append(state)
    return RunResult(spec, states)
