"""Augmented state-space oracle for the delay-robust consensus engine.

Delays are modeled exactly by enlarging the state: each node gets one
virtual slot per remaining-delay value, so a message due to arrive in r
steps sits in slot (node, r). The whole system then becomes a pure linear
recursion x[k+1] = M[k] x[k] with column-stochastic block matrices

    M = [ P_0   I  0 ... 0 ]
        [ P_1   0  I ... 0 ]
        [ ...              ]
        [ P_t   0  0 ... 0 ]

where P_r holds the weights of links whose message is delayed by exactly r
at this step (diagonals always sit in P_0) and the identity blocks shift
buffered mass one step closer to arrival.

Delayed-ACK link termination extends the layout with per-link loop-back
chains: a send on a dead-but-undiscovered link enters the chain at a depth
equal to the steps remaining until discovery, then shifts down and
re-enters the sender. This module never touches the engine's message
bookkeeping; it only shares the same resolved per-step structure, which is
what makes it an independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import engine as engine_mod
from .engine import RunResult, RunSpec, SimulationState
from .graph import Edge
from .weights import COLUMN_SUM_TOL, WeightMatrix

Slot = tuple  # ("delay", node, r) or ("chain", sender, receiver, depth)


class AugmentedError(ValueError):
    """Inconsistent augmented-matrix construction or comparison."""


@dataclass(frozen=True, eq=False)
class AugmentedMatrix:
    """Column-stochastic block matrix over originals plus delay slots."""

    n: int
    tau_bar: int
    entries: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.entries, dtype=float)
        dim = (self.tau_bar + 1) * self.n
        if arr.shape != (dim, dim):
            raise AugmentedError(f"expected shape {(dim, dim)}, got {arr.shape}")
        if (arr < 0).any():
            raise AugmentedError("augmented matrix must be nonnegative")
        dev = np.abs(arr.sum(axis=0) - 1.0).max()
        if dev > COLUMN_SUM_TOL:
            raise AugmentedError(f"columns must sum to 1 (max deviation {dev:.3e})")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def dim(self) -> int:
        return (self.tau_bar + 1) * self.n

    def base_weights(self) -> np.ndarray:
        """Recover P as the sum of the P_r blocks in the first block column."""
        n = self.n
        return sum(self.entries[r * n:(r + 1) * n, :n]
                   for r in range(self.tau_bar + 1))


def build_augmented(weights: WeightMatrix | np.ndarray,
                    delay_assignment: Mapping[Edge, int],
                    tau_bar: int) -> AugmentedMatrix:
    """Assemble the block matrix for one step's delay assignment.

    ``delay_assignment`` must cover exactly the positive off-diagonal
    entries of ``weights``; diagonal entries always land in P_0.
    """
    w = weights.entries if isinstance(weights, WeightMatrix) else np.asarray(weights, float)
    n = w.shape[0]
    if tau_bar < 0:
        raise AugmentedError("tau_bar must be nonnegative")
    support = {(l, j) for l in range(n) for j in range(n)
               if l != j and w[l, j] > 0}
    assigned = set(delay_assignment)
    if assigned != support:
        missing = sorted(support - assigned)
        extra = sorted(assigned - support)
        raise AugmentedError(
            f"delay assignment must cover the weight support exactly; "
            f"missing {missing[:4]}, extraneous {extra[:4]}")
    dim = (tau_bar + 1) * n
    m = np.zeros((dim, dim))
    for j in range(n):
        m[j, j] = w[j, j]
    for (l, j), r in delay_assignment.items():
        if not 0 <= r <= tau_bar:
            raise AugmentedError(f"delay {r} on link ({l}, {j}) outside [0, {tau_bar}]")
        m[r * n + l, j] = w[l, j]
    for r in range(1, tau_bar + 1):
        for t in range(n):
            m[(r - 1) * n + t, r * n + t] = 1.0
    return AugmentedMatrix(n=n, tau_bar=tau_bar, entries=m)


# ---------------------------------------------------------------------------
# generalized slot layouts (delay slots plus loop-back chains)


@dataclass(frozen=True)
class AugmentedLayout:
    """Index assignment for the virtual part of the augmented state."""

    n: int
    slots: tuple[Slot, ...]

    @cached_property
    def _index(self) -> dict[Slot, int]:
        idx = {slot: self.n + pos for pos, slot in enumerate(self.slots)}
        if len(idx) != len(self.slots):
            raise AugmentedError("duplicate virtual slots in layout")
        return idx

    @property
    def dim(self) -> int:
        return self.n + len(self.slots)

    def slot_index(self, slot: Slot) -> int:
        try:
            return self._index[slot]
        except KeyError:
            raise AugmentedError(f"layout has no slot {slot}") from None

    @classmethod
    def standard(cls, n: int, tau_bar: int) -> "AugmentedLayout":
        """Delay slots only, grouped by remaining delay to match the block form."""
        slots = [("delay", j, r) for r in range(1, tau_bar + 1) for j in range(n)]
        return cls(n=n, slots=tuple(slots))

    @classmethod
    def with_chains(cls, n: int, tau_bar: int,
                    chain_links: Iterable[tuple[int, int]],
                    chain_len: int) -> "AugmentedLayout":
        """Standard layout plus a loop-back chain per monitored (sender, receiver) link."""
        slots = list(cls.standard(n, tau_bar).slots)
        for sender, receiver in sorted(set(chain_links)):
            for d in range(1, chain_len + 1):
                slots.append(("chain", sender, receiver, d))
        return cls(n=n, slots=tuple(slots))


def build_step_matrix(layout: AugmentedLayout,
                      weights: np.ndarray,
                      delays: Mapping[Edge, int],
                      diverted_depths: Mapping[Edge, int] | None = None) -> np.ndarray:
    """One transition matrix over an explicit layout.

    Original columns place each weighted send with the receiver (delay 0),
    in a delay slot (delay r >= 1), or at the given depth of the sender's
    loop-back chain (links listed in ``diverted_depths``). Virtual columns
    shift their content one step toward the exit with unit weight.
    """
    diverted_depths = diverted_depths or {}
    n = layout.n
    w = np.asarray(weights, dtype=float)
    if w.shape != (n, n):
        raise AugmentedError(f"weights shape {w.shape} does not match layout n={n}")
    m = np.zeros((layout.dim, layout.dim))
    for i in range(n):
        for l in range(n):
            if w[l, i] <= 0:
                continue
            if l == i:
                m[i, i] = w[i, i]
            elif (l, i) in diverted_depths:
                depth = diverted_depths[(l, i)]
                m[layout.slot_index(("chain", i, l, depth)), i] = w[l, i]
            else:
                r = delays.get((l, i), 0)
                row = l if r == 0 else layout.slot_index(("delay", l, r))
                m[row, i] = w[l, i]
    for pos, slot in enumerate(layout.slots):
        col = n + pos
        if slot[0] == "delay":
            _, node, r = slot
            row = node if r == 1 else layout.slot_index(("delay", node, r - 1))
        else:
            _, sender, receiver, d = slot
            row = sender if d == 1 else layout.slot_index(("chain", sender, receiver, d - 1))
        m[row, col] = 1.0
    return m


# ---------------------------------------------------------------------------
# matrix recursion and engine comparison


@dataclass
class OracleStates:
    ys: np.ndarray  # (steps + 1, dim)
    zs: np.ndarray


def iterate(matrices: Sequence[AugmentedMatrix | np.ndarray],
            y0: Sequence[float], z0: Sequence[float]) -> OracleStates:
    """Run the pure matrix recursion from an augmented initial state whose
    virtual entries are zero."""
    mats = [m.entries if isinstance(m, AugmentedMatrix) else np.asarray(m, float)
            for m in matrices]
    y0 = np.asarray(y0, dtype=float)
    z0 = np.asarray(z0, dtype=float)
    if not mats:
        dim = len(y0)
    else:
        dim = mats[0].shape[0]
        for m in mats:
            if m.shape != (dim, dim):
                raise AugmentedError("matrices in a schedule must share dimensions")
    if len(y0) > dim or len(y0) != len(z0):
        raise AugmentedError("initial vectors do not fit the augmented dimension")
    ybar = np.zeros(dim)
    zbar = np.zeros(dim)
    ybar[:len(y0)] = y0
    zbar[:len(z0)] = z0
    ys = [ybar]
    zs = [zbar]
    for m in mats:
        ys.append(m @ ys[-1])
        zs.append(m @ zs[-1])
    return OracleStates(ys=np.stack(ys), zs=np.stack(zs))


@dataclass
class OracleRun:
    layout: AugmentedLayout
    matrices: list[np.ndarray]
    states: OracleStates


def layout_for_spec(spec: RunSpec) -> AugmentedLayout:
    n = spec.plan.topology.n
    tau_bar = spec.delays.tau_bar
    if spec.plan.termination_events:
        links = [(ev.sender, ev.receiver) for ev in spec.plan.termination_events]
        return AugmentedLayout.with_chains(n, tau_bar, links,
                                           spec.plan.ack_delay_bound)
    return AugmentedLayout.standard(n, tau_bar)


def oracle_run(spec: RunSpec) -> OracleRun:
    """Drive the matrix recursion over the same resolved schedule a run uses."""
    layout = layout_for_spec(spec)
    matrices = []
    for k in range(spec.horizon):
        s = engine_mod.resolve_step(k, spec.plan, spec.delays, spec.weights)
        depths = {edge: disc - k for edge, disc in s.diverted.items()}
        matrices.append(build_step_matrix(layout, s.weights, s.delays, depths))
    states = iterate(matrices, np.asarray(spec.y0), np.ones(spec.n))
    return OracleRun(layout=layout, matrices=matrices, states=states)


def engine_state_to_augmented(state: SimulationState,
                              layout: AugmentedLayout) -> tuple[np.ndarray, np.ndarray]:
    """Map a simulator snapshot onto the augmented state by remaining delay.

    A message arriving at step a sits in delay slot a + 1 - k; a diverted
    send discovered at step d sits at chain depth d + 1 - k.
    """
    ybar = np.zeros(layout.dim)
    zbar = np.zeros(layout.dim)
    n = len(state.y)
    ybar[:n] = state.y
    zbar[:n] = state.z
    k = state.step
    for m in state.in_flight:
        r = m.arrival_step + 1 - k
        idx = layout.slot_index(("delay", m.receiver, r))
        ybar[idx] += m.y_mass
        zbar[idx] += m.z_mass
    for p in state.pending_returns:
        d = p.discovery_step + 1 - k
        idx = layout.slot_index(("chain", p.sender, p.receiver, d))
        ybar[idx] += p.y_mass
        zbar[idx] += p.z_mass
    return ybar, zbar


def compare_with_engine(result: RunResult, oracle: OracleRun) -> np.ndarray:
    """Per-step max |engine - oracle| over every y and z state entry."""
    if len(result.states) != oracle.states.ys.shape[0]:
        raise AugmentedError(
            f"engine run has {len(result.states)} states, oracle has "
            f"{oracle.states.ys.shape[0]}; configs disagree")
    devs = np.zeros(len(result.states))
    for k, st in enumerate(result.states):
        ybar, zbar = engine_state_to_augmented(st, oracle.layout)
        dy = np.abs(ybar - oracle.states.ys[k]).max()
        dz = np.abs(zbar - oracle.states.zs[k]).max()
        devs[k] = max(dy, dz)
    return devs
