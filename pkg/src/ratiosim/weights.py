"""Column-stochastic protocol weights and the doubly stochastic comparator weights.

Entry (l, j) of a weight matrix is the weight node j places on its link to
node l; the diagonal holds self-weights. Columns of a valid protocol
matrix sum to 1, so the linear update x <- P x conserves total mass.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .graph import Digraph, Edge

COLUMN_SUM_TOL = 1e-12


class WeightError(ValueError):
    """Weight matrix construction or compatibility failure."""


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Immutable dense n x n weight matrix."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.entries, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise WeightError(f"weight matrix must be square, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise WeightError("weight matrix entries must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def column_sums(self) -> np.ndarray:
        return self.entries.sum(axis=0)

    def support_edges(self) -> frozenset[Edge]:
        """Off-diagonal positions carrying positive weight, as (receiver, sender) pairs."""
        n = self.n
        return frozenset((l, j) for l in range(n) for j in range(n)
                         if l != j and self.entries[l, j] > 0.0)


def out_degree_weights(g: Digraph) -> WeightMatrix:
    """Each node splits unit weight equally over itself and its out-neighbors.

    An isolated node keeps self-weight 1. The result is column stochastic
    by construction and positive exactly on the diagonal and the graph's
    edges.
    """
    w = np.zeros((g.n, g.n))
    for i in range(g.n):
        share = 1.0 / (1.0 + g.out_degree(i))
        w[i, i] = share
        for l in g.out_neighbors(i):
            w[l, i] = share
    return WeightMatrix(w)


@dataclass(frozen=True)
class StochasticityReport:
    """Outcome of checking a weight matrix against its digraph."""

    column_sum_deviation: tuple[float, ...]
    structure_violations: tuple[Edge, ...]   # positive weight off the graph
    zero_diagonals: tuple[int, ...]
    negative_entries: tuple[Edge, ...]
    tol: float

    @property
    def max_column_deviation(self) -> float:
        return max(self.column_sum_deviation, default=0.0)

    @property
    def is_clean(self) -> bool:
        return (self.max_column_deviation <= self.tol
                and not self.structure_violations
                and not self.zero_diagonals
                and not self.negative_entries)

    def summary(self) -> str:
        lines = [f"max_column_deviation: {self.max_column_deviation:.3e}",
                 f"structure_violations: {len(self.structure_violations)}",
                 f"zero_diagonals: {len(self.zero_diagonals)}",
                 f"negative_entries: {len(self.negative_entries)}",
                 f"clean: {self.is_clean}"]
        return "\n".join(lines)


def validate_column_stochastic(w: WeightMatrix, g: Digraph,
                               tol: float = COLUMN_SUM_TOL) -> StochasticityReport:
    """Report column-sum deviations, off-graph weights, and zero self-weights.

    Always returns a report; content problems never raise. Only a
    dimension mismatch between matrix and graph is an error.
    """
    if w.n != g.n:
        raise WeightError(f"matrix order {w.n} does not match graph order {g.n}")
    sums = w.column_sums()
    deviation = tuple(abs(float(s) - 1.0) for s in sums)
    violations = tuple(sorted(w.support_edges() - g.edges))
    zero_diag = tuple(j for j in range(w.n) if w.entries[j, j] <= 0.0)
    negative = tuple(sorted((int(l), int(j))
                            for l, j in zip(*np.nonzero(w.entries < 0.0))))
    return StochasticityReport(deviation, violations, zero_diag, negative, tol)


def doubly_stochastic_weights(g: Digraph) -> WeightMatrix:
    """Symmetric doubly stochastic weights for a symmetric digraph.

    Off-diagonal (l, j) gets 1/max(1+D_l, 1+D_j) on edges; the diagonal
    absorbs the remainder so every row and column sums to 1. Fails on
    asymmetric digraphs, where no such assignment is attempted.
    """
    if not g.is_symmetric():
        missing = sorted((i, j) for (j, i) in g.edges if (i, j) not in g.edges)
        raise WeightError(
            "doubly stochastic weights need a symmetric digraph; "
            f"missing reverse edges for {missing[:5]}")
    w = np.zeros((g.n, g.n))
    for j, i in g.edges:
        w[j, i] = 1.0 / max(1 + g.out_degree(j), 1 + g.out_degree(i))
    for j in range(g.n):
        w[j, j] = 1.0 - w[j, :].sum()
    return WeightMatrix(w)


def parse_matrix_text(text: str) -> WeightMatrix:
    """Parse a row-major whitespace-separated matrix; '1/3'-style fractions accepted."""
    rows = []
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        try:
            rows.append([float(Fraction(tok)) for tok in ln.split()])
        except (ValueError, ZeroDivisionError) as exc:
            raise WeightError(f"bad matrix row: {ln!r}") from exc
    if not rows:
        raise WeightError("matrix text contains no rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise WeightError("matrix rows have inconsistent lengths")
    return WeightMatrix(np.array(rows))


def format_matrix_text(w: WeightMatrix) -> str:
    lines = [" ".join(repr(float(v)) for v in row) for row in w.entries]
    return "\n".join(lines) + "\n"
