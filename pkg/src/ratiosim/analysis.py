"""Ergodicity and structure analysis of column-stochastic matrix products.

Conventions: matrices act by x <- B x with columns summing to 1, so mass
flows from column index i to row index j whenever B[j, i] > 0. The
ergodicity coefficient used throughout is the largest row spread

    delta(B) = max_j max_{i1, i2} |B[j, i1] - B[j, i2]|,

zero exactly when all columns are identical.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .augmented import AugmentedMatrix
from .graph import tarjan_scc

_STOCHASTIC_WARN_TOL = 1e-9


class AnalysisError(ValueError):
    """Invalid input to an analysis routine."""


class EnvelopeInapplicableError(AnalysisError):
    """The ratio error envelope is undefined when the initial values sum to zero."""


def delta_coefficient(b: np.ndarray | AugmentedMatrix) -> float:
    """Largest row spread of a column-stochastic matrix; 0 iff rank-one with
    identical columns, 1 for the identity."""
    arr = b.entries if isinstance(b, AugmentedMatrix) else np.asarray(b, float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise AnalysisError(f"expected a square matrix, got shape {arr.shape}")
    dev = np.abs(arr.sum(axis=0) - 1.0).max()
    if dev > _STOCHASTIC_WARN_TOL:
        warnings.warn(f"matrix is not column stochastic (max column deviation "
                      f"{dev:.3e}); delta computed anyway", stacklevel=2)
    return float((arr.max(axis=1) - arr.min(axis=1)).max())


class SiaClass(enum.Enum):
    SIA = "sia"
    DECOMPOSABLE = "decomposable"
    PERIODIC = "periodic"


def _closed_components(arr: np.ndarray) -> tuple[list[list[int]], list[list[int]]]:
    """All SCCs plus the closed ones (no mass leaking out) of the flow digraph."""
    n = arr.shape[0]
    succ = [[j for j in range(n) if arr[j, i] > 0] for i in range(n)]
    comps = tarjan_scc([[j for j in s if j != i] for i, s in enumerate(succ)])
    member = {}
    for ci, comp in enumerate(comps):
        for v in comp:
            member[v] = ci
    closed = []
    for ci, comp in enumerate(comps):
        leaks = any(member[j] != ci for i in comp for j in succ[i] if j != i)
        if not leaks:
            closed.append(comp)
    return comps, closed


def _cyclic_index(arr: np.ndarray, component: list[int]) -> int:
    """gcd of directed cycle lengths through a strongly connected component."""
    comp = set(component)
    root = component[0]
    level = {root: 0}
    order = [root]
    g = 0
    if arr[root, root] > 0:
        g = 1
    head = 0
    while head < len(order):
        u = order[head]
        head += 1
        for v in range(arr.shape[0]):
            if arr[v, u] <= 0 or v not in comp:
                continue
            if v == u:
                g = math.gcd(g, 1)
                continue
            if v not in level:
                level[v] = level[u] + 1
                order.append(v)
            else:
                g = math.gcd(g, abs(level[u] + 1 - level[v]))
    for u in component:
        if arr[u, u] > 0:
            g = math.gcd(g, 1)
    return g if g > 0 else 0


def classify_sia(b: np.ndarray | AugmentedMatrix) -> SiaClass:
    """Structural test of whether powers of B converge to identical columns.

    DECOMPOSABLE: more than one closed communicating class, so mass starting
    in different classes never mixes. PERIODIC: a unique closed class whose
    cycle lengths share a factor > 1. SIA otherwise.
    """
    arr = b.entries if isinstance(b, AugmentedMatrix) else np.asarray(b, float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise AnalysisError(f"expected a square matrix, got shape {arr.shape}")
    if (arr < 0).any():
        raise AnalysisError("matrix must be nonnegative")
    _, closed = _closed_components(arr)
    if len(closed) != 1:
        return SiaClass.DECOMPOSABLE
    if _cyclic_index(arr, closed[0]) != 1:
        return SiaClass.PERIODIC
    return SiaClass.SIA


class CminBounds(NamedTuple):
    """Lower bounds for the minimum entry of long augmented-word products.

    ``optimistic`` uses base 1/d_max; ``conservative`` uses the protocol's
    actual minimum link weight 1/(1+d_max). The optimistic constant can be
    violated (out-degree weighting never places a weight above 1/(1+d)), so
    only the conservative variant is safe to assert against simulations.
    """

    optimistic: float
    conservative: float


def c_min_bound(n: int, tau_bar: int, d_max: int) -> CminBounds:
    if n < 1 or d_max < 1 or tau_bar < 0:
        raise AnalysisError("need n >= 1, d_max >= 1, tau_bar >= 0")
    exponent = n * (tau_bar + 1)
    return CminBounds(optimistic=(1.0 / d_max) ** exponent,
                      conservative=(1.0 / (1.0 + d_max)) ** exponent)


@dataclass(frozen=True)
class WordPositivityReport:
    length: int
    n: int
    tau_bar: int
    d_max: int
    first_rows_positive: bool
    min_first_rows_entry: float
    bounds: CminBounds

    @property
    def meets_optimistic_bound(self) -> bool:
        return self.first_rows_positive and self.min_first_rows_entry >= self.bounds.optimistic

    @property
    def meets_conservative_bound(self) -> bool:
        return (self.first_rows_positive
                and self.min_first_rows_entry >= self.bounds.conservative)

    def summary(self) -> str:
        return "\n".join([
            f"word_length: {self.length}",
            f"first_rows_positive: {self.first_rows_positive}",
            f"min_first_rows_entry: {self.min_first_rows_entry!r}",
            f"c_min_optimistic: {self.bounds.optimistic!r}",
            f"c_min_conservative: {self.bounds.conservative!r}",
            f"meets_optimistic_bound: {self.meets_optimistic_bound}",
            f"meets_conservative_bound: {self.meets_conservative_bound}",
        ])


def word_positivity_check(matrices: Sequence[AugmentedMatrix],
                          d_max: int | None = None) -> WordPositivityReport:
    """Multiply a chronological schedule of augmented matrices (newest on the
    left) and check positivity of the rows belonging to original nodes."""
    if not matrices:
        raise AnalysisError("word must have length >= 1")
    n = matrices[0].n
    tau_bar = matrices[0].tau_bar
    for m in matrices:
        if m.n != n or m.tau_bar != tau_bar:
            raise AnalysisError("matrices in a word must share n and tau_bar")
    product = matrices[0].entries
    for m in matrices[1:]:
        product = m.entries @ product
    if d_max is None:
        d_max = 1
        for m in matrices:
            p = m.base_weights()
            off = (p > 0) & ~np.eye(n, dtype=bool)
            d_max = max(d_max, int(off.sum(axis=0).max()))
    first = product[:n, :]
    return WordPositivityReport(
        length=len(matrices), n=n, tau_bar=tau_bar, d_max=d_max,
        first_rows_positive=bool((first > 0).all()),
        min_first_rows_entry=float(first.min()),
        bounds=c_min_bound(n, tau_bar, d_max))


class Envelope(NamedTuple):
    mu_star: float
    bound: float


def error_envelope(sigma_y: float, sigma_abs_y: float, n: int,
                   e_max: float) -> Envelope:
    """Worst-case |ratio - average| once every product row is within a
    relative deviation e_max of rank-one:

        bound = mu* (sigma_y + sigma_abs_y) e_max / (sigma_y (1 - e_max)).
    """
    if n < 1:
        raise AnalysisError("need n >= 1")
    if not 0.0 <= e_max < 1.0:
        raise AnalysisError(f"e_max must lie in [0, 1), got {e_max}")
    if sigma_y == 0:
        raise EnvelopeInapplicableError(
            "envelope undefined for initial values summing to zero")
    mu_star = sigma_y / n
    bound = mu_star * (sigma_y + sigma_abs_y) * e_max / (sigma_y * (1.0 - e_max))
    return Envelope(mu_star=mu_star, bound=bound)


def observed_e_max(b: np.ndarray, rows: int | None = None) -> float:
    """Measured relative row deviation from rank-one over the first ``rows`` rows.

    Writing each row as c (1 + e) with c the row midpoint, returns the
    largest |e| entry; feeds the error envelope with an empirical e_max.
    """
    arr = np.asarray(b, float)
    sub = arr if rows is None else arr[:rows, :]
    hi = sub.max(axis=1)
    lo = sub.min(axis=1)
    mid = (hi + lo) / 2.0
    if (mid <= 0).any():
        raise AnalysisError("rows must be strictly positive to measure e_max")
    return float(((hi - lo) / (2.0 * mid)).max())


def delta_decay_profile(matrices: Sequence[AugmentedMatrix | np.ndarray],
                        window: int) -> np.ndarray:
    """delta of the running backward product sampled each ``window`` factors.

    Entry m holds delta(M[(m+1)w - 1] ... M[1] M[0]); useful for verifying
    that mixing eventually drives the spread toward zero.
    """
    if window < 1:
        raise AnalysisError("window must be >= 1")
    mats = [m.entries if isinstance(m, AugmentedMatrix) else np.asarray(m, float)
            for m in matrices]
    deltas = []
    product = None
    for idx, m in enumerate(mats):
        product = m if product is None else m @ product
        if (idx + 1) % window == 0:
            deltas.append(delta_coefficient(product))
    return np.array(deltas)
