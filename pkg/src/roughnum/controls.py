"""Grid controls, greedy interval partitions and the block-counting functional.

A control assigns a nonnegative, superadditive mass to every ordered pair of
grid points and vanishes on the diagonal.  The greedy partition walks the grid
from the left end of a window and stops each block at the first grid point
where the accrued mass reaches a threshold ``alpha``; the number of blocks
completed strictly before the right end is the counting functional computed by
:func:`n_alpha`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "Control",
    "GreedyPartition",
    "SuperadditivityError",
    "build_table_control",
    "greedy_partition",
    "n_alpha",
    "accumulated_alpha_variation",
]

# Absolute slack used when validating control axioms on floating point data.
ATOL = 1e-9


class SuperadditivityError(ValueError):
    """A pairwise table violates one of the control axioms."""


class Control:
    """Nonnegative superadditive interval function on a strictly increasing grid.

    Parameters
    ----------
    grid:
        Strictly increasing time points ``t_0 < ... < t_n``.
    evaluator:
        Pure function of an index pair ``(i, j)``, ``i < j``, returning the
        mass of ``[t_i, t_j]``.  Instances are immutable after construction
        and safe to query from concurrent workers as long as the evaluator is
        a pure function of the pair (memoisation inside the evaluator is
        fine).

    Notes
    -----
    Evaluators backed by incremental dynamic programming are optimised for
    forward scans ``value(i, i+1), value(i, i+2), ...`` as performed by
    :func:`greedy_partition`; random access works but may recompute rows.
    """

    def __init__(self, grid, evaluator: Callable[[int, int], float], scanner=None):
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 1 or grid.size < 2:
            raise ValueError("grid needs at least two points")
        if not np.all(np.diff(grid) > 0.0):
            raise ValueError("grid must be strictly increasing")
        grid.setflags(write=False)
        self._grid = grid
        self._evaluator = evaluator
        self._scanner = scanner

    @property
    def grid(self) -> np.ndarray:
        return self._grid

    def __len__(self) -> int:
        return int(self._grid.size)

    def value(self, i: int, j: int) -> float:
        """Mass of ``[t_i, t_j]``; zero on the diagonal."""
        n = self._grid.size
        if not (0 <= i <= j < n):
            raise IndexError(f"index pair ({i}, {j}) outside grid of size {n}")
        if i == j:
            return 0.0
        return float(self._evaluator(i, j))

    def first_at_least(self, i: int, alpha: float, t: int) -> int | None:
        """Smallest grid index ``u`` in ``(i, t]`` with mass >= ``alpha``.

        Falls back to a linear scan over :meth:`value`; evaluators may
        supply a faster scanner with identical semantics.
        """
        if self._scanner is not None:
            return self._scanner(i, alpha, t)
        for u in range(i + 1, t + 1):
            if self.value(i, u) >= alpha:
                return u
        return None


@dataclass(frozen=True)
class GreedyPartition:
    """Greedy stopping indices for one threshold on one window.

    ``taus`` are grid indices ``tau_0 = s, ..., tau_m = t``; every completed
    block (one whose right end lies strictly before ``t``) carries mass at
    least ``alpha`` and stops at the first grid point doing so.  ``count`` is
    the number of stopping indices strictly inside ``[s, t)``, excluding
    ``tau_0``.
    """

    alpha: float
    taus: tuple[int, ...]
    count: int


def _check_window(control: Control, window: tuple[int, int] | None) -> tuple[int, int]:
    n = len(control)
    if window is None:
        return 0, n - 1
    s, t = int(window[0]), int(window[1])
    if not (0 <= s < t <= n - 1):
        raise ValueError(f"window ({s}, {t}) invalid for grid of size {n}")
    return s, t


def _validate_table(grid: np.ndarray, table: np.ndarray) -> None:
    n = grid.size
    diag = np.abs(np.diagonal(table))
    if np.any(diag > ATOL):
        i = int(np.argmax(diag))
        raise SuperadditivityError(f"nonzero diagonal at index {i}: {table[i, i]!r}")
    iu, ju = np.triu_indices(n, k=1)
    vals = table[iu, ju]
    if np.any(vals < -ATOL):
        k = int(np.argmin(vals))
        raise SuperadditivityError(
            f"negative value at ({iu[k]}, {ju[k]}): {vals[k]!r}"
        )
    # Exhaustive triple scan up to n = 64, randomised 10 n^2 triples above.
    if n <= 64:
        i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
        mask = (i < j) & (j < k)
        i, j, k = i[mask], j[mask], k[mask]
    else:
        rng = np.random.default_rng(0x5AD)
        m = 10 * n * n
        i = rng.integers(0, n - 2, size=m)
        j = rng.integers(1, n - 1, size=m)
        k = rng.integers(2, n, size=m)
        lo = np.minimum(np.minimum(i, j), k)
        hi = np.maximum(np.maximum(i, j), k)
        mid = i + j + k - lo - hi
        keep = (lo < mid) & (mid < hi)
        i, j, k = lo[keep], mid[keep], hi[keep]
    defect = table[i, j] + table[j, k] - table[i, k]
    bad = defect > ATOL
    if np.any(bad):
        b = int(np.argmax(defect))
        raise SuperadditivityError(
            "superadditivity violated at triple "
            f"({i[b]}, {j[b]}, {k[b]}): "
            f"{table[i[b], j[b]]!r} + {table[j[b], k[b]]!r} > {table[i[b], k[b]]!r}"
        )


def build_table_control(grid, table) -> Control:
    """Build a :class:`Control` backed by an explicit pairwise table.

    The table is validated on entry: zero diagonal, nonnegative entries and
    superadditivity ``w(i,j) + w(j,k) <= w(i,k)`` (exhaustively for grids up
    to 64 points, on ``10 n^2`` sampled triples above).  Violations raise
    :class:`SuperadditivityError` naming a witnessing pair or triple.
    """
    grid = np.asarray(grid, dtype=float)
    table = np.asarray(table, dtype=float)
    if table.shape != (grid.size, grid.size):
        raise ValueError(f"table shape {table.shape} does not match grid size {grid.size}")
    if grid.ndim != 1 or not np.all(np.diff(grid) > 0.0):
        raise ValueError("grid must be strictly increasing")
    _validate_table(grid, table)
    table = table.copy()
    table.setflags(write=False)
    return Control(grid, lambda i, j: table[i, j])


def greedy_partition(
    control: Control, alpha: float, window: tuple[int, int] | None = None
) -> GreedyPartition:
    """Run the greedy stopping rule for threshold ``alpha`` on a grid window.

    Starting from the left end ``s``, each stopping index is the smallest
    grid point ``u`` with ``control(tau_i, u) >= alpha``, capped at ``t``.
    Termination is guaranteed since every step advances at least one index.
    """
    if not alpha > 0.0:
        raise ValueError("alpha must be positive")
    s, t = _check_window(control, window)
    taus = [s]
    cur = s
    count = 0
    while cur < t:
        nxt = control.first_at_least(cur, alpha, t)
        if nxt is None:
            nxt = t  # threshold never reached: cap at the window end
        taus.append(nxt)
        if nxt < t:
            count += 1
        cur = nxt
    return GreedyPartition(alpha=float(alpha), taus=tuple(taus), count=count)


def n_alpha(control: Control, alpha: float, window: tuple[int, int] | None = None) -> int:
    """Number of greedy blocks completed strictly before the window end."""
    return greedy_partition(control, alpha, window).count


def accumulated_alpha_variation(
    control: Control, alpha: float, window: tuple[int, int] | None = None
) -> float:
    """Largest total mass of a window dissection whose blocks all stay <= ``alpha``.

    Computed by dynamic programming over grid indices: ``dp[v]`` is the best
    admissible chain mass from the window start to ``v``, maximised over the
    previous chain point.  If no admissible dissection exists (some
    unavoidable block already exceeds ``alpha``) the value is 0 and a
    ``RuntimeWarning`` flags the window.
    """
    if not alpha > 0.0:
        raise ValueError("alpha must be positive")
    s, t = _check_window(control, window)
    neg = -np.inf
    dp = np.full(t - s + 1, neg)
    dp[0] = 0.0
    for v in range(s + 1, t + 1):
        best = neg
        for w in range(s, v):
            if dp[w - s] == neg:
                continue
            mass = control.value(w, v)
            if mass <= alpha:
                cand = dp[w - s] + mass
                if cand > best:
                    best = cand
        dp[v - s] = best
    if dp[-1] == neg:
        warnings.warn(
            f"window ({s}, {t}) admits no dissection with all blocks <= {alpha!r}; "
            "returning 0",
            RuntimeWarning,
            stacklevel=2,
        )
        return 0.0
    return float(dp[-1])
