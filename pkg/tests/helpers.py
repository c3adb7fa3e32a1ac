"""Shared instance generators and literal-definition oracles for the tests.

Oracles here re-derive expected values from first principles (linear scans,
exhaustive enumeration, quadrature) and never call the optimised code paths
they are used to check.
"""

from __future__ import annotations

import itertools

import numpy as np

from roughnum.controls import Control, build_table_control


def power_table(increments, p: float) -> np.ndarray:
    """Superadditive table: p-th power (p >= 1) of an additive control."""
    cum = np.concatenate([[0.0], np.cumsum(np.asarray(increments, dtype=float))])
    table = np.maximum(cum[None, :] - cum[:, None], 0.0) ** p
    table[np.tril_indices(cum.size)] = 0.0
    return table


def random_grid(rng, n: int) -> np.ndarray:
    return np.cumsum(rng.uniform(0.05, 1.0, size=n + 1))


def random_power_control(rng, n: int, positive: bool = False):
    """Random power-of-additive control; returns (control, table)."""
    lo = 0.05 if positive else 0.0
    inc = rng.uniform(lo, 1.0, size=n)
    p = rng.uniform(1.0, 2.5)
    table = power_table(inc, p)
    return build_table_control(random_grid(rng, n), table), table


def random_mixed_control(rng, n: int):
    """Sum of two power controls (still superadditive); returns (control, table)."""
    t1 = power_table(rng.uniform(0.0, 1.0, size=n), rng.uniform(1.0, 2.5))
    t2 = power_table(rng.exponential(0.4, size=n), rng.uniform(1.0, 2.0))
    table = t1 + t2
    return build_table_control(random_grid(rng, n), table), table


def pick_alpha(rng, table: np.ndarray, lo: float = 0.2, hi: float = 0.8) -> float:
    """Threshold away from every stored value (kills ulp-boundary flips)."""
    vals = table[np.triu_indices(table.shape[0], k=1)]
    vals = vals[vals > 0]
    for _ in range(100):
        alpha = float(np.quantile(vals, rng.uniform(lo, hi)) * rng.uniform(0.9, 1.1))
        if alpha > 0 and np.min(np.abs(vals - alpha)) > 1e-9 * alpha:
            return alpha
    raise AssertionError("could not find a safely separated threshold")


def literal_greedy(value, n: int, alpha: float, s: int = 0, t: int | None = None):
    """Direct transcription of the stopping-time definition; returns (count, taus)."""
    if t is None:
        t = n
    taus = [s]
    while taus[-1] < t:
        prev = taus[-1]
        nxt = t
        for u in range(prev + 1, t + 1):
            if value(prev, u) >= alpha:
                nxt = u
                break
        taus.append(nxt)
    count = sum(1 for tau in taus[1:] if tau < t)
    return count, taus


def brute_alpha_variation(value, n: int, alpha: float, s: int = 0, t: int | None = None):
    """Exhaustive accumulated-variation oracle over all 2^(m-1) dissections."""
    if t is None:
        t = n
    interior = list(range(s + 1, t))
    best = None
    for r in range(len(interior) + 1):
        for combo in itertools.combinations(interior, r):
            pts = [s, *combo, t]
            masses = [value(a, b) for a, b in zip(pts[:-1], pts[1:])]
            if all(m <= alpha for m in masses):
                total = sum(masses)
                best = total if best is None else max(best, total)
    return best  # None when no admissible dissection exists


def exhaustive_pvar_power(weight, m: int) -> float:
    """Exhaustive dissection supremum of sum of block weights on points 0..m-1."""
    best = 0.0
    interior = list(range(1, m - 1))
    for r in range(len(interior) + 1):
        for combo in itertools.combinations(interior, r):
            pts = [0, *combo, m - 1]
            best = max(best, sum(weight(a, b) for a, b in zip(pts[:-1], pts[1:])))
    return best


def polyline_second_level_quadrature(samples, substeps: int = 64) -> np.ndarray:
    """Iterated integral of a polyline by midpoint Riemann sums.

    The integrand of ``int (x_u - x_0) (x) dx_u`` is piecewise linear, so the
    midpoint rule on each segment is exact up to roundoff.
    """
    samples = np.asarray(samples, dtype=float)
    d = samples.shape[1]
    x0 = samples[0]
    acc = np.zeros((d, d))
    for a, b in zip(samples[:-1], samples[1:]):
        dx = (b - a) / substeps
        for k in range(substeps):
            mid = a + (k + 0.5) * (b - a) / substeps
            acc += np.outer(mid - x0, dx)
    return acc


def sandwich_additive_instance(rng, n: int):
    """Additive control with an exact grid sandwich certificate.

    Increments are capped at ``alpha / 2`` and the threshold either exceeds
    the window total or is crossed strictly before the right end; both
    sandwich inequalities then hold on the grid by direct argument.
    """
    inc = rng.uniform(0.05, 1.0, size=n)
    table = power_table(inc, 1.0)
    total = float(np.sum(inc))
    prefix_last = float(np.sum(inc[:-1]))
    lo = 2.0 * float(np.max(inc))
    for _ in range(200):
        alpha = float(rng.uniform(lo, max(1.2 * total, 2.0 * lo)))
        if total < alpha or prefix_last >= alpha:
            control = build_table_control(random_grid(rng, n), table)
            return control, alpha
    raise AssertionError("no admissible additive sandwich instance found")


def sandwich_quantized_instance(rng, n: int):
    """Equal integer increments with the threshold hit exactly every k steps.

    Integer arithmetic is exact in binary floating point, so every k-step
    block carries the same stored mass as the threshold and the greedy rule
    lands on block boundaries deterministically.
    """
    c = int(rng.integers(1, 7))
    k = int(rng.integers(1, max(2, n // 2)))
    p = float(rng.uniform(1.0, 2.5))
    table = power_table(np.full(n, float(c)), p)
    alpha = float(np.float64(k * c) ** p)
    control = build_table_control(random_grid(rng, n), table)
    return control, alpha
