"""Built-in property battery behind the ``selftest`` subcommand.

Each check re-derives its expectation from a literal reading of the
definitions (linear scans, exhaustive enumeration, closed forms) rather than
reusing the optimised code paths, and runs in a few seconds total.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import gaussian, tails
from .controls import Control, build_table_control, greedy_partition, n_alpha
from .rde import OneForm, VectorFieldFamily, rough_integral, solve_rde
from .roughpath import (
    chen_residual,
    control_from_rough_path,
    geometric_residual,
    lift_piecewise_linear,
    p_variation,
)

__all__ = ["run_selftest"]


def _random_power_table(rng, n: int) -> tuple[np.ndarray, np.ndarray]:
    grid = np.cumsum(rng.uniform(0.05, 1.0, size=n + 1))
    inc = rng.uniform(0.0, 1.0, size=n)
    p = rng.uniform(1.0, 2.5)
    cum = np.concatenate([[0.0], np.cumsum(inc)])
    table = np.maximum(cum[None, :] - cum[:, None], 0.0) ** p
    table[np.tril_indices(n + 1)] = 0.0
    return grid, table


def _literal_count(value: Callable[[int, int], float], n: int, alpha: float) -> tuple:
    """Greedy count by a direct transcription of the stopping-time definition."""
    taus = [0]
    while taus[-1] < n:
        prev = taus[-1]
        nxt = n
        for u in range(prev + 1, n + 1):
            if value(prev, u) >= alpha:
                nxt = u
                break
        taus.append(nxt)
    count = sum(1 for tau in taus[1:] if tau < n)
    return count, taus


def _check_greedy_oracle(rng) -> str | None:
    for _ in range(60):
        n = int(rng.integers(4, 17))
        grid, table = _random_power_table(rng, n)
        c = build_table_control(grid, table)
        vals = table[np.triu_indices(n + 1, k=1)]
        alpha = float(np.quantile(vals[vals > 0], rng.uniform(0.2, 0.8)))
        count, taus = _literal_count(lambda i, j: table[i, j], n, alpha)
        gp = greedy_partition(c, alpha)
        if gp.count != count or list(gp.taus) != taus:
            return f"greedy mismatch: {gp.count} vs literal {count}"
    return None


def _check_scaling(rng) -> str | None:
    for _ in range(100):
        n = int(rng.integers(4, 17))
        grid, table = _random_power_table(rng, n)
        lam = float(2.0 ** rng.integers(-3, 4))
        alpha = float(np.quantile(table[np.triu_indices(n + 1, k=1)], 0.6) + 1e-6)
        c = build_table_control(grid, table)
        c_scaled = Control(grid, lambda i, j, t=table, L=lam: L * t[i, j])
        if n_alpha(c_scaled, alpha) != n_alpha(c, alpha / lam):
            return "scaling lemma violated"
    return None


def _check_alpha_beta(rng) -> str | None:
    for _ in range(100):
        n = int(rng.integers(4, 17))
        grid, table = _random_power_table(rng, n)
        c = build_table_control(grid, table)
        vals = table[np.triu_indices(n + 1, k=1)]
        top = float(np.max(vals))
        alpha = float(rng.uniform(0.05, 0.5) * top + 1e-9)
        beta = float(alpha * rng.uniform(1.0, 4.0))
        if n_alpha(c, alpha) > (beta / alpha) * (2 * n_alpha(c, beta) + 1) + 1e-9:
            return f"alpha-beta comparison violated (alpha={alpha}, beta={beta})"
    return None


def _check_lift_algebra(rng) -> str | None:
    for _ in range(10):
        pts = rng.standard_normal((int(rng.integers(5, 30)), int(rng.integers(1, 4))))
        x = lift_piecewise_linear(pts)
        if chen_residual(x) > 1e-12:
            return "Chen residual above 1e-12"
        if geometric_residual(x) > 1e-12:
            return "geometric residual above 1e-12"
    return None


def _exhaustive_pvar_power(x, p: float, mode: str) -> float:
    n = len(x) - 1
    from .roughpath import _pair_weight_column  # literal enumeration below

    best = 0.0
    for mask in range(1 << (n - 1)):
        pts = [0] + [i + 1 for i in range(n - 1) if mask >> i & 1] + [n]
        total = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            total += float(_pair_weight_column(x, np.array([a]), b, p, mode)[0])
        best = max(best, total)
    return best


def _check_pvar_dp(rng) -> str | None:
    for _ in range(20):
        pts = rng.standard_normal((8, 2))
        x = lift_piecewise_linear(pts)
        p = float(rng.uniform(2.1, 2.9))
        dp = p_variation(x, p, mode="homogeneous") ** p
        brute = _exhaustive_pvar_power(x, p, "homogeneous")
        if abs(dp - brute) > 1e-10:
            return f"DP vs exhaustive p-variation differ by {abs(dp - brute):.2e}"
    return None


def _check_path_control(rng) -> str | None:
    pts = rng.standard_normal((24, 2))
    x = lift_piecewise_linear(pts)
    c = control_from_rough_path(x, 2.5)
    n = len(x)
    table = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            w = p_variation(x, 2.5, window=(i, j), mode="level1") ** 2.5
            w2 = p_variation(x, 2.5, window=(i, j), mode="level2") ** 1.25
            table[i, j] = w + w2
    ct = Control(x.times, lambda i, j: table[i, j])
    for alpha in (0.5, 2.0, 8.0):
        if n_alpha(c, alpha) != n_alpha(ct, alpha):
            return "deferred control disagrees with precomputed table"
    return None


def _check_solvers() -> str | None:
    t = np.linspace(0.0, 1.0, 2001)
    x = lift_piecewise_linear(np.sin(2.0 * t) + t, t)
    phi = OneForm(value=lambda v: np.array([[v[0]]]),
                  derivative=lambda v: np.array([[[1.0]]]))
    z = rough_integral(phi, x, with_lift=False)
    exact = 0.5 * ((np.sin(2.0) + 1.0) ** 2 - np.sin(0.0) ** 2)
    if abs(z.values[-1, 0] - exact) > 1e-6:
        return "compensated integral misses the exact square identity"
    V = VectorFieldFamily(value=lambda y: np.array([[y[0]]]),
                          derivative=lambda y: np.array([[[1.0]]]))
    sol = solve_rde(V, x, np.array([1.0]))
    want = math.exp(np.sin(2.0) + 1.0)
    if abs(sol.values[-1, 0] - want) / want > 1e-5:
        return "exponential solve outside tolerance"
    return None


def _check_she_kernel() -> str | None:
    eps, K = 0.5, 100_000
    xs = np.linspace(-math.pi, math.pi, 21)
    series = gaussian.she_partial_kernel_series(eps, xs, K)
    closed = gaussian.she_kernel_closed_reference(eps, xs)
    bound = 2.0 / (eps * eps * K) + 1e-9
    if float(np.max(np.abs(series - closed))) > bound:
        return "closed-form kernel identity residual above the truncation bound"
    return None


def _check_weibull_fit(rng) -> str | None:
    u = rng.uniform(0.0, 1.0, size=20_000)
    x = (-np.log1p(-u)) ** (1.0 / 2.0)  # shape 2, scale 1
    fit = tails.fit_weibull_shape(x)
    if abs(fit.shape - 2.0) / 2.0 > 0.10:
        return f"calibration failure: fitted {fit.shape:.3f} for true 2.0"
    fit_scaled = tails.fit_weibull_shape(5.0 * x)
    if abs(fit_scaled.shape - fit.shape) > 1e-9:
        return "shape estimate not invariant under positive rescaling"
    return None


def _check_sampler() -> str | None:
    model = gaussian.brownian(dimension=2)
    grid = gaussian.default_grid(model, 64)
    a = gaussian.sample_paths(model, grid, 3, seed=42)
    b = gaussian.sample_paths(model, grid, 3, seed=42)
    if not np.array_equal(a, b):
        return "sampler is not deterministic in the seed"
    big = gaussian.sample_paths(model, grid, 3000, seed=7)
    var = float(np.var(np.diff(big[:, :, 0], axis=1)))
    h = grid[1] - grid[0]
    if abs(var - h) / h > 0.05:
        return f"Brownian increment variance off by {abs(var - h) / h:.1%}"
    return None


CHECKS = (
    ("greedy-vs-literal-oracle", _check_greedy_oracle, True),
    ("scaling-lemma-exact", _check_scaling, True),
    ("alpha-beta-comparison", _check_alpha_beta, True),
    ("lift-algebra-residuals", _check_lift_algebra, True),
    ("pvar-dp-vs-exhaustive", _check_pvar_dp, True),
    ("path-control-vs-table", _check_path_control, True),
    ("solver-closed-forms", _check_solvers, False),
    ("she-kernel-identity", _check_she_kernel, False),
    ("weibull-calibration", _check_weibull_fit, True),
    ("sampler-moments", _check_sampler, False),
)


def run_selftest(log=print) -> int:
    """Run the battery; print one line per check; return 0 iff all pass."""
    rng = np.random.default_rng(0xC0FFEE)
    failures = 0
    for name, fn, needs_rng in CHECKS:
        msg = fn(rng) if needs_rng else fn()
        if msg is None:
            log(f"PASS {name}")
        else:
            log(f"FAIL {name}: {msg}")
            failures += 1
    return 0 if failures == 0 else 1
