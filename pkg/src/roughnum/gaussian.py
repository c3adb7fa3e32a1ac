"""Gaussian driver models: covariances, path sampling, 2D variation of covariances.

Three driver families share one interface: standard Brownian motion,
fractional Brownian motion with Hurst parameter in (1/3, 1), and the spatial
process of the damped heat equation with hyper-viscosity smoothing, whose
covariance is the even cosine series ``sum_k cos(k x) / (1 + k^2 + eps^2 k^4)``
on the torus [-pi, pi] (proportionality constant taken as 1; every uniformity
statement checked here is scale-free).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GaussianModel",
    "GramFactorizationError",
    "RhoVarEstimate",
    "brownian",
    "fbm",
    "she",
    "covariance",
    "she_kernel_series",
    "she_partial_kernel_series",
    "she_kernel_closed_reference",
    "she_series_tail_bound",
    "default_grid",
    "sample_path",
    "sample_paths",
    "rho_variation_2d",
]

_KINDS = ("brownian", "fbm", "she")


class GramFactorizationError(RuntimeError):
    """Covariance Gram matrix could not be factored even after jitter."""


@dataclass(frozen=True)
class GaussianModel:
    """Driver family with independent identically distributed components.

    ``horizon`` is the right end of the time interval [0, T] for Brownian and
    fractional models; the heat-kernel model lives on the torus [-pi, pi] and
    ignores it.  ``trunc`` is the series truncation for the heat kernel; the
    discarded tail is bounded by ``2 / trunc``.
    """

    kind: str
    dimension: int = 1
    horizon: float = 1.0
    hurst: float | None = None
    eps: float | None = None
    trunc: int = 100_000

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown kind {self.kind!r}; choose from {_KINDS}")
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.kind == "fbm":
            if self.hurst is None or not (1.0 / 3.0 < self.hurst < 1.0):
                raise ValueError("fbm requires hurst in (1/3, 1)")
        if self.kind == "she":
            if self.eps is None or self.eps < 0.0:
                raise ValueError("she requires eps >= 0")
            if self.trunc < 10:
                raise ValueError("series truncation too small")
        if self.kind != "she" and not self.horizon > 0.0:
            raise ValueError("horizon must be positive")

    @property
    def default_q(self) -> float:
        """Variation regularity of admissible shift paths used in shape predictions."""
        if self.kind == "fbm":
            return 1.0 / (self.hurst + 0.5)
        return 1.0

    @property
    def starts_at_zero(self) -> bool:
        return self.kind in ("brownian", "fbm")


def brownian(dimension: int = 1, horizon: float = 1.0) -> GaussianModel:
    return GaussianModel(kind="brownian", dimension=dimension, horizon=horizon)


def fbm(hurst: float, dimension: int = 1, horizon: float = 1.0) -> GaussianModel:
    return GaussianModel(kind="fbm", dimension=dimension, horizon=horizon, hurst=hurst)


def she(eps: float, dimension: int = 1, trunc: int = 100_000) -> GaussianModel:
    return GaussianModel(kind="she", dimension=dimension, horizon=2.0 * math.pi,
                         eps=eps, trunc=trunc)


def she_kernel_series(eps: float, x, trunc: int = 100_000) -> np.ndarray:
    """Truncated covariance series ``sum_{|k| <= trunc} cos(k x) / (1 + k^2 + eps^2 k^4)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    k = np.arange(1, trunc + 1, dtype=float)
    denom = 1.0 + k * k + (eps * eps) * k ** 4
    out = 1.0 + 2.0 * (np.cos(np.outer(x, k)) @ (1.0 / denom))
    return out if out.size > 1 else out.reshape(())


def she_partial_kernel_series(eps: float, x, trunc: int = 100_000) -> np.ndarray:
    """Truncated series ``sum_{|k| <= trunc} cos(k x) / (1 + eps^2 k^2)``.

    This is the piece of the heat kernel with a closed hyperbolic form; the
    truncation error is at most ``2 / (eps^2 * trunc)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    k = np.arange(1, trunc + 1, dtype=float)
    denom = 1.0 + (eps * eps) * k * k
    out = 1.0 + 2.0 * (np.cos(np.outer(x, k)) @ (1.0 / denom))
    return out if out.size > 1 else out.reshape(())


def she_kernel_closed_reference(eps: float, x) -> np.ndarray:
    """Closed hyperbolic form of the partial kernel on [-pi, pi].

    ``pi * cosh((|x| - pi) / eps) / (eps * sinh(pi / eps))``; requires
    ``eps > 0`` (the expression degenerates at eps = 0).
    """
    if not eps > 0.0:
        raise ValueError("closed form requires eps > 0")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > math.pi + 1e-12):
        raise ValueError("x must lie in [-pi, pi]")
    return math.pi * np.cosh((np.abs(x) - math.pi) / eps) / (eps * math.sinh(math.pi / eps))


def she_series_tail_bound(eps: float, trunc: int) -> float:
    """Bound on the discarded tail of the full covariance series."""
    if eps > 0.0:
        return min(2.0 / trunc, 2.0 / (eps * eps * trunc ** 3))
    return 2.0 / trunc


def covariance(model: GaussianModel, s, t):
    """Covariance of one component at a pair of times (vectorised over inputs)."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if model.kind == "brownian":
        out = np.minimum(s, t)
    elif model.kind == "fbm":
        h2 = 2.0 * model.hurst
        out = 0.5 * (np.abs(s) ** h2 + np.abs(t) ** h2 - np.abs(s - t) ** h2)
    else:
        out = she_kernel_series(model.eps, s - t, model.trunc)
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def default_grid(model: GaussianModel, n: int) -> np.ndarray:
    """Uniform grid with ``n`` steps on the model's natural domain."""
    if n < 1:
        raise ValueError("need at least one step")
    if model.kind == "she":
        return np.linspace(-math.pi, math.pi, n + 1)
    return np.linspace(0.0, model.horizon, n + 1)


def _gram(model: GaussianModel, grid: np.ndarray) -> np.ndarray:
    if model.kind == "she":
        # Stationary kernel: evaluate on the distinct lags only.
        lags = grid[:, None] - grid[None, :]
        uniq, inv = np.unique(np.round(np.abs(lags), 15), return_inverse=True)
        vals = she_kernel_series(model.eps, uniq, model.trunc)
        return np.asarray(vals)[inv].reshape(lags.shape)
    ss, tt = np.meshgrid(grid, grid, indexing="ij")
    return covariance(model, ss, tt)

# Jitter escalation for near-singular Gram matrices, relative to mean diagonal.
_JITTERS = (0.0, 1e-12, 1e-10, 1e-8)

_factor_cache: dict = {}


def _factor(model: GaussianModel, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    key = (model, grid.tobytes())
    hit = _factor_cache.get(key)
    if hit is not None:
        return hit
    pts = grid[1:] if (model.starts_at_zero and grid[0] == 0.0) else grid
    gram = _gram(model, pts)
    scale = float(np.mean(np.diag(gram))) or 1.0
    chol = None
    for jit in _JITTERS:
        try:
            chol = np.linalg.cholesky(gram + jit * scale * np.eye(gram.shape[0]))
            break
        except np.linalg.LinAlgError:
            continue
    if chol is None:
        smallest = float(np.min(np.linalg.eigvalsh(gram)))
        raise GramFactorizationError(
            f"Cholesky failed after jitter up to {_JITTERS[-1]:g}; "
            f"smallest eigenvalue {smallest:.3e}"
        )
    out = (pts, chol)
    if len(_factor_cache) > 16:
        _factor_cache.clear()
    _factor_cache[key] = out
    return out


def _trial_rng(seed: int, trial: int) -> np.random.Generator:
    # Counter-based stream keyed by (seed, trial): trials are order-independent.
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, trial & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_path(model: GaussianModel, grid, seed: int, trial: int = 0) -> np.ndarray:
    """One d-component sample path on the grid, deterministic in (seed, trial)."""
    grid = np.asarray(grid, dtype=float)
    pts, chol = _factor(model, grid)
    rng = _trial_rng(seed, trial)
    z = rng.standard_normal((pts.size, model.dimension))
    path = chol @ z
    if pts.size != grid.size:
        path = np.vstack([np.zeros((1, model.dimension)), path])
    return path


def sample_paths(model: GaussianModel, grid, count: int, seed: int) -> np.ndarray:
    """Stack of ``count`` independent sample paths, shape (count, len(grid), d)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    grid = np.asarray(grid, dtype=float)
    return np.stack([sample_path(model, grid, seed, trial) for trial in range(count)])


@dataclass(frozen=True)
class RhoVarEstimate:
    """2D variation of a covariance over product dissections of the grid square.

    ``method`` records how the supremum was approached: ``exact-finest`` (the
    finest product dissection, which attains the supremum at rho = 1),
    ``brute-force`` (exhaustive over all product dissections), or ``greedy``
    (coordinate-ascent coarsening, a lower bound for rho > 1 at scale).
    """

    rho: float
    grid_size: int
    value: float
    method: str


def _rect_increments(gram: np.ndarray) -> np.ndarray:
    return gram[1:, 1:] - gram[:-1, 1:] - gram[1:, :-1] + gram[:-1, :-1]


def _value_for_cuts(gram: np.ndarray, rows: np.ndarray, cols: np.ndarray, rho: float) -> float:
    sub = gram[np.ix_(rows, cols)]
    return float(np.sum(np.abs(_rect_increments(sub)) ** rho))


def _best_cols_given_rows(gram: np.ndarray, rows: np.ndarray, rho: float):
    """Optimal column dissection for fixed row cuts, by dynamic programming."""
    n = gram.shape[0] - 1
    deltas = gram[rows[1:], :] - gram[rows[:-1], :]  # (n_rows, n+1)
    # weight of the column block [c, c'] is sum_rows |delta[:, c'] - delta[:, c]|^rho
    dp = np.full(n + 1, -np.inf)
    dp[0] = 0.0
    back = np.zeros(n + 1, dtype=int)
    for cp in range(1, n + 1):
        w = np.sum(np.abs(deltas[:, cp][:, None] - deltas[:, :cp]) ** rho, axis=0)
        cand = dp[:cp] + w
        best = int(np.argmax(cand))
        dp[cp] = cand[best]
        back[cp] = best
    cols = [n]
    while cols[-1] != 0:
        cols.append(int(back[cols[-1]]))
    return float(dp[n]), np.array(cols[::-1], dtype=int)


def rho_variation_2d(source, grid, rho: float = 1.0) -> RhoVarEstimate:
    """2D rho-variation of a covariance over product dissections of the grid square.

    ``source`` is a :class:`GaussianModel` or an explicit Gram matrix sampled
    on the grid.  At rho = 1 the finest product dissection attains the
    supremum among product dissections (triangle inequality), so the value is
    exact.  For rho > 1 the supremum is searched exhaustively when the grid
    has at most 12 steps, and otherwise approached from below by alternating
    row/column dynamic-programming sweeps.
    """
    if rho < 1.0:
        raise ValueError("rho must be >= 1")
    grid = np.asarray(grid, dtype=float)
    n = grid.size - 1
    if isinstance(source, GaussianModel):
        gram = _gram(source, grid)
    else:
        gram = np.asarray(source, dtype=float)
        if gram.shape != (n + 1, n + 1):
            raise ValueError("Gram matrix does not match the grid")
    full = np.arange(n + 1)
    if rho == 1.0:
        value = _value_for_cuts(gram, full, full, rho)
        return RhoVarEstimate(rho=rho, grid_size=n, value=value, method="exact-finest")
    if n <= 12:
        best = 0.0
        for mask in range(1 << (n - 1)):
            rows = [0]
            rows += [i + 1 for i in range(n - 1) if mask >> i & 1]
            rows.append(n)
            val, _ = _best_cols_given_rows(gram, np.array(rows), rho)
            if val > best:
                best = val
        return RhoVarEstimate(rho=rho, grid_size=n, value=best, method="brute-force")
    rows = full
    value = _value_for_cuts(gram, rows, rows, rho)
    for _ in range(20):
        val_c, cols = _best_cols_given_rows(gram, rows, rho)
        val_r, rows = _best_cols_given_rows(gram.T, cols, rho)
        if val_r <= value * (1.0 + 1e-12):
            value = max(value, val_r)
            break
        value = val_r
    return RhoVarEstimate(rho=rho, grid_size=n, value=value, method="greedy")
