"""Monte Carlo harness and tail-shape estimation.

Each trial samples a driver path, enriches it, pushes it through the
configured map (none, equation solve, or integral) and evaluates one scalar
statistic.  Trials are keyed by (seed, trial index) so the sample vector is
independent of scheduling.  The tail-shape estimator regresses the iterated
logarithm of the empirical survival function on the log of the order
statistics over a configurable upper quantile window; a maximum-likelihood
fit of the whole sample is reported as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from . import gaussian
from .controls import n_alpha
from .rde import (
    LinearField,
    OneForm,
    RdeDivergenceError,
    VectorFieldFamily,
    jacobian_flow,
    rough_integral,
    solve_linear_rde,
    solve_rde,
)
from .roughpath import (
    control_from_rough_path,
    first_level_p_variation,
    lift_piecewise_linear,
    p_variation,
)

__all__ = [
    "STATISTICS",
    "InsufficientTailDataError",
    "TailFit",
    "TrialConfig",
    "TrialSample",
    "default_linear_field",
    "default_one_form",
    "default_vector_field",
    "fit_weibull_shape",
    "run_trials",
    "survival_table",
]

STATISTICS = (
    "nalpha-x",
    "pvar-x",
    "nalpha-y",
    "log-pvar-linear",
    "abs-integral",
    "pvar-jacobian",
)


class InsufficientTailDataError(ValueError):
    """Too few distinct order statistics in the requested tail window."""


def default_one_form(d: int) -> OneForm:
    """Bounded scalar-valued integrand with bounded derivative.

    A constant base with a mild oscillation; the oscillation amplitude keeps
    the conditional variance of the integral stable across trials, which the
    tail fixtures rely on.
    """

    def value(x):
        out = np.empty((1, d))
        for j in range(d):
            base = 1.0 - 0.2 * (j % 2)
            out[0, j] = base + 0.3 * np.sin(x[j]) + 0.15 * np.cos(2.0 * x[(j + 1) % d])
        return out

    def derivative(x):
        out = np.zeros((1, d, d))
        for j in range(d):
            out[0, j, j] += 0.3 * np.cos(x[j])
            out[0, j, (j + 1) % d] += -0.3 * np.sin(2.0 * x[(j + 1) % d])
        return out

    return OneForm(value=value, derivative=derivative, lip_bound=2.0)


def default_vector_field(d: int, e: int = 2) -> VectorFieldFamily:
    """Bounded smooth state fields ``V_j(y) = B_j tanh(y) + c_j`` with fixed
    coefficient tables (deterministic in (d, e))."""
    rng = np.random.default_rng(0xB0B)
    B = rng.uniform(-0.7, 0.7, size=(d, e, e))
    c = rng.uniform(-0.2, 0.2, size=(d, e))

    def value(y):
        th = np.tanh(y)
        return (B @ th + c).T  # (e, d)

    def derivative(y):
        sech2 = 1.0 / np.cosh(y) ** 2
        # [a, j, b] = B[j, a, b] * sech2[b]
        return B.transpose(1, 0, 2) * sech2[None, None, :]

    def second_derivative(y):
        sech2 = 1.0 / np.cosh(y) ** 2
        ddiag = -2.0 * np.tanh(y) * sech2
        out = np.zeros((e, d, e, e))
        for b in range(e):
            out[:, :, b, b] = B.transpose(1, 0, 2)[:, :, b] * ddiag[b]
        return out

    nu = float(max(np.linalg.norm(B[j], 2) + np.linalg.norm(c[j]) for j in range(d)))
    return VectorFieldFamily(value=value, derivative=derivative,
                             second_derivative=second_derivative, lip_bound=nu)


def default_linear_field(d: int, e: int = 2) -> LinearField:
    """Fixed affine fields (deterministic in (d, e)).

    Matrix parts are capped at spectral norm ~1.1 and the offsets sit near
    +-2; with a zero start this puts the log of the solution's variation on
    a scale where its spread is comparable to its level.
    """
    rng = np.random.default_rng(0xA11)
    A = rng.uniform(-0.5, 0.5, size=(d, e, e))
    for j in range(d):
        norm = np.linalg.norm(A[j], 2)
        if norm > 0.6:
            A[j] *= 0.6 / norm
    A *= 1.8
    b = 8.0 * rng.uniform(-0.25, 0.25, size=(d, e))
    return LinearField(A=A, b=b)


@dataclass(frozen=True)
class TrialConfig:
    """One Monte Carlo experiment: driver model, map, statistic and seeds."""

    model: gaussian.GaussianModel
    statistic: str
    trials: int
    seed: int
    p: float = 2.5
    alpha: float = 1.0
    grid_size: int = 512
    q: float | None = None
    state_dim: int = 2
    y0_scale: float = 0.0

    def __post_init__(self):
        if self.statistic not in STATISTICS:
            raise ValueError(f"unknown statistic {self.statistic!r}; choose from {STATISTICS}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 2.0 < self.p < 3.0:
            raise ValueError(f"p={self.p!r} outside the supported range (2, 3)")
        if not self.alpha > 0.0:
            raise ValueError("alpha must be positive")
        if self.grid_size < 8:
            raise ValueError("grid too small")

    @property
    def effective_q(self) -> float:
        return self.q if self.q is not None else self.model.default_q

    @property
    def predicted_shape(self) -> float:
        """Shape forecast 2/q for the configured variation regularity q.

        Reported alongside fits, never asserted blindly: at desk-scale trial
        counts only wide brackets around this value are meaningful.
        """
        return 2.0 / self.effective_q


@dataclass(frozen=True)
class TrialSample:
    """Ordered statistic values with the indices of excluded (diverged) trials."""

    values: np.ndarray
    excluded: tuple[int, ...]
    config: TrialConfig

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))


def _evaluate(config: TrialConfig, path: np.ndarray, grid: np.ndarray) -> float:
    x = lift_piecewise_linear(path, grid)
    p, alpha = config.p, config.alpha
    stat = config.statistic
    if stat == "nalpha-x":
        return float(n_alpha(control_from_rough_path(x, p), alpha))
    if stat == "pvar-x":
        return p_variation(x, p, mode="homogeneous")
    if stat == "nalpha-y":
        V = default_vector_field(config.model.dimension, config.state_dim)
        sol = solve_rde(V, x, np.ones(config.state_dim), with_lift=True)
        return float(n_alpha(control_from_rough_path(sol.lift, p), alpha))
    if stat == "log-pvar-linear":
        L = default_linear_field(config.model.dimension, config.state_dim)
        y0 = np.full(config.state_dim, config.y0_scale)
        sol = solve_linear_rde(L, x, y0)
        return float(np.log(first_level_p_variation(sol.values, p)))
    if stat == "abs-integral":
        phi = default_one_form(config.model.dimension)
        sol = rough_integral(phi, x, with_lift=False)
        return float(np.linalg.norm(sol.values[-1]))
    if stat == "pvar-jacobian":
        V = default_vector_field(config.model.dimension, config.state_dim)
        sol = jacobian_flow(V, x, np.ones(config.state_dim))
        flat = sol.values.reshape(len(sol.times), -1)
        return first_level_p_variation(flat, p)
    raise AssertionError(stat)


def run_trials(config: TrialConfig) -> TrialSample:
    """Evaluate the configured statistic over ``config.trials`` seeded trials.

    Value ``i`` depends only on ``(config.seed, i)``.  Trials where a solve
    diverges are excluded and their indices reported; acceptance runs require
    the exclusion list to be empty.
    """
    grid = gaussian.default_grid(config.model, config.grid_size)
    values = []
    excluded = []
    for trial in range(config.trials):
        path = gaussian.sample_path(config.model, grid, config.seed, trial)
        try:
            values.append(_evaluate(config, path, grid))
        except RdeDivergenceError:
            excluded.append(trial)
    return TrialSample(values=np.asarray(values), excluded=tuple(excluded), config=config)


@dataclass(frozen=True)
class TailFit:
    """Estimated tail shape with diagnostics.

    ``shape`` is the slope of ``log(-log S)`` against ``log r`` over the
    distinct order statistics between the (1 - tail_fraction) and
    (1 - clip_fraction) empirical quantiles; ``mle_shape`` is the full-sample
    maximum-likelihood estimate, reported as a cross-check only.
    """

    shape: float
    scale: float
    stderr: float
    n: int
    n_tail_points: int
    tail_fraction: float
    clip_fraction: float
    mle_shape: float
    mle_scale: float
    method: str = "tail-regression"


def _mle_shape(x: np.ndarray) -> tuple[float, float]:
    logx = np.log(x)
    mean_log = float(np.mean(logx))

    def profile(k):
        xk = x ** k
        return float(np.sum(xk * logx) / np.sum(xk) - 1.0 / k - mean_log)

    lo, hi = 1e-3, 1.0
    while profile(hi) < 0.0 and hi < 512.0:
        hi *= 2.0
    try:
        k = optimize.brentq(profile, lo, hi, xtol=1e-10)
    except ValueError:
        return float("nan"), float("nan")
    scale = float(np.mean(x ** k) ** (1.0 / k))
    return float(k), scale


def fit_weibull_shape(
    samples, tail_fraction: float = 0.10, clip_fraction: float = 0.005
) -> TailFit:
    """Fit the tail shape of positive samples by survival regression.

    The regression runs over distinct order statistics between the upper
    ``tail_fraction`` and ``clip_fraction`` quantiles; clipping the extreme
    order statistics stabilises the slope, which otherwise diverges at the
    sample maximum.  The slope is invariant under positive rescaling of the
    samples.  Raises :class:`InsufficientTailDataError` when fewer than 10
    distinct tail points remain.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 100:
        raise ValueError(f"need at least 100 samples, got {n}")
    if not np.all(x > 0.0):
        raise ValueError("samples must be positive (shift-free statistics only)")
    if not 0.0 < clip_fraction < tail_fraction < 1.0:
        raise ValueError("need 0 < clip_fraction < tail_fraction < 1")
    lo = int(np.ceil(n * (1.0 - tail_fraction)))
    hi = int(np.floor(n * (1.0 - clip_fraction)))
    lo = max(lo, 1)
    hi = min(hi, n - 1)
    if hi < lo:
        raise InsufficientTailDataError("tail window is empty")
    window = x[lo - 1:hi]
    levels = np.unique(window)
    surv = 1.0 - np.searchsorted(x, levels, side="right") / n
    keep = surv > 0.0
    levels, surv = levels[keep], surv[keep]
    if levels.size < 10:
        raise InsufficientTailDataError(
            f"only {levels.size} distinct tail points (need 10)"
        )
    lx = np.log(levels)
    ly = np.log(-np.log(surv))
    # Centered normal equations: the slope only sees lx - mean(lx), so a
    # multiplicative rescaling of the samples (a shift of lx) cannot move it
    # beyond roundoff.
    cx = lx - np.mean(lx)
    cy = ly - np.mean(ly)
    sxx = float(np.sum(cx * cx))
    slope = float(np.sum(cx * cy) / sxx)
    intercept = float(np.mean(ly) - slope * np.mean(lx))
    resid = cy - slope * cx
    dof = levels.size - 2
    stderr = float(np.sqrt(np.sum(resid ** 2) / dof / sxx)) if dof > 0 else float("nan")
    scale = float(np.exp(-intercept / slope))
    mle_k, mle_scale = _mle_shape(x)
    return TailFit(
        shape=float(slope),
        scale=scale,
        stderr=stderr,
        n=n,
        n_tail_points=int(levels.size),
        tail_fraction=tail_fraction,
        clip_fraction=clip_fraction,
        mle_shape=mle_k,
        mle_scale=mle_scale,
    )


def survival_table(samples, levels) -> np.ndarray:
    """Empirical survival ``S(r) = #(samples > r) / n`` at the given levels.

    Returns an array of rows ``(r, S(r))``; ``S`` is nonincreasing in ``r``
    and valued in [0, 1].
    """
    x = np.asarray(samples, dtype=float)
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    if levels.size < 1:
        raise ValueError("need at least one level")
    xs = np.sort(x)
    surv = 1.0 - np.searchsorted(xs, levels, side="right") / x.size
    return np.column_stack([levels, surv])
