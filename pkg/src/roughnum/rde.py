"""Rough integration and differential-equation solvers at level 2.

All solvers use second-order steps that consume the level-2 data exactly:
the increment of the unknown over one grid step is the first-order term
driven by ``g1`` plus the compensator contracted against ``g2``.  Error
control is by mesh refinement (the schemes converge at order ~2 on smooth
drivers); there is no adaptivity.

The Jacobian of the solution flow is produced by the three-stage pipeline:
joint lift of driver and solution, rough integral of the derivative field
against the joint path, then a linear equation driven by that integral.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .roughpath import Level2RoughPath

__all__ = [
    "OneForm",
    "VectorFieldFamily",
    "LinearField",
    "RdeSolution",
    "RdeDivergenceError",
    "rough_integral",
    "solve_rde",
    "solve_linear_rde",
    "jacobian_flow",
]

DIVERGENCE_LIMIT = 1e12
FD_STEP = 1e-6


class RdeDivergenceError(RuntimeError):
    """Solution exceeded the divergence guard."""

    def __init__(self, step: int, magnitude: float):
        super().__init__(f"solution magnitude {magnitude:.3e} exceeded "
                         f"{DIVERGENCE_LIMIT:g} at step {step}")
        self.step = step
        self.magnitude = magnitude


@dataclass(frozen=True)
class OneForm:
    """Integrand of a rough integral: ``value(x)`` is (e, d), mapping driver
    increments to output increments; ``derivative(x)`` is (e, d, d) with
    entry ``[a, j, k]`` the derivative of ``value[a, j]`` in direction ``k``.
    ``lip_bound`` is a user-supplied bound on the relevant smoothness norm
    (recorded, never hard-coded into estimates).
    """

    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    lip_bound: float = float("nan")

    def check_derivative(self, probes, step: float = FD_STEP, rtol: float = 1e-5) -> float:
        """Largest relative defect of ``derivative`` against central differences."""
        worst = 0.0
        for x in np.atleast_2d(np.asarray(probes, dtype=float)):
            val = np.asarray(self.derivative(x), dtype=float)
            fd = np.empty_like(val)
            for k in range(x.size):
                e = np.zeros_like(x)
                e[k] = step
                fd[:, :, k] = (self.value(x + e) - self.value(x - e)) / (2.0 * step)
            scale = max(1.0, float(np.max(np.abs(val))))
            worst = max(worst, float(np.max(np.abs(fd - val))) / scale)
        if worst > rtol:
            raise ValueError(f"derivative inconsistent with value: defect {worst:.2e}")
        return worst


@dataclass(frozen=True)
class VectorFieldFamily:
    """Driving vector fields of an equation: ``value(y)`` is (e, d);
    ``derivative(y)`` is (e, d, e) with entry ``[a, j, b]`` the derivative of
    ``value[a, j]`` in state direction ``b``; ``second_derivative`` (e, d, e, e)
    is optional and only needed by the Jacobian pipeline (finite differences
    are used when absent).
    """

    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    second_derivative: Callable[[np.ndarray], np.ndarray] | None = None
    lip_bound: float = float("nan")

    def check_derivative(self, probes, step: float = FD_STEP, rtol: float = 1e-5) -> float:
        worst = 0.0
        for y in np.atleast_2d(np.asarray(probes, dtype=float)):
            val = np.asarray(self.derivative(y), dtype=float)
            fd = np.empty_like(val)
            for b in range(y.size):
                e = np.zeros_like(y)
                e[b] = step
                fd[:, :, b] = (self.value(y + e) - self.value(y - e)) / (2.0 * step)
            scale = max(1.0, float(np.max(np.abs(val))))
            worst = max(worst, float(np.max(np.abs(fd - val))) / scale)
        if worst > rtol:
            raise ValueError(f"derivative inconsistent with value: defect {worst:.2e}")
        return worst


@dataclass(frozen=True)
class LinearField:
    """Affine vector fields ``V_i(y) = A_i y + b_i``.

    ``A`` has shape (d, e, e); ``b`` has shape (d, e).
    """

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if A.ndim != 3 or A.shape[1] != A.shape[2] or b.shape != A.shape[:2]:
            raise ValueError(f"inconsistent shapes A {A.shape}, b {b.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def driver_dim(self) -> int:
        return self.A.shape[0]

    @property
    def state_dim(self) -> int:
        return self.A.shape[1]

    @property
    def nu(self) -> float:
        """max_i (|A_i| + |b_i|), spectral norm on matrices."""
        return float(max(np.linalg.norm(Ai, 2) + np.linalg.norm(bi)
                         for Ai, bi in zip(self.A, self.b)))

    def as_vector_field(self) -> VectorFieldFamily:
        A, b = self.A, self.b
        e = self.state_dim

        def value(y):
            return (A @ y + b).T  # (e, d)

        def derivative(y):
            return A.transpose(1, 0, 2)  # (e, d, e), constant in y

        def second_derivative(y):
            return np.zeros((e, A.shape[0], e, e))

        return VectorFieldFamily(value=value, derivative=derivative,
                                 second_derivative=second_derivative,
                                 lip_bound=self.nu)


@dataclass
class RdeSolution:
    """Solution data on the grid: ``values[k]`` is the state at ``times[k]``;
    ``lift`` is the optional level-2 enrichment of the output path."""

    times: np.ndarray
    values: np.ndarray
    lift: Level2RoughPath | None = None
    meta: dict = field(default_factory=dict)


def _window_steps(x: Level2RoughPath, window):
    n = len(x)
    if window is None:
        s, t = 0, n - 1
    else:
        s, t = int(window[0]), int(window[1])
        if not (0 <= s < t <= n - 1):
            raise ValueError(f"window ({s}, {t}) invalid for grid of size {n}")
    return s, t


def _guard(y: np.ndarray, step: int) -> None:
    mag = float(np.max(np.abs(y)))
    if not np.isfinite(mag) or mag > DIVERGENCE_LIMIT:
        raise RdeDivergenceError(step, mag)


def rough_integral(
    phi: OneForm,
    x: Level2RoughPath,
    window: tuple[int, int] | None = None,
    with_lift: bool = True,
) -> RdeSolution:
    """Integral of a one-form against the path, with compensated step sums.

    Per grid step the output increment is ``phi(x_i) g1 + Dphi(x_i) . g2``
    (the derivative direction contracts the earlier tensor slot of ``g2``).
    The output's second level is the local product expansion of the
    integrand applied to ``g2``, symmetrised so the output stays weakly
    geometric; full-interval values follow by combination.  Converges to the
    Riemann-Stieltjes integral for smooth data as the mesh shrinks.
    """
    s, t = _window_steps(x, window)
    probe = np.asarray(phi.value(x.samples[s]), dtype=float)
    e = probe.shape[0]
    m = t - s
    z = np.zeros((m + 1, e))
    step_g1 = np.zeros((m, e))
    step_g2 = np.zeros((m, e, e)) if with_lift else None
    for k in range(m):
        i = s + k
        xi = x.samples[i]
        g1 = x.increment(i, i + 1)
        g2 = x.second_level(i, i + 1)
        val = np.asarray(phi.value(xi), dtype=float)
        der = np.asarray(phi.derivative(xi), dtype=float)
        z1 = val @ g1 + np.einsum("ajk,kj->a", der, g2)
        step_g1[k] = z1
        z[k + 1] = z[k] + z1
        _guard(z[k + 1], i + 1)
        if with_lift:
            prod = np.einsum("aj,bk,jk->ab", val, val, g2)
            anti = 0.5 * (prod - prod.T)
            step_g2[k] = anti + 0.5 * np.outer(z1, z1)
    lift = None
    if with_lift:
        lift = Level2RoughPath.from_steps(x.times[s:t + 1], z[0], step_g1, step_g2)
    return RdeSolution(times=x.times[s:t + 1], values=z, lift=lift)


def _davie_steps(value_fn, derivative_fn, x, y0, s, t, with_lift):
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    e = y0.size
    m = t - s
    y = np.zeros((m + 1, e))
    y[0] = y0
    step_g2 = np.zeros((m, e, e)) if with_lift else None
    for k in range(m):
        i = s + k
        g1 = x.increment(i, i + 1)
        g2 = x.second_level(i, i + 1)
        val = np.asarray(value_fn(y[k]), dtype=float)        # (e, d)
        der = np.asarray(derivative_fn(y[k]), dtype=float)   # (e, d, e)
        comp = np.einsum("akb,bj,jk->a", der, val, g2)
        dy = val @ g1 + comp
        y[k + 1] = y[k] + dy
        _guard(y[k + 1], i + 1)
        if with_lift:
            prod = np.einsum("aj,bk,jk->ab", val, val, g2)
            anti = 0.5 * (prod - prod.T)
            step_g2[k] = anti + 0.5 * np.outer(dy, dy)
    lift = None
    if with_lift:
        lift = Level2RoughPath.from_steps(
            x.times[s:t + 1], y[0], np.diff(y, axis=0), step_g2
        )
    return y, lift


def solve_rde(
    V: VectorFieldFamily,
    x: Level2RoughPath,
    y0,
    window: tuple[int, int] | None = None,
    with_lift: bool = False,
) -> RdeSolution:
    """Solve ``dy = V(y) dx`` by second-order steps.

    The step is ``y + V(y) g1 + (DV . V)(y) g2`` where the compensator
    contracts the derivative of the later field against the earlier motion.
    Aborts with :class:`RdeDivergenceError` if the state magnitude exceeds
    the divergence guard.
    """
    s, t = _window_steps(x, window)
    y, lift = _davie_steps(V.value, V.derivative, x, y0, s, t, with_lift)
    return RdeSolution(times=x.times[s:t + 1], values=y, lift=lift)


def solve_linear_rde(
    L: LinearField,
    x: Level2RoughPath,
    y0,
    window: tuple[int, int] | None = None,
    with_lift: bool = False,
) -> RdeSolution:
    """Solve the affine equation ``dy = (A y + b) dx`` with the same scheme.

    The compensator is ``sum_{j,k} A_k (A_j y + b_j) g2[j, k]`` exactly.
    """
    if L.driver_dim != x.dim:
        raise ValueError(f"driver dimension {x.dim} does not match field {L.driver_dim}")
    vf = L.as_vector_field()
    s, t = _window_steps(x, window)
    y, lift = _davie_steps(vf.value, vf.derivative, x, y0, s, t, with_lift)
    sol = RdeSolution(times=x.times[s:t + 1], values=y, lift=lift)
    sol.meta["nu"] = L.nu
    return sol


def _joint_field(V: VectorFieldFamily, d: int, e: int) -> VectorFieldFamily:
    """Field driving the joint (driver, solution) system: identity block on
    the driver coordinates, ``V`` read off the solution coordinates."""

    def value(z):
        out = np.zeros((d + e, d))
        out[:d, :] = np.eye(d)
        out[d:, :] = V.value(z[d:])
        return out

    def derivative(z):
        out = np.zeros((d + e, d, d + e))
        out[d:, :, d:] = V.derivative(z[d:])
        return out

    second = None
    if V.second_derivative is not None:
        def second(z):
            out = np.zeros((d + e, d, d + e, d + e))
            out[d:, :, d:, d:] = V.second_derivative(z[d:])
            return out

    return VectorFieldFamily(value=value, derivative=derivative,
                             second_derivative=second, lip_bound=V.lip_bound)


def _fd_second_derivative(V: VectorFieldFamily, step: float = FD_STEP):
    def second(y):
        y = np.asarray(y, dtype=float)
        base = np.asarray(V.derivative(y), dtype=float)  # (e, d, e)
        out = np.empty(base.shape + (y.size,))
        for c in range(y.size):
            h = np.zeros_like(y)
            h[c] = step
            out[..., c] = (np.asarray(V.derivative(y + h)) -
                           np.asarray(V.derivative(y - h))) / (2.0 * step)
        return out
    return second


def jacobian_flow(
    V: VectorFieldFamily,
    x: Level2RoughPath,
    y0,
    window: tuple[int, int] | None = None,
) -> RdeSolution:
    """Derivative of the solution flow with respect to the initial condition.

    Pipeline: (1) the joint path of driver and solution is produced with its
    level-2 enrichment; (2) the state-derivative field is integrated against
    the joint path, giving a matrix-valued driver with enrichment; (3) the
    Jacobian solves the linear equation driven by that integral, started at
    the identity.  ``values`` has shape (n+1, e, e).
    """
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    d, e = x.dim, y0.size
    s, t = _window_steps(x, window)

    # Stage 1: joint lift of (driver, solution).
    zt = _joint_field(V, d, e)
    z0 = np.concatenate([x.samples[s], y0])
    joint = solve_rde(zt, x, z0, window=(s, t), with_lift=True)

    # Stage 2: integrate the state derivative of the fields along the joint path.
    dv2 = V.second_derivative or _fd_second_derivative(V)

    def phi_value(z):
        der = np.asarray(V.derivative(z[d:]), dtype=float)      # (e, d, e)
        out = np.zeros((e * e, d + e))
        out[:, :d] = der.transpose(0, 2, 1).reshape(e * e, d)    # row (a e + b) <- [a, j, b]
        return out

    def phi_derivative(z):
        sec = np.asarray(dv2(z[d:]), dtype=float)                # (e, d, e, e)
        out = np.zeros((e * e, d + e, d + e))
        out[:, :d, d:] = sec.transpose(0, 2, 1, 3).reshape(e * e, d, e)
        return out

    phi = OneForm(value=phi_value, derivative=phi_derivative, lip_bound=V.lip_bound)
    M = rough_integral(phi, joint.lift, with_lift=True)

    # Stage 3: linear equation dJ = dM . J started at the identity.
    A = np.zeros((e * e, e * e, e * e))
    for a in range(e):
        for b in range(e):
            mu = a * e + b
            for j in range(e):
                A[mu, a * e + j, b * e + j] = 1.0
    L = LinearField(A=A, b=np.zeros((e * e, e * e)))
    jsol = solve_linear_rde(L, M.lift, np.eye(e).reshape(-1))
    return RdeSolution(times=x.times[s:t + 1],
                       values=jsol.values.reshape(-1, e, e),
                       meta={"stages": ("joint-lift", "integral", "linear")})
