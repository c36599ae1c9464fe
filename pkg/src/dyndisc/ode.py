"""Fixed-step and adaptive ODE integration for small dynamical systems.

Two solvers cover everything this package needs:

* :func:`integrate_rk4` takes one classical Runge-Kutta step per pair of
  consecutive grid times.  Ground-truth simulation uses it on the dense
  simulation grid, where it is accurate far below the observation noise.
* :func:`integrate_adaptive` is a Dormand-Prince 5(4) embedded pair with
  PI step-size control and cubic Hermite dense output, used to integrate
  learned vector fields whose natural time scale is unknown.

Both are pure functions of their inputs and therefore deterministic and
safe to call from multiple threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

#: right-hand side signature ``f(t, y) -> dy/dt``; parameters already bound.
VectorField = Callable[[float, np.ndarray], np.ndarray]

#: any state component beyond this magnitude is treated as a blow-up.
DIVERGENCE_LIMIT = 1e8


class IntegrationError(RuntimeError):
    """Solver failure.  ``t`` is the time where integration broke down."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t={t:.9g})")
        self.t = float(t)


class DivergenceError(IntegrationError):
    """State left the finite / bounded region during integration."""


class StiffnessError(IntegrationError):
    """Adaptive step size underflowed; the problem is too stiff for DP5(4)."""


@dataclass
class Trajectory:
    """Time-stamped states for one initial condition.

    ``times`` is strictly increasing, ``states`` has one row per time.
    ``meta`` records provenance (system id, parameters, seeds, warnings).
    """

    times: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states.reshape(-1, 1)
        if self.times.ndim != 1 or self.times.shape[0] != self.states.shape[0]:
            raise ValueError("times and states must have matching length")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    @property
    def dim(self) -> int:
        return int(self.states.shape[1])

    def __len__(self) -> int:
        return int(self.times.shape[0])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.states)))

    def column(self, j: int) -> np.ndarray:
        return self.states[:, j]


def _check_state(y: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(y)) or np.any(np.abs(y) > DIVERGENCE_LIMIT):
        raise DivergenceError("state diverged", t)


def rk4_step(f: VectorField, t: float, y: np.ndarray, h: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step from ``t`` to ``t + h``."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + (0.5 * h) * k1)
    k3 = f(t + 0.5 * h, y + (0.5 * h) * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_rk4(f: VectorField, y0, t_grid, meta: dict | None = None) -> Trajectory:
    """Integrate with one RK4 step per consecutive pair of grid times.

    Raises :class:`DivergenceError` (carrying the failing time) as soon as
    the state stops being finite or exceeds :data:`DIVERGENCE_LIMIT`.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.size < 2:
        raise ValueError("t_grid needs at least two points")
    if not np.all(np.diff(t) > 0):
        raise ValueError("t_grid must be strictly increasing")
    y = np.array(y0, dtype=float).reshape(-1)
    _check_state(y, t[0])
    out = np.empty((t.size, y.size))
    out[0] = y
    for i in range(t.size - 1):
        y = rk4_step(f, t[i], y, t[i + 1] - t[i])
        _check_state(y, t[i + 1])
        out[i + 1] = y
    return Trajectory(t.copy(), out, dict(meta or {}))


# Dormand-Prince 5(4) tableau.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_DP_A = (
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
)
#: difference between fifth- and embedded fourth-order weights.
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920,
                  -17253 / 339200, 22 / 525, -1 / 40])

_SAFETY = 0.9
_BETA = 0.04           # PI (Lund) stabilization exponent
_EXPO1 = 0.2 - _BETA * 0.75
_MAX_GROW = 10.0
_MAX_SHRINK = 5.0


def _hermite(y0, y1, f0, f1, h, sigma):
    """Cubic Hermite interpolant on one accepted step (O(h^4) accurate)."""
    s = sigma
    h00 = (1.0 + 2.0 * s) * (1.0 - s) ** 2
    h10 = s * (1.0 - s) ** 2
    h01 = s * s * (3.0 - 2.0 * s)
    h11 = s * s * (s - 1.0)
    return h00 * y0 + (h * h10) * f0 + h01 * y1 + (h * h11) * f1


def integrate_adaptive(
    f: VectorField,
    y0,
    t_span: tuple[float, float],
    sample_times,
    rtol: float = 1e-6,
    atol: float = 1e-9,
    h0: float | None = None,
    max_steps: int = 10_000_000,
    meta: dict | None = None,
) -> Trajectory:
    """Dormand-Prince 5(4) solve over ``t_span`` sampled at ``sample_times``.

    Sample states come from dense output (cubic Hermite on each accepted
    step), so sampling never constrains the step size.  An empty sample
    list returns an empty trajectory without integrating.
    """
    if rtol <= 0 or atol <= 0:
        raise ValueError("rtol and atol must be positive")
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError("t_span must satisfy t0 < t1")
    samples = np.asarray(sample_times, dtype=float)
    y0 = np.array(y0, dtype=float).reshape(-1)
    dim = y0.size
    if samples.size == 0:
        return Trajectory(np.empty(0), np.empty((0, dim)), dict(meta or {}))
    if samples.size > 1 and not np.all(np.diff(samples) > 0):
        raise ValueError("sample_times must be strictly increasing")
    if samples[0] < t0 - 1e-12 or samples[-1] > t1 + 1e-12:
        raise ValueError("sample_times must lie within t_span")

    _check_state(y0, t0)
    out = np.empty((samples.size, dim))
    next_i = 0
    while next_i < samples.size and samples[next_i] <= t0:
        out[next_i] = y0
        next_i += 1

    t, y = t0, y0
    fcur = np.asarray(f(t, y), dtype=float)
    if h0 is None:
        h = (t1 - t0) / 100.0
    else:
        h = float(h0)
    facold = 1e-4
    k = np.empty((7, dim))

    for _ in range(max_steps):
        if t >= t1:
            break
        last = h >= t1 - t
        if last:
            h = t1 - t
        if h < 1e-14 * max(abs(t), 1.0):
            raise StiffnessError("step size underflow", t)

        k[0] = fcur
        for s in range(5):
            ys = y + h * (_DP_A[s] @ k[: s + 1])
            k[s + 1] = f(t + _DP_C[s + 1] * h, ys)
        y_new = y + h * (_DP_A[5] @ k[:6])
        k[6] = f(t + h, y_new)

        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err_vec = h * (_DP_E @ k)
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        if not np.isfinite(err):
            err = 10.0  # force rejection and shrink

        if err <= 1.0:
            t_new = t1 if last else t + h
            while next_i < samples.size and samples[next_i] <= t_new:
                sigma = (samples[next_i] - t) / h
                out[next_i] = _hermite(y, y_new, k[0], k[6], h, sigma)
                next_i += 1
            _check_state(y_new, t_new)
            fac11 = err ** _EXPO1
            fac = fac11 / facold ** _BETA
            fac = max(1.0 / _MAX_GROW, min(_MAX_SHRINK, fac / _SAFETY))
            facold = max(err, 1e-4)
            t, y = t_new, y_new
            fcur = k[6].copy()
            h = h / fac
        else:
            fac11 = err ** _EXPO1
            h = h / min(_MAX_SHRINK, fac11 / _SAFETY)
    else:
        raise StiffnessError("step budget exhausted", t)

    if next_i < samples.size:
        # only reachable through floating-point corner cases at t1
        out[next_i:] = y
    return Trajectory(samples.copy(), out, dict(meta or {}))
