"""Law-of-large-numbers limit paths and rough-potential homogenization constants."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import simpson

from .model import ParameterError, rough_Q, time_grid


class NumericalBlowupError(FloatingPointError):
    """The averaged ODE produced a non-finite state."""

    def __init__(self, time: float, message: str | None = None):
        self.time = float(time)
        super().__init__(message or f"non-finite averaged drift at t={self.time:.6g}")


@dataclass(frozen=True, eq=False)
class AveragedPath:
    """X-bar sampled on a uniform grid whose last step may be truncated to hit T.

    ``values`` has shape ``(len(times), n)``.
    """

    t0: float
    T: float
    dt: float
    times: np.ndarray
    values: np.ndarray
    drift_tag: str = ""

    def __post_init__(self):
        self.times.setflags(write=False)
        self.values.setflags(write=False)

    def __len__(self):
        return len(self.times)

    @property
    def x0(self) -> np.ndarray:
        return self.values[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def at(self, t) -> np.ndarray:
        """Linear interpolation between grid nodes (diagnostics only)."""
        # np.interp copies read-only inputs on every call, so interpolate by hand
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
        t0, t1 = self.times[k], self.times[k + 1]
        w = np.clip((t - t0) / (t1 - t0), 0.0, 1.0)[..., None]
        return self.values[k] + w * (self.values[k + 1] - self.values[k])


def _rk4_step(drift, x, t, dt):
    k1 = drift(x)
    k2 = drift(x + 0.5 * dt * k1)
    k3 = drift(x + 0.5 * dt * k2)
    k4 = drift(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def solve_averaged_ode(
    drift: Callable[[np.ndarray], np.ndarray],
    x0,
    t0: float,
    T: float,
    dt: float,
    drift_tag: str = "",
) -> AveragedPath:
    """Integrate the autonomous ODE dX/dt = drift(X) with classical RK4."""
    if not dt > 0:
        raise ParameterError("dt must be positive")
    if not T > t0:
        raise ParameterError("T must exceed t0")
    times = time_grid(t0, T, dt)
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    values = np.empty((len(times), x.size))
    values[0] = x
    if np.all(np.asarray(drift(x)) == 0.0):
        # every RK4 stage vanishes at a rest point, so the loop would copy x0
        values[1:] = x
        return AveragedPath(float(t0), float(T), float(dt), times, values, drift_tag)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(len(times) - 1):
            x = _rk4_step(drift, x, times[k], times[k + 1] - times[k])
            if not np.all(np.isfinite(x)):
                raise NumericalBlowupError(times[k])
            values[k + 1] = x
    return AveragedPath(float(t0), float(T), float(dt), times, values, drift_tag)


def averaged_drift_example1(x):
    """Averaged slow drift -2x(x^2 - 1) of the two-scale gradient system."""
    x = np.asarray(x, dtype=float)
    return -2.0 * x * (x * x - 1.0)


def homogenized_drift_example3(kappa_hom: float):
    """Effective drift -kappa * V'(x) for the quadratic outer potential."""

    def drift(x):
        return -kappa_hom * np.asarray(x, dtype=float)

    return drift


@dataclass(frozen=True)
class RoughPotentialConstants:
    D: float
    L: float
    L_hat: float
    kappa_hom: float
    n_nodes: int


def _torus_integral(values: np.ndarray, grid: np.ndarray) -> float:
    return float(simpson(values, x=grid))


def rough_potential_constants(D: float, n_nodes: int = 4096, Q=rough_Q) -> RoughPotentialConstants:
    """Integrals of exp(-Q/D) and exp(Q/D) over one period and kappa = 4 pi^2/(L L_hat).

    ``n_nodes`` is the number of Simpson subintervals on [0, 2 pi] and must be
    even.
    """
    if not D > 0:
        raise ParameterError(f"diffusivity must be positive, got {D}")
    if n_nodes < 64 or n_nodes % 2:
        raise ParameterError(f"n_nodes must be an even integer >= 64, got {n_nodes}")
    grid = np.linspace(0.0, 2.0 * math.pi, n_nodes + 1)
    q = Q(grid) / D
    L = _torus_integral(np.exp(-q), grid)
    L_hat = _torus_integral(np.exp(q), grid)
    return RoughPotentialConstants(float(D), L, L_hat, 4.0 * math.pi**2 / (L * L_hat), int(n_nodes))


def cell_gradient_factor(y, constants: RoughPotentialConstants, Q=rough_Q):
    """Corrector factor 1 + chi'(y) = (2 pi / L_hat) exp(Q(y)/D)."""
    return (2.0 * math.pi / constants.L_hat) * np.exp(Q(y) / constants.D)
