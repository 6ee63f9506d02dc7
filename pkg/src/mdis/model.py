"""Slow-fast small-noise diffusion models and their scaling parameters.

The slow component ``x`` and fast component ``y`` evolve as

    dX = [(eps/delta) b(X,Y) + c(X,Y)] dt + sqrt(eps) sigma(X,Y) dW
    dY = (1/delta) [(eps/delta) f(X,Y) + g(X,Y)] dt
         + (sqrt(eps)/delta) [tau1(X,Y) dW + tau2(X,Y) dB]

Every coefficient is a callable ``(x, y) -> array`` that broadcasts over any
leading batch axes: ``x`` has trailing dimension ``n_slow``, ``y`` has
trailing dimension ``n_fast``; vector coefficients return ``(..., k)`` and
matrix coefficients ``(..., k, n_wiener)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

Coefficient = Callable[[np.ndarray, np.ndarray], np.ndarray]

# Relative slack when converting a horizon into a whole number of steps, so
# that T/dt = 2000.0000000000002 still means 2000 steps.
_GRID_SLACK = 1e-9


class ParameterError(ValueError):
    """A parameter lies outside the domain where the construction is valid."""


class Regime(enum.Enum):
    REGIME1 = 1  # eps/delta -> infinity
    REGIME2 = 2  # eps/delta -> gamma in (0, infinity)

    @classmethod
    def parse(cls, value: "Regime | int | str") -> "Regime":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower().replace("regime", "")
        try:
            return cls(int(text))
        except ValueError:
            raise ParameterError(f"unknown regime {value!r}") from None


class FastKind(enum.Enum):
    EXPLICIT = "explicit-fast-state"
    # y = x/delta is derived from the slow state and never integrated
    HOMOGENIZATION = "homogenization-embedded"


class ConstantCoefficient:
    """Coefficient independent of ``(x, y)``.

    The simulator reads ``value`` directly instead of materialising a
    batch-sized array on every step.
    """

    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)
        self.is_zero = not np.any(self.value)

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.value, x.shape[:-1] + self.value.shape).copy()

    def __repr__(self):
        return f"ConstantCoefficient({self.value.tolist()!r})"


def zero_vector(k: int) -> ConstantCoefficient:
    return ConstantCoefficient(np.zeros(k))


def zero_matrix(k: int, m: int) -> ConstantCoefficient:
    return ConstantCoefficient(np.zeros((k, m)))


def is_zero_coefficient(coef) -> bool:
    return isinstance(coef, ConstantCoefficient) and coef.is_zero


@dataclass(frozen=True)
class MultiscaleModel:
    """Coefficient bundle of a slow-fast system.

    Shapes are checked once at construction by probing every coefficient with
    zero states, both unbatched and with a batch axis.
    """

    n_slow: int
    n_fast: int
    n_wiener: int
    drift_b: Coefficient
    drift_c: Coefficient
    diffusion_sigma: Coefficient
    drift_f: Coefficient
    drift_g: Coefficient
    diffusion_tau1: Coefficient
    diffusion_tau2: Coefficient
    fast_kind: FastKind = FastKind.EXPLICIT
    closed_form_tag: str | None = None
    parameters: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("n_slow", "n_fast", "n_wiener"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be a positive integer")
        if self.fast_kind is FastKind.HOMOGENIZATION and self.n_fast != self.n_slow:
            raise ParameterError("homogenization-embedded models need n_fast == n_slow (y = x/delta)")
        for batch in ((), (3,)):
            x = np.zeros(batch + (self.n_slow,))
            y = np.zeros(batch + (self.n_fast,))
            self._check_shape("drift_b", x, y, batch + (self.n_slow,))
            self._check_shape("drift_c", x, y, batch + (self.n_slow,))
            self._check_shape("diffusion_sigma", x, y, batch + (self.n_slow, self.n_wiener))
            self._check_shape("drift_f", x, y, batch + (self.n_fast,))
            self._check_shape("drift_g", x, y, batch + (self.n_fast,))
            self._check_shape("diffusion_tau1", x, y, batch + (self.n_fast, self.n_wiener))
            self._check_shape("diffusion_tau2", x, y, batch + (self.n_fast, self.n_wiener))

    def _check_shape(self, name, x, y, expected):
        out = np.shape(getattr(self, name)(x, y))
        if out != expected:
            raise ParameterError(f"{name} returned shape {out}, expected {expected}")

    @property
    def is_embedded(self) -> bool:
        return self.fast_kind is FastKind.HOMOGENIZATION

    def slow_drift(self, x, y, epsilon: float, delta: float) -> np.ndarray:
        """Uncontrolled slow drift ``(eps/delta) b + c``."""
        return (epsilon / delta) * self.drift_b(x, y) + self.drift_c(x, y)

    def fast_drift(self, x, y, epsilon: float, delta: float) -> np.ndarray:
        return ((epsilon / delta) * self.drift_f(x, y) + self.drift_g(x, y)) / delta

    def embedded_fast_state(self, x, delta: float) -> np.ndarray:
        if not self.is_embedded:
            raise ParameterError("fast state is integrated explicitly for this model")
        return np.asarray(x, dtype=float) / delta


@dataclass(frozen=True)
class DerivedScaling:
    h: float
    beta: float
    gamma: float | None
    j1: float
    j2: float | None


@dataclass(frozen=True)
class ScalingParams:
    """Small-noise and time-scale parameters with h(eps) = eps**(-h_exponent).

    ``large_deviation=True`` selects the large-deviations embedding
    h = 1/sqrt(eps) (so beta = 1); this is only meaningful as a baseline and
    requires ``h_exponent == 0.5``.
    """

    epsilon: float
    delta: float
    h_exponent: float
    regime: Regime = Regime.REGIME1
    large_deviation: bool = False

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ParameterError(f"delta must be positive, got {self.delta}")
        if self.large_deviation:
            if self.h_exponent != 0.5:
                raise ParameterError("large-deviation scaling uses h_exponent = 0.5")
        elif not 0.0 < self.h_exponent < 0.5:
            raise ParameterError(f"h_exponent must lie in (0, 1/2), got {self.h_exponent}")
        object.__setattr__(self, "regime", Regime.parse(self.regime))

    @classmethod
    def large_deviations(cls, epsilon, delta, regime=Regime.REGIME1) -> "ScalingParams":
        return cls(epsilon, delta, 0.5, regime, large_deviation=True)

    @cached_property
    def h(self) -> float:
        return self.epsilon ** (-self.h_exponent)

    @cached_property
    def beta(self) -> float:
        # sqrt(eps) * h(eps), written as a single power
        return self.epsilon ** (0.5 - self.h_exponent)

    @property
    def eps_over_delta(self) -> float:
        return self.epsilon / self.delta

    @property
    def gamma(self) -> float | None:
        return self.eps_over_delta if self.regime is Regime.REGIME2 else None

    @property
    def j1(self) -> float:
        return (self.delta / self.epsilon) / self.beta

    @property
    def j2(self) -> float | None:
        if self.regime is not Regime.REGIME2:
            return None
        return (self.eps_over_delta - self.gamma) / self.beta

    @property
    def j(self) -> float:
        """The rate constant relevant for the configured regime."""
        return self.j1 if self.regime is Regime.REGIME1 else self.j2


def scaling_derived(params: ScalingParams) -> DerivedScaling:
    return DerivedScaling(params.h, params.beta, params.gamma, params.j1, params.j2)


def time_step(params: ScalingParams) -> float:
    """Euler step 0.001 * delta**2 / eps used for every bundled experiment."""
    return 0.001 * params.delta**2 / params.epsilon


def step_count(t0: float, T: float, dt: float) -> int:
    if dt <= 0:
        raise ParameterError("dt must be positive")
    if not T > t0:
        raise ParameterError("T must exceed t0")
    return max(1, math.ceil((T - t0) / dt - _GRID_SLACK))


def time_grid(t0: float, T: float, dt: float) -> np.ndarray:
    """Uniform nodes ``t0 + k dt``; the last step is truncated to land on T."""
    n = step_count(t0, T, dt)
    grid = t0 + dt * np.arange(n + 1, dtype=float)
    grid[-1] = T
    return grid


# ---------------------------------------------------------------------------
# Example 1/2: two-scale gradient system in V(x,y) = (x^2-1)^2/2 + (x-y)^2/2


def example1_potential(x, y):
    x = np.asarray(x, dtype=float)
    return 0.5 * (x**2 - 1.0) ** 2 + 0.5 * (x - y) ** 2


def _ex1_slow_drift(x, y):
    # -dV/dx
    return -2.0 * x * (x * x - 1.0) - (x - y)


def _ex1_fast_drift(x, y):
    # -dV/dy
    return x - y


def make_example1_model(D: float) -> MultiscaleModel:
    if not D > 0:
        raise ParameterError(f"diffusivity must be positive, got {D}")
    return MultiscaleModel(
        n_slow=1,
        n_fast=1,
        n_wiener=1,
        drift_b=zero_vector(1),
        drift_c=_ex1_slow_drift,
        diffusion_sigma=ConstantCoefficient([[math.sqrt(2.0 * D)]]),
        drift_f=_ex1_fast_drift,
        drift_g=zero_vector(1),
        diffusion_tau1=zero_matrix(1, 1),
        diffusion_tau2=ConstantCoefficient([[1.0]]),
        fast_kind=FastKind.EXPLICIT,
        closed_form_tag="example1",
        parameters={"D": float(D)},
    )


# ---------------------------------------------------------------------------
# Example 3: overdamped Langevin dynamics in the rough potential
# Q(x/delta) + V(x), Q(y) = cos y + sin y, V(x) = x^2/2.


def rough_Q(y):
    return np.cos(y) + np.sin(y)


def rough_dQ(y):
    return np.cos(y) - np.sin(y)


def quadratic_V(x):
    return 0.5 * np.asarray(x, dtype=float) ** 2


def quadratic_dV(x):
    return np.asarray(x, dtype=float)


def _ex3_b(x, y):
    return -rough_dQ(y)


def _ex3_c(x, y):
    return -quadratic_dV(x)


def make_example3_model(D: float) -> MultiscaleModel:
    """Rough-potential model with y = x/delta; f = b, g = c, tau1 = sigma, tau2 = 0."""
    if not D > 0:
        raise ParameterError(f"diffusivity must be positive, got {D}")
    sigma = ConstantCoefficient([[math.sqrt(2.0 * D)]])
    return MultiscaleModel(
        n_slow=1,
        n_fast=1,
        n_wiener=1,
        drift_b=_ex3_b,
        drift_c=_ex3_c,
        diffusion_sigma=sigma,
        drift_f=_ex3_b,
        drift_g=_ex3_c,
        diffusion_tau1=sigma,
        diffusion_tau2=zero_matrix(1, 1),
        fast_kind=FastKind.HOMOGENIZATION,
        closed_form_tag="example3",
        parameters={"D": float(D)},
    )
